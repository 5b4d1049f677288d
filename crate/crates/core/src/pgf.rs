//! Numerical evaluation of the joint probability generating function of the
//! steady-state queue lengths at the polling epochs.
//!
//! The generating function at stage `i` is an infinite product of switchover
//! transforms evaluated along a backward recursion through the polling
//! table. The recursion drives its argument to zero geometrically, so the
//! product can be truncated at full cycles once the argument falls below a
//! tail tolerance. Numeric differentiation of the product at `z = 1` gives
//! the queue-length moments along a route that never touches the
//! buffer-occupancy solvers, which makes it a genuine cross-check for them.

use crate::model::{DistributionSpec, Policy, SystemModel};
use crate::{Error, Result};

/// Default truncation threshold for the residual arrival-rate mass `y`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Truncation error budget for the discarded product tail.
const TAIL_ERROR_BUDGET: f64 = 1e-9;

/// Inner tolerance for busy-period transform evaluations inside the
/// recursion; far below every外 tolerance used on the product.
const INNER_LST_TOL: f64 = 1e-15;

const MAX_FIXED_POINT_ITERS: u64 = 1_000_000;
const MAX_PRODUCT_CYCLES: u64 = 1_000_000;

/// LST of the M/G/1 busy period at `u >= 0`: the minimal root of
/// `theta = S_hat(u + lambda - lambda * theta)` on `[0, 1]`, reached by
/// monotone iteration from zero.
pub fn busy_period_lst(
    lambda: f64,
    service: &DistributionSpec,
    u: f64,
    tol: f64,
) -> Result<f64> {
    if !(lambda * service.mean() < 1.0) || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "busy-period LST needs lambda * E[S] < 1, got rho = {}",
            lambda * service.mean()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if u < 0.0 {
        return Err(Error::NegativeLstArgument(u));
    }
    if u == 0.0 {
        // The busy period is proper under rho < 1.
        return Ok(1.0);
    }
    let mut theta = 0.0f64;
    for _ in 0..MAX_FIXED_POINT_ITERS {
        let next = service.lst(u + lambda * (1.0 - theta))?;
        if next - theta < tol {
            return Ok(next);
        }
        theta = next;
    }
    Err(Error::NonConvergence {
        what: "busy-period LST fixed point",
        max_iters: MAX_FIXED_POINT_ITERS,
    })
}

/// One step of the generating-function recursion: the transformed argument
/// vector, the residual mass `y`, and the stage whose update produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionState {
    /// 1-based step index `j`.
    pub step: usize,
    /// Stage updated at this step (the stage `j` lookback steps before the
    /// anchor stage).
    pub stage: usize,
    /// Current argument vector `z^{(j)}`.
    pub z: Vec<f64>,
    /// Residual arrival mass `y^{(j)} = sum_k lambda_k (1 - z_k^{(j)})`.
    pub y: f64,
}

fn check_z_domain(model: &SystemModel, z: &[f64]) -> Result<()> {
    if z.len() != model.queue_count() {
        return Err(Error::InvalidArgument(format!(
            "z has {} coordinates, model has {} queues",
            z.len(),
            model.queue_count()
        )));
    }
    if z.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument(
            "the generating function is evaluated on [0, 1]^K only".into(),
        ));
    }
    Ok(())
}

fn admissible_bep(model: &SystemModel, reduction: &[f64]) -> Result<()> {
    crate::model::require_admissible(
        model,
        &Policy::BinomialExhaustive { reduction: reduction.to_vec() },
    )
}

fn residual_mass(model: &SystemModel, z: &[f64]) -> f64 {
    (0..model.queue_count())
        .map(|k| model.lambda(k) * (1.0 - z[k]))
        .sum()
}

fn residual_mass_excluding(model: &SystemModel, z: &[f64], skip: usize) -> f64 {
    (0..model.queue_count())
        .filter(|&k| k != skip)
        .map(|k| model.lambda(k) * (1.0 - z[k]))
        .sum()
}

/// Advance `z` by one recursion step anchored at `anchor`; returns the
/// updated stage. `step` is 1-based.
fn recursion_step(
    model: &SystemModel,
    reduction: &[f64],
    anchor: usize,
    step: usize,
    z: &mut [f64],
) -> Result<usize> {
    let stage = model.table().lookback(anchor, step);
    let queue = model.table().queue_at(stage);
    let arg = residual_mass_excluding(model, z, queue);
    let theta = busy_period_lst(model.lambda(queue), model.service(queue), arg, INNER_LST_TOL)?;
    let r = reduction[stage];
    z[queue] = (1.0 - r) * z[queue] + r * theta;
    Ok(stage)
}

/// Run exactly `steps` steps of the backward recursion from `z0`, recording
/// every state.
pub fn pgf_recursion(
    model: &SystemModel,
    reduction: &[f64],
    stage: usize,
    z0: &[f64],
    steps: usize,
) -> Result<Vec<RecursionState>> {
    admissible_bep(model, reduction)?;
    check_z_domain(model, z0)?;
    if stage >= model.stage_count() {
        return Err(Error::InvalidArgument(format!("stage {stage} out of range")));
    }
    let mut z = z0.to_vec();
    let mut states = Vec::with_capacity(steps);
    for j in 1..=steps {
        let updated = recursion_step(model, reduction, stage, j, &mut z)?;
        states.push(RecursionState {
            step: j,
            stage: updated,
            z: z.clone(),
            y: residual_mass(model, &z),
        });
    }
    Ok(states)
}

/// Evaluate the generating function at `z in [0, 1]^K` by truncating the
/// infinite product at full cycles once the residual mass drops below
/// `tail_tol`, with the discarded tail certified below `1e-9`.
pub fn evaluate_pgf(
    model: &SystemModel,
    reduction: &[f64],
    stage: usize,
    z: &[f64],
    tail_tol: f64,
) -> Result<f64> {
    admissible_bep(model, reduction)?;
    check_z_domain(model, z)?;
    if stage >= model.stage_count() {
        return Err(Error::InvalidArgument(format!("stage {stage} out of range")));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidArgument("tail tolerance must be positive".into()));
    }
    if z.iter().all(|&v| v == 1.0) {
        return Ok(1.0);
    }

    let stages = model.stage_count();
    let max_switch_mean = (0..stages)
        .map(|i| model.switchover_mean(i))
        .fold(0.0f64, f64::max);

    let mut zv = z.to_vec();
    let mut y = residual_mass(model, &zv);
    let mut product = 1.0f64;
    let mut step = 0usize;
    let mut cycle_start_y = y;
    for _cycle in 0..MAX_PRODUCT_CYCLES {
        for _ in 0..stages {
            step += 1;
            let factor_stage = model.table().lookback(stage, step);
            product *= model.switchover(factor_stage).lst(y)?;
            recursion_step(model, reduction, stage, step, &mut zv)?;
            y = residual_mass(model, &zv);
        }
        if y == 0.0 {
            return Ok(product);
        }
        if y < tail_tol {
            // The per-cycle contraction factor bounds the discarded tail:
            // sum_{j > J} y^(j) <= y_J * I / (1 - kappa), and each missing
            // factor satisfies -ln R(y) <= y E[V] / (1 - y E[V]).
            let kappa = (y / cycle_start_y).clamp(0.0, 0.999);
            let tail_mass = y * stages as f64 / (1.0 - kappa);
            let bound = tail_mass * max_switch_mean / (1.0 - y * max_switch_mean).max(0.5);
            if bound < TAIL_ERROR_BUDGET {
                return Ok(product);
            }
        }
        cycle_start_y = y;
    }
    Err(Error::NonConvergence {
        what: "generating-function product tail",
        max_iters: MAX_PRODUCT_CYCLES,
    })
}

/// Factorial moment of `Q_k(A_i)` of order 1 or 2 by one-sided numeric
/// differentiation of the generating function at `z = 1`, Richardson
/// extrapolated.
///
/// Order 1 returns `E[Q_k(A_i)]`; order 2 returns the factorial moment
/// `E[Q_k(A_i)(Q_k(A_i) - 1)]`, i.e. the diagonal of the second-order
/// buffer-occupancy solution.
pub fn pgf_moment_numeric(
    model: &SystemModel,
    reduction: &[f64],
    stage: usize,
    queue: usize,
    order: u32,
) -> Result<f64> {
    if queue >= model.queue_count() {
        return Err(Error::InvalidArgument(format!("queue {queue} out of range")));
    }
    // Tight truncation: the difference quotients amplify evaluation noise
    // by 1/h or 1/h^2.
    let tail_tol = 1e-13;
    let eval = |offset: f64| -> Result<f64> {
        if offset == 0.0 {
            return Ok(1.0);
        }
        let mut z = vec![1.0; model.queue_count()];
        z[queue] = 1.0 - offset;
        evaluate_pgf(model, reduction, stage, &z, tail_tol)
    };
    // Both stencils are second-order accurate; two Richardson levels over
    // h, h/2, h/4 remove the h^2 and h^3 error terms, leaving the result
    // bias-limited at O(h^4). The generating function varies on the scale
    // 1/E[Q], so the base step is chosen inversely to a coarse slope probe:
    // the extrapolated bias then stays O((h E[Q])^4) while the step remains
    // large enough that truncation noise cannot dominate the quotient.
    let richardson = |d: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        let coarse = (4.0 * d(0.5 * h)? - d(h)?) / 3.0;
        let fine = (4.0 * d(0.25 * h)? - d(0.5 * h)?) / 3.0;
        Ok((8.0 * fine - coarse) / 7.0)
    };
    let probe = 1e-3;
    let slope = (1.0 - eval(probe)?) / probe;
    let scale = slope.abs().max(1.0);
    match order {
        1 => {
            let d = |h: f64| -> Result<f64> {
                Ok((3.0 * eval(0.0)? - 4.0 * eval(h)? + eval(2.0 * h)?) / (2.0 * h))
            };
            richardson(&d, 0.02 / scale)
        }
        2 => {
            let d = |h: f64| -> Result<f64> {
                Ok(
                    (2.0 * eval(0.0)? - 5.0 * eval(h)? + 4.0 * eval(2.0 * h)?
                        - eval(3.0 * h)?)
                        / (h * h),
                )
            };
            richardson(&d, 0.05 / scale)
        }
        other => Err(Error::UnsupportedOrder(other)),
    }
}
