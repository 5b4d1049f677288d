//! Exact moment computation for the binomial-exhaustive policy via the
//! buffer-occupancy equations.
//!
//! The first moments of the queue lengths at the polling epochs solve a
//! linear system of `I*K` equations; the second moments and cross moments
//! solve a linear system over per-stage `K x K` matrices. Both systems are
//! fixed points of compositions of affine stage maps whose cycle product is
//! a contraction, so the normative solution path iterates those maps to
//! convergence. A dense direct solve is provided as an independent route,
//! and [`contraction_diagnostics`] exposes the row-sum certificates that
//! make the iteration sound.

use nalgebra::{DMatrix, DVector};

use crate::model::{DistributionSpec, Policy, SystemModel};
use crate::{Error, Result};

/// Max-norm tolerance for fixed-point iterations, applied relative to the
/// magnitude of the iterate (absolute on O(1) data).
pub const DEFAULT_TOL: f64 = 1e-12;

/// Generous iteration cap: the contraction factor approaches one as the
/// total load approaches one.
pub const MAX_CYCLE_ITERS: u64 = 1_000_000;

/// First two moments of the busy period of an M/G/1 queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusyPeriodMoments {
    /// `E[S] / (1 - rho)`.
    pub mean: f64,
    /// `E[S^2] / (1 - rho)^3`.
    pub second: f64,
}

/// Busy-period moments of an M/G/1 queue with the given arrival rate and
/// service-time distribution. Requires `lambda * E[S] < 1`.
pub fn mg1_busy_period_moments(
    lambda: f64,
    service: &DistributionSpec,
) -> Result<BusyPeriodMoments> {
    let rho = lambda * service.mean();
    if !(rho < 1.0) || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "busy-period moments need lambda * E[S] < 1, got rho = {rho}"
        )));
    }
    let slack = 1.0 - rho;
    Ok(BusyPeriodMoments {
        mean: service.mean() / slack,
        second: service.second_moment() / (slack * slack * slack),
    })
}

/// Expected queue lengths at every polling epoch, with the cycle length and
/// per-stage busy times they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstMomentSolution {
    q: Vec<Vec<f64>>,
    cycle_length: f64,
    busy: Vec<f64>,
}

impl FirstMomentSolution {
    /// `E[Q_k(A_i)]` for stage `i`, queue `k`.
    pub fn q(&self, stage: usize, queue: usize) -> f64 {
        self.q[stage][queue]
    }

    /// Full `I x K` matrix of expected queue lengths at polling epochs.
    pub fn q_matrix(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Mean cycle length `s / (1 - rho)`.
    pub fn cycle_length(&self) -> f64 {
        self.cycle_length
    }

    /// Expected busy time per stage, `b_i = r_i q_{p(i)}(a_i) E[Theta_{p(i)}]`.
    pub fn busy(&self) -> &[f64] {
        &self.busy
    }

    pub fn stage_count(&self) -> usize {
        self.q.len()
    }

    pub fn queue_count(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }
}

fn admissible_bep(model: &SystemModel, reduction: &[f64]) -> Result<()> {
    crate::model::require_admissible(
        model,
        &Policy::BinomialExhaustive { reduction: reduction.to_vec() },
    )
}

/// Mean busy period per queue, `E[Theta_k]`.
fn theta_means(model: &SystemModel) -> Vec<f64> {
    (0..model.queue_count())
        .map(|k| model.service(k).mean() / (1.0 - model.rho_k(k)))
        .collect()
}

/// One stage of the first-order buffer-occupancy recursion: maps the
/// expected queue lengths at the polling epoch of `stage` to those at the
/// next polling epoch.
fn first_order_stage(
    model: &SystemModel,
    reduction: &[f64],
    theta: &[f64],
    stage: usize,
    q: &[f64],
    out: &mut [f64],
) {
    let c = model.table().queue_at(stage);
    let s_i = model.switchover_mean(stage);
    let r_i = reduction[stage];
    for k in 0..model.queue_count() {
        let lambda_k = model.lambda(k);
        out[k] = if k == c {
            s_i * lambda_k + (1.0 - r_i) * q[k]
        } else {
            s_i * lambda_k + q[k] + q[c] * r_i * lambda_k * theta[c]
        };
    }
}

/// Iterate the cycle map from `initial` until the stage-1 vector is a fixed
/// point, then record the whole cycle.
fn iterate_first_order(
    model: &SystemModel,
    reduction: &[f64],
    initial: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k = model.queue_count();
    let stages = model.stage_count();
    let theta = theta_means(model);
    let mut cur = initial.to_vec();
    let mut next = vec![0.0; k];
    for _ in 0..MAX_CYCLE_ITERS {
        let mut v = cur.clone();
        for i in 0..stages {
            first_order_stage(model, reduction, &theta, i, &v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let delta = v
            .iter()
            .zip(&cur)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        cur = v;
        if delta < DEFAULT_TOL * scale {
            // Converged at stage 1; roll out the remaining stages.
            let mut rows = Vec::with_capacity(stages);
            rows.push(cur.clone());
            let mut v = cur;
            for i in 0..stages - 1 {
                first_order_stage(model, reduction, &theta, i, &v, &mut next);
                std::mem::swap(&mut v, &mut next);
                rows.push(v.clone());
            }
            return Ok(rows);
        }
    }
    Err(Error::NonConvergence { what: "first-order cycle map", max_iters: MAX_CYCLE_ITERS })
}

fn finish_first_order(model: &SystemModel, reduction: &[f64], q: Vec<Vec<f64>>) -> FirstMomentSolution {
    let theta = theta_means(model);
    let busy: Vec<f64> = (0..model.stage_count())
        .map(|i| {
            let c = model.table().queue_at(i);
            reduction[i] * q[i][c] * theta[c]
        })
        .collect();
    let cycle_length = model.total_switchover_mean() / (1.0 - model.rho());
    FirstMomentSolution { q, cycle_length, busy }
}

/// Solve the first-order buffer-occupancy equations by iterating the affine
/// stage maps around the cycle until the polling-epoch vector stabilizes.
///
/// This is the normative route; [`solve_first_order_direct`] provides the
/// same solution through a dense linear solve.
pub fn solve_first_order(model: &SystemModel, reduction: &[f64]) -> Result<FirstMomentSolution> {
    admissible_bep(model, reduction)?;
    let zeros = vec![0.0; model.queue_count()];
    let q = iterate_first_order(model, reduction, &zeros)?;
    Ok(finish_first_order(model, reduction, q))
}

/// Assemble and solve the `IK x IK` first-order system directly.
pub fn solve_first_order_direct(
    model: &SystemModel,
    reduction: &[f64],
) -> Result<FirstMomentSolution> {
    admissible_bep(model, reduction)?;
    let kq = model.queue_count();
    let stages = model.stage_count();
    let theta = theta_means(model);
    let dim = stages * kq;
    let mut a = DMatrix::<f64>::identity(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    for i in 0..stages {
        let next = (i + 1) % stages;
        let c = model.table().queue_at(i);
        for k in 0..kq {
            let row = next * kq + k;
            if k == c {
                a[(row, i * kq + k)] -= 1.0 - reduction[i];
            } else {
                a[(row, i * kq + k)] -= 1.0;
                a[(row, i * kq + c)] -= reduction[i] * model.lambda(k) * theta[c];
            }
            b[row] = model.switchover_mean(i) * model.lambda(k);
        }
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or(Error::InvalidArgument("singular first-order system".into()))?;
    let q: Vec<Vec<f64>> = (0..stages)
        .map(|i| (0..kq).map(|k| x[i * kq + k]).collect())
        .collect();
    Ok(finish_first_order(model, reduction, q))
}

/// Closed-form first moments for the identity cyclic table (`I = K`,
/// `p(i) = i`) with strictly positive reductions.
pub fn closed_form_cyclic(model: &SystemModel, reduction: &[f64]) -> Result<FirstMomentSolution> {
    admissible_bep(model, reduction)?;
    let k = model.queue_count();
    if !model.table().is_cyclic() || model.table().assignment() != (0..k).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(
            "closed form requires the identity cyclic table p(i) = i".into(),
        ));
    }
    if reduction.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(
            "closed form requires every reduction probability to be positive".into(),
        ));
    }
    let horizon = model.total_switchover_mean() / (1.0 - model.rho());
    let mut q = vec![vec![0.0; k]; k];
    for stage in 0..k {
        for j in 0..k {
            let own = (1.0 - model.rho_k(j)) / reduction[j] * horizon;
            if j == stage {
                q[stage][j] = model.lambda(j) * own;
            } else {
                // Cyclic sum over the stages from `stage` up to (but not
                // including) queue j's own stage.
                let mut sum = 0.0;
                let mut l = stage;
                while l != j {
                    sum += model.switchover_mean(l) + model.rho_k(l) * horizon;
                    l = (l + 1) % k;
                }
                q[stage][j] = model.lambda(j) * (own - sum);
            }
        }
    }
    Ok(finish_first_order(model, reduction, q))
}

/// Second and cross moments of the queue lengths at the polling epochs:
/// for each stage a symmetric `K x K` matrix with entries
/// `f_i(j, k) = E[Q_j(A_i) Q_k(A_i)]` off the diagonal and the factorial
/// moment `E[Q_k(A_i)(Q_k(A_i) - 1)]` on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentSolution {
    f: Vec<Vec<Vec<f64>>>,
    q: Vec<Vec<f64>>,
}

impl SecondMomentSolution {
    /// Raw generating-function derivative `f_i(j, k)`.
    pub fn f(&self, stage: usize, j: usize, k: usize) -> f64 {
        self.f[stage][j][k]
    }

    pub fn f_matrix(&self, stage: usize) -> &[Vec<f64>] {
        &self.f[stage]
    }

    /// `E[Q_k(A_i)^2] = f_i(k, k) + q_k(a_i)`.
    pub fn second_moment(&self, stage: usize, queue: usize) -> f64 {
        self.f[stage][queue][queue] + self.q[stage][queue]
    }

    /// `E[Q_j(A_i) Q_k(A_i)]` for `j != k`.
    pub fn cross_moment(&self, stage: usize, j: usize, k: usize) -> f64 {
        self.f[stage][j][k]
    }

    pub fn stage_count(&self) -> usize {
        self.f.len()
    }

    pub fn queue_count(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }
}

/// Per-stage constants of the second-order equations.
struct SecondOrderStage {
    served: usize,
    s_i: f64,
    v2_i: f64,
    r_i: f64,
    theta_mean: f64,
    theta_second: f64,
}

fn second_order_stages(model: &SystemModel, reduction: &[f64]) -> Result<Vec<SecondOrderStage>> {
    (0..model.stage_count())
        .map(|i| {
            let c = model.table().queue_at(i);
            let theta = mg1_busy_period_moments(model.lambda(c), model.service(c))?;
            Ok(SecondOrderStage {
                served: c,
                s_i: model.switchover_mean(i),
                v2_i: model.switchover(i).second_moment(),
                r_i: reduction[i],
                theta_mean: theta.mean,
                theta_second: theta.second,
            })
        })
        .collect()
}

/// One stage of the second-order recursion: `F_{i+1} = T_i(F_i)`, with the
/// first moments entering through the constant terms.
fn second_order_stage(
    model: &SystemModel,
    st: &SecondOrderStage,
    f1: &[f64],
    f: &[Vec<f64>],
    out: &mut [Vec<f64>],
) {
    let kq = model.queue_count();
    let c = st.served;
    let (r, s, v2) = (st.r_i, st.s_i, st.v2_i);
    let (tm, t2) = (st.theta_mean, st.theta_second);
    for j in 0..kq {
        let lj = model.lambda(j);
        for k in 0..kq {
            let lk = model.lambda(k);
            out[j][k] = match (j == c, k == c) {
                (false, false) => {
                    lj * lk * v2
                        + lk * s * f1[j]
                        + lj * s * f1[k]
                        + 2.0 * lj * lk * s * f1[c] * r * tm
                        + f[j][k]
                        + lj * f[c][k] * r * tm
                        + lk * f[c][j] * r * tm
                        + lj * lk * f[c][c] * r * r * tm * tm
                        + lj * lk * f1[c] * r * t2
                }
                (true, false) => {
                    lj * lk * v2
                        + lk * s * f1[c] * (1.0 - r)
                        + lj * s * f1[k]
                        + lj * lk * s * f1[c] * r * tm
                        + f[c][k] * (1.0 - r)
                        + lk * f[c][c] * r * (1.0 - r) * tm
                }
                (false, true) => {
                    lj * lk * v2
                        + lj * s * f1[c] * (1.0 - r)
                        + lk * s * f1[j]
                        + lj * lk * s * f1[c] * r * tm
                        + f[j][c] * (1.0 - r)
                        + lj * f[c][c] * r * (1.0 - r) * tm
                }
                (true, true) => {
                    lj * lk * v2 + 2.0 * lj * s * f1[c] * (1.0 - r) + f[c][c] * (1.0 - r) * (1.0 - r)
                }
            };
        }
    }
}

/// Solve the second-order buffer-occupancy equations as the fixed point of
/// the composed stage maps, starting from the zero matrix.
pub fn solve_second_order(
    model: &SystemModel,
    reduction: &[f64],
    first: &FirstMomentSolution,
) -> Result<SecondMomentSolution> {
    admissible_bep(model, reduction)?;
    let kq = model.queue_count();
    let stages = model.stage_count();
    if first.stage_count() != stages || first.queue_count() != kq {
        return Err(Error::InvalidArgument(
            "first-moment solution does not match the model shape".into(),
        ));
    }
    let consts = second_order_stages(model, reduction)?;
    let mut cur = vec![vec![0.0; kq]; kq];
    let mut next = vec![vec![0.0; kq]; kq];
    for _ in 0..MAX_CYCLE_ITERS {
        let mut v = cur.clone();
        for i in 0..stages {
            second_order_stage(model, &consts[i], &first.q_matrix()[i], &v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        let mut scale = 1.0f64;
        let mut delta = 0.0f64;
        for j in 0..kq {
            for k in 0..kq {
                scale = scale.max(v[j][k].abs());
                delta = delta.max((v[j][k] - cur[j][k]).abs());
            }
        }
        cur = v;
        if delta < DEFAULT_TOL * scale {
            let mut f = Vec::with_capacity(stages);
            f.push(cur.clone());
            let mut v = cur;
            for i in 0..stages - 1 {
                second_order_stage(model, &consts[i], &first.q_matrix()[i], &v, &mut next);
                std::mem::swap(&mut v, &mut next);
                f.push(v.clone());
            }
            return Ok(SecondMomentSolution { f, q: first.q_matrix().to_vec() });
        }
    }
    Err(Error::NonConvergence { what: "second-order cycle map", max_iters: MAX_CYCLE_ITERS })
}

/// Row-sum certificates for the weighted cycle matrices that make the
/// buffer-occupancy fixed points contractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionDiagnostics {
    alpha: f64,
    matrices: Vec<Vec<Vec<f64>>>,
    cumulative_row_sums: Vec<Vec<f64>>,
    drop_index: Vec<usize>,
}

impl ContractionDiagnostics {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The weighted stage matrix for `stage`.
    pub fn matrix(&self, stage: usize) -> &[Vec<f64>] {
        &self.matrices[stage]
    }

    /// Row sums of the cumulative backward products after `steps` factors
    /// (`steps` ranges over `1..=I`).
    pub fn cumulative_row_sums(&self, steps: usize) -> &[f64] {
        &self.cumulative_row_sums[steps - 1]
    }

    pub fn steps(&self) -> usize {
        self.cumulative_row_sums.len()
    }

    /// First lookback step at which queue `k`'s row sum is guaranteed to
    /// drop strictly below one (the last prior visit with positive
    /// reduction).
    pub fn drop_index(&self, queue: usize) -> usize {
        self.drop_index[queue]
    }

    /// Maximum row sum of the full-cycle product; strictly below one for
    /// every admissible input. Proxy for the spectral radius.
    pub fn full_cycle_max_row_sum(&self) -> f64 {
        self.cumulative_row_sums
            .last()
            .map(|rs| rs.iter().fold(f64::MIN, |m, &x| m.max(x)))
            .unwrap_or(f64::NAN)
    }
}

/// Largest `alpha` margin is `(1 - rho) / (rho - rho_k)`; this midpoint
/// choice always satisfies the admissibility condition.
pub fn default_contraction_alpha(model: &SystemModel) -> f64 {
    0.5 * (1.0 - model.rho()) / model.rho()
}

/// Build the weighted stage matrices and report the row sums of their
/// backward cumulative products over one cycle, anchored at stage 1.
///
/// `alpha` must satisfy `rho_k + (rho - rho_k)(1 + alpha) < 1` for every
/// queue; pass `None` for the default midpoint choice.
pub fn contraction_diagnostics(
    model: &SystemModel,
    reduction: &[f64],
    alpha: Option<f64>,
) -> Result<ContractionDiagnostics> {
    admissible_bep(model, reduction)?;
    let alpha = alpha.unwrap_or_else(|| default_contraction_alpha(model));
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidAlpha { alpha, queue: 0 });
    }
    let kq = model.queue_count();
    let rho = model.rho();
    for k in 0..kq {
        if !(model.rho_k(k) + (rho - model.rho_k(k)) * (1.0 + alpha) < 1.0) {
            return Err(Error::InvalidAlpha { alpha, queue: k });
        }
    }

    let stages = model.stage_count();
    let mut matrices = Vec::with_capacity(stages);
    for i in 0..stages {
        let c = model.table().queue_at(i);
        let r_i = reduction[i];
        let mut m = vec![vec![0.0; kq]; kq];
        for (row, m_row) in m.iter_mut().enumerate() {
            if row == c {
                for (k, cell) in m_row.iter_mut().enumerate() {
                    *cell = if k == c {
                        1.0 - r_i
                    } else {
                        r_i * model.rho_k(k) * (1.0 + alpha) / (1.0 - model.rho_k(c))
                    };
                }
            } else {
                m_row[row] = 1.0;
            }
        }
        matrices.push(m);
    }

    // Backward cumulative products M(w(1, step)) * ... * M(w(1, 1)),
    // anchored at stage 1 as in the underlying row-sum lemma.
    let as_dmatrix = |m: &Vec<Vec<f64>>| {
        DMatrix::from_fn(kq, kq, |r, c| m[r][c])
    };
    let mut cumulative_row_sums = Vec::with_capacity(stages);
    let mut product: Option<DMatrix<f64>> = None;
    for step in 1..=stages {
        let stage = model.table().lookback(0, step);
        let factor = as_dmatrix(&matrices[stage]);
        product = Some(match product {
            None => factor,
            Some(p) => factor * p,
        });
        let p = product.as_ref().unwrap();
        cumulative_row_sums.push((0..kq).map(|r| p.row(r).sum()).collect());
    }

    let drop_index = (0..kq)
        .map(|k| {
            (1..=stages)
                .find(|&j| {
                    let stage = model.table().lookback(0, j);
                    model.table().queue_at(stage) == k && reduction[stage] > 0.0
                })
                .unwrap_or(stages)
        })
        .collect();

    Ok(ContractionDiagnostics { alpha, matrices, cumulative_row_sums, drop_index })
}
