//! The approximation-accuracy experiment: for a ladder of switchover
//! scales, compare exact solver values (where available), the fluid
//! asymptotic approximations, and simulated moment estimates.

use pollsys::analysis::{solve_first_order, solve_second_order};
use pollsys::fluid::{approximate_moments, fluid_pe, FluidPE};
use pollsys::model::{validate, Policy, SystemModel};
use pollsys::sim::{derive_seed, estimate_moments, initial_state, run_replications, StageSampleSet};

use crate::output::sig15;
use crate::{CliError, CliResult};

/// Guard against division by a vanishing simulated moment.
const PCT_DENOM_FLOOR: f64 = 1e-12;

/// One experiment: a model and policy, the switchover scale ladder, the
/// moment orders to compare, and the simulation budget.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub model: SystemModel,
    pub policy: Policy,
    pub scales: Vec<f64>,
    pub orders: Vec<u32>,
    pub cycles: u64,
    pub warmup: u64,
    pub reps: u64,
    pub seed: u64,
}

/// What a comparison row measures: one queue's length at a stage's polling
/// epoch, or the stage's busy time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTarget {
    Queue(usize),
    Busy,
}

/// One (scale, stage, target, order) comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scale: f64,
    pub order: u32,
    /// 0-based stage index.
    pub stage: usize,
    pub target: RowTarget,
    /// Exact solver value, when one exists for this policy and order.
    pub analytic: Option<f64>,
    /// Fluid approximation `(n q)^p` or `(n b)^p`.
    pub asymptotic: f64,
    pub simulated: f64,
    pub ci_halfwidth: f64,
    /// `100 |asymptotic - simulated| / max(simulated, 1e-12)`.
    pub pct_diff: f64,
}

/// All rows of one experiment, in deterministic (scale, order, stage,
/// queue-then-busy) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonTable {
    rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn rows(&self) -> &[ComparisonRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows for one scale and order.
    pub fn slice(&self, scale: f64, order: u32) -> Vec<&ComparisonRow> {
        self.rows
            .iter()
            .filter(|r| r.scale == scale && r.order == order)
            .collect()
    }

    /// Mean percentage difference over the queue rows of one (scale, order).
    pub fn mean_queue_pct_diff(&self, scale: f64, order: u32) -> f64 {
        let diffs: Vec<f64> = self
            .slice(scale, order)
            .into_iter()
            .filter(|r| matches!(r.target, RowTarget::Queue(_)))
            .map(|r| r.pct_diff)
            .collect();
        diffs.iter().sum::<f64>() / diffs.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("n,stage,queue,p,analytic,asymptotic,simulated,ci_halfwidth,pct_diff\n");
        for row in &self.rows {
            let queue = match row.target {
                RowTarget::Queue(k) => (k + 1).to_string(),
                RowTarget::Busy => "busy".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                sig15(row.scale),
                row.stage + 1,
                queue,
                row.order,
                row.analytic.map(sig15).unwrap_or_default(),
                sig15(row.asymptotic),
                sig15(row.simulated),
                sig15(row.ci_halfwidth),
                sig15(row.pct_diff),
            ));
        }
        out
    }
}

/// Exact per-order analytic moments for the scaled system, when the theory
/// provides them: first and second queue moments and mean busy times under
/// the exhaustive policy, first moments under the gated policy.
struct AnalyticMoments {
    queue: Vec<Vec<Vec<Option<f64>>>>,
    busy: Vec<Vec<Option<f64>>>,
}

fn analytic_moments(
    model: &SystemModel,
    policy: &Policy,
    orders: &[u32],
) -> CliResult<AnalyticMoments> {
    let stages = model.stage_count();
    let kq = model.queue_count();
    let mut queue = vec![vec![vec![None; kq]; stages]; orders.len()];
    let mut busy = vec![vec![None; stages]; orders.len()];
    match policy {
        Policy::BinomialExhaustive { reduction } => {
            let first = solve_first_order(model, reduction)?;
            let second = if orders.contains(&2) {
                Some(solve_second_order(model, reduction, &first)?)
            } else {
                None
            };
            for (oi, &p) in orders.iter().enumerate() {
                match p {
                    1 => {
                        for i in 0..stages {
                            for k in 0..kq {
                                queue[oi][i][k] = Some(first.q(i, k));
                            }
                            busy[oi][i] = Some(first.busy()[i]);
                        }
                    }
                    2 => {
                        let second = second.as_ref().expect("solved above");
                        for i in 0..stages {
                            for k in 0..kq {
                                queue[oi][i][k] = Some(second.second_moment(i, k));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Policy::BinomialGated { reduction } => {
            // The gated balance equations are the exact first-moment
            // equations; the mean busy time is the gated workload over the
            // service rate.
            if let Some(oi) = orders.iter().position(|&p| p == 1) {
                let pe = pollsys::fluid::fluid_pe_bgp(model, reduction)?;
                for i in 0..stages {
                    for k in 0..kq {
                        queue[oi][i][k] = Some(pe.q(i, k));
                    }
                    busy[oi][i] = Some(pe.stage_busy()[i]);
                }
            }
        }
        Policy::BaseStock { .. } => {}
    }
    Ok(AnalyticMoments { queue, busy })
}

/// Scale the policy with the system: base-stock levels grow with the
/// switchover times, the binomial probabilities do not.
pub fn scale_policy(policy: &Policy, n: f64) -> Policy {
    match policy {
        Policy::BaseStock { levels } => Policy::BaseStock {
            levels: levels.iter().map(|&y| (y as f64 * n).round() as u64).collect(),
        },
        other => other.clone(),
    }
}

/// Run the comparison experiment across all scales and orders.
///
/// For each scale `n` the switchover means are multiplied by `n` (families
/// preserved) and base-stock levels by `n`; the simulation starts at the
/// equilibrium point with no warmup unless one is requested.
pub fn run_experiment(spec: &ExperimentSpec) -> CliResult<ComparisonTable> {
    if spec.scales.iter().any(|&n| !(n >= 1.0)) {
        return Err(CliError::Config("every scale must be at least 1".into()));
    }
    if spec.orders.iter().any(|&p| p < 1) {
        return Err(CliError::Config("every moment order must be at least 1".into()));
    }
    let report = validate(&spec.model, &spec.policy);
    if !report.is_admissible() {
        return Err(CliError::Validation(report));
    }

    // The unscaled equilibrium generates every asymptotic value.
    let pe = fluid_pe(&spec.model, &spec.policy)?;

    let mut table = ComparisonTable::default();
    for (ni, &n) in spec.scales.iter().enumerate() {
        let scaled_model = spec.model.scale_switchover(n);
        let scaled_policy = scale_policy(&spec.policy, n);
        let report = validate(&scaled_model, &scaled_policy);
        if !report.is_admissible() {
            return Err(CliError::Validation(report));
        }
        let initial = initial_state(&scaled_model, &scaled_policy, 1.0)?;
        let reps = run_replications(
            &scaled_model,
            &scaled_policy,
            spec.reps,
            spec.cycles,
            spec.warmup,
            derive_seed(spec.seed, ni as u64),
            Some(initial),
        )?;
        let merged = StageSampleSet::merge(&reps)?;
        let analytic = analytic_moments(&scaled_model, &scaled_policy, &spec.orders)?;

        for (oi, &p) in spec.orders.iter().enumerate() {
            let approx = approximate_moments(&pe, n, p)?;
            let summary = estimate_moments(&merged, p)?;
            for stage in 0..spec.model.stage_count() {
                for k in 0..spec.model.queue_count() {
                    let est = summary.queue_moment(stage, k);
                    let asymptotic = approx.queue_moment(stage, k);
                    table.rows.push(ComparisonRow {
                        scale: n,
                        order: p,
                        stage,
                        target: RowTarget::Queue(k),
                        analytic: analytic.queue[oi][stage][k],
                        asymptotic,
                        simulated: est.point,
                        ci_halfwidth: est.ci_halfwidth,
                        pct_diff: pct_diff(asymptotic, est.point),
                    });
                }
                let est = summary.busy_moment(stage);
                let asymptotic = approx.busy_moment(stage);
                table.rows.push(ComparisonRow {
                    scale: n,
                    order: p,
                    stage,
                    target: RowTarget::Busy,
                    analytic: analytic.busy[oi][stage],
                    asymptotic,
                    simulated: est.point,
                    ci_halfwidth: est.ci_halfwidth,
                    pct_diff: pct_diff(asymptotic, est.point),
                });
            }
        }
    }
    Ok(table)
}

fn pct_diff(approx: f64, simulated: f64) -> f64 {
    100.0 * (approx - simulated).abs() / simulated.max(PCT_DENOM_FLOOR)
}

/// Side-by-side periodic equilibria of several policies on one model at
/// scale `n`: one block per policy with the scaled polling-epoch matrix,
/// period, and stage durations.
pub fn compare_policies(
    model: &SystemModel,
    policies: &[Policy],
    n: f64,
) -> CliResult<String> {
    let mut blocks: Vec<(String, FluidPE)> = Vec::new();
    for policy in policies {
        let report = validate(model, policy);
        if !report.is_admissible() {
            return Err(CliError::Validation(report));
        }
        let scaled_model = model.scale_switchover(n);
        let scaled_policy = scale_policy(policy, n);
        let pe = fluid_pe(&scaled_model, &scaled_policy)?;
        blocks.push((policy.kind().to_string(), pe));
    }
    let mut out = String::from("policy,kind,stage,queue,q,stage_busy,period\n");
    for (index, (kind, pe)) in blocks.iter().enumerate() {
        for stage in 0..pe.stage_count() {
            for k in 0..pe.queue_count() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    index + 1,
                    kind,
                    stage + 1,
                    k + 1,
                    sig15(pe.q(stage, k)),
                    sig15(pe.stage_busy()[stage]),
                    sig15(pe.period()),
                ));
            }
        }
    }
    Ok(out)
}
