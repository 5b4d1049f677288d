//! Domain types: distribution families with closed-form moments, transforms
//! and samplers, the polling table, the system model, and the service
//! policies, together with admissibility validation.
//!
//! All indices in this crate are 0-based; the CLI and file formats translate
//! to the 1-based convention used in configuration files and CSV output.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};

use crate::{Error, Result};

/// A nonnegative random-variable family with closed-form mean, second
/// moment, and Laplace-Stieltjes transform.
///
/// These four families cover service and switchover times. They are exactly
/// the families whose transforms the generating-function module can evaluate
/// without numeric inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    /// Point mass at `value`.
    Deterministic { value: f64 },
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Sum of `shape` independent exponentials, each with the given rate.
    Erlang { shape: u32, rate: f64 },
    /// Uniform on `[lower, upper]` with `0 <= lower < upper`.
    Uniform { lower: f64, upper: f64 },
}

impl DistributionSpec {
    pub fn deterministic(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "deterministic value must be a nonnegative real, got {value}"
            )));
        }
        Ok(Self::Deterministic { value })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "exponential rate must be positive, got {rate}"
            )));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        if shape == 0 {
            return Err(Error::InvalidDistribution(
                "erlang shape must be a positive integer".into(),
            ));
        }
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "erlang rate must be positive, got {rate}"
            )));
        }
        Ok(Self::Erlang { shape, rate })
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower < 0.0 || upper <= lower {
            return Err(Error::InvalidDistribution(format!(
                "uniform bounds must satisfy 0 <= lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self::Uniform { lower, upper })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Exponential { rate } => 1.0 / rate,
            Self::Erlang { shape, rate } => f64::from(shape) / rate,
            Self::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => value * value,
            Self::Exponential { rate } => 2.0 / (rate * rate),
            Self::Erlang { shape, rate } => {
                let k = f64::from(shape);
                k * (k + 1.0) / (rate * rate)
            }
            Self::Uniform { lower, upper } => {
                (lower * lower + lower * upper + upper * upper) / 3.0
            }
        }
    }

    /// Exact analytic moment of the requested order (1 or 2).
    pub fn moment(&self, order: u32) -> Result<f64> {
        match order {
            1 => Ok(self.mean()),
            2 => Ok(self.second_moment()),
            other => Err(Error::UnsupportedOrder(other)),
        }
    }

    /// Laplace-Stieltjes transform `E[exp(-u X)]` for `u >= 0`.
    ///
    /// Negative arguments are rejected: all transform evaluations in this
    /// crate stay on the nonnegative half-line.
    pub fn lst(&self, u: f64) -> Result<f64> {
        if !u.is_finite() || u < 0.0 {
            return Err(Error::NegativeLstArgument(u));
        }
        if u == 0.0 {
            return Ok(1.0);
        }
        Ok(match *self {
            Self::Deterministic { value } => (-u * value).exp(),
            Self::Exponential { rate } => rate / (rate + u),
            Self::Erlang { shape, rate } => (rate / (rate + u)).powi(shape as i32),
            Self::Uniform { lower, upper } => {
                // (e^{-u a} - e^{-u b}) / (u (b - a)), written via expm1 so the
                // small-u regime stays accurate.
                let width = upper - lower;
                (-u * lower).exp() * (-f64::exp_m1(-u * width)) / (u * width)
            }
        })
    }

    /// Draw one value. Takes the generator explicitly; the spec family is
    /// otherwise pure.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Self::Erlang { shape, rate } => Gamma::new(f64::from(shape), 1.0 / rate)
                .expect("validated parameters")
                .sample(rng),
            Self::Uniform { lower, upper } => rng.random_range(lower..upper),
        }
    }

    /// Same family with the mean multiplied by `factor` (shape preserved).
    pub fn scale_mean(&self, factor: f64) -> Self {
        match *self {
            Self::Deterministic { value } => Self::Deterministic { value: value * factor },
            Self::Exponential { rate } => Self::Exponential { rate: rate / factor },
            Self::Erlang { shape, rate } => Self::Erlang { shape, rate: rate / factor },
            Self::Uniform { lower, upper } => Self::Uniform {
                lower: lower * factor,
                upper: upper * factor,
            },
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Deterministic { value } => write!(f, "deterministic({value})"),
            Self::Exponential { rate } => write!(f, "exponential(rate={rate})"),
            Self::Erlang { shape, rate } => write!(f, "erlang(shape={shape}, rate={rate})"),
            Self::Uniform { lower, upper } => write!(f, "uniform[{lower}, {upper}]"),
        }
    }
}

/// The visit order of the server: stage `i` serves queue `assignment[i]`.
///
/// Every queue must appear at least once; a queue may appear several times.
/// The table is cyclic when each queue appears exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollingTable {
    assignment: Vec<usize>,
    queue_count: usize,
}

impl PollingTable {
    /// Build from a 0-based stage-to-queue assignment.
    pub fn new(assignment: Vec<usize>, queue_count: usize) -> Result<Self> {
        if queue_count == 0 || assignment.is_empty() {
            return Err(Error::InvalidModel(
                "polling table needs at least one stage and one queue".into(),
            ));
        }
        let mut seen = vec![false; queue_count];
        for (stage, &q) in assignment.iter().enumerate() {
            if q >= queue_count {
                return Err(Error::InvalidModel(format!(
                    "stage {} maps to queue index {} out of range 0..{}",
                    stage + 1,
                    q,
                    queue_count
                )));
            }
            seen[q] = true;
        }
        if let Some(q) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidModel(format!(
                "queue {} is never visited by the polling table",
                q + 1
            )));
        }
        Ok(Self { assignment, queue_count })
    }

    /// Build from the 1-based assignment used in configuration files.
    pub fn from_one_based(assignment: &[usize], queue_count: usize) -> Result<Self> {
        let zero_based = assignment
            .iter()
            .map(|&q| {
                q.checked_sub(1).ok_or_else(|| {
                    Error::InvalidModel("queue indices in the table are 1-based".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(zero_based, queue_count)
    }

    pub fn stage_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn queue_count(&self) -> usize {
        self.queue_count
    }

    /// Queue served at `stage`.
    pub fn queue_at(&self, stage: usize) -> usize {
        self.assignment[stage]
    }

    /// The stage index `back` stages before `stage`, cyclically.
    pub fn lookback(&self, stage: usize, back: usize) -> usize {
        let i = self.stage_count();
        (stage as i64 - (back % i.max(1)) as i64).rem_euclid(i as i64) as usize
    }

    pub fn is_cyclic(&self) -> bool {
        self.stage_count() == self.queue_count
    }

    /// Stages that serve `queue`, in table order.
    pub fn stages_serving(&self, queue: usize) -> Vec<usize> {
        (0..self.stage_count())
            .filter(|&i| self.assignment[i] == queue)
            .collect()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

/// The tuple (arrival rates, service specs, switchover specs, polling table).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    lambda: Vec<f64>,
    service: Vec<DistributionSpec>,
    switchover: Vec<DistributionSpec>,
    table: PollingTable,
}

impl SystemModel {
    pub fn new(
        lambda: Vec<f64>,
        service: Vec<DistributionSpec>,
        switchover: Vec<DistributionSpec>,
        table: PollingTable,
    ) -> Result<Self> {
        let k = table.queue_count();
        let i = table.stage_count();
        if lambda.len() != k || service.len() != k {
            return Err(Error::InvalidModel(format!(
                "expected {k} arrival rates and service specs, got {} and {}",
                lambda.len(),
                service.len()
            )));
        }
        if switchover.len() != i {
            return Err(Error::InvalidModel(format!(
                "expected one switchover spec per stage ({i}), got {}",
                switchover.len()
            )));
        }
        Ok(Self { lambda, service, switchover, table })
    }

    pub fn queue_count(&self) -> usize {
        self.table.queue_count()
    }

    pub fn stage_count(&self) -> usize {
        self.table.stage_count()
    }

    pub fn table(&self) -> &PollingTable {
        &self.table
    }

    pub fn lambda(&self, queue: usize) -> f64 {
        self.lambda[queue]
    }

    pub fn service(&self, queue: usize) -> &DistributionSpec {
        &self.service[queue]
    }

    pub fn switchover(&self, stage: usize) -> &DistributionSpec {
        &self.switchover[stage]
    }

    /// Service rate `mu_k = 1 / E[S_k]`.
    pub fn mu(&self, queue: usize) -> f64 {
        1.0 / self.service[queue].mean()
    }

    /// Traffic intensity of one queue.
    pub fn rho_k(&self, queue: usize) -> f64 {
        self.lambda[queue] * self.service[queue].mean()
    }

    /// Total traffic intensity; the system is stable iff this is < 1.
    pub fn rho(&self) -> f64 {
        (0..self.queue_count()).map(|k| self.rho_k(k)).sum()
    }

    pub fn switchover_mean(&self, stage: usize) -> f64 {
        self.switchover[stage].mean()
    }

    /// Total expected switchover time over the table.
    pub fn total_switchover_mean(&self) -> f64 {
        self.switchover.iter().map(|v| v.mean()).sum()
    }

    /// Same system with every switchover mean multiplied by `factor`
    /// (family shapes preserved). Arrival and service rates are unchanged.
    pub fn scale_switchover(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda.clone(),
            service: self.service.clone(),
            switchover: self.switchover.iter().map(|v| v.scale_mean(factor)).collect(),
            table: self.table.clone(),
        }
    }
}

/// Service control applied at each stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Reduce the queue by a Binomial(N, r_i) count, serving arrivals that
    /// land during those services as well.
    BinomialExhaustive { reduction: Vec<f64> },
    /// Serve exactly the Binomial(N, r_i) customers present at the polling
    /// epoch; later arrivals wait for the next visit.
    BinomialGated { reduction: Vec<f64> },
    /// Serve the queue down to `levels[i]` if it is longer, else move on.
    BaseStock { levels: Vec<u64> },
}

impl Policy {
    pub fn kind(&self) -> &'static str {
        match self {
            Policy::BinomialExhaustive { .. } => "bep",
            Policy::BinomialGated { .. } => "bgp",
            Policy::BaseStock { .. } => "bsp",
        }
    }

    fn stage_parameter_count(&self) -> usize {
        match self {
            Policy::BinomialExhaustive { reduction } | Policy::BinomialGated { reduction } => {
                reduction.len()
            }
            Policy::BaseStock { levels } => levels.len(),
        }
    }
}

/// One violated admissibility invariant. Indices in messages are 1-based to
/// match the configuration format.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveArrivalRate { queue: usize, lambda: f64 },
    NonPositiveServiceMean { queue: usize },
    Unstable { rho: f64 },
    ZeroTotalSwitchover,
    PolicyLengthMismatch { expected: usize, got: usize },
    ReductionOutOfRange { stage: usize, value: f64 },
    StarvedQueue { queue: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NonPositiveArrivalRate { queue, lambda } => {
                write!(f, "queue {}: arrival rate {} is not positive", queue + 1, lambda)
            }
            Violation::NonPositiveServiceMean { queue } => {
                write!(f, "queue {}: service time must have positive mean", queue + 1)
            }
            Violation::Unstable { rho } => {
                write!(f, "total traffic intensity rho = {rho} is not below 1")
            }
            Violation::ZeroTotalSwitchover => {
                write!(f, "total mean switchover time must be positive")
            }
            Violation::PolicyLengthMismatch { expected, got } => {
                write!(f, "policy defines {got} stage parameters, table has {expected} stages")
            }
            Violation::ReductionOutOfRange { stage, value } => {
                write!(f, "stage {}: reduction probability {} outside [0, 1]", stage + 1, value)
            }
            Violation::StarvedQueue { queue } => write!(
                f,
                "queue {}: reduction probabilities sum to zero over its stages, so it is never served",
                queue + 1
            ),
        }
    }
}

/// Outcome of [`validate`]: empty means the pair is admissible.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<Violation> {
        self.violations
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "admissible");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Check every admissibility invariant of the pair. Violations are data,
/// not failures: the report is returned even when the pair is unusable.
///
/// A passing report guarantees that every solver and the simulator accept
/// the pair.
pub fn validate(model: &SystemModel, policy: &Policy) -> ValidationReport {
    let mut violations = Vec::new();
    for k in 0..model.queue_count() {
        if !(model.lambda(k) > 0.0) || !model.lambda(k).is_finite() {
            violations.push(Violation::NonPositiveArrivalRate { queue: k, lambda: model.lambda(k) });
        }
        if !(model.service(k).mean() > 0.0) {
            violations.push(Violation::NonPositiveServiceMean { queue: k });
        }
    }
    let rho = model.rho();
    if !(rho < 1.0) {
        violations.push(Violation::Unstable { rho });
    }
    if !(model.total_switchover_mean() > 0.0) {
        violations.push(Violation::ZeroTotalSwitchover);
    }

    let expected = model.stage_count();
    let got = policy.stage_parameter_count();
    if got != expected {
        violations.push(Violation::PolicyLengthMismatch { expected, got });
        return ValidationReport { violations };
    }
    match policy {
        Policy::BinomialExhaustive { reduction } | Policy::BinomialGated { reduction } => {
            for (i, &r) in reduction.iter().enumerate() {
                if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                    violations.push(Violation::ReductionOutOfRange { stage: i, value: r });
                }
            }
            for k in 0..model.queue_count() {
                let total: f64 = model
                    .table()
                    .stages_serving(k)
                    .iter()
                    .map(|&i| reduction[i])
                    .sum();
                if !(total > 0.0) {
                    violations.push(Violation::StarvedQueue { queue: k });
                }
            }
        }
        Policy::BaseStock { .. } => {
            // Levels are unsigned, so the nonnegativity invariant holds by
            // construction.
        }
    }
    ValidationReport { violations }
}

/// Convenience: error out with the report when the pair is inadmissible.
pub fn require_admissible(model: &SystemModel, policy: &Policy) -> Result<()> {
    let report = validate(model, policy);
    if report.is_admissible() {
        Ok(())
    } else {
        Err(Error::Inadmissible(report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn exp_spec(rate: f64) -> DistributionSpec {
        DistributionSpec::exponential(rate).unwrap()
    }

    fn det_spec(v: f64) -> DistributionSpec {
        DistributionSpec::deterministic(v).unwrap()
    }

    /// Composite Simpson integration of x^order * density over [0, hi].
    fn numeric_moment(density: impl Fn(f64) -> f64, order: i32, hi: f64) -> f64 {
        let n = 20_000;
        let h = hi / n as f64;
        let g = |x: f64| x.powi(order) * density(x);
        let mut acc = g(0.0) + g(hi);
        for j in 1..n {
            let x = j as f64 * h;
            acc += if j % 2 == 0 { 2.0 * g(x) } else { 4.0 * g(x) };
        }
        acc * h / 3.0
    }

    #[test]
    fn moments_match_closed_forms() {
        assert_eq!(det_spec(2.0).moment(2).unwrap(), 4.0);
        assert_eq!(exp_spec(8.0).moment(1).unwrap(), 0.125);
        // Second moment of Exp(8), checked against numeric integration of
        // the density.
        let analytic = exp_spec(8.0).moment(2).unwrap();
        assert_eq!(analytic, 0.03125);
        let numeric = numeric_moment(|x| 8.0 * (-8.0 * x).exp(), 2, 6.0);
        assert!((analytic - numeric).abs() < 1e-9, "numeric {numeric}");
    }

    #[test]
    fn erlang_and_uniform_moments_match_numeric_integration() {
        let erl = DistributionSpec::erlang(3, 2.0).unwrap();
        let density = |x: f64| 4.0 * x * x * (-2.0 * x).exp(); // rate^k x^{k-1} e^{-rate x} / (k-1)!
        assert!((erl.mean() - numeric_moment(density, 1, 30.0)).abs() < 1e-9);
        assert!((erl.second_moment() - numeric_moment(density, 2, 40.0)).abs() < 1e-8);

        let uni = DistributionSpec::uniform(0.5, 2.5).unwrap();
        assert!((uni.mean() - 1.5).abs() < 1e-12);
        assert!((uni.second_moment() - (0.25 + 1.25 + 6.25) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn moment_order_guard() {
        assert!(matches!(
            exp_spec(1.0).moment(3),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn lst_examples() {
        let d = det_spec(1.0);
        assert!((d.lst(0.5).unwrap() - (-0.5f64).exp()).abs() < 1e-12);
        for spec in [
            det_spec(1.0),
            exp_spec(4.0),
            DistributionSpec::erlang(2, 3.0).unwrap(),
            DistributionSpec::uniform(0.0, 2.0).unwrap(),
        ] {
            assert_eq!(spec.lst(0.0).unwrap(), 1.0);
        }
        assert!((exp_spec(4.0).lst(4.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            exp_spec(4.0).lst(-1.0),
            Err(Error::NegativeLstArgument(_))
        ));
    }

    #[test]
    fn uniform_lst_is_stable_for_small_arguments() {
        let u = DistributionSpec::uniform(1.0, 3.0).unwrap();
        // For u -> 0 the transform approaches 1 - u * mean.
        let v = u.lst(1e-9).unwrap();
        assert!((v - (1.0 - 1e-9 * 2.0)).abs() < 1e-15);
        // Cross-check against direct quadrature over the support at a
        // moderate argument.
        let quad = {
            let n = 40_000;
            let h = 2.0 / n as f64;
            let g = |x: f64| 0.5 * (-0.7 * x).exp();
            let mut acc = g(1.0) + g(3.0);
            for j in 1..n {
                let x = 1.0 + j as f64 * h;
                acc += if j % 2 == 0 { 2.0 * g(x) } else { 4.0 * g(x) };
            }
            acc * h / 3.0
        };
        assert!((u.lst(0.7).unwrap() - quad).abs() < 1e-10);
    }

    #[test]
    fn lookback_matches_cyclic_index_arithmetic() {
        // Literal form of the stage-lookback definition, 1-based.
        fn w_one_based(i: usize, j: usize, total: usize) -> usize {
            let m = j % total;
            if m < i {
                i - m
            } else {
                total - (m - i)
            }
        }
        let table = PollingTable::from_one_based(&[1, 2, 3, 2, 3], 3).unwrap();
        for i in 0..5 {
            for j in 0..23 {
                let expected = w_one_based(i + 1, j, 5) - 1;
                assert_eq!(table.lookback(i, j), expected, "i={i} j={j}");
            }
        }
        assert_eq!(table.lookback(0, 1), 4);
        assert_eq!(table.lookback(2, 3), 4);
        assert_eq!(table.lookback(3, 0), 3);
    }

    #[test]
    fn table_requires_full_coverage() {
        assert!(PollingTable::new(vec![0, 0], 2).is_err());
        assert!(PollingTable::new(vec![0, 2], 2).is_err());
        let t = PollingTable::new(vec![0, 1, 0], 2).unwrap();
        assert!(!t.is_cyclic());
        assert_eq!(t.stages_serving(0), vec![0, 2]);
    }

    fn single_queue_model(lambda: f64) -> SystemModel {
        SystemModel::new(
            vec![lambda],
            vec![exp_spec(4.0)],
            vec![det_spec(1.0)],
            PollingTable::new(vec![0], 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn validate_examples() {
        let bep = Policy::BinomialExhaustive { reduction: vec![1.0] };
        assert!(validate(&single_queue_model(1.0), &bep).is_admissible());

        let report = validate(&single_queue_model(5.0), &bep);
        assert!(report
            .violations()
            .iter()
            .any(|v| matches!(v, Violation::Unstable { .. })));

        let two = SystemModel::new(
            vec![1.0, 1.0],
            vec![exp_spec(4.0), exp_spec(4.0)],
            vec![det_spec(1.0), det_spec(1.0)],
            PollingTable::new(vec![0, 1], 2).unwrap(),
        )
        .unwrap();
        let starved = Policy::BinomialExhaustive { reduction: vec![0.0, 0.5] };
        let report = validate(&two, &starved);
        assert_eq!(
            report.violations(),
            &[Violation::StarvedQueue { queue: 0 }]
        );
    }

    #[test]
    fn validate_is_pure() {
        let model = single_queue_model(5.0);
        let policy = Policy::BinomialExhaustive { reduction: vec![0.3] };
        assert_eq!(validate(&model, &policy), validate(&model, &policy));
    }

    #[test]
    fn zero_switchover_total_rejected_but_per_stage_zero_allowed() {
        let table = PollingTable::new(vec![0, 0], 1).unwrap();
        let model = SystemModel::new(
            vec![1.0],
            vec![exp_spec(4.0)],
            vec![det_spec(0.0), det_spec(1.0)],
            table.clone(),
        )
        .unwrap();
        let policy = Policy::BinomialExhaustive { reduction: vec![0.5, 0.5] };
        assert!(validate(&model, &policy).is_admissible());

        let all_zero = SystemModel::new(
            vec![1.0],
            vec![exp_spec(4.0)],
            vec![det_spec(0.0), det_spec(0.0)],
            table,
        )
        .unwrap();
        let report = validate(&all_zero, &policy);
        assert_eq!(report.violations(), &[Violation::ZeroTotalSwitchover]);
    }

    #[test]
    fn sampler_means_within_five_standard_errors() {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5EED);
        for spec in [
            det_spec(1.5),
            exp_spec(2.0),
            DistributionSpec::erlang(4, 2.0).unwrap(),
            DistributionSpec::uniform(0.25, 1.75).unwrap(),
        ] {
            let n = 100_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let x = spec.sample(&mut rng);
                assert!(x >= 0.0, "negative draw from {spec}");
                sum += x;
                sumsq += x * x;
            }
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt().max(1e-12);
            assert!(
                (mean - spec.mean()).abs() <= 5.0 * se,
                "{spec}: sample mean {mean} vs {}",
                spec.mean()
            );
        }
    }

    #[test]
    fn scale_mean_preserves_family_and_scales_mean() {
        for spec in [
            det_spec(2.0),
            exp_spec(8.0),
            DistributionSpec::erlang(3, 6.0).unwrap(),
            DistributionSpec::uniform(1.0, 3.0).unwrap(),
        ] {
            let scaled = spec.scale_mean(10.0);
            assert!((scaled.mean() - 10.0 * spec.mean()).abs() < 1e-12);
            assert_eq!(
                std::mem::discriminant(&scaled),
                std::mem::discriminant(&spec)
            );
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_spec() -> impl Strategy<Value = DistributionSpec> {
            prop_oneof![
                (0.01f64..50.0).prop_map(|v| DistributionSpec::deterministic(v).unwrap()),
                (0.05f64..40.0).prop_map(|r| DistributionSpec::exponential(r).unwrap()),
                ((1u32..8), (0.05f64..40.0))
                    .prop_map(|(k, r)| DistributionSpec::erlang(k, r).unwrap()),
                ((0.0f64..5.0), (0.01f64..10.0))
                    .prop_map(|(a, w)| DistributionSpec::uniform(a, a + w).unwrap()),
            ]
        }

        proptest! {
            #[test]
            fn second_moment_dominates_squared_mean(spec in arbitrary_spec()) {
                prop_assert!(spec.second_moment() + 1e-12 >= spec.mean() * spec.mean());
            }

            #[test]
            fn lst_is_nonincreasing_and_log_convex(spec in arbitrary_spec()) {
                let grid: Vec<f64> = (0..40).map(|j| j as f64 * 0.25).collect();
                let vals: Vec<f64> =
                    grid.iter().map(|&u| spec.lst(u).unwrap()).collect();
                for v in &vals {
                    prop_assert!(*v > 0.0 && *v <= 1.0);
                }
                for w in vals.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
                let logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
                for w in logs.windows(3) {
                    prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
                }
            }
        }
    }
}
