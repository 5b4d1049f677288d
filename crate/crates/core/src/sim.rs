//! Event-driven simulator of the polling system under all three policies,
//! with batch-means moment estimation.
//!
//! A single run is strictly sequential: the event order is the correctness
//! contract, and an identical (model, policy, options) tuple reproduces the
//! samples bit for bit. Replications run in parallel with seeds derived
//! deterministically from the base seed, so results never depend on thread
//! scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{DistributionSpec, Policy, SystemModel};
use crate::{Error, Result};

/// Run parameters for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Number of cycles to simulate (each cycle visits every stage once).
    pub cycles: u64,
    /// Leading cycles dropped from the recorded samples.
    pub warmup: u64,
    /// Seed of the run's random stream.
    pub seed: u64,
    /// Queue lengths at time zero (the first stage-1 polling epoch);
    /// empty queues when absent.
    pub initial_queues: Option<Vec<u64>>,
}

/// Recorded observations: queue lengths at every polling epoch and busy
/// times per stage, one entry per retained cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSampleSet {
    stage_count: usize,
    queue_count: usize,
    seed: u64,
    warmup: u64,
    /// `q_at_poll[stage][cycle][queue]`.
    q_at_poll: Vec<Vec<Vec<u64>>>,
    /// `busy[stage][cycle]`.
    busy: Vec<Vec<f64>>,
    /// Observed length of each retained cycle.
    cycle_lengths: Vec<f64>,
}

impl StageSampleSet {
    pub fn stage_count(&self) -> usize {
        self.stage_count
    }

    pub fn queue_count(&self) -> usize {
        self.queue_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    /// Retained cycles.
    pub fn cycles(&self) -> usize {
        self.cycle_lengths.len()
    }

    /// Queue-length observations `Q_k(A_i)` for one stage: one `K`-vector
    /// per retained cycle.
    pub fn queue_observations(&self, stage: usize) -> &[Vec<u64>] {
        &self.q_at_poll[stage]
    }

    /// Busy-time observations `B_i` for one stage.
    pub fn busy_observations(&self, stage: usize) -> &[f64] {
        &self.busy[stage]
    }

    pub fn cycle_lengths(&self) -> &[f64] {
        &self.cycle_lengths
    }

    /// FNV-1a digest of every recorded observation; equal traces hash
    /// equal, so two runs with the same seed must agree on this.
    pub fn trace_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for stage in 0..self.stage_count {
            for (cycle, qs) in self.q_at_poll[stage].iter().enumerate() {
                for &q in qs {
                    eat(q);
                }
                eat(self.busy[stage][cycle].to_bits());
            }
        }
        for &len in &self.cycle_lengths {
            eat(len.to_bits());
        }
        h
    }

    /// Concatenate replications in index order into one pooled sample set.
    pub fn merge(sets: &[StageSampleSet]) -> Result<StageSampleSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidArgument("no sample sets to merge".into()))?;
        let mut merged = StageSampleSet {
            stage_count: first.stage_count,
            queue_count: first.queue_count,
            seed: first.seed,
            warmup: first.warmup,
            q_at_poll: vec![Vec::new(); first.stage_count],
            busy: vec![Vec::new(); first.stage_count],
            cycle_lengths: Vec::new(),
        };
        for set in sets {
            if set.stage_count != first.stage_count || set.queue_count != first.queue_count {
                return Err(Error::InvalidArgument(
                    "sample sets have mismatched shapes".into(),
                ));
            }
            for stage in 0..set.stage_count {
                merged.q_at_poll[stage].extend(set.q_at_poll[stage].iter().cloned());
                merged.busy[stage].extend_from_slice(&set.busy[stage]);
            }
            merged.cycle_lengths.extend_from_slice(&set.cycle_lengths);
        }
        Ok(merged)
    }
}

/// Cached sampler for one distribution family.
enum Sampler {
    Point(f64),
    Exponential(Exp<f64>),
    Erlang(Gamma<f64>),
    Uniform { lower: f64, upper: f64 },
}

impl Sampler {
    fn new(spec: &DistributionSpec) -> Self {
        match *spec {
            DistributionSpec::Deterministic { value } => Sampler::Point(value),
            DistributionSpec::Exponential { rate } => {
                Sampler::Exponential(Exp::new(rate).expect("validated rate"))
            }
            DistributionSpec::Erlang { shape, rate } => Sampler::Erlang(
                Gamma::new(f64::from(shape), 1.0 / rate).expect("validated parameters"),
            ),
            DistributionSpec::Uniform { lower, upper } => Sampler::Uniform { lower, upper },
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Point(v) => *v,
            Sampler::Exponential(d) => d.sample(rng),
            Sampler::Erlang(d) => d.sample(rng),
            Sampler::Uniform { lower, upper } => rng.random_range(*lower..*upper),
        }
    }
}

/// Sequential event engine. Arrivals are processed in chronological order;
/// at equal timestamps departures precede arrivals, which keeps traces
/// reproducible even with zero-length switchovers or services.
struct Engine<'m> {
    model: &'m SystemModel,
    clock: f64,
    queues: Vec<u64>,
    next_arrival: Vec<f64>,
    arrivals: Vec<Exp<f64>>,
    services: Vec<Sampler>,
    switchovers: Vec<Sampler>,
    rng: ChaCha12Rng,
}

impl<'m> Engine<'m> {
    fn new(model: &'m SystemModel, seed: u64, initial: &[u64]) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let arrivals: Vec<Exp<f64>> = (0..model.queue_count())
            .map(|k| Exp::new(model.lambda(k)).expect("validated rate"))
            .collect();
        let next_arrival = arrivals.iter().map(|d| d.sample(&mut rng)).collect();
        Engine {
            model,
            clock: 0.0,
            queues: initial.to_vec(),
            next_arrival,
            arrivals,
            services: (0..model.queue_count())
                .map(|k| Sampler::new(model.service(k)))
                .collect(),
            switchovers: (0..model.stage_count())
                .map(|i| Sampler::new(model.switchover(i)))
                .collect(),
            rng,
        }
    }

    fn earliest_arrival(&self) -> usize {
        let mut best = 0;
        for k in 1..self.next_arrival.len() {
            if self.next_arrival[k] < self.next_arrival[best] {
                best = k;
            }
        }
        best
    }

    fn arrive(&mut self, queue: usize) {
        self.clock = self.next_arrival[queue];
        self.queues[queue] += 1;
        self.next_arrival[queue] = self.clock + self.arrivals[queue].sample(&mut self.rng);
    }

    /// Process every arrival up to and including `t`, then move the clock
    /// to `t`.
    fn advance_to(&mut self, t: f64) {
        loop {
            let k = self.earliest_arrival();
            if self.next_arrival[k] <= t {
                self.arrive(k);
            } else {
                break;
            }
        }
        self.clock = t;
    }

    /// Serve one customer of `queue`: arrivals strictly before the
    /// departure instant land first, the departure itself is processed at
    /// its timestamp.
    fn serve_one(&mut self, queue: usize) {
        let departure = self.clock + self.services[queue].draw(&mut self.rng);
        loop {
            let k = self.earliest_arrival();
            if self.next_arrival[k] < departure {
                self.arrive(k);
            } else {
                break;
            }
        }
        self.clock = departure;
        self.queues[queue] -= 1;
    }

    /// Serve the stage under `policy` starting at the current polling
    /// epoch, then perform the switchover. Returns the busy time.
    fn run_stage(&mut self, policy: &Policy, stage: usize) -> f64 {
        let c = self.model.table().queue_at(stage);
        let epoch = self.clock;
        match policy {
            Policy::BinomialExhaustive { reduction } => {
                let found = self.queues[c];
                let selected = self.binomial(found, reduction[stage]);
                let target = found - selected;
                while self.queues[c] > target {
                    self.serve_one(c);
                }
            }
            Policy::BinomialGated { reduction } => {
                let found = self.queues[c];
                let selected = self.binomial(found, reduction[stage]);
                for _ in 0..selected {
                    self.serve_one(c);
                }
            }
            Policy::BaseStock { levels } => {
                while self.queues[c] > levels[stage] {
                    self.serve_one(c);
                }
            }
        }
        let busy = self.clock - epoch;
        let switch = self.switchovers[stage].draw(&mut self.rng);
        self.advance_to(self.clock + switch);
        busy
    }

    fn binomial(&mut self, n: u64, p: f64) -> u64 {
        if n == 0 {
            return 0;
        }
        Binomial::new(n, p).expect("validated probability").sample(&mut self.rng)
    }
}

/// Simulate `options.cycles` cycles of exact discrete-event dynamics and
/// record `Q(A_i)` and `B_i` for every stage of every retained cycle.
pub fn simulate(
    model: &SystemModel,
    policy: &Policy,
    options: &SimOptions,
) -> Result<StageSampleSet> {
    crate::model::require_admissible(model, policy)?;
    if options.cycles == 0 || options.cycles <= options.warmup {
        return Err(Error::InvalidArgument(format!(
            "need cycles > warmup, got cycles = {} warmup = {}",
            options.cycles, options.warmup
        )));
    }
    let kq = model.queue_count();
    let initial = match &options.initial_queues {
        Some(q) if q.len() == kq => q.clone(),
        Some(q) => {
            return Err(Error::InvalidArgument(format!(
                "initial state has {} queues, model has {kq}",
                q.len()
            )))
        }
        None => vec![0; kq],
    };

    let stages = model.stage_count();
    let retained = (options.cycles - options.warmup) as usize;
    let mut samples = StageSampleSet {
        stage_count: stages,
        queue_count: kq,
        seed: options.seed,
        warmup: options.warmup,
        q_at_poll: vec![Vec::with_capacity(retained); stages],
        busy: vec![Vec::with_capacity(retained); stages],
        cycle_lengths: Vec::with_capacity(retained),
    };

    let mut engine = Engine::new(model, options.seed, &initial);
    for cycle in 0..options.cycles {
        let keep = cycle >= options.warmup;
        let cycle_start = engine.clock;
        for stage in 0..stages {
            let at_poll = engine.queues.clone();
            let busy = engine.run_stage(policy, stage);
            if keep {
                samples.q_at_poll[stage].push(at_poll);
                samples.busy[stage].push(busy);
            }
        }
        if keep {
            samples.cycle_lengths.push(engine.clock - cycle_start);
        }
    }
    Ok(samples)
}

/// Queue lengths to start a scaled system in: the stage-1 equilibrium value
/// of the matching first-moment or fluid solution, scaled by `n` and
/// floored.
pub fn initial_state(model: &SystemModel, policy: &Policy, n: f64) -> Result<Vec<u64>> {
    let q1: Vec<f64> = match policy {
        Policy::BinomialExhaustive { reduction } => {
            let sol = crate::analysis::solve_first_order(model, reduction)?;
            sol.q_matrix()[0].clone()
        }
        _ => crate::fluid::fluid_pe(model, policy)?.q_matrix()[0].clone(),
    };
    Ok(q1
        .iter()
        // Nudge before flooring so solver tolerance cannot pull an exact
        // integer below itself.
        .map(|&q| ((n * q + 1e-9).floor().max(0.0)) as u64)
        .collect())
}

/// Point estimate with a 95% batch-means confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub point: f64,
    pub ci_halfwidth: f64,
    pub batches: usize,
}

impl MomentEstimate {
    pub fn covers(&self, value: f64) -> bool {
        (value - self.point).abs() <= self.ci_halfwidth
    }
}

/// Batch-means estimates of `E[Q_k(A_i)^p]` per (stage, queue) and
/// `E[B_i^p]` per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub order: u32,
    queue: Vec<Vec<MomentEstimate>>,
    busy: Vec<MomentEstimate>,
}

impl MomentSummary {
    pub fn queue_moment(&self, stage: usize, queue: usize) -> MomentEstimate {
        self.queue[stage][queue]
    }

    pub fn busy_moment(&self, stage: usize) -> MomentEstimate {
        self.busy[stage]
    }

    pub fn stage_count(&self) -> usize {
        self.busy.len()
    }

    pub fn queue_count(&self) -> usize {
        self.queue.first().map_or(0, Vec::len)
    }
}

/// 95% batch-means interval: 20 batches when at least 200 observations are
/// available, otherwise one batch per ten observations, at least ten
/// batches.
pub fn batch_means(values: &[f64]) -> Result<MomentEstimate> {
    let n = values.len();
    let batches = if n >= 200 { 20 } else { n / 10 };
    if batches < 10 {
        return Err(Error::InsufficientSamples { have: n, need: 100 });
    }
    let size = n / batches;
    let used = &values[n - batches * size..];
    let batch_means: Vec<f64> = used
        .chunks_exact(size)
        .map(|chunk| chunk.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = batch_means.iter().sum::<f64>() / batches as f64;
    let var = batch_means
        .iter()
        .map(|m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (batches - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (batches - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    Ok(MomentEstimate {
        point: grand,
        ci_halfwidth: t * (var / batches as f64).sqrt(),
        batches,
    })
}

/// Estimate the `p`-th moments of queue lengths at the polling epochs and
/// of the busy times from recorded samples.
pub fn estimate_moments(samples: &StageSampleSet, order: u32) -> Result<MomentSummary> {
    if order == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    let p = order as i32;
    let mut queue = Vec::with_capacity(samples.stage_count());
    let mut busy = Vec::with_capacity(samples.stage_count());
    for stage in 0..samples.stage_count() {
        let obs = samples.queue_observations(stage);
        let mut row = Vec::with_capacity(samples.queue_count());
        for k in 0..samples.queue_count() {
            let values: Vec<f64> = obs.iter().map(|qs| (qs[k] as f64).powi(p)).collect();
            row.push(batch_means(&values)?);
        }
        queue.push(row);
        let values: Vec<f64> = samples
            .busy_observations(stage)
            .iter()
            .map(|b| b.powi(p))
            .collect();
        busy.push(batch_means(&values)?);
    }
    Ok(MomentSummary { order, queue, busy })
}

/// Deterministic replication seed: a SplitMix64 finalizer over the base
/// seed advanced by the golden-ratio increment per replication.
pub fn derive_seed(base: u64, replication: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(replication.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run independent replications in parallel. Replication `r` uses
/// `derive_seed(base_seed, r)`, so the result is independent of execution
/// order and the degree of parallelism.
pub fn run_replications(
    model: &SystemModel,
    policy: &Policy,
    reps: u64,
    cycles: u64,
    warmup: u64,
    base_seed: u64,
    initial_queues: Option<Vec<u64>>,
) -> Result<Vec<StageSampleSet>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    (0..reps)
        .into_par_iter()
        .map(|r| {
            simulate(
                model,
                policy,
                &SimOptions {
                    cycles,
                    warmup,
                    seed: derive_seed(base_seed, r),
                    initial_queues: initial_queues.clone(),
                },
            )
        })
        .collect()
}
