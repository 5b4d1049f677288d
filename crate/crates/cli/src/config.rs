//! The model configuration file: one human-editable TOML document per
//! system.
//!
//! ```toml
//! table = [1, 2, 3, 2, 3]            # stage -> queue, 1-based
//!
//! [[queues]]
//! lambda = 2.0                        # arrivals per unit time
//! service = { family = "exponential", params = [8.0] }
//!
//! # ... one [[queues]] block per queue ...
//!
//! [[switchover]]                      # one per stage
//! family = "deterministic"
//! params = [2.0]
//!
//! [policy]
//! kind = "bep"                        # bep | bgp | bsp
//! r = [1.0, 0.6, 1.0, 1.0, 0.4]       # per-stage probabilities (bep/bgp)
//! # y = [0, 6, 0, 0, 4]               # per-stage levels (bsp)
//! ```
//!
//! Families and their `params`: `deterministic` `[value]`,
//! `exponential` `[rate]`, `erlang` `[shape, rate]`, `uniform`
//! `[lower, upper]`. Rates are per unit time.

use serde::Deserialize;

use pollsys::model::{DistributionSpec, Policy, PollingTable, SystemModel};

use crate::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub queues: Vec<QueueConfig>,
    pub table: Vec<usize>,
    pub switchover: Vec<DistConfig>,
    pub policy: PolicyConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    pub lambda: f64,
    pub service: DistConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    pub family: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: String,
    pub r: Option<Vec<f64>>,
    pub y: Option<Vec<u64>>,
}

fn build_distribution(cfg: &DistConfig, role: &str) -> CliResult<DistributionSpec> {
    let need = |count: usize| -> CliResult<()> {
        if cfg.params.len() == count {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{role}: family '{}' takes {count} parameter(s), got {}",
                cfg.family,
                cfg.params.len()
            )))
        }
    };
    let spec = match cfg.family.as_str() {
        "deterministic" => {
            need(1)?;
            DistributionSpec::deterministic(cfg.params[0])
        }
        "exponential" => {
            need(1)?;
            DistributionSpec::exponential(cfg.params[0])
        }
        "erlang" => {
            need(2)?;
            let shape = cfg.params[0];
            if shape.fract() != 0.0 || shape < 1.0 {
                return Err(CliError::Config(format!(
                    "{role}: erlang shape must be a positive integer, got {shape}"
                )));
            }
            DistributionSpec::erlang(shape as u32, cfg.params[1])
        }
        "uniform" => {
            need(2)?;
            DistributionSpec::uniform(cfg.params[0], cfg.params[1])
        }
        other => {
            return Err(CliError::Config(format!(
                "{role}: unknown family '{other}' (expected deterministic, exponential, erlang, or uniform)"
            )))
        }
    };
    spec.map_err(|e| CliError::Config(format!("{role}: {e}")))
}

/// Parse a configuration document into a model/policy pair. Structural
/// problems are reported here; admissibility is a separate `validate` step.
pub fn parse(text: &str) -> CliResult<(SystemModel, Policy)> {
    let cfg: ConfigFile =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let queue_count = cfg.queues.len();
    if queue_count == 0 {
        return Err(CliError::Config("at least one queue is required".into()));
    }
    let table = PollingTable::from_one_based(&cfg.table, queue_count)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let lambda: Vec<f64> = cfg.queues.iter().map(|q| q.lambda).collect();
    let service = cfg
        .queues
        .iter()
        .enumerate()
        .map(|(k, q)| build_distribution(&q.service, &format!("queue {} service", k + 1)))
        .collect::<CliResult<Vec<_>>>()?;
    let switchover = cfg
        .switchover
        .iter()
        .enumerate()
        .map(|(i, s)| build_distribution(s, &format!("stage {} switchover", i + 1)))
        .collect::<CliResult<Vec<_>>>()?;

    let model = SystemModel::new(lambda, service, switchover, table)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let policy = match cfg.policy.kind.as_str() {
        "bep" | "bgp" => {
            let r = cfg.policy.r.clone().ok_or_else(|| {
                CliError::Config(format!("policy '{}' requires the r list", cfg.policy.kind))
            })?;
            if cfg.policy.y.is_some() {
                return Err(CliError::Config(
                    "policy fields r and y are mutually exclusive".into(),
                ));
            }
            if cfg.policy.kind == "bep" {
                Policy::BinomialExhaustive { reduction: r }
            } else {
                Policy::BinomialGated { reduction: r }
            }
        }
        "bsp" => {
            let y = cfg
                .policy
                .y
                .clone()
                .ok_or_else(|| CliError::Config("policy 'bsp' requires the y list".into()))?;
            if cfg.policy.r.is_some() {
                return Err(CliError::Config(
                    "policy fields r and y are mutually exclusive".into(),
                ));
            }
            Policy::BaseStock { levels: y }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown policy kind '{other}' (expected bep, bgp, or bsp)"
            )))
        }
    };
    Ok((model, policy))
}

/// Load and parse a configuration file.
pub fn load(path: &std::path::Path) -> CliResult<(SystemModel, Policy)> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}
