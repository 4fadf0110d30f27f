//! Run configuration: one JSON document drives every command.
//!
//! Schema (version 1): unknown keys are rejected everywhere.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "task":    { ... dataset spec ... },
//!   "train":   { ... training hyperparameters ... },
//!   "restore": { "t0": 0.75, "nfe": 1, "sampler": "consistency",
//!                "schedule": "uniform", "n_eval": 256, "eval_seed": 777 },
//!   "sweep":   { "grid": [0.3, 0.5, 0.7, 0.9], "nfe_list": [1, 5, 10] }
//! }
//! ```
//!
//! Only the sections a command needs must be present; command-line flags
//! override config keys.

use serde::Deserialize;

use ebridge_core::tasks::TaskSpec;
use ebridge_core::training::TrainConfig;
use ebridge_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Consistency,
    Ode,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "consistency" => Ok(SamplerKind::Consistency),
            "ode" => Ok(SamplerKind::Ode),
            other => Err(format!(
                "unknown sampler {other:?} (expected consistency|ode)"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreSection {
    pub t0: f64,
    #[serde(default = "default_nfe")]
    pub nfe: usize,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    /// Number of evaluation samples drawn from the task spec.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
}

fn default_nfe() -> usize {
    1
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Consistency
}
fn default_schedule() -> String {
    "uniform".into()
}
fn default_n_eval() -> usize {
    256
}
fn default_eval_seed() -> u64 {
    777
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    pub nfe_list: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub task: Option<TaskSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub restore: Option<RestoreSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} is not {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn task(&self) -> Result<&TaskSpec> {
        self.task
            .as_ref()
            .ok_or_else(|| Error::Config("config is missing the \"task\" section".into()))
    }

    pub fn train(&self) -> Result<&TrainConfig> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Config("config is missing the \"train\" section".into()))
    }

    pub fn restore(&self) -> Result<&RestoreSection> {
        self.restore
            .as_ref()
            .ok_or_else(|| Error::Config("config is missing the \"restore\" section".into()))
    }

    pub fn sweep(&self) -> Result<&SweepSection> {
        self.sweep
            .as_ref()
            .ok_or_else(|| Error::Config("config is missing the \"sweep\" section".into()))
    }
}

/// Worker cap from `EBRIDGE_THREADS`; defaults to 1 for strict determinism
/// guarantees (outputs are identical for any value because every sample draws
/// from its own counter-based substream).
pub fn worker_threads() -> usize {
    std::env::var("EBRIDGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
