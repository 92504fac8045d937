//! Experiment configuration: a flat JSON object of scalars and arrays.
//!
//! Only `dataset` is required. Relative file paths are resolved against the
//! directory holding the config file. [`ExperimentConfig::resolve`] fills in
//! derived values (ratios, client capabilities, merge target) so the echoed
//! config reproduces a run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::exec::Execution;
use crate::model::{default_ratios, Activation};
use crate::scheduler::{CostModel, Policy};
use crate::sim::{Aggregation, StalenessMode};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FEDRAA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

/// Assignment rule plus aggregation, as named in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    #[default]
    GreRaa,
    Random,
    Mp,
    Sync,
}

impl SchedulerMode {
    pub const ALL: [SchedulerMode; 4] = [
        SchedulerMode::GreRaa,
        SchedulerMode::Random,
        SchedulerMode::Mp,
        SchedulerMode::Sync,
    ];

    pub fn policy(self) -> Policy {
        match self {
            SchedulerMode::GreRaa | SchedulerMode::Sync => Policy::GreRaa,
            SchedulerMode::Random => Policy::Random,
            SchedulerMode::Mp => Policy::MinPriority,
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            SchedulerMode::Sync => Aggregation::Sync,
            _ => Aggregation::Async,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerMode::GreRaa => "gre_raa",
            SchedulerMode::Random => "random",
            SchedulerMode::Mp => "mp",
            SchedulerMode::Sync => "sync",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StalenessKind {
    Constant,
    #[default]
    Polynomial,
}

fn d_classes() -> usize {
    2
}
fn d_dim() -> usize {
    2
}
fn d_per_class() -> usize {
    200
}
fn d_test_per_class() -> usize {
    100
}
fn d_separation() -> f64 {
    6.0
}
fn d_hidden() -> usize {
    16
}
fn d_m() -> usize {
    2
}
fn d_alpha() -> f64 {
    0.5
}
fn d_staleness_a() -> f64 {
    0.5
}
fn d_gamma() -> f64 {
    0.005
}
fn d_rho() -> f64 {
    0.1
}
fn d_batch() -> usize {
    128
}
fn d_local_epochs() -> usize {
    5
}
fn d_n() -> usize {
    10
}
fn d_cap_low() -> f64 {
    1.0
}
fn d_cap_high() -> f64 {
    3.0
}
fn d_q() -> u64 {
    100
}
fn d_tick_budget() -> f64 {
    1e5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,

    // Synthetic blobs.
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_per_class")]
    pub per_class: usize,
    #[serde(default = "d_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d_separation")]
    pub separation: f64,

    // IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,

    /// Hidden units; 0 gives multinomial logistic regression.
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub activation: Activation,

    #[serde(rename = "M", default = "d_m")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,

    #[serde(default)]
    pub scheduler: SchedulerMode,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub staleness: StalenessKind,
    #[serde(default = "d_staleness_a")]
    pub staleness_a: f64,

    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Passes over the local shard per task.
    #[serde(default = "d_local_epochs")]
    pub local_epochs: usize,
    /// Fixed SGD steps per task, overriding `local_epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_iterations: Option<usize>,

    /// Delay bound in ticks; defaults to the sorted offline bound.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub com_up: f64,
    #[serde(default)]
    pub com_down: f64,

    #[serde(rename = "N", default = "d_n")]
    pub n: usize,
    /// Explicit per-client capabilities; otherwise generated from `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<f64>>,
    /// Fraction of clients at `cap_low`; the rest get `cap_high`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "d_cap_low")]
    pub cap_low: f64,
    #[serde(default = "d_cap_high")]
    pub cap_high: f64,

    #[serde(rename = "T_target", default, skip_serializing_if = "Option::is_none")]
    pub t_target: Option<u64>,
    /// Merges per fragment; `T_target = Q * M` when `T_target` is absent.
    #[serde(rename = "Q", default = "d_q")]
    pub q: u64,
    #[serde(default = "d_tick_budget")]
    pub tick_budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every_merges: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub idle_delay: f64,
    #[serde(default)]
    pub jitter_sigma: f64,

    #[serde(default)]
    pub seed: u64,
    /// Seed for data generation and sharding; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub execution: Execution,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> FedError {
    FedError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be nonnegative, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses without touching the filesystem; paths stay as written.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| FedError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn staleness_mode(&self) -> StalenessMode {
        match self.staleness {
            StalenessKind::Constant => StalenessMode::Constant,
            StalenessKind::Polynomial => StalenessMode::Polynomial { a: self.staleness_a },
        }
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.ratios.clone().unwrap_or_else(|| default_ratios(self.m))
    }

    pub fn t_target(&self) -> u64 {
        self.t_target.unwrap_or(self.q * self.m as u64)
    }

    /// Per-client capabilities, explicit or generated from `beta`
    /// (`round(beta * N)` clients at `cap_low`, listed first).
    pub fn capabilities(&self) -> Vec<f64> {
        if let Some(c) = &self.capabilities {
            return c.clone();
        }
        let beta = self.beta.unwrap_or(0.3);
        let low = ((beta * self.n as f64).round() as usize).min(self.n);
        (0..self.n)
            .map(|i| if i < low { self.cap_low } else { self.cap_high })
            .collect()
    }

    /// Writes derived defaults back into the config.
    pub fn resolve(&mut self) {
        self.ratios = Some(self.ratios());
        self.capabilities = Some(self.capabilities());
        self.t_target = Some(self.t_target());
        self.data_seed = Some(self.data_seed());
    }

    /// Checks every constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.classes < 2 {
                    return Err(bad("classes", "need at least 2"));
                }
                if self.dim < 1 {
                    return Err(bad("dim", "must be at least 1"));
                }
                if self.per_class < 1 {
                    return Err(bad("per_class", "must be at least 1"));
                }
                if self.test_per_class < 1 {
                    return Err(bad("test_per_class", "must be at least 1"));
                }
                positive("separation", self.separation)?;
            }
            DatasetKind::Idx => {
                for (key, v) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if v.is_none() {
                        return Err(bad(key, "required when dataset is \"idx\""));
                    }
                }
                if self.train_limit == Some(0) {
                    return Err(bad("train_limit", "must be positive"));
                }
                if self.test_limit == Some(0) {
                    return Err(bad("test_limit", "must be positive"));
                }
            }
        }
        if self.m < 1 {
            return Err(bad("M", "must be at least 1"));
        }
        if let Some(r) = &self.ratios {
            if r.len() != self.m {
                return Err(bad("ratios", format!("has {} entries but M = {}", r.len(), self.m)));
            }
            if r.iter().any(|&x| !(x > 0.0)) {
                return Err(bad("ratios", "entries must be positive"));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(bad("ratios", format!("must sum to 1, got {sum}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(bad("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        nonnegative("staleness_a", self.staleness_a)?;
        nonnegative("gamma", self.gamma)?;
        nonnegative("rho", self.rho)?;
        if self.batch_size < 1 {
            return Err(bad("batch_size", "must be positive"));
        }
        if self.local_epochs < 1 {
            return Err(bad("local_epochs", "must be positive"));
        }
        if self.local_iterations == Some(0) {
            return Err(bad("local_iterations", "must be positive"));
        }
        if let Some(k) = self.k {
            positive("K", k)?;
        }
        nonnegative("com_up", self.com_up)?;
        nonnegative("com_down", self.com_down)?;
        if self.n < 1 {
            return Err(bad("N", "must be at least 1"));
        }
        if let Some(c) = &self.capabilities {
            if c.len() != self.n {
                return Err(bad("capabilities", format!("has {} entries but N = {}", c.len(), self.n)));
            }
            for &x in c {
                positive("capabilities", x)?;
            }
        }
        if let Some(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(bad("beta", format!("must lie in [0, 1], got {b}")));
            }
        }
        positive("cap_low", self.cap_low)?;
        positive("cap_high", self.cap_high)?;
        if self.t_target == Some(0) {
            return Err(bad("T_target", "must be positive"));
        }
        if self.q == 0 {
            return Err(bad("Q", "must be positive"));
        }
        if !(self.tick_budget > 0.0) {
            return Err(bad("tick_budget", "must be positive"));
        }
        if let Some(iv) = self.checkpoint_interval {
            positive("checkpoint_interval", iv)?;
        }
        if self.checkpoint_every_merges == Some(0) {
            return Err(bad("checkpoint_every_merges", "must be positive"));
        }
        if let Some(a) = self.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(bad("target_accuracy", format!("must lie in [0, 1], got {a}")));
            }
        }
        nonnegative("idle_delay", self.idle_delay)?;
        nonnegative("jitter_sigma", self.jitter_sigma)?;
        Ok(())
    }

    fn absolutize(&mut self, base: &Path) {
        for p in [
            &mut self.train_images,
            &mut self.train_labels,
            &mut self.test_images,
            &mut self.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Applies `FEDRAA_SEED` when set, then an explicit override.
    pub fn apply_seed_overrides(&mut self, cli_seed: Option<u64>) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| FedError::Config(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))?;
        }
        if let Some(s) = cli_seed {
            self.seed = s;
        }
        Ok(())
    }
}

/// Reads, validates and path-resolves a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    let mut cfg = ExperimentConfig::from_json(&text)
        .map_err(|e| FedError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.absolutize(base);
    Ok(cfg)
}
