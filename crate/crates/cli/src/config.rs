//! Experiment configuration, a flat TOML document:
//!
//! ```toml
//! name = "moons"
//! seeds = [1, 2, 3]
//! schedules = ["no_adaptation", "gradual"]
//! holdout = 0.2
//! output_dir = "out/moons"
//!
//! [generator]
//! kind = "rotating_moons"
//! domains = 6
//! n = 500
//! total_degrees = 120.0
//! noise_sigma = 0.1
//! seed = 7
//!
//! [train]
//! epochs_per_domain = 20
//!
//! [model]
//! feature_dim = 8
//! ```
//!
//! Unknown keys are rejected. Omitted `[train]` and `[model]` keys take the
//! defaults listed on [`TrainSection`] and [`ModelSection`].

use std::collections::BTreeSet;
use std::path::PathBuf;

use gradshift::domains::GeneratorSpec;
use gradshift::objectives::{Architecture, LossKind, LossSpec, OptimizerKind, ScheduleKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    pub schedules: Vec<ScheduleKind>,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    pub output_dir: PathBuf,
    /// Record real epoch timings; off keeps `wall_ms` at 0 so reruns are byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_holdout() -> f64 {
    0.2
}

/// Defaults: λ 0.1, gp 5, k 5, Adam at 1e-3 / 5e-4, batch 64, 20 epochs per
/// domain, bounded cross-entropy at 5, labeled target on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub gp_factor: f64,
    pub k_critic: usize,
    pub lr_model: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub epochs_per_domain: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub loss_bound: f64,
    pub labeled_target: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            lambda: c.lambda,
            gp_factor: c.gp_factor,
            k_critic: c.k_critic,
            lr_model: c.lr_model,
            lr_critic: c.lr_critic,
            batch_size: c.batch_size,
            epochs_per_domain: c.epochs_per_domain,
            optimizer: c.optimizer,
            loss: c.loss.kind,
            loss_bound: c.loss.bound,
            labeled_target: c.labeled_target,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        let loss = match self.loss {
            LossKind::CrossEntropyBounded => LossSpec::cross_entropy(self.loss_bound),
            LossKind::Hinge => LossSpec::hinge(self.loss_bound),
        };
        TrainConfig {
            lambda: self.lambda,
            gp_factor: self.gp_factor,
            k_critic: self.k_critic,
            lr_model: self.lr_model,
            lr_critic: self.lr_critic,
            batch_size: self.batch_size,
            epochs_per_domain: self.epochs_per_domain,
            seed,
            optimizer: self.optimizer,
            loss,
            labeled_target: self.labeled_target,
        }
    }
}

/// Defaults: feature dim 8, hidden widths 32, one recurrent layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub feature_hidden: usize,
    pub critic_hidden: usize,
    pub summarizer: bool,
    pub summarizer_hidden: usize,
    pub summarizer_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = Architecture::new(1, 2);
        Self {
            feature_dim: a.feature_dim,
            feature_hidden: a.feature_hidden,
            critic_hidden: a.critic_hidden,
            summarizer: true,
            summarizer_hidden: a.summarizer_hidden,
            summarizer_layers: a.summarizer_layers,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        Architecture {
            input_dim,
            classes,
            feature_dim: self.feature_dim,
            feature_hidden: self.feature_hidden,
            critic_hidden: self.critic_hidden,
            summarizer_hidden: self.summarizer_hidden,
            summarizer_layers: self.summarizer_layers,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds: duplicates are not allowed".into());
        }
        if self.schedules.is_empty() {
            return bad("schedules: at least one schedule is required".into());
        }
        if self.schedules.iter().collect::<BTreeSet<_>>().len() != self.schedules.len() {
            return bad("schedules: duplicates are not allowed".into());
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad(format!("holdout: must lie in (0, 1), got {}", self.holdout));
        }
        if self.schedules.contains(&ScheduleKind::GradualTemporal) && !self.model.summarizer {
            return bad("model.summarizer: gradual_temporal needs the summarizer".into());
        }
        let m = &self.model;
        for (k, v) in [
            ("model.feature_dim", m.feature_dim),
            ("model.feature_hidden", m.feature_hidden),
            ("model.critic_hidden", m.critic_hidden),
            ("model.summarizer_hidden", m.summarizer_hidden),
            ("model.summarizer_layers", m.summarizer_layers),
        ] {
            if v == 0 {
                return bad(format!("{k}: must be >= 1"));
            }
        }
        self.train
            .to_config(0)
            .validate()
            .map_err(|e| CliError::Config(format!("train.{}", e.to_string().trim_start_matches("invalid argument: "))))
    }
}
