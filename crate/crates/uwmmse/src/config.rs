//! Run configuration shared by every subcommand.
//!
//! Seeds: `seed` is the master seed. The dataset stream uses it directly;
//! perturbation, initialization and shuffling use independent domains derived
//! from it unless the corresponding section overrides them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uwmmse_core::optim::{OptimizerKind, TrainConfig};
use uwmmse_core::rng::{perturbation_master, splitmix64, INIT_DOMAIN};
use uwmmse_core::stability::{BoundOptions, HistogramSpec, PerturbationSpec};
use uwmmse_core::uwmmse::{ModelMode, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use uwmmse_core::wmmse::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use uwmmse_core::SystemConfig;

use crate::error::{Result, RunError};

const SHUFFLE_DOMAIN: u64 = 0x5348_5546_464C_4553;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub mlp: MlpSection,
    pub perturbation: PerturbationSection,
    pub bound: BoundOptions,
    pub histogram: HistogramSpec,
    pub campaign: CampaignSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    /// Also write the perturbed sibling file.
    pub write_perturbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden: usize,
    pub mode: ModelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub optimizer: OptimizerKind,
    /// Shuffle seed; derived from the master seed when absent.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    /// Hidden widths; `4M, 4M` when absent.
    pub hidden: Option<Vec<usize>>,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    pub tau: f64,
    pub eps: f64,
    /// Master seed of the per-sample perturbation streams.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    /// Sample whose node×layer surface is exported.
    pub surface_sample: usize,
    pub wmmse_iters: usize,
    pub wmmse_tol: f64,
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub mlp_weights: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { count: 10_000, write_perturbed: true }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { layers: DEFAULT_LAYERS, hidden: DEFAULT_HIDDEN, mode: ModelMode::default() }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            learning_rate: tc.learning_rate,
            beta1: tc.beta1,
            beta2: tc.beta2,
            adam_eps: tc.adam_eps,
            optimizer: tc.optimizer,
            seed: None,
        }
    }
}

impl Default for MlpSection {
    fn default() -> Self {
        Self { hidden: None, epochs: 10, learning_rate: 1e-3 }
    }
}

impl Default for PerturbationSection {
    fn default() -> Self {
        Self { tau: 1.0, eps: 0.005, seed: None }
    }
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self { surface_sample: 0, wmmse_iters: DEFAULT_MAX_ITERS, wmmse_tol: DEFAULT_TOL, jobs: None }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { dataset: None, weights: None, mlp_weights: None, out_dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| RunError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(RunError::io(path))?;
        Self::from_json(&text).map_err(|e| match e {
            RunError::Config(msg) => RunError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: uwmmse_core::Error| RunError::Config(e.to_string());
        self.system.validate().map_err(config)?;
        self.train_config().validate().map_err(config)?;
        if self.model.layers == 0 || self.model.hidden == 0 {
            return Err(RunError::Config("model.layers and model.hidden must be >= 1".into()));
        }
        if !(self.perturbation.eps >= 0.0) || (self.perturbation.eps > 0.0 && !(self.perturbation.tau > 0.0)) {
            return Err(RunError::Config("perturbation needs eps >= 0 and tau > 0".into()));
        }
        if self.histogram.bins == 0 || !(self.histogram.min < self.histogram.max) {
            return Err(RunError::Config("histogram needs bins >= 1 and min < max".into()));
        }
        if !(self.mlp.learning_rate > 0.0) || self.mlp.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err(RunError::Config("mlp needs learning_rate > 0 and nonzero widths".into()));
        }
        if self.campaign.jobs == Some(0) {
            return Err(RunError::Config("campaign.jobs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            optimizer: t.optimizer,
            seed: t.seed.unwrap_or_else(|| splitmix64(self.seed ^ SHUFFLE_DOMAIN)),
        }
    }

    pub fn mlp_train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.mlp.epochs, learning_rate: self.mlp.learning_rate, ..self.train_config() }
    }

    pub fn mlp_widths(&self) -> Vec<usize> {
        self.mlp
            .hidden
            .clone()
            .unwrap_or_else(|| uwmmse_core::neural::MlpParams::default_widths(self.system.m))
    }

    pub fn init_seed(&self) -> u64 {
        splitmix64(self.seed ^ INIT_DOMAIN)
    }

    pub fn perturbation_spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            tau: self.perturbation.tau,
            eps: self.perturbation.eps,
            seed: self.perturbation.seed.unwrap_or_else(|| perturbation_master(self.seed)),
        }
    }

    /// Number of rayon workers.
    pub fn jobs(&self) -> usize {
        self.campaign
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
