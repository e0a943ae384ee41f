//! TOML run configurations, one schema per subcommand.
//!
//! Unknown keys are rejected. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use kinemb::descriptor::DescriptorConfig;
use kinemb::koopman::DEFAULT_RANK_EPSILON;
use kinemb::pretrain::{CorpusSpec, TrainConfig};
use kinemb::scalelab::SweepAxis;
use kinemb::trajio::{Potential, SplitMode};
use kinemb::vamphead::MixerConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub struct Loaded<T> {
    pub config: T,
    /// The document as parsed, for the manifest.
    pub raw: serde_json::Value,
    pub base_dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |message: String| CliError::Config {
        path: path.to_path_buf(),
        message,
    };
    let table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.message().to_string()))?;
    let raw = serde_json::to_value(&table).map_err(|e| bad(e.to_string()))?;
    let config = T::deserialize(toml::Value::Table(table)).map_err(|e| bad(e.message().to_string()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, raw, base_dir })
}

fn default_dt() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub generator: Generator,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// One-hot features of a discrete chain, written as FMB1.
    Markov {
        transition: Vec<Vec<f64>>,
        length: usize,
        #[serde(default)]
        initial_state: usize,
    },
    /// Overdamped Langevin coordinates, written as FMB1.
    Langevin {
        potential: Potential,
        step_size: f64,
        temperature: f64,
        length: usize,
        #[serde(default)]
        initial: Option<Vec<f64>>,
        #[serde(default = "default_one")]
        stride: usize,
    },
    /// Thermal motion of one Morse cluster, written as XYZ.
    Cluster {
        n_atoms: usize,
        temperature: f64,
        n_frames: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default = "default_dt")]
        dt: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_level: f64,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            noise_level: self.noise_level,
            seed,
            early_stop_patience: self.early_stop_patience,
        }
    }
}

fn default_validation_fraction() -> f64 {
    0.2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub n_structures: usize,
    #[serde(default)]
    pub min_atoms: Option<usize>,
    #[serde(default)]
    pub max_atoms: Option<usize>,
    #[serde(default)]
    pub relax_temperature: Option<f64>,
    #[serde(default)]
    pub relax_steps: Option<usize>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

impl CorpusSection {
    pub fn spec(&self, seed: u64) -> CorpusSpec {
        let d = CorpusSpec::new(self.n_structures, seed);
        CorpusSpec {
            min_atoms: self.min_atoms.unwrap_or(d.min_atoms),
            max_atoms: self.max_atoms.unwrap_or(d.max_atoms),
            relax_temperature: self.relax_temperature.unwrap_or(d.relax_temperature),
            relax_steps: self.relax_steps.unwrap_or(d.relax_steps),
            ..d
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub model: DescriptorConfig,
    pub train: TrainSection,
    pub data: CorpusSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pooling {
    #[default]
    WholeGraph,
    /// One token per residue, covering residues `r - half_width ..= r + half_width`.
    ResidueWindows {
        residues: Vec<usize>,
        half_width: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub trajectory: PathBuf,
    #[serde(default)]
    pub pooling: Pooling,
}

fn default_split_fraction() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
    #[serde(default = "default_split_fraction")]
    pub fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            mode: SplitMode::Temporal,
            fraction: default_split_fraction(),
        }
    }
}

fn default_rank_epsilon() -> f64 {
    DEFAULT_RANK_EPSILON
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VampConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// FMB1 feature files, one trajectory each.
    pub features: Vec<PathBuf>,
    pub lag: usize,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default = "default_rank_epsilon")]
    pub rank_epsilon: f64,
    pub model: VampModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VampTrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    #[serde(default)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VampModel {
    /// Closed-form linear estimator.
    Linear { out_dim: usize },
    /// Gradient-trained head. Without `mixer`, each frame is one token.
    Head {
        out_dim: usize,
        #[serde(default)]
        hidden: Vec<usize>,
        #[serde(default)]
        mixer: Option<MixerConfig>,
        train: VampTrainSection,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: DescriptorConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub param_budget: Option<usize>,
    pub data: CorpusSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub output_dir: PathBuf,
    /// Records CSV with `N`, `first_epoch_loss` and `converged_loss` columns.
    pub records: PathBuf,
    #[serde(default)]
    pub fit_range: Option<[f64; 2]>,
}
