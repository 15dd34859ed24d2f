//! Experiment configuration: a single TOML file with nested sections.
//!
//! ```toml
//! [experiment]
//! output = "runs/blobs"
//! arms = ["uniform-only", "upper-bound"]
//! eval_holdout = 200          # optional: last N samples held out for eval
//! eval_every = 100            # optional
//! checkpoint_every = 1000     # optional
//! b_sweep = [64, 128]         # optional: one run per presample size per arm
//!
//! [dataset]
//! kind = "blobs"              # idx | csv | blobs | linreg
//! classes = 10
//! per_class = 100
//! dim = 16
//! spread = 1.0
//! seed = 7
//!
//! [network]
//! hidden = [32, 32]
//! activation = "tanh"
//! init_seed = 1
//!
//! [train]
//! presample_size = 128
//! batch_size = 32
//! # tau_threshold omitted -> (B + 3b) / (3b)
//! learning_rate = 0.1
//! momentum = 0.9
//! max_iterations = 2000
//! seed = 42
//! loss = "softmax-cross-entropy"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use impsgd::datasets::{self, CsvOptions, Dataset};
use impsgd::losses::LossKind;
use impsgd::nn::{self, ActivationKind, Network};
use impsgd::scoring::ScoreKind;
use impsgd::trainer::TrainConfig;
use impsgd::variance::{self, TauMode};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub correlate: CorrelateSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: Option<String>,
    pub output: Option<PathBuf>,
    pub arms: Vec<String>,
    pub eval_holdout: Option<usize>,
    pub eval_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub b_sweep: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: String,
    // idx
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub limit: Option<usize>,
    // csv
    pub path: Option<PathBuf>,
    pub target_columns: Option<usize>,
    pub targets: Option<String>,
    pub standardize: Option<bool>,
    // blobs
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub spread: Option<f64>,
    // linreg
    pub n: Option<usize>,
    pub noise: Option<f64>,
    // blobs + linreg
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_activation() -> String {
    "tanh".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub presample_size: usize,
    pub batch_size: usize,
    /// Omitted: use the guaranteed-speedup threshold `(B + 3b) / (3b)`.
    pub tau_threshold: Option<f64>,
    #[serde(default = "default_tau_ema")]
    pub tau_ema: f64,
    #[serde(default = "default_tau_mode")]
    pub tau_mode: String,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_schedule: Vec<(u64, f64)>,
    pub max_iterations: u64,
    pub seed: u64,
    pub loss: String,
}

fn default_tau_ema() -> f64 {
    0.9
}

fn default_tau_mode() -> String {
    "standard".to_string()
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub presample_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub resamples: Option<usize>,
    /// Probe at every multiple of this iteration count (and after training).
    pub every: Option<u64>,
    pub arms: Option<Vec<String>>,
    /// Probe this saved network instead of training one.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CorrelateSection {
    pub sample_size: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: ExperimentFile =
            toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        if file.experiment.arms.is_empty() {
            bail!("experiment.arms must list at least one score kind");
        }
        for arm in &file.experiment.arms {
            ScoreKind::from_name(arm).with_context(|| format!("experiment.arms entry `{arm}`"))?;
        }
        Ok(file)
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        Ok(LossKind::from_name(&self.train.loss)?)
    }

    pub fn arms(&self) -> Result<Vec<ScoreKind>> {
        self.experiment
            .arms
            .iter()
            .map(|a| Ok(ScoreKind::from_name(a)?))
            .collect()
    }

    /// Training and (optional) held-out evaluation sets.
    pub fn datasets(&self) -> Result<(Dataset<f64>, Option<Dataset<f64>>)> {
        let full = self.dataset.build()?;
        match self.experiment.eval_holdout {
            None | Some(0) => Ok((full, None)),
            Some(k) => {
                if k >= full.len() {
                    bail!("eval_holdout {k} leaves no training samples (dataset has {})", full.len());
                }
                let train_idx: Vec<usize> = (0..full.len() - k).collect();
                let eval_idx: Vec<usize> = (full.len() - k..full.len()).collect();
                let (ti, tt) = full.select(&train_idx);
                let (ei, et) = full.select(&eval_idx);
                let train = Dataset::new(ti, tt, full.num_classes())?;
                let eval = Dataset::new(ei, et, full.num_classes())?;
                Ok((train, Some(eval)))
            }
        }
    }

    /// The initial network for a dataset (all arms share it).
    pub fn network(&self, dataset: &Dataset<f64>) -> Result<Network<f64>> {
        let mut dims = vec![dataset.dim()];
        dims.extend(&self.network.hidden);
        let out = dataset.target_width();
        if out == 0 {
            bail!("dataset does not determine an output width");
        }
        dims.push(out);
        let activation = ActivationKind::from_name(&self.network.activation)?;
        Ok(nn::glorot_init(&dims, activation, self.network.init_seed)?)
    }

    /// Concrete [`TrainConfig`] for one arm. `seed_override` comes from
    /// `--seed`; each arm gets its own sampling stream derived from the base
    /// seed and the arm index.
    pub fn train_config(
        &self,
        score_kind: ScoreKind,
        arm_index: usize,
        presample_size: usize,
        seed_override: Option<u64>,
    ) -> Result<TrainConfig> {
        let base_seed = seed_override.unwrap_or(self.train.seed);
        let config = TrainConfig {
            presample_size,
            batch_size: self.train.batch_size,
            tau_threshold: self
                .train
                .tau_threshold
                .unwrap_or_else(|| variance::guaranteed_speedup_threshold(presample_size, self.train.batch_size)),
            tau_ema: self.train.tau_ema,
            tau_mode: TauMode::from_name(&self.train.tau_mode)?,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            lr_schedule: self.train.lr_schedule.clone(),
            max_iterations: self.train.max_iterations,
            seed: base_seed.wrapping_add(arm_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(base_seed),
            score_kind,
            loss: self.loss_kind()?,
            eval_every: self.experiment.eval_every,
        };
        config.validate()?;
        Ok(config)
    }
}

impl DatasetSection {
    pub fn build(&self) -> Result<Dataset<f64>> {
        let dataset = match self.kind.as_str() {
            "idx" => {
                let images = self.images.as_ref().context("dataset.images required for kind = \"idx\"")?;
                let labels = self.labels.as_ref().context("dataset.labels required for kind = \"idx\"")?;
                datasets::load_idx(images, labels)?
            }
            "csv" => {
                let path = self.path.as_ref().context("dataset.path required for kind = \"csv\"")?;
                let options = CsvOptions {
                    target_columns: self.target_columns.unwrap_or(1),
                    targets_are_classes: match self.targets.as_deref() {
                        None | Some("classes") => true,
                        Some("vectors") => false,
                        Some(other) => bail!("dataset.targets must be \"classes\" or \"vectors\", got `{other}`"),
                    },
                    standardize: self.standardize.unwrap_or(false),
                };
                datasets::load_csv(path, &options)?
            }
            "blobs" => datasets::synth_blobs(
                self.classes.context("dataset.classes required for kind = \"blobs\"")?,
                self.per_class.context("dataset.per_class required for kind = \"blobs\"")?,
                self.dim.context("dataset.dim required for kind = \"blobs\"")?,
                self.spread.unwrap_or(1.0),
                self.seed.unwrap_or(0),
            )?,
            "linreg" => {
                let synth = datasets::synth_linreg(
                    self.n.context("dataset.n required for kind = \"linreg\"")?,
                    self.dim.context("dataset.dim required for kind = \"linreg\"")?,
                    self.noise.unwrap_or(0.0),
                    self.seed.unwrap_or(0),
                )?;
                synth.dataset
            }
            other => bail!("unknown dataset kind `{other}` (expected idx, csv, blobs, or linreg)"),
        };
        match self.limit {
            Some(n) if n < dataset.len() => Ok(dataset.truncate(n)?),
            _ => Ok(dataset),
        }
    }
}
