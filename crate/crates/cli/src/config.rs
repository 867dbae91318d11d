//! Subcommand options, the config file, and their merge.
//!
//! Every option can come from a flag or from the subcommand's table in a
//! TOML config file. Keys are the flag names without the leading dashes.
//! A flag always wins over the file, and the file wins over the built-in
//! default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use copi_core::lab::LabConfig;
use copi_core::{ErrorSignalMode, LossKind, Rule, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetArg {
    Mnist,
    Cifar10,
}

impl DatasetArg {
    pub fn default_dir(self) -> PathBuf {
        match self {
            DatasetArg::Mnist => PathBuf::from("data/mnist"),
            DatasetArg::Cifar10 => PathBuf::from("data/cifar-10-batches-bin"),
        }
    }

    /// Seven layers of width 500 for MNIST, five of width 1000 for CIFAR-10.
    pub fn default_dims(self) -> Vec<usize> {
        match self {
            DatasetArg::Mnist => [784].into_iter().chain([500; 6]).chain([10]).collect(),
            DatasetArg::Cifar10 => [3072].into_iter().chain([1000; 4]).chain([10]).collect(),
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetArg::Mnist => 1,
            DatasetArg::Cifar10 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Copi,
    BioCopi,
    BpDecorr,
    BpAdam,
}

impl From<RuleArg> for Rule {
    fn from(r: RuleArg) -> Rule {
        match r {
            RuleArg::Copi => Rule::Copi,
            RuleArg::BioCopi => Rule::BioCopi,
            RuleArg::BpDecorr => Rule::BpDecorr,
            RuleArg::BpAdam => Rule::BpAdam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalArg {
    /// Backpropagated gradients.
    Bp,
    /// Feedback alignment.
    Fa,
}

impl From<SignalArg> for ErrorSignalMode {
    fn from(s: SignalArg) -> ErrorSignalMode {
        match s {
            SignalArg::Bp => ErrorSignalMode::Backprop,
            SignalArg::Fa => ErrorSignalMode::FeedbackAlignment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Quadratic,
    CrossEntropy,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::Quadratic => LossKind::Quadratic,
            LossArg::CrossEntropy => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Test,
}

/// Generates `overlay`, which keeps every field set in `self` and fills the
/// rest from `base`.
macro_rules! overlay {
    ($t:ident { $($f:ident),* $(,)? }) => {
        impl $t {
            pub fn overlay(self, base: $t) -> $t {
                $t { $($f: self.$f.or(base.$f)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainOpts {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Directory holding the dataset files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    pub signal: Option<SignalArg>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Layer sizes, input first, e.g. 784,500,10.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub eta_w: Option<f64>,
    #[arg(long)]
    pub eta_r: Option<f64>,
    /// Gain on the error signal.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Decorrelation-only epochs before forward learning.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Number of independent runs.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use only the first N training samples.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Re-evaluate the whole training set after each epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full_train_eval: Option<bool>,
}

overlay!(TrainOpts {
    dataset,
    data_dir,
    out_dir,
    rule,
    signal,
    loss,
    dims,
    eta_w,
    eta_r,
    alpha,
    batch,
    epochs,
    warmup,
    seeds,
    seed,
    subset,
    full_train_eval,
});

impl TrainOpts {
    /// Fills every unset field with its default. Learning rates, gain, and
    /// warm-up default per rule.
    pub fn resolve(self) -> TrainOpts {
        let dataset = self.dataset.unwrap_or(DatasetArg::Mnist);
        let rule = self.rule.unwrap_or(RuleArg::Copi);
        let base = TrainConfig::for_rule(rule.into());
        TrainOpts {
            dataset: Some(dataset),
            data_dir: Some(self.data_dir.unwrap_or_else(|| dataset.default_dir())),
            out_dir: Some(self.out_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            rule: Some(rule),
            signal: Some(self.signal.unwrap_or(SignalArg::Bp)),
            loss: Some(self.loss.unwrap_or(LossArg::Quadratic)),
            dims: Some(self.dims.unwrap_or_else(|| dataset.default_dims())),
            eta_w: Some(self.eta_w.unwrap_or(base.eta_w)),
            eta_r: Some(self.eta_r.unwrap_or(base.eta_r)),
            alpha: Some(self.alpha.unwrap_or(base.alpha)),
            batch: Some(self.batch.unwrap_or(base.batch_size)),
            epochs: Some(self.epochs.unwrap_or(base.epochs)),
            warmup: Some(self.warmup.unwrap_or(base.warmup_epochs)),
            seeds: Some(self.seeds.unwrap_or(1)),
            seed: Some(self.seed.unwrap_or(0)),
            subset: self.subset,
            full_train_eval: Some(self.full_train_eval.unwrap_or(false)),
        }
    }

    /// Training configuration for one run. Call on resolved options.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let rule: Rule = self.rule.expect("resolved").into();
        let mut cfg = TrainConfig::for_rule(rule);
        cfg.eta_w = self.eta_w.expect("resolved");
        cfg.eta_r = self.eta_r.expect("resolved");
        cfg.alpha = self.alpha.expect("resolved");
        cfg.batch_size = self.batch.expect("resolved");
        cfg.epochs = self.epochs.expect("resolved");
        cfg.warmup_epochs = self.warmup.expect("resolved");
        cfg.signal = self.signal.expect("resolved").into();
        cfg.loss = self.loss.expect("resolved").into();
        cfg.full_train_eval = self.full_train_eval.expect("resolved");
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalOpts {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub subset: Option<usize>,
}

overlay!(EvalOpts {
    checkpoint,
    dataset,
    data_dir,
    loss,
    split,
    subset
});

impl EvalOpts {
    pub fn resolve(self) -> EvalOpts {
        let dataset = self.dataset.unwrap_or(DatasetArg::Mnist);
        EvalOpts {
            checkpoint: self.checkpoint,
            dataset: Some(dataset),
            data_dir: Some(self.data_dir.unwrap_or_else(|| dataset.default_dir())),
            loss: Some(self.loss.unwrap_or(LossArg::Quadratic)),
            split: Some(self.split.unwrap_or(SplitArg::Test)),
            subset: self.subset,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CompressOpts {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Forward layers to keep; defaults to every depth from 0 to L.
    #[arg(long, value_delimiter = ',')]
    pub keep_layers: Option<Vec<usize>>,
    /// Fit the readouts on the first N training samples.
    #[arg(long)]
    pub subset: Option<usize>,
}

overlay!(CompressOpts {
    checkpoint,
    dataset,
    data_dir,
    out_dir,
    keep_layers,
    subset
});

impl CompressOpts {
    pub fn resolve(self) -> CompressOpts {
        let dataset = self.dataset.unwrap_or(DatasetArg::Mnist);
        CompressOpts {
            checkpoint: self.checkpoint,
            dataset: Some(dataset),
            data_dir: Some(self.data_dir.unwrap_or_else(|| dataset.default_dir())),
            out_dir: Some(self.out_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            keep_layers: self.keep_layers,
            subset: self.subset,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FeaturesOpts {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// 1-based layers to render; defaults to 2,4,6,7 where they exist.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Most units drawn per layer.
    #[arg(long)]
    pub units: Option<usize>,
    /// Tiles per grid row.
    #[arg(long)]
    pub grid_cols: Option<usize>,
    #[arg(long)]
    pub subset: Option<usize>,
}

overlay!(FeaturesOpts {
    checkpoint,
    dataset,
    data_dir,
    out_dir,
    layers,
    units,
    grid_cols,
    subset
});

impl FeaturesOpts {
    pub fn resolve(self) -> FeaturesOpts {
        let dataset = self.dataset.unwrap_or(DatasetArg::Mnist);
        FeaturesOpts {
            checkpoint: self.checkpoint,
            dataset: Some(dataset),
            data_dir: Some(self.data_dir.unwrap_or_else(|| dataset.default_dir())),
            out_dir: Some(self.out_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            layers: self.layers,
            units: Some(self.units.unwrap_or(100)),
            grid_cols: Some(self.grid_cols.unwrap_or(10)),
            subset: self.subset,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LabOpts {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Input scales c, e.g. 0.1,1,10.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Half-width of the noise added to the identity R.
    #[arg(long)]
    pub r_noise: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

overlay!(LabOpts {
    out_dir,
    seed,
    dim,
    samples,
    eta,
    scales,
    r_noise,
    ridge
});

impl LabOpts {
    pub fn resolve(self) -> LabOpts {
        let d = LabConfig::default();
        LabOpts {
            out_dir: Some(self.out_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            seed: Some(self.seed.unwrap_or(d.seed)),
            dim: Some(self.dim.unwrap_or(d.dim)),
            samples: Some(self.samples.unwrap_or(d.n_samples)),
            eta: Some(self.eta.unwrap_or(d.eta)),
            scales: Some(self.scales.unwrap_or(d.scales)),
            r_noise: Some(self.r_noise.unwrap_or(d.r_init_noise)),
            ridge: Some(self.ridge.unwrap_or(d.ridge)),
        }
    }

    pub fn lab_config(&self) -> LabConfig {
        LabConfig {
            dim: self.dim.expect("resolved"),
            n_samples: self.samples.expect("resolved"),
            r_init_noise: self.r_noise.expect("resolved"),
            scales: self.scales.clone().expect("resolved"),
            eta: self.eta.expect("resolved"),
            seed: self.seed.expect("resolved"),
            ridge: self.ridge.expect("resolved"),
        }
    }
}

/// Contents of a config file: one optional table per subcommand.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub train: TrainOpts,
    #[serde(default)]
    pub eval: EvalOpts,
    #[serde(default)]
    pub compress: CompressOpts,
    #[serde(default)]
    pub features: FeaturesOpts,
    #[serde(default)]
    pub decorr_lab: LabOpts,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> CliResult<ConfigFile> {
        toml::from_str(text).map_err(|e| CliError::ConfigFile {
            path: path.display().to_string(),
            detail: e.message().to_string(),
        })
    }

    /// Reads `path`, or returns the empty config when no path is given.
    pub fn load(path: Option<&Path>) -> CliResult<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ConfigFile::parse(&text, path)
    }
}

/// The effective options as `# ` comment lines, for CSV headers.
pub fn comment_lines<T: Serialize>(section: &str, opts: &T) -> Vec<String> {
    let body = toml::to_string(opts).expect("options serialize to TOML");
    std::iter::once(format!("[{section}]"))
        .chain(body.lines().map(str::to_string))
        .collect()
}
