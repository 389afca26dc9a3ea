use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{phantom_manifest, scan_directory, DatasetManifest, PhantomDatasetConfig};
use crate::layers::gradcheck::LayerKind;
use crate::model::{ArchitectureSpec, BlockOrder};
use crate::trainer::{TrainConfig, Validation, DEFAULT_HOLDOUT};
use crate::volume_ops::{AugmentationPolicy, NormalizeMode};

use super::CliError;

/// File name of a manifest that, when present under `data.root`, is used
/// instead of scanning the folder tree.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Every key a config file or override may set.
pub const KEYS: &[&str] = &[
    "data.root",
    "data.phantom.grid",
    "data.phantom.train_per_class",
    "data.phantom.test_per_class",
    "data.phantom.noise_sigma",
    "data.phantom.class_scales",
    "data.phantom.seed",
    "data.phantom.seeds",
    "model.input_shape",
    "model.filters",
    "model.dense_units",
    "model.dropout",
    "model.block_order",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.seed",
    "train.noise_sigma",
    "train.validation",
    "train.normalize",
    "augment.enabled",
    "augment.count",
    "augment.noise_sigma",
    "augment.flip_axis",
    "ab.baseline_epochs",
    "ab.augmented_epochs",
    "eval.threshold",
    "gradcheck.seed",
    "gradcheck.fault",
    "out.dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub phantom: PhantomDatasetConfig,
    /// Dataset and training seeds of the A/B experiment.
    pub phantom_seeds: Vec<u64>,
    pub spec: ArchitectureSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub validation: Validation,
    pub normalize: NormalizeMode,
    pub augment: bool,
    pub augment_count: usize,
    pub augment_noise_sigma: f64,
    pub flip_axis: usize,
    pub ab_baseline_epochs: usize,
    pub ab_augmented_epochs: usize,
    pub threshold: f64,
    pub gradcheck_seed: u64,
    pub gradcheck_fault: Option<LayerKind>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::baseline();
        let policy = AugmentationPolicy::default();
        Self {
            data_root: None,
            phantom: PhantomDatasetConfig::default(),
            phantom_seeds: (0..5).collect(),
            spec: ArchitectureSpec::default(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            seed: train.seed,
            noise_sigma: train.noise_sigma,
            validation: train.validation,
            normalize: train.normalize,
            augment: false,
            augment_count: policy.num_augmented_per_class,
            augment_noise_sigma: policy.noise_sigma,
            flip_axis: policy.flip_axis,
            ab_baseline_epochs: TrainConfig::baseline().epochs,
            ab_augmented_epochs: TrainConfig::augmented().epochs,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            gradcheck_seed: 0x5eed,
            gradcheck_fault: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// `key=value` pairs from config text; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split([',', 'x'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value)))
        .collect()
}

fn array<T: FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[T; N], CliError> {
    let v: Vec<T> = list(key, value)?;
    if v.len() != N {
        return Err(CliError::Config(format!("{key}: expected {N} values, got '{value}'")));
    }
    let mut out = [T::default(); N];
    out.copy_from_slice(&v);
    Ok(out)
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value))
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("{key}: cannot parse '{value}'"))
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn validation(key: &str, value: &str) -> Result<Validation, CliError> {
    match value.split_once(':') {
        None if value == "none" => Ok(Validation::None),
        None if value == "holdout" => Ok(Validation::Holdout(DEFAULT_HOLDOUT)),
        Some(("holdout", f)) => Ok(Validation::Holdout(scalar(key, f)?)),
        Some(("kfold", k)) => Ok(Validation::KFold(scalar(key, k)?)),
        _ => Err(bad(key, value)),
    }
}

impl RunConfig {
    /// Defaults, then the config file, then each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut pairs = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected key=value override, got '{o}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, CliError> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "data.root" => self.data_root = Some(PathBuf::from(v)),
            "data.phantom.grid" => self.phantom.grid_shape = array(key, v)?,
            "data.phantom.train_per_class" => self.phantom.train_per_class = array(key, v)?,
            "data.phantom.test_per_class" => self.phantom.test_per_class = array(key, v)?,
            "data.phantom.noise_sigma" => self.phantom.noise_sigma = scalar(key, v)?,
            "data.phantom.class_scales" => self.phantom.class_scales = array(key, v)?,
            "data.phantom.seed" => self.phantom.seed = scalar(key, v)?,
            "data.phantom.seeds" => self.phantom_seeds = list(key, v)?,
            "model.input_shape" => {
                let dims: Vec<usize> = list(key, v)?;
                self.spec.input_shape = match dims[..] {
                    [x, y, z] => [x, y, z, 1],
                    [x, y, z, c] => [x, y, z, c],
                    _ => return Err(CliError::Config(format!("{key}: expected X,Y,Z[,C], got '{v}'"))),
                };
            }
            "model.filters" => self.spec.block_filters = list(key, v)?,
            "model.dense_units" => self.spec.dense_units = scalar(key, v)?,
            "model.dropout" => self.spec.dropout_rate = scalar(key, v)?,
            "model.block_order" => self.spec.block_order = v.parse::<BlockOrder>().map_err(|_| bad(key, v))?,
            "train.epochs" => self.epochs = scalar(key, v)?,
            "train.batch_size" => self.batch_size = scalar(key, v)?,
            "train.lr" => self.lr = scalar(key, v)?,
            "train.seed" => self.seed = scalar(key, v)?,
            "train.noise_sigma" => self.noise_sigma = scalar(key, v)?,
            "train.validation" => self.validation = validation(key, v)?,
            "train.normalize" => {
                self.normalize = match v {
                    "minmax" | "min_max" => NormalizeMode::MinMax,
                    "zscore" | "z_score" => NormalizeMode::ZScore,
                    _ => return Err(bad(key, v)),
                }
            }
            "augment.enabled" => self.augment = boolean(key, v)?,
            "augment.count" => self.augment_count = scalar(key, v)?,
            "augment.noise_sigma" => self.augment_noise_sigma = scalar(key, v)?,
            "augment.flip_axis" => self.flip_axis = scalar(key, v)?,
            "ab.baseline_epochs" => self.ab_baseline_epochs = scalar(key, v)?,
            "ab.augmented_epochs" => self.ab_augmented_epochs = scalar(key, v)?,
            "eval.threshold" => self.threshold = scalar(key, v)?,
            "gradcheck.seed" => self.gradcheck_seed = scalar(key, v)?,
            "gradcheck.fault" => {
                self.gradcheck_fault = match v {
                    "none" | "" => None,
                    name => Some(LayerKind::parse(name).ok_or_else(|| bad(key, v))?),
                }
            }
            "out.dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.policy().validate(1).map_err(|e| CliError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Config(format!("eval.threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            flip_axis: self.flip_axis,
            num_augmented_per_class: self.augment_count,
            noise_sigma: self.augment_noise_sigma,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            augmentation: self.augment.then(|| self.policy()),
            noise_sigma: self.noise_sigma,
            lr: self.lr,
            seed: self.seed,
            validation: self.validation,
            normalize: self.normalize,
        }
    }

    /// The manifest under `data.root` (or a scan of its folder tree), or the
    /// in-memory phantom dataset when no root is set.
    pub fn dataset(&self) -> Result<DatasetManifest, CliError> {
        Ok(match &self.data_root {
            Some(root) if root.join(MANIFEST_FILE).is_file() => DatasetManifest::load(root.join(MANIFEST_FILE))?,
            Some(root) => scan_directory(root)?,
            None => phantom_manifest(&self.phantom)?,
        })
    }
}
