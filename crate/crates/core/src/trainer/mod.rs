//! Adam training loop, evaluation, cross-validation and training curves.

mod adam;
mod curves;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{
    apply_augmentation, stratified_holdout, stratified_kfold, Batch, BatchStream, DatasetError, DatasetManifest,
    Fold, PreparedSplit, Preprocess, Split,
};
use crate::layers::{bce_loss, LayerError, Mode};
use crate::metrics::{MetricsError, MetricsReport};
use crate::model::{backward, build_model, forward, ArchitectureSpec, ModelError, ModelState};
use crate::rng;
use crate::tensor::Tensor;
use crate::volume_ops::{AugmentationPolicy, NormalizeMode};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, ADAM_LR};
pub use curves::{curves_to_csv, export_curves, format_sig6, parse_curves, CurveRow};

/// Batch size used for inference passes.
pub const EVAL_BATCH: usize = 4;
pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("parameter/gradient key mismatch: {0}")]
    KeyMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Validation {
    None,
    /// Stratified fraction of the source train records.
    Holdout(f64),
    /// In [`train`], fold 0 of a stratified k-fold is held out;
    /// [`cross_validate`] uses every fold.
    KFold(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub augmentation: Option<AugmentationPolicy>,
    /// Gaussian noise added to every training batch; 0 disables it.
    pub noise_sigma: f64,
    pub lr: f64,
    pub seed: u64,
    pub validation: Validation,
    pub normalize: NormalizeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl TrainConfig {
    /// Resize and normalize only, 50 epochs.
    pub fn baseline() -> Self {
        Self {
            epochs: 50,
            batch_size: 2,
            augmentation: None,
            noise_sigma: 0.0,
            lr: ADAM_LR,
            seed: 0,
            validation: Validation::None,
            normalize: NormalizeMode::MinMax,
        }
    }

    /// Flip augmentation to 16+16 from 9+9, 80 epochs.
    pub fn augmented() -> Self {
        Self {
            epochs: 80,
            augmentation: Some(AugmentationPolicy::default()),
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2 for batch norm, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        match self.validation {
            Validation::Holdout(f) if !(f > 0.0 && f < 1.0) => bad(format!("holdout fraction {f} outside (0, 1)")),
            Validation::KFold(k) if k < 2 => bad(format!("k-fold needs k >= 2, got {k}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: ModelState<f32>,
    pub history: Vec<EpochRecord>,
    /// The records actually trained on, augmented copies included.
    pub train_manifest: DatasetManifest,
    pub validation_manifest: Option<DatasetManifest>,
}

pub fn preprocess_for(spec: &ArchitectureSpec, normalize: NormalizeMode) -> Preprocess {
    Preprocess {
        target_shape: spec.spatial(),
        normalize,
    }
}

/// Original (non-augmented) train records, as a train-only manifest.
fn source_train(manifest: &DatasetManifest) -> DatasetManifest {
    let keep: Vec<usize> = manifest
        .indices(Split::Train)
        .into_iter()
        .filter(|&i| !manifest.records[i].is_augmented())
        .collect();
    manifest.subset(&keep)
}

/// Splits validation off the source records, then augments the remainder.
/// Augmented records already in `manifest` are kept only when no validation
/// is requested.
fn training_sets(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(DatasetManifest, Option<DatasetManifest>), TrainError> {
    let (train, val) = match cfg.validation {
        Validation::None => (manifest.subset(&manifest.indices(Split::Train)), None),
        Validation::Holdout(f) => {
            let base = source_train(manifest);
            let fold = stratified_holdout(&base, f, cfg.seed)?;
            (base.subset(&fold.train), Some(base.subset(&fold.validation)))
        }
        Validation::KFold(k) => {
            let base = source_train(manifest);
            let fold = stratified_kfold(&base, k, cfg.seed)?.swap_remove(0);
            (base.subset(&fold.train), Some(base.subset(&fold.validation)))
        }
    };
    let train = match &cfg.augmentation {
        Some(policy) => apply_augmentation(&train, policy)?,
        None => train,
    };
    Ok((train, val))
}

/// Batches for one epoch; a trailing single-sample batch joins the batch
/// before it, since train-mode batch norm needs two samples.
fn epoch_batches(prepared: &PreparedSplit, stream: &BatchStream, epoch: usize) -> Vec<Batch> {
    let mut groups: Vec<Vec<usize>> = prepared
        .order(stream, epoch)
        .chunks(stream.batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() == 1) {
        let tail = groups.pop().expect("checked non-empty");
        groups.last_mut().expect("len > 1").extend(tail);
    }
    groups.into_iter().map(|g| prepared.batch(g)).collect()
}

fn add_batch_noise(x: &mut Tensor<f32>, sigma: f64, seed: u64, epoch: usize, batch: usize) {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut r = rng::stream(seed, &[rng::tag::BATCH_NOISE, epoch as u64, batch as u64]);
    for v in x.data_mut() {
        *v += normal.sample(&mut r) as f32;
    }
}

fn correct(p: &Tensor<f32>, labels: &[u8]) -> usize {
    p.data()
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| ((p as f64) >= 0.5) == (y == 1))
        .count()
}

/// Infer-mode probabilities for every prepared record, in order.
pub fn predict(model: &ModelState<f32>, prepared: &PreparedSplit) -> Result<Vec<f64>, TrainError> {
    let mut scores = Vec::with_capacity(prepared.len());
    for batch in prepared.batches(&BatchStream::sequential(EVAL_BATCH), 0) {
        let (p, _) = forward(model, &batch.x, Mode::Infer, 0)?;
        scores.extend(p.data().iter().map(|&v| v as f64));
    }
    Ok(scores)
}

fn mean_bce(scores: &[f64], labels: &[u8]) -> Result<f64, TrainError> {
    let p = Tensor::new(&[scores.len(), 1], scores.to_vec()).map_err(LayerError::from)?;
    Ok(bce_loss(&p, labels)?.0)
}

/// Trains `model` in place of a fresh copy and reports every epoch to
/// `on_epoch`.
pub fn train_with(
    model: ModelState<f32>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let (train_manifest, validation_manifest) = training_sets(manifest, cfg)?;
    let pre = preprocess_for(&model.spec, cfg.normalize);
    let train_set = PreparedSplit::from_indices(&train_manifest, &train_manifest.indices(Split::Train), &pre)?;
    if train_set.len() < 2 {
        return Err(TrainError::InvalidConfig(format!(
            "training needs at least 2 records, got {}",
            train_set.len()
        )));
    }
    let val_set = match &validation_manifest {
        Some(v) => Some(PreparedSplit::from_indices(v, &v.indices(Split::Train), &pre)?),
        None => None,
    };
    let stream = BatchStream::shuffled(cfg.batch_size, rng::derive_seed(cfg.seed, &[rng::tag::SHUFFLE]));
    let mut model = model;
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for (b, mut batch) in epoch_batches(&train_set, &stream, epoch).into_iter().enumerate() {
            if cfg.noise_sigma > 0.0 {
                add_batch_noise(&mut batch.x, cfg.noise_sigma, cfg.seed, epoch, b);
            }
            let dropout_seed = rng::derive_seed(cfg.seed, &[rng::tag::DROPOUT, epoch as u64, b as u64]);
            let (p, tape) = forward(&model, &batch.x, Mode::Train, dropout_seed)?;
            let (loss, grad_p) = bce_loss(&p, &batch.labels)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            let grads = backward(&model, &tape, &grad_p)?;
            if grads.values().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
            model.commit_running_stats(&tape);
            loss_sum += loss * batch.labels.len() as f64;
            hits += correct(&p, &batch.labels);
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = match &val_set {
            Some(v) => {
                let scores = predict(&model, v)?;
                let acc = scores
                    .iter()
                    .zip(&v.labels)
                    .filter(|(&s, &y)| (s >= 0.5) == (y == 1))
                    .count() as f64
                    / v.len() as f64;
                (Some(mean_bce(&scores, &v.labels)?), Some(acc))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: hits as f64 / n,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainRun {
        model,
        history,
        train_manifest,
        validation_manifest,
    })
}

pub fn train(
    model: ModelState<f32>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<(ModelState<f32>, Vec<EpochRecord>), TrainError> {
    let run = train_with(model, manifest, cfg, |_| {})?;
    Ok((run.model, run.history))
}

/// Infer-mode metrics over one split of `manifest`.
pub fn evaluate(
    model: &ModelState<f32>,
    manifest: &DatasetManifest,
    split: Split,
    threshold: f64,
    normalize: NormalizeMode,
) -> Result<MetricsReport, TrainError> {
    let prepared = PreparedSplit::from_indices(manifest, &manifest.indices(split), &preprocess_for(&model.spec, normalize))?;
    evaluate_prepared(model, &prepared, threshold)
}

pub fn evaluate_prepared(model: &ModelState<f32>, prepared: &PreparedSplit, threshold: f64) -> Result<MetricsReport, TrainError> {
    if prepared.is_empty() {
        return Err(TrainError::Metrics(MetricsError::EmptyMatrix));
    }
    let scores = predict(model, prepared)?;
    Ok(MetricsReport::compute(&scores, &prepared.labels, threshold)?)
}

/// Mean and population standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub folds: Vec<(usize, MetricsReport)>,
    /// Validation record indices (into the source train records) per fold.
    pub assignments: Vec<Fold>,
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    /// Over folds where both classes were present.
    pub auc: Option<Summary>,
}

/// Stratified k-fold over the source train records. Each fold trains a
/// fresh model (seeded by fold) on the remaining records, augmented per
/// `cfg`, and is scored on its validation records.
pub fn cross_validate(
    spec: &ArchitectureSpec,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    k: usize,
    threshold: f64,
) -> Result<CrossValidation, TrainError> {
    let base = source_train(manifest);
    let assignments = stratified_kfold(&base, k, cfg.seed)?;
    let pre = preprocess_for(spec, cfg.normalize);
    let mut folds = Vec::with_capacity(k);
    for (f, fold) in assignments.iter().enumerate() {
        let fold_cfg = TrainConfig {
            seed: rng::derive_seed(cfg.seed, &[rng::tag::FOLDS, f as u64]),
            validation: Validation::None,
            ..cfg.clone()
        };
        let model = build_model::<f32>(spec, fold_cfg.seed)?;
        let (model, _) = train(model, &base.subset(&fold.train), &fold_cfg)?;
        let val = PreparedSplit::from_indices(&base, &fold.validation, &pre)?;
        folds.push((f, evaluate_prepared(&model, &val, threshold)?));
    }
    let collect = |get: fn(&MetricsReport) -> f64| Summary::of(&folds.iter().map(|(_, r)| get(r)).collect::<Vec<_>>());
    let aucs: Vec<f64> = folds.iter().filter_map(|(_, r)| r.auc).collect();
    Ok(CrossValidation {
        accuracy: collect(|r| r.accuracy),
        precision: collect(|r| r.precision),
        recall: collect(|r| r.recall),
        f1: collect(|r| r.f1),
        auc: (!aucs.is_empty()).then(|| Summary::of(&aucs)),
        folds,
        assignments,
    })
}
