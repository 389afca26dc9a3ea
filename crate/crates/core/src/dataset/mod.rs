//! Labeled volume manifests, augmentation bookkeeping, batching, folds and
//! synthetic phantom datasets.
//!
//! On disk a dataset is `root/{train,test}/{health,patient}/*.nii[.gz]`;
//! `health` is label 0 and `patient` label 1.

mod batch;
mod phantom;
mod tree;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::NiftiError;
use crate::rng;
use crate::volume_ops::{AugmentationPolicy, VolumeError};

pub use batch::{load_record, make_batches, prepare_split, Batch, BatchStream, PreparedSplit, Preprocess};
pub use phantom::{generate_phantom, PhantomSpec, CLASS_SCALES, JITTER, VENTRICLE_FRACTION, VENTRICLE_INTENSITY};
pub use tree::{phantom_manifest, write_phantom_tree, PhantomDatasetConfig};

pub const CLASS_DIRS: [&str; 2] = ["health", "patient"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset layout: missing folder {0}")]
    LayoutError(PathBuf),
    #[error("class folder {0} holds no .nii or .nii.gz files")]
    EmptyClass(PathBuf),
    #[error("no {split} records with label {label}")]
    MissingClass { split: Split, label: u8 },
    #[error("phantom radii too large: {0}")]
    RadiiTooLarge(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("class {label} has {have} records, fewer than k = {k}")]
    TooFewSamples { label: u8, have: usize, k: usize },
    #[error("volume {id} has shape {got:?} after preprocessing, expected {expected:?}")]
    ShapeMismatch {
        id: String,
        got: [usize; 3],
        expected: [usize; 3],
    },
    #[error("cannot load {path}: {source}")]
    Load { path: PathBuf, source: NiftiError },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Path(PathBuf),
    Phantom(PhantomSpec),
}

impl Source {
    pub fn id(&self) -> String {
        match self {
            Source::Path(p) => p.display().to_string(),
            Source::Phantom(s) => s.source_id(),
        }
    }
}

/// Transform applied at load time to an augmented record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub flip_axis: usize,
    /// Gaussian noise after normalization; 0 for flip only.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Transform {
    pub fn tag(&self) -> &'static str {
        if self.noise_sigma > 0.0 {
            "flip+noise"
        } else {
            "flip"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub source: Source,
    pub label: u8,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl Record {
    pub fn new(source: Source, label: u8, split: Split) -> Self {
        Self {
            source,
            label,
            split,
            augmented_from: None,
            transform: None,
        }
    }

    pub fn id(&self) -> String {
        match &self.transform {
            Some(t) => format!("{}#{}-{:016x}", self.source.id(), t.tag(), t.noise_seed),
            None => self.source.id(),
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented_from.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self, DatasetError> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, r) in self.records.iter().enumerate() {
            if r.label > 1 {
                return Err(DatasetError::BadLabel(r.label));
            }
            if r.is_augmented() && r.split != Split::Train {
                return Err(DatasetError::InvalidSpec(format!("record {i} is augmented but not in train")));
            }
            if let Source::Phantom(s) = &r.source {
                s.validate()?;
                if s.label != r.label {
                    return Err(DatasetError::InvalidSpec(format!(
                        "record {i}: phantom label {} differs from record label {}",
                        s.label, r.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Record counts `[label 0, label 1]` in `split`.
    pub fn class_counts(&self, split: Split) -> [usize; 2] {
        let mut c = [0; 2];
        for r in self.records.iter().filter(|r| r.split == split) {
            c[r.label as usize] += 1;
        }
        c
    }

    /// Keeps the records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| DatasetError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

fn is_nifti(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    p.is_file() && (name.ends_with(".nii") || name.ends_with(".nii.gz"))
}

/// Scans `root/{train,test}/{health,patient}`. Files are ordered by name
/// within each folder.
pub fn scan_directory(root: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let root = root.as_ref();
    let mut records = Vec::new();
    for split in Split::ALL {
        for (label, class) in CLASS_DIRS.iter().enumerate() {
            let dir = root.join(split.dir_name()).join(class);
            if !dir.is_dir() {
                return Err(DatasetError::LayoutError(dir));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            files.retain(|p| is_nifti(p));
            files.sort();
            if files.is_empty() {
                return Err(DatasetError::EmptyClass(dir));
            }
            records.extend(files.into_iter().map(|p| Record::new(Source::Path(p), label as u8, split)));
        }
    }
    DatasetManifest::new(records)
}

/// Adds `num_augmented_per_class` flipped copies per class to the train
/// split. Sources are drawn from a seeded permutation of the class's
/// original train records, starting a fresh permutation only once every
/// source has been used. New records follow the originals, class 0 first.
pub fn apply_augmentation(manifest: &DatasetManifest, policy: &AugmentationPolicy) -> Result<DatasetManifest, DatasetError> {
    let n = policy.num_augmented_per_class;
    let mut out = manifest.clone();
    if n == 0 {
        return Ok(out);
    }
    let sources: [Vec<usize>; 2] = [0u8, 1].map(|label| {
        (0..manifest.records.len())
            .filter(|&i| {
                let r = &manifest.records[i];
                r.split == Split::Train && r.label == label && !r.is_augmented()
            })
            .collect()
    });
    for (label, pool) in sources.iter().enumerate() {
        if pool.is_empty() {
            return Err(DatasetError::MissingClass {
                split: Split::Train,
                label: label as u8,
            });
        }
    }
    policy.validate(sources.iter().map(Vec::len).min().unwrap_or(0))?;
    for (label, pool) in sources.iter().enumerate() {
        let mut r = rng::stream(policy.seed, &[rng::tag::AUGMENT, label as u64]);
        let mut order: Vec<usize> = Vec::new();
        for k in 0..n {
            if order.is_empty() {
                order = pool.clone();
                order.shuffle(&mut r);
                order.reverse();
            }
            let src = &manifest.records[order.pop().expect("refilled above")];
            out.records.push(Record {
                source: src.source.clone(),
                label: label as u8,
                split: Split::Train,
                augmented_from: Some(src.source.id()),
                transform: Some(Transform {
                    flip_axis: policy.flip_axis,
                    noise_sigma: policy.noise_sigma,
                    noise_seed: rng::derive_seed(policy.seed, &[rng::tag::NOISE, label as u64, k as u64]),
                }),
            });
        }
    }
    Ok(out)
}

/// Record indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold over the train split. Each class is shuffled and dealt
/// round-robin, so per-class fold sizes differ by at most one.
pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidSpec(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut assignment = vec![usize::MAX; manifest.records.len()];
    for label in 0..2u8 {
        let mut members: Vec<usize> = manifest
            .indices(Split::Train)
            .into_iter()
            .filter(|&i| manifest.records[i].label == label)
            .collect();
        if members.len() < k {
            return Err(DatasetError::TooFewSamples {
                label,
                have: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng::stream(seed, &[rng::tag::FOLDS, label as u64]));
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = pos % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = manifest
                .indices(Split::Train)
                .into_iter()
                .partition(|&i| assignment[i] == f);
            Fold { train, validation }
        })
        .collect())
}

/// Stratified holdout over the train split: `round(fraction * n)` records of
/// each class (at least one, leaving at least one) go to validation.
pub fn stratified_holdout(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<Fold, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidSpec(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut held = vec![false; manifest.records.len()];
    for label in 0..2u8 {
        let mut members: Vec<usize> = manifest
            .indices(Split::Train)
            .into_iter()
            .filter(|&i| manifest.records[i].label == label)
            .collect();
        if members.len() < 2 {
            return Err(DatasetError::TooFewSamples {
                label,
                have: members.len(),
                k: 2,
            });
        }
        members.shuffle(&mut rng::stream(seed, &[rng::tag::HOLDOUT, label as u64]));
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            held[i] = true;
        }
    }
    let (validation, train) = manifest.indices(Split::Train).into_iter().partition(|&i| held[i]);
    Ok(Fold { train, validation })
}
