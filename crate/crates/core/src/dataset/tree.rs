use std::fs;
use std::path::{Path, PathBuf};

use super::{generate_phantom, DatasetError, DatasetManifest, PhantomSpec, Record, Source, Split, CLASS_DIRS, CLASS_SCALES};
use crate::nifti::write_volume;
use crate::rng;

/// A labeled phantom dataset with per-class counts for each split.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDatasetConfig {
    pub grid_shape: [usize; 3],
    pub train_per_class: [usize; 2],
    pub test_per_class: [usize; 2],
    pub noise_sigma: f64,
    /// Ventricle scale for labels 0 and 1.
    pub class_scales: [f64; 2],
    pub seed: u64,
}

impl Default for PhantomDatasetConfig {
    fn default() -> Self {
        Self {
            grid_shape: [32, 32, 16],
            train_per_class: [9, 9],
            test_per_class: [5, 5],
            noise_sigma: 0.05,
            class_scales: CLASS_SCALES,
            seed: 0,
        }
    }
}

impl PhantomDatasetConfig {
    pub fn counts(&self, split: Split) -> [usize; 2] {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Spec of the `i`-th phantom of `label` in `split`.
    pub fn spec(&self, split: Split, label: u8, i: usize) -> PhantomSpec {
        PhantomSpec {
            ventricle_scale: self.class_scales[label as usize],
            ..PhantomSpec::for_class(
                self.grid_shape,
                label,
                self.noise_sigma,
                rng::derive_seed(self.seed, &[rng::tag::PHANTOM, split as u64, label as u64, i as u64]),
            )
        }
    }

    fn each(&self) -> impl Iterator<Item = (Split, u8, usize)> + '_ {
        Split::ALL.into_iter().flat_map(move |split| {
            (0..2u8).flat_map(move |label| (0..self.counts(split)[label as usize]).map(move |i| (split, label, i)))
        })
    }
}

/// In-memory manifest whose sources are phantom specs, ordered by split,
/// then label, then index.
pub fn phantom_manifest(cfg: &PhantomDatasetConfig) -> Result<DatasetManifest, DatasetError> {
    let records = cfg
        .each()
        .map(|(split, label, i)| Record::new(Source::Phantom(cfg.spec(split, label, i)), label, split))
        .collect();
    DatasetManifest::new(records)
}

/// Writes every phantom as `root/{split}/{class}/phantom_NNN.nii.gz` and
/// returns the written paths. Class folders are created even when empty.
pub fn write_phantom_tree(cfg: &PhantomDatasetConfig, root: impl AsRef<Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let root = root.as_ref();
    for split in Split::ALL {
        for class in CLASS_DIRS {
            fs::create_dir_all(root.join(split.dir_name()).join(class))?;
        }
    }
    let mut written = Vec::new();
    for (split, label, i) in cfg.each() {
        let path = root
            .join(split.dir_name())
            .join(CLASS_DIRS[label as usize])
            .join(format!("phantom_{i:03}.nii.gz"));
        let v = generate_phantom(&cfg.spec(split, label, i))?;
        write_volume(&path, &v)?;
        written.push(path);
    }
    Ok(written)
}
