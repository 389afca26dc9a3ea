use rand::seq::SliceRandom;

use super::{generate_phantom, DatasetError, DatasetManifest, Record, Source, Split};
use crate::nifti::{read_volume, Volume};
use crate::rng;
use crate::tensor::{stack, tensor_from_volume, Tensor};
use crate::volume_ops::{add_gaussian_noise, flip_lr, normalize, resize, NormalizeMode, ResizeSpec};

/// Per-record preprocessing applied at load time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub target_shape: [usize; 3],
    pub normalize: NormalizeMode,
}

impl Preprocess {
    pub fn new(target_shape: [usize; 3]) -> Self {
        Self {
            target_shape,
            normalize: NormalizeMode::MinMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchStream {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Evaluation streams keep manifest order.
    pub shuffle: bool,
}

impl BatchStream {
    pub fn shuffled(batch_size: usize, shuffle_seed: u64) -> Self {
        Self {
            batch_size,
            shuffle_seed,
            shuffle: true,
        }
    }

    pub fn sequential(batch_size: usize) -> Self {
        Self {
            batch_size,
            shuffle_seed: 0,
            shuffle: false,
        }
    }
}

/// Loads one record: read or synthesize, resize to the target grid when the
/// shape differs, normalize, then apply the record's transform (flip, then
/// noise in normalized units).
pub fn load_record(record: &Record, pre: &Preprocess) -> Result<Volume, DatasetError> {
    let raw = match &record.source {
        Source::Path(p) => read_volume(p).map_err(|source| DatasetError::Load {
            path: p.clone(),
            source,
        })?,
        Source::Phantom(spec) => generate_phantom(spec)?,
    };
    let sized = if raw.shape == pre.target_shape {
        raw
    } else {
        resize(&raw, &ResizeSpec::trilinear(pre.target_shape))?
    };
    let mut v = normalize(&sized, pre.normalize)?;
    if let Some(t) = &record.transform {
        v = flip_lr(&v, t.flip_axis)?;
        v = add_gaussian_noise(&v, t.noise_sigma, t.noise_seed)?;
    }
    if v.shape != pre.target_shape {
        return Err(DatasetError::ShapeMismatch {
            id: record.id(),
            got: v.shape,
            expected: pre.target_shape,
        });
    }
    v.source_id = record.id();
    Ok(v)
}

/// Preprocessed `(X, Y, Z, 1)` tensors for a set of records, kept in memory
/// so epochs only reshuffle.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub tensors: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
    /// Index of each entry in the source manifest.
    pub record_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(B, X, Y, Z, 1)`.
    pub x: Tensor<f32>,
    pub labels: Vec<u8>,
    /// Positions in the [`PreparedSplit`].
    pub positions: Vec<usize>,
}

impl PreparedSplit {
    pub fn from_indices(manifest: &DatasetManifest, indices: &[usize], pre: &Preprocess) -> Result<Self, DatasetError> {
        let mut out = Self {
            tensors: Vec::with_capacity(indices.len()),
            labels: Vec::with_capacity(indices.len()),
            ids: Vec::with_capacity(indices.len()),
            record_indices: indices.to_vec(),
        };
        for &i in indices {
            let r = &manifest.records[i];
            out.tensors.push(tensor_from_volume(&load_record(r, pre)?));
            out.labels.push(r.label);
            out.ids.push(r.id());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Visit order for `epoch`: a permutation seeded by `(shuffle_seed,
    /// epoch)`, or manifest order for sequential streams.
    pub fn order(&self, stream: &BatchStream, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if stream.shuffle {
            order.shuffle(&mut rng::stream(stream.shuffle_seed, &[rng::tag::SHUFFLE, epoch as u64]));
        }
        order
    }

    /// Batches of `batch_size` in visit order; the last one may be short.
    pub fn batches<'a>(&'a self, stream: &BatchStream, epoch: usize) -> impl Iterator<Item = Batch> + 'a {
        let order = self.order(stream, epoch);
        let size = stream.batch_size.max(1);
        let chunks: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |positions| self.batch(positions))
    }

    pub fn batch(&self, positions: Vec<usize>) -> Batch {
        let items: Vec<Tensor<f32>> = positions.iter().map(|&p| self.tensors[p].clone()).collect();
        Batch {
            x: stack(&items).expect("prepared tensors share one shape"),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            positions,
        }
    }
}

pub fn prepare_split(manifest: &DatasetManifest, split: Split, pre: &Preprocess) -> Result<PreparedSplit, DatasetError> {
    PreparedSplit::from_indices(manifest, &manifest.indices(split), pre)
}

pub fn make_batches(
    manifest: &DatasetManifest,
    split: Split,
    stream: &BatchStream,
    epoch: usize,
    pre: &Preprocess,
) -> Result<Vec<Batch>, DatasetError> {
    if stream.batch_size == 0 {
        return Err(DatasetError::InvalidSpec("batch size must be >= 1".into()));
    }
    Ok(prepare_split(manifest, split, pre)?.batches(stream, epoch).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_augmentation, PhantomSpec};
    use crate::nifti::write_volume;
    use crate::volume_ops::AugmentationPolicy;

    fn manifest(train: usize, test: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for (split, n, base) in [(Split::Train, train, 0u64), (Split::Test, test, 500)] {
            for i in 0..n {
                let label = (i % 2) as u8;
                let spec = PhantomSpec::for_class([8, 8, 4], label, 0.02, base + i as u64);
                records.push(Record::new(Source::Phantom(spec), label, split));
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn batch_counts_and_short_tail() {
        let pre = Preprocess::new([8, 8, 4]);
        let m = manifest(18, 10);
        let m = apply_augmentation(&m, &AugmentationPolicy::default()).unwrap();
        let train = make_batches(&m, Split::Train, &BatchStream::shuffled(2, 1), 0, &pre).unwrap();
        assert_eq!(train.len(), 16);
        assert!(train.iter().all(|b| b.x.shape() == [2, 8, 8, 4, 1]));
        let test = make_batches(&m, Split::Test, &BatchStream::sequential(4), 0, &pre).unwrap();
        let sizes: Vec<usize> = test.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn epochs_permute_each_record_once() {
        let pre = Preprocess::new([8, 8, 4]);
        let m = manifest(10, 0);
        let prepared = prepare_split(&m, Split::Train, &pre).unwrap();
        let stream = BatchStream::shuffled(3, 42);
        let e0: Vec<usize> = prepared.batches(&stream, 0).flat_map(|b| b.positions).collect();
        let e1: Vec<usize> = prepared.batches(&stream, 1).flat_map(|b| b.positions).collect();
        let replay: Vec<usize> = prepared.batches(&stream, 0).flat_map(|b| b.positions).collect();
        assert_eq!(e0, replay);
        assert_ne!(e0, e1);
        for order in [&e0, &e1] {
            let mut sorted = order.clone();
            sorted.sort();
            assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        }
        let a = make_batches(&m, Split::Train, &stream, 0, &pre).unwrap();
        let b = make_batches(&m, Split::Train, &stream, 0, &pre).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loads_files_with_resize_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        let v = generate_phantom(&PhantomSpec::for_class([16, 16, 8], 1, 0.0, 3)).unwrap();
        let scaled = Volume {
            data: v.data.iter().map(|x| 200.0 * x + 10.0).collect(),
            ..v
        };
        write_volume(&path, &scaled).unwrap();
        let r = Record::new(Source::Path(path.clone()), 1, Split::Test);
        let loaded = load_record(&r, &Preprocess::new([8, 8, 4])).unwrap();
        assert_eq!(loaded.shape, [8, 8, 4]);
        let (lo, hi) = loaded.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
        let missing = Record::new(Source::Path(dir.path().join("nope.nii")), 0, Split::Test);
        assert!(matches!(load_record(&missing, &Preprocess::new([8, 8, 4])), Err(DatasetError::Load { .. })));
    }

    #[test]
    fn flip_transform_is_applied() {
        let pre = Preprocess::new([8, 8, 4]);
        let m = manifest(2, 0);
        let a = apply_augmentation(
            &m,
            &AugmentationPolicy {
                num_augmented_per_class: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let aug = &a.records[2];
        let src = a.records.iter().position(|r| r.source == aug.source && r.transform.is_none()).unwrap();
        let original = load_record(&a.records[src], &pre).unwrap();
        let flipped = load_record(aug, &pre).unwrap();
        assert_eq!(flip_lr(&original, 1).unwrap().data, flipped.data);
    }
}
