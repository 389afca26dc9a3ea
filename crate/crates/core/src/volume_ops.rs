//! Preprocessing and augmentation transforms on [`Volume`]s.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::Volume;
use crate::rng;

/// Flip axis used when none is configured (second stored axis).
pub const DEFAULT_FLIP_AXIS: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("volume contains a non-finite voxel at index {0}")]
    NonFiniteInput(usize),
    #[error("flip axis must be 0, 1 or 2, got {0}")]
    BadAxis(usize),
    #[error("target extents must be >= 1, got {0:?}")]
    BadTarget([usize; 3]),
    #[error("noise sigma must be finite and >= 0, got {0}")]
    BadSigma(f64),
    #[error("invalid augmentation policy: {0}")]
    BadPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    #[default]
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeSpec {
    pub target_shape: [usize; 3],
    pub method: ResizeMethod,
}

impl ResizeSpec {
    pub fn trilinear(target_shape: [usize; 3]) -> Self {
        Self {
            target_shape,
            method: ResizeMethod::Trilinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Per-volume min-max to `[0, 1]`.
    #[default]
    MinMax,
    /// Zero mean, unit standard deviation.
    ZScore,
}

/// How flipped (and optionally noised) copies are added to a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub flip_axis: usize,
    pub num_augmented_per_class: usize,
    /// Standard deviation in post-normalization intensity units; 0 disables noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        // 7 per class takes the 9+9 training set to 16+16.
        Self {
            flip_axis: DEFAULT_FLIP_AXIS,
            num_augmented_per_class: 7,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self, smallest_class: usize) -> Result<(), VolumeError> {
        if self.flip_axis > 2 {
            return Err(VolumeError::BadAxis(self.flip_axis));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(VolumeError::BadSigma(self.noise_sigma));
        }
        if self.num_augmented_per_class > smallest_class * 8 {
            return Err(VolumeError::BadPolicy(format!(
                "{} augmented copies per class exceeds 8x the class size {}",
                self.num_augmented_per_class, smallest_class
            )));
        }
        Ok(())
    }
}

fn check_finite(v: &Volume) -> Result<(), VolumeError> {
    match v.data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(VolumeError::NonFiniteInput(i)),
        None => Ok(()),
    }
}

/// Min-max normalization to `[0, 1]`; a constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume) -> Result<Volume, VolumeError> {
    check_finite(v)?;
    let (lo, hi) = v.min_max();
    let mut out = v.clone();
    if hi > lo {
        let (lo, range) = (lo as f64, hi as f64 - lo as f64);
        for x in &mut out.data {
            *x = ((*x as f64 - lo) / range).clamp(0.0, 1.0) as f32;
        }
    } else {
        out.data.fill(0.0);
    }
    Ok(out)
}

/// Zero-mean unit-variance normalization; constant volumes map to zeros.
pub fn standardize_intensity(v: &Volume) -> Result<Volume, VolumeError> {
    check_finite(v)?;
    let n = v.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut out = v.clone();
    if var > 0.0 {
        let sd = var.sqrt();
        for x in &mut out.data {
            *x = ((*x as f64 - mean) / sd) as f32;
        }
    } else {
        out.data.fill(0.0);
    }
    Ok(out)
}

pub fn normalize(v: &Volume, mode: NormalizeMode) -> Result<Volume, VolumeError> {
    match mode {
        NormalizeMode::MinMax => normalize_intensity(v),
        NormalizeMode::ZScore => standardize_intensity(v),
    }
}

/// Half-pixel-center source coordinate for output index `i`, clamped to the
/// input grid.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    let s = (i as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
    s.clamp(0.0, (n_in - 1) as f64)
}

/// Per-axis lookup: lower neighbour, upper neighbour and blend weight.
fn axis_taps(n_in: usize, n_out: usize, method: ResizeMethod) -> Vec<(usize, usize, f32)> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            match method {
                ResizeMethod::Trilinear => {
                    let lo = s.floor() as usize;
                    let hi = (lo + 1).min(n_in - 1);
                    (lo, hi, (s - lo as f64) as f32)
                }
                ResizeMethod::Nearest => {
                    let k = ((s + 0.5).floor() as usize).min(n_in - 1);
                    (k, k, 0.0)
                }
            }
        })
        .collect()
}

pub fn resize(v: &Volume, spec: &ResizeSpec) -> Result<Volume, VolumeError> {
    let target = spec.target_shape;
    if target.contains(&0) {
        return Err(VolumeError::BadTarget(target));
    }
    check_finite(v)?;
    if target == v.shape {
        return Ok(v.clone());
    }
    let [nx, ny, _] = v.shape;
    let tx = axis_taps(v.shape[0], target[0], spec.method);
    let ty = axis_taps(v.shape[1], target[1], spec.method);
    let tz = axis_taps(v.shape[2], target[2], spec.method);
    let at = |x: usize, y: usize, z: usize| v.data[x + nx * (y + ny * z)];
    let lerp = |a: f32, b: f32, w: f32| {
        if w == 0.0 || a == b {
            a
        } else {
            (a + (b - a) * w).clamp(a.min(b), a.max(b))
        }
    };
    let mut data = Vec::with_capacity(target.iter().product());
    for &(z0, z1, wz) in &tz {
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), wx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), wx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), wx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), wx);
                let c0 = lerp(c00, c10, wy);
                let c1 = lerp(c01, c11, wy);
                data.push(lerp(c0, c1, wz));
            }
        }
    }
    let mut spacing = v.spacing;
    for (s, (&i, &o)) in spacing.iter_mut().zip(v.shape.iter().zip(&target)) {
        *s *= i as f32 / o as f32;
    }
    Ok(Volume {
        shape: target,
        spacing,
        data,
        source_id: v.source_id.clone(),
    })
}

/// Trilinear resize with the half-pixel-center convention.
pub fn resize_trilinear(v: &Volume, target_shape: [usize; 3]) -> Result<Volume, VolumeError> {
    resize(v, &ResizeSpec::trilinear(target_shape))
}

/// Mirrors the volume along `axis`.
pub fn flip_lr(v: &Volume, axis: usize) -> Result<Volume, VolumeError> {
    if axis > 2 {
        return Err(VolumeError::BadAxis(axis));
    }
    let [nx, ny, nz] = v.shape;
    let mut out = v.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (sx, sy, sz) = match axis {
                    0 => (nx - 1 - x, y, z),
                    1 => (x, ny - 1 - y, z),
                    _ => (x, y, nz - 1 - z),
                };
                out.data[x + nx * (y + ny * z)] = v.data[sx + nx * (sy + ny * sz)];
            }
        }
    }
    Ok(out)
}

/// Adds i.i.d. `N(0, sigma^2)` noise drawn from a stream seeded by `seed`.
pub fn add_gaussian_noise(v: &Volume, sigma: f64, seed: u64) -> Result<Volume, VolumeError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(VolumeError::BadSigma(sigma));
    }
    let mut out = v.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| VolumeError::BadSigma(sigma))?;
    let mut rng = rng::stream(seed, &[rng::tag::NOISE]);
    for x in &mut out.data {
        *x += normal.sample(&mut rng) as f32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(shape: [usize; 3], data: Vec<f32>) -> Volume {
        Volume::new(shape, [1.0, 1.0, 1.0], data, "t").unwrap()
    }

    fn ramp(shape: [usize; 3]) -> Volume {
        let n = shape.iter().product::<usize>();
        vol(shape, (0..n).map(|i| ((i * 37) % 101) as f32 * 0.25).collect())
    }

    #[test]
    fn normalize_examples() {
        let v = vol([3, 1, 1], vec![0.0, 50.0, 100.0]);
        assert_eq!(normalize_intensity(&v).unwrap().data, vec![0.0, 0.5, 1.0]);
        let c = Volume::filled([2, 2, 2], 7.0);
        assert!(normalize_intensity(&c).unwrap().data.iter().all(|&x| x == 0.0));
        let u = vol([4, 1, 1], vec![0.0, 0.3, 0.71, 1.0]);
        let n = normalize_intensity(&u).unwrap();
        for (a, b) in n.data.iter().zip(&u.data) {
            assert!((a - b).abs() <= 1e-7);
        }
        let mut bad = u.clone();
        bad.data[1] = f32::NAN;
        assert_eq!(normalize_intensity(&bad), Err(VolumeError::NonFiniteInput(1)));
    }

    #[test]
    fn zscore_has_unit_moments() {
        let v = ramp([5, 4, 3]);
        let z = standardize_intensity(&v).unwrap();
        let n = z.len() as f64;
        let mean = z.data.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = z.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    /// Independent scalar evaluation of the sampling convention.
    fn reference_1d(src: &[f32], n_out: usize) -> Vec<f64> {
        let n_in = src.len();
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                    .max(0.0)
                    .min((n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = if lo + 1 < n_in { lo + 1 } else { lo };
                let w = s - lo as f64;
                src[lo] as f64 * (1.0 - w) + src[hi] as f64 * w
            })
            .collect()
    }

    #[test]
    fn resize_upsample_matches_reference() {
        let v = vol([2, 1, 1], vec![0.0, 1.0]);
        let r = resize_trilinear(&v, [4, 1, 1]).unwrap();
        // s = -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        let expected = reference_1d(&[0.0, 1.0], 4);
        assert_eq!(expected, vec![0.0, 0.25, 0.75, 1.0]);
        for (a, b) in r.data.iter().zip(&expected) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
        assert_eq!(r.spacing, [0.5, 1.0, 1.0]);
    }

    #[test]
    fn resize_separable_matches_reference() {
        let v = ramp([5, 3, 4]);
        let r = resize_trilinear(&v, [7, 2, 3]).unwrap();
        // along a line in x with y,z extents kept, the 3D resize reduces to 1D
        let line: Vec<f32> = (0..5).map(|x| v.at(x, 1, 2)).collect();
        let r1 = resize_trilinear(&v, [7, 3, 4]).unwrap();
        let expected = reference_1d(&line, 7);
        for x in 0..7 {
            assert!((r1.at(x, 1, 2) as f64 - expected[x]).abs() < 1e-5);
        }
        assert_eq!(r.shape, [7, 2, 3]);
    }

    #[test]
    fn resize_identity_and_constants() {
        let v = ramp([4, 3, 2]);
        let same = resize_trilinear(&v, [4, 3, 2]).unwrap();
        assert_eq!(same.data, v.data);
        let c = Volume::filled([3, 5, 2], 0.37);
        let r = resize_trilinear(&c, [8, 2, 7]).unwrap();
        assert!(r.data.iter().all(|&x| x == 0.37));
        assert_eq!(
            resize_trilinear(&c, [0, 2, 2]),
            Err(VolumeError::BadTarget([0, 2, 2]))
        );
    }

    #[test]
    fn nearest_rounds_half_up() {
        let v = vol([2, 1, 1], vec![3.0, 9.0]);
        let spec = ResizeSpec {
            target_shape: [4, 1, 1],
            method: ResizeMethod::Nearest,
        };
        // s = 0, 0.25, 0.75, 1 -> 0, 0, 1, 1
        assert_eq!(resize(&v, &spec).unwrap().data, vec![3.0, 3.0, 9.0, 9.0]);
        let v = vol([3, 1, 1], vec![1.0, 2.0, 3.0]);
        let spec = ResizeSpec {
            target_shape: [2, 1, 1],
            method: ResizeMethod::Nearest,
        };
        // s = 0.25, 1.75 -> 0, 2
        assert_eq!(resize(&v, &spec).unwrap().data, vec![1.0, 3.0]);
    }

    #[test]
    fn flip_examples() {
        let v = vol([2, 1, 1], vec![1.0, 2.0]);
        assert_eq!(flip_lr(&v, 0).unwrap().data, vec![2.0, 1.0]);
        let sym = vol([1, 3, 1], vec![4.0, 5.0, 4.0]);
        assert_eq!(flip_lr(&sym, 1).unwrap(), sym);
        assert_eq!(flip_lr(&sym, 3), Err(VolumeError::BadAxis(3)));
    }

    #[test]
    fn noise_examples() {
        let v = ramp([4, 4, 4]);
        assert_eq!(add_gaussian_noise(&v, 0.0, 3).unwrap(), v);
        assert_eq!(
            add_gaussian_noise(&v, 0.2, 3).unwrap(),
            add_gaussian_noise(&v, 0.2, 3).unwrap()
        );
        assert_ne!(
            add_gaussian_noise(&v, 0.2, 3).unwrap(),
            add_gaussian_noise(&v, 0.2, 4).unwrap()
        );
        assert!(add_gaussian_noise(&v, -1.0, 3).is_err());
    }

    #[test]
    fn noise_moments_on_large_volume() {
        let n = 128usize;
        let v = Volume::filled([n, n, n], 0.5);
        let sigma = 0.1;
        let out = add_gaussian_noise(&v, sigma, 11).unwrap();
        let count = (n * n * n) as f64;
        let d: Vec<f64> = out.data.iter().map(|&x| x as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / count;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count).sqrt();
        assert!(mean.abs() < 3.0 * sigma / count.sqrt(), "mean {mean}");
        assert!((sd - sigma).abs() < 0.05 * sigma, "sd {sd}");
    }

    #[test]
    fn policy_validation() {
        let p = AugmentationPolicy::default();
        assert!(p.validate(9).is_ok());
        assert!(AugmentationPolicy { num_augmented_per_class: 73, ..p }.validate(9).is_err());
        assert!(AugmentationPolicy { flip_axis: 5, ..p }.validate(9).is_err());
        assert!(AugmentationPolicy { noise_sigma: f64::NAN, ..p }.validate(9).is_err());
    }

    fn arb_volume() -> impl Strategy<Value = Volume> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(x, y, z)| {
            proptest::collection::vec(-100.0f32..100.0, x * y * z)
                .prop_map(move |d| Volume::new([x, y, z], [1.0; 3], d, "p").unwrap())
        })
    }

    proptest! {
        #[test]
        fn flip_is_an_involution_preserving_values(v in arb_volume(), axis in 0usize..3) {
            let f = flip_lr(&v, axis).unwrap();
            prop_assert_eq!(&flip_lr(&f, axis).unwrap(), &v);
            let mut a: Vec<u32> = v.data.iter().map(|x| x.to_bits()).collect();
            let mut b: Vec<u32> = f.data.iter().map(|x| x.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalize_range_and_affine_invariance(
            v in arb_volume(), k in -2i32..4, b in -50i32..50,
        ) {
            let n = normalize_intensity(&v).unwrap();
            prop_assert!(n.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
            // integer voxels, power-of-two scale and integer shift keep the
            // rescaled input exact in f32
            let mut ints = v.clone();
            for x in &mut ints.data { *x = x.round(); }
            let base = normalize_intensity(&ints).unwrap();
            let a = 2f32.powi(k);
            let mut w = ints.clone();
            for x in &mut w.data { *x = a * *x + b as f32; }
            let m = normalize_intensity(&w).unwrap();
            for (p, q) in base.data.iter().zip(&m.data) {
                prop_assert!((p - q).abs() < 1e-6, "{} vs {}", p, q);
            }
        }

        #[test]
        fn resize_stays_in_range(v in arb_volume(), t in (1usize..8, 1usize..8, 1usize..8)) {
            let r = resize_trilinear(&v, [t.0, t.1, t.2]).unwrap();
            let (lo, hi) = v.min_max();
            prop_assert!(r.data.iter().all(|&x| x >= lo && x <= hi));
            let c = Volume::filled(v.shape, 2.5);
            let rc = resize_trilinear(&c, [t.0, t.1, t.2]).unwrap();
            prop_assert!(rc.data.iter().all(|&x| x == 2.5));
        }
    }
}
