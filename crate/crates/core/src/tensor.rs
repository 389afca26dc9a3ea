//! Dense N-dimensional tensors and the central-difference gradient checker.
//!
//! Memory order is row-major: the last axis varies fastest. Conv kernels,
//! checkpoint payloads and every layer in [`crate::layers`] rely on this.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

use crate::nifti::Volume;

/// Maximum supported rank (batched volumes are N, X, Y, Z, C).
pub const MAX_RANK: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("rank {0} exceeds the maximum of {MAX_RANK}")]
    RankTooLarge(usize),
    #[error("tensor must hold at least one element, got shape {0:?}")]
    Empty(Vec<usize>),
    #[error("shapes differ: {0:?} vs {1:?}")]
    Incompatible(Vec<usize>, Vec<usize>),
    #[error("non-finite gradient at flat index {index} ({which})")]
    NonFiniteGradient { index: usize, which: &'static str },
    #[error("gradient checks need epsilon > 0, got {0}")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}

/// Floating point element type usable in tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + Debug + Default + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("element", &std::any::type_name::<T>())
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.len() > MAX_RANK {
        return Err(TensorError::RankTooLarge(shape.len()));
    }
    let n: usize = shape.iter().product();
    if n == 0 {
        return Err(TensorError::Empty(shape.to_vec()));
    }
    Ok(n)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self, TensorError> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::full(shape, T::zero())
    }

    /// Zeros with the same shape. Never fails since `self` is already valid.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self, TensorError> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for (slot, &n) in index.iter_mut().zip(&self.shape).rev() {
            *slot = flat % n;
            flat /= n;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), TensorError> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(TensorError::Incompatible(
                self.shape.clone(),
                other.shape.clone(),
            ))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Copies a volume into a rank-4 `(X, Y, Z, 1)` tensor.
///
/// Volumes are stored X-fastest while tensors are last-axis-fastest, so this
/// is a transposing copy: `t[x, y, z, 0] == v[x, y, z]`.
pub fn tensor_from_volume(v: &Volume) -> Tensor<f32> {
    let [nx, ny, nz] = v.shape;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                data.push(v.data[x + nx * (y + ny * z)]);
            }
        }
    }
    Tensor {
        shape: vec![nx, ny, nz, 1],
        data,
    }
}

/// Inverse of [`tensor_from_volume`]. Spacing and provenance are supplied by
/// the caller since tensors do not carry them.
pub fn volume_from_tensor(
    t: &Tensor<f32>,
    spacing: [f32; 3],
    source_id: impl Into<String>,
) -> Result<Volume, TensorError> {
    let (nx, ny, nz) = match *t.shape() {
        [nx, ny, nz, 1] | [nx, ny, nz] => (nx, ny, nz),
        _ => {
            return Err(TensorError::Incompatible(
                t.shape().to_vec(),
                vec![0, 0, 0, 1],
            ))
        }
    };
    let mut data = vec![0.0f32; nx * ny * nz];
    let mut it = t.data().iter();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                data[x + nx * (y + ny * z)] = *it.next().expect("length checked by shape");
            }
        }
    }
    Ok(Volume {
        shape: [nx, ny, nz],
        spacing,
        data,
        source_id: source_id.into(),
    })
}

/// Stacks equally shaped tensors along a new leading batch axis.
pub fn stack<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    let first = items.first().ok_or_else(|| TensorError::Empty(vec![0]))?;
    let mut shape = Vec::with_capacity(first.rank() + 1);
    shape.push(items.len());
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * items.len());
    for t in items {
        first.same_shape(t)?;
        data.extend_from_slice(t.data());
    }
    Tensor::new(&shape, data)
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub worst_index: Vec<usize>,
    pub passed: bool,
}

impl Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} max_rel_err={:.3e} worst={:?} {}",
            self.op_name,
            self.max_rel_error,
            self.worst_index,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error used by the gradient checker: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `x`.
///
/// `f` must be deterministic: it is evaluated twice per element.
pub fn finite_diff_check(
    op_name: &str,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    epsilon: f64,
    threshold: f64,
) -> Result<GradCheckReport, TensorError> {
    if !(epsilon > 0.0) {
        return Err(TensorError::BadEpsilon(epsilon));
    }
    x.same_shape(analytic)?;
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    let mut worst_flat = 0usize;
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + epsilon;
        let plus = f(&probe);
        probe.data[i] = orig - epsilon;
        let minus = f(&probe);
        probe.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        if !numeric.is_finite() {
            return Err(TensorError::NonFiniteGradient {
                index: i,
                which: "numeric",
            });
        }
        let a = analytic.data[i];
        if !a.is_finite() {
            return Err(TensorError::NonFiniteGradient {
                index: i,
                which: "analytic",
            });
        }
        let err = relative_error(a, numeric);
        if err > worst {
            worst = err;
            worst_flat = i;
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: worst,
        worst_index: x.unravel(worst_flat),
        passed: worst < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(shape: [usize; 3]) -> Volume {
        let n = shape.iter().product::<usize>();
        Volume {
            shape,
            spacing: [1.0, 1.0, 2.0],
            data: (0..n).map(|i| i as f32 * 0.5 - 1.0).collect(),
            source_id: "t".into(),
        }
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(matches!(
            Tensor::<f32>::new(&[2, 2], vec![0.0; 3]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(matches!(Tensor::<f32>::zeros(&[2, 0]), Err(TensorError::Empty(_))));
        assert!(matches!(
            Tensor::<f32>::zeros(&[1; 6]),
            Err(TensorError::RankTooLarge(6))
        ));
    }

    #[test]
    fn offsets_are_last_axis_fastest() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64).unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.unravel(23), vec![1, 2, 3]);
    }

    #[test]
    fn volume_tensor_copy() {
        let v = vol([128, 128, 64]);
        let t = tensor_from_volume(&v);
        assert_eq!(t.shape(), &[128, 128, 64, 1]);

        let v = vol([2, 2, 2]);
        let t = tensor_from_volume(&v);
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    assert_eq!(t.get(&[x, y, z, 0]), v.data[x + 2 * (y + 2 * z)]);
                }
            }
        }
        let back = volume_from_tensor(&t, v.spacing, "t").unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn gradcheck_linear_function() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64).sin()).unwrap();
        let ones = Tensor::full(&[3, 4], 1.0).unwrap();
        let r = finite_diff_check("sum", |t| t.sum(), &x, &ones, 1e-5, 1e-10).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn gradcheck_quadratic() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::new(&[2], vec![2.0, 4.0]).unwrap();
        let r = finite_diff_check("sum_sq", |t| t.data().iter().map(|v| v * v).sum(), &x, &g, 1e-5, 1e-8)
            .unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn gradcheck_detects_wrong_gradient() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::new(&[2], vec![2.0, 5.0]).unwrap();
        let r = finite_diff_check("bad", |t| t.data().iter().map(|v| v * v).sum(), &x, &g, 1e-5, 1e-4)
            .unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, vec![1]);
        assert!(finite_diff_check("e", |t| t.sum(), &x, &g, 0.0, 1.0).is_err());
    }

    #[test]
    fn gradcheck_reports_nonfinite() {
        let x = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let g = Tensor::new(&[1], vec![1.0]).unwrap();
        let err = finite_diff_check("ln", |t| t.data()[0].ln(), &x, &g, 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient { .. }));
    }

    proptest! {
        #[test]
        fn elementwise_ops_match_scalar_math(
            vals in proptest::collection::vec(-1e3f64..1e3, 1..40),
            k in -10.0f64..10.0,
        ) {
            let n = vals.len();
            let a = Tensor::new(&[n], vals.clone()).unwrap();
            let b = a.map(|v| v * 0.5 + 1.0);
            let s = a.add(&b).unwrap();
            let p = a.mul(&b).unwrap();
            let c = a.scale(k);
            for i in 0..n {
                prop_assert_eq!(s.data()[i], vals[i] + b.data()[i]);
                prop_assert_eq!(p.data()[i], vals[i] * b.data()[i]);
                prop_assert_eq!(c.data()[i], vals[i] * k);
            }
            prop_assert_eq!(s.shape(), a.shape());
        }

        #[test]
        fn linear_functions_pass_tightly(
            mag in proptest::collection::vec(0.1f64..5.0, 1..20),
            neg in proptest::collection::vec(any::<bool>(), 20),
        ) {
            // linear => no truncation error, so a wide step only shrinks rounding noise
            let coef: Vec<f64> = mag.iter().zip(&neg).map(|(&m, &s)| if s { -m } else { m }).collect();
            let n = coef.len();
            let x = Tensor::from_fn(&[n], |i| i as f64 * 0.3 - 1.0).unwrap();
            let g = Tensor::new(&[n], coef.clone()).unwrap();
            let r = finite_diff_check(
                "linear",
                |t| t.data().iter().zip(&coef).map(|(a, b)| a * b).sum(),
                &x, &g, 1e-3, 1e-9,
            ).unwrap();
            prop_assert!(r.max_rel_error < 1e-9, "{}", r);
        }
    }
}
