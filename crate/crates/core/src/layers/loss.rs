use crate::tensor::{Scalar, Tensor};

use super::{shape_err, LayerError};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over a `(N, 1)` column of probabilities.
///
/// The returned gradient is taken at the clamped probabilities.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>), LayerError> {
    let n = labels.len();
    if p.shape() != [n, 1] {
        return Err(shape_err(&format!("predictions must be ({n}, 1)"), p.shape()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(LayerError::BadLabel(bad));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&pv, &y) in p.data().iter().zip(labels) {
        let q = pv.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = y as f64;
        loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        grad.push(T::from_f64(-inv_n * (y / q - (1.0 - y) / (1.0 - q))));
    }
    Ok((loss * inv_n, Tensor::new(&[n, 1], grad)?))
}
