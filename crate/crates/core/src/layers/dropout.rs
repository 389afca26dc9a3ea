use rand::Rng;

use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::{LayerError, Mode};

/// Per-element multiplier applied by a dropout forward pass: `0` for dropped
/// elements and `1 / (1 - rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    pub scale: Tensor<T>,
}

/// Inverted dropout. Infer mode (or rate 0) is the identity.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, DropoutMask<T>), LayerError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LayerError::BadRate(rate));
    }
    if mode == Mode::Infer || rate == 0.0 {
        let ones = x.map(|_| T::one());
        return Ok((x.clone(), DropoutMask { scale: ones }));
    }
    let keep = 1.0 - rate;
    let kept = T::from_f64(1.0 / keep);
    let mut rng = rng::stream(seed, &[rng::tag::DROPOUT]);
    let scale = Tensor::from_fn(x.shape(), |_| {
        if rng.random::<f64>() < keep {
            kept
        } else {
            T::zero()
        }
    })?;
    let out = x.mul(&scale)?;
    Ok((out, DropoutMask { scale }))
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    Ok(grad_out.mul(&mask.scale)?)
}
