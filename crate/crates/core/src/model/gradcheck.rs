use rand::Rng;

use super::{backward, build_model, forward, ArchitectureSpec, BlockOrder, ModelError};
use crate::layers::{bce_loss, Mode};
use crate::rng;
use crate::tensor::{relative_error, GradCheckReport, Tensor, TensorError};

pub const MODEL_GRADCHECK_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_MODEL_EPSILON: f64 = 1e-4;

/// Two-block network on a 14^3 cube: 14 -> 12 -> 6 -> 4 -> 2, so the last
/// batch norm still sees 8 positions per sample.
pub fn gradcheck_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        input_shape: [14, 14, 14, 1],
        block_filters: vec![2, 2],
        dense_units: 4,
        dropout_rate: 0.3,
        block_order: BlockOrder::ConvReluPoolBn,
    }
}

/// Smallest step tried before accepting a difference that crosses a kink.
const MIN_EPSILON: f64 = 1e-8;

/// Central-difference check of the BCE loss against [`backward`] for every
/// trainable tensor of a freshly built f64 model, on a batch of two random
/// volumes with labels `[0, 1]`. The dropout mask is held fixed by reusing
/// one forward seed.
///
/// Each coordinate starts at step `epsilon`; the step is divided by 10 while
/// either probe lands on a different ReLU or max-pool pattern than the base
/// point.
pub fn check_model_gradients(
    spec: &ArchitectureSpec,
    seed: u64,
    epsilon: f64,
) -> Result<Vec<GradCheckReport>, ModelError> {
    if !(epsilon > 0.0) {
        return Err(TensorError::BadEpsilon(epsilon).into());
    }
    let model = build_model::<f64>(spec, seed)?;
    let mut r = rng::stream(seed, &[rng::tag::BATCH_NOISE]);
    let shape: Vec<usize> = std::iter::once(2).chain(spec.input_shape).collect();
    let x = Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0))?;
    let labels = [0u8, 1];
    let dropout_seed = rng::derive_seed(seed, &[rng::tag::DROPOUT]);

    let (p, tape) = forward(&model, &x, Mode::Train, dropout_seed)?;
    let (_, grad_p) = bce_loss(&p, &labels)?;
    let grads = backward(&model, &tape, &grad_p)?;
    let base_pattern = tape.activation_pattern();

    let mut probe = model.clone();
    let evaluate = |probe: &super::ModelState<f64>| -> Result<(f64, bool), ModelError> {
        let (p, tape) = forward(probe, &x, Mode::Train, dropout_seed)?;
        let loss = bce_loss(&p, &labels)?.0;
        Ok((loss, tape.activation_pattern() == base_pattern))
    };

    let mut reports = Vec::with_capacity(grads.len());
    for (name, analytic) in &grads {
        let mut worst = 0.0f64;
        let mut worst_flat = 0;
        for i in 0..analytic.len() {
            let orig = model.params[name].data()[i];
            let mut h = epsilon;
            let numeric = loop {
                probe.params[name.as_str()].data_mut()[i] = orig + h;
                let (plus, same_plus) = evaluate(&probe)?;
                probe.params[name.as_str()].data_mut()[i] = orig - h;
                let (minus, same_minus) = evaluate(&probe)?;
                probe.params[name.as_str()].data_mut()[i] = orig;
                if (same_plus && same_minus) || h / 10.0 < MIN_EPSILON {
                    break (plus - minus) / (2.0 * h);
                }
                h /= 10.0;
            };
            let a = analytic.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(TensorError::NonFiniteGradient {
                    index: i,
                    which: if a.is_finite() { "numeric" } else { "analytic" },
                }
                .into());
            }
            let err = relative_error(a, numeric);
            if err > worst {
                worst = err;
                worst_flat = i;
            }
        }
        reports.push(GradCheckReport {
            op_name: name.clone(),
            max_rel_error: worst,
            worst_index: analytic.unravel(worst_flat),
            passed: worst < MODEL_GRADCHECK_THRESHOLD,
        });
    }
    Ok(reports)
}
