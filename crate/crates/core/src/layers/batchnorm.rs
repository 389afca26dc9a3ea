use crate::tensor::{Scalar, Tensor};

use super::{shape_err, LayerError, Mode};

/// Running-statistics momentum: `r <- momentum * r + (1 - momentum) * batch`.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

/// Per-channel batch normalization state over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Result<Self, LayerError> {
        Ok(Self {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            mode: Mode::Train,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize), LayerError> {
        let c = self.channels();
        for t in [&self.beta, &self.running_mean, &self.running_var] {
            if t.shape() != [c] {
                return Err(shape_err(&format!("batchnorm stats must be ({c})"), t.shape()));
            }
        }
        if x.rank() < 2 || x.shape()[x.rank() - 1] != c {
            return Err(shape_err(&format!("batchnorm input must end in {c} channels"), x.shape()));
        }
        Ok((c, x.len() / c))
    }
}

/// Per-channel mean and biased variance, accumulated in f64.
fn channel_moments<T: Scalar>(x: &Tensor<T>, c: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for pos in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(pos) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for pos in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(pos).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}

/// Train mode normalizes with batch statistics and updates the running
/// statistics in `s`; infer mode uses the running statistics unchanged.
pub fn batchnorm_forward<T: Scalar>(x: &Tensor<T>, s: &mut BatchNormState<T>) -> Result<Tensor<T>, LayerError> {
    let (c, count) = s.check(x)?;
    let (mean, var): (Vec<f64>, Vec<f64>) = match s.mode {
        Mode::Train => {
            if count < 2 {
                return Err(LayerError::DegenerateBatch(count));
            }
            let (mean, var) = channel_moments(x, c);
            let mo = s.momentum;
            for ch in 0..c {
                let rm = &mut s.running_mean.data_mut()[ch];
                *rm = T::from_f64(mo * rm.as_f64() + (1.0 - mo) * mean[ch]);
                let rv = &mut s.running_var.data_mut()[ch];
                *rv = T::from_f64(mo * rv.as_f64() + (1.0 - mo) * var[ch]);
            }
            (mean, var)
        }
        Mode::Infer => (
            s.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            s.running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    // out = scale * x + shift per channel
    let scale: Vec<T> = (0..c)
        .map(|ch| T::from_f64(s.gamma.data()[ch].as_f64() / (var[ch] + s.epsilon).sqrt()))
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| T::from_f64(s.beta.data()[ch].as_f64() - mean[ch] * scale[ch].as_f64()))
        .collect();
    let mut out = x.clone();
    for pos in out.data_mut().chunks_exact_mut(c) {
        for ((v, &a), &b) in pos.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * a + b;
        }
    }
    Ok(out)
}

/// Full batch-statistics gradient in train mode (mean and variance depend on
/// `x`); in infer mode the statistics are constants.
pub fn batchnorm_backward<T: Scalar>(
    x: &Tensor<T>,
    s: &BatchNormState<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>, LayerError> {
    let (c, count) = s.check(x)?;
    x.same_shape(grad_out)?;
    let (mean, var) = match s.mode {
        Mode::Train => {
            if count < 2 {
                return Err(LayerError::DegenerateBatch(count));
            }
            channel_moments(x, c)
        }
        Mode::Infer => (
            s.running_mean.data().iter().map(|v| v.as_f64()).collect(),
            s.running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + s.epsilon).sqrt()).collect();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (xp, gp) in x.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        for ch in 0..c {
            let g = gp[ch].as_f64();
            let xhat = (xp[ch].as_f64() - mean[ch]) * inv_std[ch];
            sum_g[ch] += g;
            sum_gx[ch] += g * xhat;
        }
    }
    let n = count as f64;
    let mut gx = x.zeros_like();
    for ((dp, xp), gp) in gx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(grad_out.data().chunks_exact(c))
    {
        for ch in 0..c {
            let gamma = s.gamma.data()[ch].as_f64();
            let g = gp[ch].as_f64();
            let v = match s.mode {
                Mode::Train => {
                    let xhat = (xp[ch].as_f64() - mean[ch]) * inv_std[ch];
                    gamma * inv_std[ch] * (g - sum_g[ch] / n - xhat * sum_gx[ch] / n)
                }
                Mode::Infer => gamma * inv_std[ch] * g,
            };
            dp[ch] = T::from_f64(v);
        }
    }
    Ok(BatchNormGrads {
        x: gx,
        gamma: Tensor::new(&[c], sum_gx.into_iter().map(T::from_f64).collect())?,
        beta: Tensor::new(&[c], sum_g.into_iter().map(T::from_f64).collect())?,
    })
}
