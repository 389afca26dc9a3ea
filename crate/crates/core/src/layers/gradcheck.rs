//! Finite-difference checks for every layer's backward pass.
//!
//! Each layer output `y(x)` is reduced to a scalar `sum(r * y)` with a fixed
//! random projection `r`, so the analytic gradient is the backward pass fed
//! with `grad_out = r`. Shapes are randomized with spatial extents <= 6.

use std::fmt;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng;
use crate::tensor::{finite_diff_check, GradCheckReport, Tensor, TensorError};

use super::*;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const LAYER_THRESHOLD: f64 = 1e-4;
pub const SMOOTH_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3d,
    MaxPool3d,
    BatchNorm,
    GlobalAvgPool,
    Dense,
    Relu,
    Sigmoid,
    Dropout,
    Bce,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Conv3d,
        LayerKind::MaxPool3d,
        LayerKind::BatchNorm,
        LayerKind::GlobalAvgPool,
        LayerKind::Dense,
        LayerKind::Relu,
        LayerKind::Sigmoid,
        LayerKind::Dropout,
        LayerKind::Bce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv3d => "conv3d",
            LayerKind::MaxPool3d => "maxpool3d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Dropout => "dropout",
            LayerKind::Bce => "bce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Smooth scalar maps are held to the tighter threshold.
    pub fn threshold(self) -> f64 {
        match self {
            LayerKind::Sigmoid | LayerKind::Bce => SMOOTH_THRESHOLD,
            _ => LAYER_THRESHOLD,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    pub epsilon: f64,
    /// Test hook: perturbs the analytic gradients of one layer so the harness
    /// can be shown to fail.
    pub fault: Option<LayerKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            epsilon: DEFAULT_EPSILON,
            fault: None,
        }
    }
}

/// Per-input reports for one layer.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: LayerKind,
    pub threshold: f64,
    pub reports: Vec<GradCheckReport>,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    /// Worst of the per-input reports, relabelled with the layer name.
    pub fn summary(&self) -> GradCheckReport {
        let worst = self
            .reports
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .cloned()
            .unwrap_or(GradCheckReport {
                op_name: String::new(),
                max_rel_error: 0.0,
                worst_index: vec![],
                passed: true,
            });
        GradCheckReport {
            op_name: self.layer.name().to_string(),
            passed: self.passed(),
            ..worst
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Check = Result<GradCheckReport, GradCheckError>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("non-empty shape")
}

/// Random `(N, X, Y, Z, C)` shape.
fn volume_shape(
    rng: &mut ChaCha8Rng,
    batch: RangeInclusive<usize>,
    spatial: RangeInclusive<usize>,
    channels: RangeInclusive<usize>,
) -> Vec<usize> {
    let mut shape = vec![rng.random_range(batch)];
    for _ in 0..3 {
        shape.push(rng.random_range(spatial.clone()));
    }
    shape.push(rng.random_range(channels));
    shape
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

struct Ctx {
    rng: ChaCha8Rng,
    eps: f64,
    fault: bool,
    threshold: f64,
}

impl Ctx {
    fn check(
        &self,
        name: &str,
        f: impl FnMut(&Tensor<f64>) -> f64,
        x: &Tensor<f64>,
        analytic: Tensor<f64>,
    ) -> Check {
        let analytic = if self.fault {
            analytic.map(|g| g * 1.05 + 1e-3)
        } else {
            analytic
        };
        Ok(finite_diff_check(name, f, x, &analytic, self.eps, self.threshold)?)
    }
}

fn conv3d(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let k = c.rng.random_range(1..=3usize);
    let n = c.rng.random_range(1..=2usize);
    let dims: Vec<usize> = (0..3).map(|_| c.rng.random_range(k..=6usize)).collect();
    let ci = c.rng.random_range(1..=3usize);
    let co = c.rng.random_range(1..=3usize);
    let x = uniform(&mut c.rng, &[n, dims[0], dims[1], dims[2], ci], -1.0, 1.0);
    let w = uniform(&mut c.rng, &[k, k, k, ci, co], -1.0, 1.0);
    let b = uniform(&mut c.rng, &[co], -1.0, 1.0);
    let y = conv3d_forward(&x, &w, &b)?;
    let r = uniform(&mut c.rng, y.shape(), -1.0, 1.0);
    let g = conv3d_backward(&x, &w, &b, &r)?;
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        project(&conv3d_forward(x, w, b).expect("shapes fixed"), &r)
    };
    Ok(vec![
        c.check("conv3d.x", |t| f(t, &w, &b), &x, g.x)?,
        c.check("conv3d.weights", |t| f(&x, t, &b), &w, g.weights)?,
        c.check("conv3d.bias", |t| f(&x, &w, t), &b, g.bias)?,
    ])
}

fn maxpool3d(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let shape = volume_shape(&mut c.rng, 1..=2, 2..=6, 1..=2);
    // distinct values spaced far wider than 2 * epsilon, so no window has a near-tie
    let len: usize = shape.iter().product();
    let mut levels: Vec<usize> = (0..len).collect();
    levels.shuffle(&mut c.rng);
    let x = Tensor::new(&shape, levels.iter().map(|&v| v as f64 * 0.01 - 1.0).collect())?;
    let (y, rec) = maxpool3d_forward(&x)?;
    let r = uniform(&mut c.rng, y.shape(), -1.0, 1.0);
    let gx = maxpool3d_backward(&rec, &r)?;
    Ok(vec![c.check(
        "maxpool3d.x",
        |t| project(&maxpool3d_forward(t).expect("shape fixed").0, &r),
        &x,
        gx,
    )?])
}

fn batchnorm(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let ch = c.rng.random_range(1..=3usize);
    let shape = volume_shape(&mut c.rng, 2..=2, 1..=3, ch..=ch);
    let x = uniform(&mut c.rng, &shape, -2.0, 2.0);
    let mut state = BatchNormState::<f64>::new(ch)?;
    state.gamma = uniform(&mut c.rng, &[ch], 0.5, 1.5);
    state.beta = uniform(&mut c.rng, &[ch], -0.5, 0.5);
    let r = uniform(&mut c.rng, &shape, -1.0, 1.0);
    let g = batchnorm_backward(&x, &state, &r)?;
    let f = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
        let mut s = state.clone();
        s.gamma = gamma.clone();
        s.beta = beta.clone();
        project(&batchnorm_forward(x, &mut s).expect("shapes fixed"), &r)
    };
    Ok(vec![
        c.check("batchnorm.x", |t| f(t, &state.gamma, &state.beta), &x, g.x)?,
        c.check("batchnorm.gamma", |t| f(&x, t, &state.beta), &state.gamma, g.gamma)?,
        c.check("batchnorm.beta", |t| f(&x, &state.gamma, t), &state.beta, g.beta)?,
    ])
}

fn gap(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let shape = volume_shape(&mut c.rng, 1..=2, 1..=6, 1..=3);
    let x = uniform(&mut c.rng, &shape, -1.0, 1.0);
    let y = global_avg_pool(&x)?;
    let r = uniform(&mut c.rng, y.shape(), -1.0, 1.0);
    let gx = global_avg_pool_backward(x.shape(), &r)?;
    Ok(vec![c.check(
        "global_avg_pool.x",
        |t| project(&global_avg_pool(t).expect("shape fixed"), &r),
        &x,
        gx,
    )?])
}

fn dense(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let n = c.rng.random_range(1..=3usize);
    let fi = c.rng.random_range(1..=6usize);
    let fo = c.rng.random_range(1..=6usize);
    let x = uniform(&mut c.rng, &[n, fi], -1.0, 1.0);
    let w = uniform(&mut c.rng, &[fi, fo], -1.0, 1.0);
    let b = uniform(&mut c.rng, &[fo], -1.0, 1.0);
    let r = uniform(&mut c.rng, &[n, fo], -1.0, 1.0);
    let g = dense_backward(&x, &w, &b, &r)?;
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        project(&dense_forward(x, w, b).expect("shapes fixed"), &r)
    };
    Ok(vec![
        c.check("dense.x", |t| f(t, &w, &b), &x, g.x)?,
        c.check("dense.weights", |t| f(&x, t, &b), &w, g.weights)?,
        c.check("dense.bias", |t| f(&x, &w, t), &b, g.bias)?,
    ])
}

fn elementwise_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..5).map(|_| rng.random_range(1..=3usize)).collect()
}

/// Magnitudes in `[lo, hi)` with random signs.
fn signed_uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
    .expect("non-empty shape")
}

fn relu_check(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let shape = elementwise_shape(&mut c.rng);
    // keep clear of the kink
    let x = signed_uniform(&mut c.rng, &shape, 0.01, 1.0);
    let r = signed_uniform(&mut c.rng, &shape, 0.5, 1.0);
    let gx = relu_backward(&x, &r)?;
    Ok(vec![c.check("relu.x", |t| project(&relu(t), &r), &x, gx)?])
}

fn sigmoid_check(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let shape = elementwise_shape(&mut c.rng);
    let x = uniform(&mut c.rng, &shape, -4.0, 4.0);
    // projection weights bounded away from zero keep every partial well above
    // the rounding noise of the summed objective
    let r = signed_uniform(&mut c.rng, &shape, 0.5, 1.0);
    let gx = sigmoid_backward(&sigmoid(&x), &r)?;
    Ok(vec![c.check("sigmoid.x", |t| project(&sigmoid(t), &r), &x, gx)?])
}

fn dropout_check(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let shape = elementwise_shape(&mut c.rng);
    let x = uniform(&mut c.rng, &shape, -1.0, 1.0);
    let r = signed_uniform(&mut c.rng, &shape, 0.5, 1.0);
    let seed = c.rng.random::<u64>();
    // same seed on every evaluation => fixed mask
    let (_, mask) = dropout(&x, 0.3, Mode::Train, seed)?;
    let gx = dropout_backward(&mask, &r)?;
    Ok(vec![c.check(
        "dropout.x",
        |t| project(&dropout(t, 0.3, Mode::Train, seed).expect("valid rate").0, &r),
        &x,
        gx,
    )?])
}

fn bce_check(c: &mut Ctx) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let n = c.rng.random_range(1..=8usize);
    let p = uniform(&mut c.rng, &[n, 1], 0.05, 0.95);
    let labels: Vec<u8> = (0..n).map(|_| c.rng.random_range(0..=1u8)).collect();
    let (_, gp) = bce_loss(&p, &labels)?;
    Ok(vec![c.check(
        "bce.p",
        |t| bce_loss(t, &labels).expect("labels valid").0,
        &p,
        gp,
    )?])
}

/// Checks one layer on a randomized case derived from `opts.seed`.
pub fn check_layer(layer: LayerKind, opts: &SuiteOptions) -> Result<LayerCheck, GradCheckError> {
    let threshold = layer.threshold();
    let mut ctx = Ctx {
        rng: rng::stream(opts.seed, &[layer as u64]),
        eps: opts.epsilon,
        fault: opts.fault == Some(layer),
        threshold,
    };
    let reports = match layer {
        LayerKind::Conv3d => conv3d(&mut ctx),
        LayerKind::MaxPool3d => maxpool3d(&mut ctx),
        LayerKind::BatchNorm => batchnorm(&mut ctx),
        LayerKind::GlobalAvgPool => gap(&mut ctx),
        LayerKind::Dense => dense(&mut ctx),
        LayerKind::Relu => relu_check(&mut ctx),
        LayerKind::Sigmoid => sigmoid_check(&mut ctx),
        LayerKind::Dropout => dropout_check(&mut ctx),
        LayerKind::Bce => bce_check(&mut ctx),
    }?;
    Ok(LayerCheck {
        layer,
        threshold,
        reports,
    })
}

/// Runs every layer once, in [`LayerKind::ALL`] order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<LayerCheck>, GradCheckError> {
    LayerKind::ALL.iter().map(|&k| check_layer(k, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_across_seeds() {
        for seed in 0..5 {
            let opts = SuiteOptions {
                seed,
                ..Default::default()
            };
            for check in run_suite(&opts).unwrap() {
                assert!(check.passed(), "seed {seed}: {}", check.summary());
            }
        }
    }

    #[test]
    fn fault_is_detected_only_where_injected() {
        let opts = SuiteOptions {
            fault: Some(LayerKind::Conv3d),
            ..Default::default()
        };
        let checks = run_suite(&opts).unwrap();
        assert_eq!(checks.len(), LayerKind::ALL.len());
        for c in &checks {
            assert_eq!(c.passed(), c.layer != LayerKind::Conv3d, "{}", c.summary());
        }
    }

    #[test]
    fn names_round_trip() {
        for k in LayerKind::ALL {
            assert_eq!(LayerKind::parse(k.name()), Some(k));
        }
    }
}
