//! The volumetric classifier: a stack of conv blocks, global average
//! pooling, a ReLU dense layer, dropout and a sigmoid head.

mod checkpoint;
mod gradcheck;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::layers::{
    self, batchnorm_backward, batchnorm_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    maxpool3d_backward, maxpool3d_forward, relu, relu_backward, sigmoid, sigmoid_backward,
    BatchNormState, DropoutMask, LayerError, Mode, PoolRecord,
};
use crate::rng;
use crate::tensor::{Scalar, Tensor, TensorError};

pub use gradcheck::{check_model_gradients, gradcheck_spec, DEFAULT_MODEL_EPSILON, MODEL_GRADCHECK_THRESHOLD};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const KERNEL: usize = 3;

/// Named tensors in a fixed, deterministic order.
pub type ParamMap<T> = IndexMap<String, Tensor<T>>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("infeasible architecture: {0}")]
    InfeasibleSpec(String),
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training-mode forward needs a batch of at least 2, got {0}")]
    DegenerateBatch(usize),
    #[error("tape does not belong to this model or was recorded in inference mode")]
    StaleTape,
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptRecord(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockOrder {
    /// Conv -> ReLU -> MaxPool -> BatchNorm.
    #[default]
    ConvReluPoolBn,
    /// Conv -> BatchNorm -> ReLU -> MaxPool.
    ConvBnReluPool,
}

impl fmt::Display for BlockOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockOrder::ConvReluPoolBn => "conv_relu_pool_bn",
            BlockOrder::ConvBnReluPool => "conv_bn_relu_pool",
        })
    }
}

impl FromStr for BlockOrder {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv_relu_pool_bn" => Ok(BlockOrder::ConvReluPoolBn),
            "conv_bn_relu_pool" => Ok(BlockOrder::ConvBnReluPool),
            other => Err(ModelError::InvalidSpec(format!("unknown block order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    /// `(X, Y, Z, C)`.
    pub input_shape: [usize; 4],
    pub block_filters: Vec<usize>,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub block_order: BlockOrder,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            input_shape: [128, 128, 64, 1],
            block_filters: vec![64, 64, 128, 256],
            dense_units: 512,
            dropout_rate: 0.3,
            block_order: BlockOrder::ConvReluPoolBn,
        }
    }
}

/// One entry of [`ArchitectureSpec::shape_trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub layer: String,
    pub shape: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn spatial(&self) -> [usize; 3] {
        [self.input_shape[0], self.input_shape[1], self.input_shape[2]]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_shape.contains(&0) {
            return Err(ModelError::InvalidSpec(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        if self.block_filters.contains(&0) || self.dense_units == 0 {
            return Err(ModelError::InvalidSpec("filter and unit counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.shape_trace(1).map(|_| ())
    }

    /// Output shape of every layer for a batch of `n`, failing when a valid
    /// conv or a pool would run out of voxels.
    pub fn shape_trace(&self, n: usize) -> Result<Vec<TraceEntry>, ModelError> {
        let mut trace = Vec::new();
        let mut dims = self.spatial();
        let mut channels = self.input_shape[3];
        let push = |trace: &mut Vec<TraceEntry>, layer: String, dims: [usize; 3], c: usize| {
            trace.push(TraceEntry {
                layer,
                shape: vec![n, dims[0], dims[1], dims[2], c],
            })
        };
        for (b, &filters) in self.block_filters.iter().enumerate() {
            if let Some(axis) = dims.iter().position(|&e| e < KERNEL) {
                return Err(ModelError::InfeasibleSpec(format!(
                    "block {b}: extent {} on axis {axis} is below the kernel size {KERNEL} (extents {dims:?})",
                    dims[axis]
                )));
            }
            dims = dims.map(|e| e - KERNEL + 1);
            channels = filters;
            if let Some(axis) = dims.iter().position(|&e| e < layers::POOL_WINDOW) {
                return Err(ModelError::InfeasibleSpec(format!(
                    "block {b}: extent {} on axis {axis} cannot be pooled (extents {dims:?})",
                    dims[axis]
                )));
            }
            let pooled = dims.map(layers::pool_output_extent);
            let steps: [(&str, [usize; 3]); 4] = match self.block_order {
                BlockOrder::ConvReluPoolBn => [("conv", dims), ("relu", dims), ("pool", pooled), ("bn", pooled)],
                BlockOrder::ConvBnReluPool => [("conv", dims), ("bn", dims), ("relu", dims), ("pool", pooled)],
            };
            for (name, d) in steps {
                push(&mut trace, format!("block{b}.{name}"), d, channels);
            }
            dims = pooled;
        }
        trace.push(TraceEntry {
            layer: "gap".into(),
            shape: vec![n, channels],
        });
        trace.push(TraceEntry {
            layer: "dense".into(),
            shape: vec![n, self.dense_units],
        });
        trace.push(TraceEntry {
            layer: "dropout".into(),
            shape: vec![n, self.dense_units],
        });
        trace.push(TraceEntry {
            layer: "head".into(),
            shape: vec![n, 1],
        });
        Ok(trace)
    }

    /// Line-oriented `key=value` record stored in checkpoints.
    pub fn to_canonical_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "input_shape={}\nblock_filters={}\ndense_units={}\ndropout_rate={}\nblock_order={}\n",
            join(&self.input_shape),
            join(&self.block_filters),
            self.dense_units,
            self.dropout_rate,
            self.block_order
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::InvalidSpec(m);
        let list = |v: &str| -> Result<Vec<usize>, ModelError> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|d| d.trim().parse().map_err(|_| bad(format!("bad integer {d:?}"))))
                .collect()
        };
        let mut spec = ArchitectureSpec::default();
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            match k {
                "input_shape" => {
                    let d = list(v)?;
                    spec.input_shape = d
                        .try_into()
                        .map_err(|_| bad(format!("input_shape needs 4 extents, got {v:?}")))?;
                }
                "block_filters" => spec.block_filters = list(v)?,
                "dense_units" => spec.dense_units = v.parse().map_err(|_| bad(format!("bad dense_units {v:?}")))?,
                "dropout_rate" => spec.dropout_rate = v.parse().map_err(|_| bad(format!("bad dropout_rate {v:?}")))?,
                "block_order" => spec.block_order = v.parse()?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err(bad(format!("expected 5 fields, found {seen}")));
        }
        Ok(spec)
    }
}

fn param_name(block: usize, part: &str) -> String {
    format!("block{block}.{part}")
}

/// Parameter and buffer layout implied by a spec, in storage order.
fn layout(spec: &ArchitectureSpec) -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    let mut c_in = spec.input_shape[3];
    for (b, &c_out) in spec.block_filters.iter().enumerate() {
        params.push((param_name(b, "conv.weight"), vec![KERNEL, KERNEL, KERNEL, c_in, c_out]));
        params.push((param_name(b, "conv.bias"), vec![c_out]));
        params.push((param_name(b, "bn.gamma"), vec![c_out]));
        params.push((param_name(b, "bn.beta"), vec![c_out]));
        buffers.push((param_name(b, "bn.running_mean"), vec![c_out]));
        buffers.push((param_name(b, "bn.running_var"), vec![c_out]));
        c_in = c_out;
    }
    params.push(("dense.weight".into(), vec![c_in, spec.dense_units]));
    params.push(("dense.bias".into(), vec![spec.dense_units]));
    params.push(("head.weight".into(), vec![spec.dense_units, 1]));
    params.push(("head.bias".into(), vec![1]));
    (params, buffers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub spec: ArchitectureSpec,
    /// Trainable parameters.
    pub params: ParamMap<T>,
    /// Batch-norm running statistics (never receive gradients).
    pub buffers: ParamMap<T>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

/// Builds a freshly initialized model. Conv and dense weights are drawn from
/// `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`; biases and `beta` are
/// zero, `gamma` one, running mean 0 and running variance 1.
pub fn build_model<T: Scalar>(spec: &ArchitectureSpec, seed: u64) -> Result<ModelState<T>, ModelError> {
    spec.validate()?;
    let (param_layout, buffer_layout) = layout(spec);
    let mut rng = rng::stream(seed, &[rng::tag::INIT]);
    let mut params = ParamMap::new();
    for (name, shape) in param_layout {
        let t = if name.ends_with(".weight") {
            let (fan_in, fan_out) = match shape.as_slice() {
                [k0, k1, k2, ci, co] => (k0 * k1 * k2 * ci, k0 * k1 * k2 * co),
                [fi, fo] => (*fi, *fo),
                _ => unreachable!("layout only emits rank-2 and rank-5 weights"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(&shape, |_| T::from_f64(rng.random_range(-limit..limit)))?
        } else if name.ends_with(".gamma") {
            Tensor::full(&shape, T::one())?
        } else {
            Tensor::zeros(&shape)?
        };
        params.insert(name, t);
    }
    let mut buffers = ParamMap::new();
    for (name, shape) in buffer_layout {
        let fill = if name.ends_with("running_var") { T::one() } else { T::zero() };
        buffers.insert(name, Tensor::full(&shape, fill)?);
    }
    Ok(ModelState {
        spec: spec.clone(),
        params,
        buffers,
        rng_seed: seed,
    })
}

/// Sums the stored tensor sizes.
pub fn count_parameters<T: Scalar>(m: &ModelState<T>) -> ParamCount {
    let trainable: usize = m.params.values().map(Tensor::len).sum();
    let buffers: usize = m.buffers.values().map(Tensor::len).sum();
    ParamCount {
        trainable,
        total: trainable + buffers,
    }
}

#[derive(Debug, Clone)]
enum Step<T> {
    Conv { block: usize, input: Tensor<T> },
    Relu { input: Tensor<T> },
    Pool { record: PoolRecord },
    Bn { block: usize, input: Tensor<T>, state: BatchNormState<T> },
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    spec: ArchitectureSpec,
    steps: Vec<Step<T>>,
    gap_input_shape: Vec<usize>,
    dense_input: Tensor<T>,
    dense_pre: Tensor<T>,
    mask: DropoutMask<T>,
    head_input: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// ReLU sign bits and pool winners of this pass. Two passes with equal
    /// patterns lie on the same smooth piece of the network. A ReLU feeding a
    /// pool only contributes the signs of the winning elements.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            match (step, self.steps.get(i + 1)) {
                (Step::Relu { input }, Some(Step::Pool { record })) => {
                    let d = input.data();
                    out.extend(record.argmax.iter().map(|&j| (d[j] > T::zero()) as usize));
                }
                (Step::Relu { input }, _) => out.extend(input.data().iter().map(|v| (*v > T::zero()) as usize)),
                (Step::Pool { record }, _) => out.extend_from_slice(&record.argmax),
                _ => {}
            }
        }
        out.extend(self.dense_pre.data().iter().map(|v| (*v > T::zero()) as usize));
        out
    }

    /// Running statistics after the batch-norm updates of this pass.
    pub fn running_stats(&self) -> impl Iterator<Item = (usize, &BatchNormState<T>)> {
        self.steps.iter().filter_map(|s| match s {
            Step::Bn { block, state, .. } => Some((*block, state)),
            _ => None,
        })
    }
}

impl<T: Scalar> ModelState<T> {
    fn param(&self, name: &str) -> &Tensor<T> {
        &self.params[name]
    }

    fn bn_state(&self, block: usize, mode: Mode) -> Result<BatchNormState<T>, ModelError> {
        let mut s = BatchNormState::new(self.spec.block_filters[block])?;
        s.gamma = self.param(&param_name(block, "bn.gamma")).clone();
        s.beta = self.param(&param_name(block, "bn.beta")).clone();
        s.running_mean = self.buffers[&param_name(block, "bn.running_mean")].clone();
        s.running_var = self.buffers[&param_name(block, "bn.running_var")].clone();
        s.mode = mode;
        Ok(s)
    }

    /// Copies the batch-norm running statistics recorded by a training-mode
    /// forward pass into the model.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        for (block, state) in tape.running_stats() {
            self.buffers[&param_name(block, "bn.running_mean")] = state.running_mean.clone();
            self.buffers[&param_name(block, "bn.running_var")] = state.running_var.clone();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let conv = |m: &ParamMap<T>| m.iter().map(|(k, v)| (k.clone(), v.cast::<U>())).collect();
        ModelState {
            spec: self.spec.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            rng_seed: self.rng_seed,
        }
    }
}

/// Runs the network on `x` of shape `(N, X, Y, Z, C)`, returning
/// probabilities `(N, 1)`. `seed` drives the dropout mask in train mode.
pub fn forward<T: Scalar>(
    m: &ModelState<T>,
    x: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, Tape<T>), ModelError> {
    let spec = &m.spec;
    let expect: Vec<usize> = std::iter::once(x.shape().first().copied().unwrap_or(0))
        .chain(spec.input_shape)
        .collect();
    if x.shape() != expect.as_slice() {
        return Err(ModelError::ShapeMismatch(format!(
            "input must be (N, {:?}), got {:?}",
            spec.input_shape,
            x.shape()
        )));
    }
    let n = x.shape()[0];
    if mode == Mode::Train && n < 2 {
        return Err(ModelError::DegenerateBatch(n));
    }
    let mut steps = Vec::with_capacity(spec.block_filters.len() * 4);
    let mut h = x.clone();
    for block in 0..spec.block_filters.len() {
        let conv = conv3d_forward(
            &h,
            m.param(&param_name(block, "conv.weight")),
            m.param(&param_name(block, "conv.bias")),
        )?;
        steps.push(Step::Conv { block, input: h });
        h = conv;
        let order: [u8; 3] = match spec.block_order {
            BlockOrder::ConvReluPoolBn => *b"rpb",
            BlockOrder::ConvBnReluPool => *b"brp",
        };
        for op in order {
            h = match op {
                b'r' => {
                    let y = relu(&h);
                    steps.push(Step::Relu { input: h });
                    y
                }
                b'p' => {
                    let (y, record) = maxpool3d_forward(&h)?;
                    steps.push(Step::Pool { record });
                    y
                }
                _ => {
                    let mut state = m.bn_state(block, mode)?;
                    let y = batchnorm_forward(&h, &mut state)?;
                    steps.push(Step::Bn { block, input: h, state });
                    y
                }
            };
        }
    }
    let gap_input_shape = h.shape().to_vec();
    let pooled = global_avg_pool(&h)?;
    let dense_pre = dense_forward(&pooled, m.param("dense.weight"), m.param("dense.bias"))?;
    let activated = relu(&dense_pre);
    let (dropped, mask) = dropout(&activated, spec.dropout_rate, mode, seed)?;
    let logits = dense_forward(&dropped, m.param("head.weight"), m.param("head.bias"))?;
    let output = sigmoid(&logits);
    let tape = Tape {
        mode,
        spec: spec.clone(),
        steps,
        gap_input_shape,
        dense_input: pooled,
        dense_pre,
        mask,
        head_input: dropped,
        output: output.clone(),
    };
    Ok((output, tape))
}

/// Gradients of the loss with respect to every trainable parameter, given
/// `grad_p = dL/dp` for the `(N, 1)` probabilities. Keys and order match
/// `m.params`.
pub fn backward<T: Scalar>(m: &ModelState<T>, tape: &Tape<T>, grad_p: &Tensor<T>) -> Result<ParamMap<T>, ModelError> {
    if tape.mode != Mode::Train || tape.spec != m.spec {
        return Err(ModelError::StaleTape);
    }
    if grad_p.shape() != tape.output.shape() {
        return Err(ModelError::ShapeMismatch(format!(
            "loss gradient must be {:?}, got {:?}",
            tape.output.shape(),
            grad_p.shape()
        )));
    }
    let mut grads: ParamMap<T> = m.params.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect();

    let g_logits = sigmoid_backward(&tape.output, grad_p)?;
    let head = dense_backward(&tape.head_input, m.param("head.weight"), m.param("head.bias"), &g_logits)?;
    grads["head.weight"] = head.weights;
    grads["head.bias"] = head.bias;
    let g = dropout_backward(&tape.mask, &head.x)?;
    let g = relu_backward(&tape.dense_pre, &g)?;
    let dense = dense_backward(&tape.dense_input, m.param("dense.weight"), m.param("dense.bias"), &g)?;
    grads["dense.weight"] = dense.weights;
    grads["dense.bias"] = dense.bias;
    let mut g = global_avg_pool_backward(&tape.gap_input_shape, &dense.x)?;

    for step in tape.steps.iter().rev() {
        g = match step {
            Step::Relu { input } => relu_backward(input, &g)?,
            Step::Pool { record } => maxpool3d_backward(record, &g)?,
            Step::Bn { block, input, state } => {
                let r = batchnorm_backward(input, state, &g)?;
                grads[&param_name(*block, "bn.gamma")] = r.gamma;
                grads[&param_name(*block, "bn.beta")] = r.beta;
                r.x
            }
            Step::Conv { block, input } => {
                let w = m.param(&param_name(*block, "conv.weight"));
                let b = m.param(&param_name(*block, "conv.bias"));
                let r = conv3d_backward(input, w, b, &g)?;
                grads[&param_name(*block, "conv.weight")] = r.weights;
                grads[&param_name(*block, "conv.bias")] = r.bias;
                r.x
            }
        };
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: [10, 10, 10, 1],
            block_filters: vec![2, 2],
            dense_units: 8,
            dropout_rate: 0.3,
            block_order: BlockOrder::ConvReluPoolBn,
        }
    }

    fn input(spec: &ArchitectureSpec, n: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[99]);
        let shape: Vec<usize> = std::iter::once(n).chain(spec.input_shape).collect();
        Tensor::from_fn(&shape, |_| r.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn default_trace() {
        let trace = ArchitectureSpec::default().shape_trace(1).unwrap();
        let conv_pool: Vec<Vec<usize>> = trace
            .iter()
            .filter(|e| e.layer.ends_with("conv") || e.layer.ends_with("pool") || !e.layer.starts_with("block"))
            .filter(|e| e.layer != "dropout")
            .map(|e| e.shape.clone())
            .collect();
        let expected: Vec<Vec<usize>> = vec![
            vec![1, 126, 126, 62, 64],
            vec![1, 63, 63, 31, 64],
            vec![1, 61, 61, 29, 64],
            vec![1, 30, 30, 14, 64],
            vec![1, 28, 28, 12, 128],
            vec![1, 14, 14, 6, 128],
            vec![1, 12, 12, 4, 256],
            vec![1, 6, 6, 2, 256],
            vec![1, 256],
            vec![1, 512],
            vec![1, 1],
        ];
        assert_eq!(conv_pool, expected);
    }

    #[test]
    fn infeasible_specs() {
        let spec = ArchitectureSpec {
            input_shape: [16, 16, 8, 1],
            ..Default::default()
        };
        assert!(matches!(build_model::<f32>(&spec, 0), Err(ModelError::InfeasibleSpec(_))));
        let bad = ArchitectureSpec {
            dropout_rate: 1.0,
            ..tiny()
        };
        assert!(matches!(bad.validate(), Err(ModelError::InvalidSpec(_))));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_model::<f32>(&tiny(), 5).unwrap();
        let b = build_model::<f32>(&tiny(), 5).unwrap();
        let c = build_model::<f32>(&tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a.params["block0.conv.bias"].data().iter().all(|&v| v == 0.0));
        assert!(a.params["block1.bn.gamma"].data().iter().all(|&v| v == 1.0));
        let limit = (6.0f32 / (27.0 + 54.0)).sqrt();
        assert!(a.params["block0.conv.weight"].data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn zero_block_model() {
        let spec = ArchitectureSpec {
            input_shape: [4, 4, 2, 1],
            block_filters: vec![],
            ..Default::default()
        };
        let m = build_model::<f64>(&spec, 1).unwrap();
        assert_eq!(m.params["dense.weight"].shape(), &[1, 512]);
        let count = count_parameters(&m);
        assert_eq!(count.trainable, 512 + 512 + 512 + 1);
        assert_eq!(count.total, count.trainable);
        let x = input(&spec, 2, 1);
        let (p, _) = forward(&m, &x, Mode::Train, 0).unwrap();
        assert_eq!(p.shape(), &[2, 1]);
    }

    #[test]
    fn outputs_are_probabilities_and_inference_is_pure() {
        let spec = tiny();
        let m = build_model::<f64>(&spec, 3).unwrap();
        let x = input(&spec, 3, 2).scale(50.0);
        let (p1, _) = forward(&m, &x, Mode::Infer, 1).unwrap();
        let (p2, _) = forward(&m, &x, Mode::Infer, 2).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_input_gives_half() {
        let spec = tiny();
        let m = build_model::<f32>(&spec, 3).unwrap();
        let x = Tensor::zeros(&[2, 10, 10, 10, 1]).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let (p, _) = forward(&m, &x, mode, 0).unwrap();
            assert!(p.data().iter().all(|&v| v == 0.5), "{:?}", p.data());
        }
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let spec = tiny();
        let m = build_model::<f64>(&spec, 3).unwrap();
        let x = input(&spec, 1, 2);
        assert!(matches!(forward(&m, &x, Mode::Train, 0), Err(ModelError::DegenerateBatch(1))));
        assert!(forward(&m, &x, Mode::Infer, 0).is_ok());
        let wrong = Tensor::<f64>::zeros(&[2, 9, 10, 10, 1]).unwrap();
        assert!(matches!(forward(&m, &wrong, Mode::Infer, 0), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn gradient_keys_and_zero_upstream() {
        let spec = tiny();
        let m = build_model::<f64>(&spec, 3).unwrap();
        let x = input(&spec, 2, 2);
        let (p, tape) = forward(&m, &x, Mode::Train, 7).unwrap();
        let grads = backward(&m, &tape, &p.zeros_like()).unwrap();
        assert!(grads.keys().eq(m.params.keys()));
        for (k, g) in &grads {
            assert_eq!(g.shape(), m.params[k].shape());
            assert!(g.data().iter().all(|&v| v == 0.0), "{k}");
        }
        let (_, infer_tape) = forward(&m, &x, Mode::Infer, 7).unwrap();
        assert!(matches!(backward(&m, &infer_tape, &p), Err(ModelError::StaleTape)));
        let other = build_model::<f64>(&ArchitectureSpec { dense_units: 4, ..spec }, 3).unwrap();
        assert!(matches!(backward(&other, &tape, &p), Err(ModelError::StaleTape)));
    }

    #[test]
    fn running_stats_commit() {
        let spec = tiny();
        let mut m = build_model::<f64>(&spec, 3).unwrap();
        let x = input(&spec, 2, 4);
        let before = m.buffers.clone();
        let (_, tape) = forward(&m, &x, Mode::Train, 0).unwrap();
        assert_eq!(m.buffers, before);
        m.commit_running_stats(&tape);
        assert_ne!(m.buffers, before);
    }

    #[test]
    fn canonical_text_round_trip() {
        for spec in [ArchitectureSpec::default(), ArchitectureSpec { block_order: BlockOrder::ConvBnReluPool, dropout_rate: 0.125, ..tiny() }] {
            let text = spec.to_canonical_text();
            assert_eq!(ArchitectureSpec::from_canonical_text(&text).unwrap(), spec);
        }
        assert!(ArchitectureSpec::from_canonical_text("dense_units=3").is_err());
    }

    #[test]
    fn alternate_block_order_runs() {
        let spec = ArchitectureSpec {
            block_order: BlockOrder::ConvBnReluPool,
            ..tiny()
        };
        let m = build_model::<f64>(&spec, 1).unwrap();
        let x = input(&spec, 2, 3);
        let (p, tape) = forward(&m, &x, Mode::Train, 0).unwrap();
        let g = backward(&m, &tape, &p).unwrap();
        assert_eq!(g.len(), m.params.len());
    }
}
