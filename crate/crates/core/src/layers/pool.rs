use crate::tensor::{Scalar, Tensor};

use super::{shape_err, LayerError};

pub const POOL_WINDOW: usize = 2;

/// Floor-mode output extent of the non-overlapping 2x2x2 pool.
pub fn pool_output_extent(extent: usize) -> usize {
    extent / POOL_WINDOW
}

/// Winning input offset for every pooled output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// 2x2x2 max pooling, stride 2. Trailing odd slices are dropped and ties go
/// to the first element in row-major window order.
pub fn maxpool3d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolRecord), LayerError> {
    let [n, sx, sy, sz, c] = *x.shape() else {
        return Err(shape_err("pool input must be (N, X, Y, Z, C)", x.shape()));
    };
    for (axis, &e) in [sx, sy, sz].iter().enumerate() {
        if e < POOL_WINDOW {
            return Err(LayerError::SpatialTooSmall {
                axis,
                extent: e,
                needed: POOL_WINDOW,
            });
        }
    }
    let (ox, oy, oz) = (pool_output_extent(sx), pool_output_extent(sy), pool_output_extent(sz));
    let out_shape = [n, ox, oy, oz, c];
    let mut out = Vec::with_capacity(out_shape.iter().product());
    let mut argmax = Vec::with_capacity(out.capacity());
    let xd = x.data();
    let off = |b: usize, i: usize, j: usize, l: usize| (((b * sx + i) * sy + j) * sz + l) * c;
    for b in 0..n {
        for a in 0..ox {
            for bb in 0..oy {
                for cc in 0..oz {
                    for ch in 0..c {
                        let mut best = off(b, 2 * a, 2 * bb, 2 * cc) + ch;
                        let mut best_v = xd[best];
                        for i in 0..POOL_WINDOW {
                            for j in 0..POOL_WINDOW {
                                for l in 0..POOL_WINDOW {
                                    let o = off(b, 2 * a + i, 2 * bb + j, 2 * cc + l) + ch;
                                    if xd[o] > best_v {
                                        best_v = xd[o];
                                        best = o;
                                    }
                                }
                            }
                        }
                        out.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
    }
    let record = PoolRecord {
        input_shape: x.shape().to_vec(),
        output_shape: out_shape.to_vec(),
        argmax,
    };
    Ok((Tensor::new(&out_shape, out)?, record))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool3d_backward<T: Scalar>(record: &PoolRecord, grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if grad_out.shape() != record.output_shape.as_slice() {
        return Err(LayerError::StaleRecord(grad_out.shape().to_vec()));
    }
    let mut gx = Tensor::zeros(&record.input_shape)?;
    let gd = gx.data_mut();
    for (&idx, &g) in record.argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gx)
}

/// Mean over every axis between the batch and channel axes.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(shape_err("global pooling input must be (N, ..., C)", s));
    }
    let (n, c) = (s[0], s[s.len() - 1]);
    let spatial: usize = s[1..s.len() - 1].iter().product();
    let inv = T::one() / T::from_usize(spatial);
    let mut out = vec![T::zero(); n * c];
    for (b, sample) in x.data().chunks_exact(spatial * c).enumerate() {
        let acc = &mut out[b * c..(b + 1) * c];
        for pos in sample.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(pos) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    Ok(Tensor::new(&[n, c], out)?)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    if input_shape.len() < 3 {
        return Err(shape_err("global pooling input must be (N, ..., C)", input_shape));
    }
    let (n, c) = (input_shape[0], input_shape[input_shape.len() - 1]);
    if grad_out.shape() != [n, c] {
        return Err(shape_err(&format!("gap grad_out must be ({n}, {c})"), grad_out.shape()));
    }
    let spatial: usize = input_shape[1..input_shape.len() - 1].iter().product();
    let inv = T::one() / T::from_usize(spatial);
    let mut gx = Tensor::zeros(input_shape)?;
    for (b, sample) in gx.data_mut().chunks_exact_mut(spatial * c).enumerate() {
        let g = &grad_out.data()[b * c..(b + 1) * c];
        for pos in sample.chunks_exact_mut(c) {
            for (d, &v) in pos.iter_mut().zip(g) {
                *d = v * inv;
            }
        }
    }
    Ok(gx)
}
