use crate::tensor::{Scalar, Tensor};

use super::{shape_err, LayerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// No padding, stride 1: each extent shrinks by `k - 1`.
    #[default]
    Valid,
}

/// Weights are laid out `(k, k, k, C_in, C_out)` so the output-channel loop
/// is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub kernel: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dGrads<T> {
    pub x: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3dParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, LayerError> {
        let kernel = check_params(&weights, &bias)?.0;
        Ok(Self {
            weights,
            bias,
            kernel,
            padding: Padding::Valid,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[4]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        conv3d_forward(x, &self.weights, &self.bias)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Conv3dGrads<T>, LayerError> {
        conv3d_backward(x, &self.weights, &self.bias, grad_out)
    }
}

/// Returns `(k, C_in, C_out)`.
fn check_params<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize), LayerError> {
    match *w.shape() {
        [k, k1, k2, ci, co] if k == k1 && k == k2 && k >= 1 => {
            if b.shape() != [co] {
                return Err(shape_err(&format!("bias must be ({co})"), b.shape()));
            }
            Ok((k, ci, co))
        }
        _ => Err(shape_err("conv weights must be (k, k, k, C_in, C_out)", w.shape())),
    }
}

/// Output shape of a valid, stride-1 convolution.
pub fn conv_output_shape(input: &[usize], kernel: usize, out_channels: usize) -> Result<Vec<usize>, LayerError> {
    let [n, x, y, z, _] = *input else {
        return Err(shape_err("conv input must be (N, X, Y, Z, C)", input));
    };
    for (axis, &e) in [x, y, z].iter().enumerate() {
        if e < kernel {
            return Err(LayerError::SpatialTooSmall {
                axis,
                extent: e,
                needed: kernel,
            });
        }
    }
    Ok(vec![n, x - kernel + 1, y - kernel + 1, z - kernel + 1, out_channels])
}

struct Geometry {
    n: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    k: usize,
    ci: usize,
    co: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Self, LayerError> {
        let (k, ci, co) = check_params(w, b)?;
        let out = conv_output_shape(x.shape(), k, co)?;
        let xs = x.shape();
        if xs[4] != ci {
            return Err(shape_err(&format!("conv input must have {ci} channels"), xs));
        }
        Ok(Self {
            n: xs[0],
            in_dims: [xs[1], xs[2], xs[3]],
            out_dims: [out[1], out[2], out[3]],
            k,
            ci,
            co,
        })
    }

    fn out_shape(&self) -> [usize; 5] {
        let [a, b, c] = self.out_dims;
        [self.n, a, b, c, self.co]
    }

    #[inline]
    fn x_offset(&self, n: usize, a: usize, b: usize, c: usize) -> usize {
        let [_, y, z] = self.in_dims;
        (((n * self.in_dims[0] + a) * y + b) * z + c) * self.ci
    }

    /// Calls `f(out_offset, x_offset, w_offset)` for every output position and
    /// kernel tap, in a fixed order.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [ox, oy, oz] = self.out_dims;
        let k = self.k;
        let mut o_off = 0;
        for n in 0..self.n {
            for a in 0..ox {
                for b in 0..oy {
                    for c in 0..oz {
                        for i in 0..k {
                            for j in 0..k {
                                for l in 0..k {
                                    let x_off = self.x_offset(n, a + i, b + j, c + l);
                                    let w_off = ((i * k + j) * k + l) * self.ci * self.co;
                                    f(o_off, x_off, w_off);
                                }
                            }
                        }
                        o_off += self.co;
                    }
                }
            }
        }
    }
}

/// Valid, stride-1 3D convolution:
/// `out[n,a,b,c,o] = bias[o] + sum_{i,j,l,m} x[n,a+i,b+j,c+l,m] * w[i,j,l,m,o]`.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, LayerError> {
    let g = Geometry::new(x, weights, bias)?;
    let (ci, co) = (g.ci, g.co);
    let mut out = Tensor::zeros(&g.out_shape())?;
    let (xd, wd, bd) = (x.data(), weights.data(), bias.data());
    let od = out.data_mut();
    for chunk in od.chunks_exact_mut(co) {
        chunk.copy_from_slice(bd);
    }
    g.for_each_tap(|o_off, x_off, w_off| {
        let acc = &mut od[o_off..o_off + co];
        for m in 0..ci {
            let xv = xd[x_off + m];
            let row = &wd[w_off + m * co..w_off + (m + 1) * co];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += xv * w;
            }
        }
    });
    Ok(out)
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv3dGrads<T>, LayerError> {
    let g = Geometry::new(x, weights, bias)?;
    if grad_out.shape() != g.out_shape() {
        return Err(shape_err(
            &format!("conv grad_out must be {:?}", g.out_shape()),
            grad_out.shape(),
        ));
    }
    let (ci, co) = (g.ci, g.co);
    let mut gx = x.zeros_like();
    let mut gw = weights.zeros_like();
    let mut gb = bias.zeros_like();
    let (xd, wd, god) = (x.data(), weights.data(), grad_out.data());
    for chunk in god.chunks_exact(co) {
        for (b, &v) in gb.data_mut().iter_mut().zip(chunk) {
            *b += v;
        }
    }
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    g.for_each_tap(|o_off, x_off, w_off| {
        let go = &god[o_off..o_off + co];
        for m in 0..ci {
            let xv = xd[x_off + m];
            let base = w_off + m * co;
            let row = &wd[base..base + co];
            let grow = &mut gwd[base..base + co];
            let mut sx = T::zero();
            for o in 0..co {
                grow[o] += xv * go[o];
                sx += row[o] * go[o];
            }
            gxd[x_off + m] += sx;
        }
    });
    Ok(Conv3dGrads {
        x: gx,
        weights: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Six nested loops straight from the definition.
    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, sx, sy, sz, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
        let (k, co) = (w.shape()[0], w.shape()[4]);
        let (ox, oy, oz) = (sx - k + 1, sy - k + 1, sz - k + 1);
        let mut out = Tensor::zeros(&[n, ox, oy, oz, co]).unwrap();
        for bn in 0..n {
            for a in 0..ox {
                for bb in 0..oy {
                    for c in 0..oz {
                        for o in 0..co {
                            let mut s = b.get(&[o]);
                            for i in 0..k {
                                for j in 0..k {
                                    for l in 0..k {
                                        for m in 0..ci {
                                            s += x.get(&[bn, a + i, bb + j, c + l, m]) * w.get(&[i, j, l, m, o]);
                                        }
                                    }
                                }
                            }
                            out.set(&[bn, a, bb, c, o], s);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 4, 5, 1], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1, 1], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv3d_forward(&x, &w, &b).unwrap();
        assert_eq!(y, x);
        let g = random(&[2, 3, 4, 5, 1], &mut rng);
        let grads = conv3d_backward(&x, &w, &b, &g).unwrap();
        assert_eq!(grads.x, g);
    }

    #[test]
    fn output_shape_follows_valid_rule() {
        assert_eq!(
            conv_output_shape(&[1, 128, 128, 64, 1], 3, 64).unwrap(),
            vec![1, 126, 126, 62, 64]
        );
        assert!(matches!(
            conv_output_shape(&[1, 5, 2, 5, 1], 3, 4),
            Err(LayerError::SpatialTooSmall { axis: 1, .. })
        ));
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[1, 4, 4, 4, 2], &mut rng);
        let w = random(&[3, 3, 3, 2, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let fast = conv3d_forward(&x, &w, &b).unwrap();
        let slow = direct_conv(&x, &w, &b);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 4, 3, 5, 2], &mut rng);
        let w = random(&[2, 2, 2, 2, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let y = conv3d_forward(&x, &w, &b).unwrap();
        let g = conv3d_backward(&x, &w, &b, &y.zeros_like()).unwrap();
        assert!(g.x.data().iter().chain(g.weights.data()).chain(g.bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 4, 2]).unwrap();
        let w = Tensor::zeros(&[3, 3, 3, 1, 2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(conv3d_forward(&x, &w, &b), Err(LayerError::ShapeMismatch(_))));
        let w = Tensor::zeros(&[3, 3, 3, 2, 2]).unwrap();
        let bad_b = Tensor::zeros(&[3]).unwrap();
        assert!(Conv3dParams::new(w.clone(), bad_b).is_err());
        let g = Tensor::zeros(&[1, 1, 1, 1, 2]).unwrap();
        assert!(conv3d_backward(&x, &w, &b, &g).is_err());
    }
}
