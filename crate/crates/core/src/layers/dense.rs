use crate::tensor::{Scalar, Tensor};

use super::{shape_err, LayerError};

/// Fully connected layer: weights `(F_in, F_out)`, bias `(F_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub x: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, LayerError> {
        dims(&weights, &bias)?;
        Ok(Self { weights, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        dense_forward(x, &self.weights, &self.bias)
    }
}

fn dims<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize), LayerError> {
    let [fi, fo] = *w.shape() else {
        return Err(shape_err("dense weights must be (F_in, F_out)", w.shape()));
    };
    if b.shape() != [fo] {
        return Err(shape_err(&format!("dense bias must be ({fo})"), b.shape()));
    }
    Ok((fi, fo))
}

fn check_input<T: Scalar>(x: &Tensor<T>, fi: usize) -> Result<usize, LayerError> {
    match *x.shape() {
        [n, f] if f == fi => Ok(n),
        _ => Err(shape_err(&format!("dense input must be (N, {fi})"), x.shape())),
    }
}

/// `out = x W + b`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
    let (fi, fo) = dims(weights, bias)?;
    let n = check_input(x, fi)?;
    let wd = weights.data();
    let mut out = Vec::with_capacity(n * fo);
    for row in x.data().chunks_exact(fi) {
        let mut acc = bias.data().to_vec();
        for (i, &xv) in row.iter().enumerate() {
            for (a, &w) in acc.iter_mut().zip(&wd[i * fo..(i + 1) * fo]) {
                *a += xv * w;
            }
        }
        out.extend(acc);
    }
    Ok(Tensor::new(&[n, fo], out)?)
}

/// `grad_x = g W^T`, `grad_W = x^T g`, `grad_b` = column sums of `g`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>, LayerError> {
    let (fi, fo) = dims(weights, bias)?;
    let n = check_input(x, fi)?;
    if grad_out.shape() != [n, fo] {
        return Err(shape_err(&format!("dense grad_out must be ({n}, {fo})"), grad_out.shape()));
    }
    let wd = weights.data();
    let mut gx = x.zeros_like();
    let mut gw = weights.zeros_like();
    let mut gb = bias.zeros_like();
    for ((xr, gr), gxr) in x
        .data()
        .chunks_exact(fi)
        .zip(grad_out.data().chunks_exact(fo))
        .zip(gx.data_mut().chunks_exact_mut(fi))
    {
        for (b, &g) in gb.data_mut().iter_mut().zip(gr) {
            *b += g;
        }
        for i in 0..fi {
            let wrow = &wd[i * fo..(i + 1) * fo];
            let mut s = T::zero();
            for (w, &g) in wrow.iter().zip(gr) {
                s += *w * g;
            }
            gxr[i] = s;
            let xv = xr[i];
            for (gw, &g) in gw.data_mut()[i * fo..(i + 1) * fo].iter_mut().zip(gr) {
                *gw += xv * g;
            }
        }
    }
    Ok(DenseGrads {
        x: gx,
        weights: gw,
        bias: gb,
    })
}
