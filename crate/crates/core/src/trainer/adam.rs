use crate::model::ParamMap;
use crate::tensor::{Scalar, Tensor};

use super::TrainError;

pub const ADAM_LR: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: ParamMap<T>,
    pub v: ParamMap<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamMap<T>, lr: f64) -> Self {
        let zeros: ParamMap<T> = params.iter().map(|(k, t)| (k.clone(), t.zeros_like())).collect();
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

fn same_keys<T>(a: &ParamMap<T>, b: &ParamMap<T>) -> bool {
    a.len() == b.len() && a.keys().all(|k| b.contains_key(k))
}

/// One bias-corrected Adam update, evaluated in f64 per element.
pub fn adam_step<T: Scalar>(params: &mut ParamMap<T>, grads: &ParamMap<T>, state: &mut AdamState<T>) -> Result<(), TrainError> {
    if !same_keys(params, grads) || !same_keys(params, &state.m) {
        let missing: Vec<&String> = params.keys().filter(|k| !grads.contains_key(*k)).collect();
        return Err(TrainError::KeyMismatch(format!("parameters without gradients: {missing:?}")));
    }
    for (name, p) in params.iter() {
        let g: &Tensor<T> = &grads[name];
        if g.shape() != p.shape() || state.m[name].shape() != p.shape() {
            return Err(TrainError::KeyMismatch(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let t = state.step + 1;
    let c1 = 1.0 - state.beta1.powi(t as i32);
    let c2 = 1.0 - state.beta2.powi(t as i32);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.epsilon);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m[name].data_mut();
        let v = state.v[name].data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *w = T::from_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    state.step = t;
    Ok(())
}
