//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for one parameter tensor.
/// `t` counts completed steps; moments stay shaped like the parameter,
/// and every entry of `v` is non-negative.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Tensor2D,
    pub v: Tensor2D,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState { m: Tensor2D::zeros(rows, cols), v: Tensor2D::zeros(rows, cols), t: 0 }
    }
}

/// One Adam update in place:
/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(
    param: &mut Tensor2D,
    grad: &Tensor2D,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    let (r, c) = (param.rows(), param.cols());
    if grad.rows() != r || grad.cols() != c || state.m.rows() != r || state.m.cols() != c {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!(
                "param {r}x{c}, grad {}x{}, moments {}x{}",
                grad.rows(),
                grad.cols(),
                state.m.rows(),
                state.m.cols()
            ),
        });
    }
    state.t += 1;
    let b1 = hyper.beta1 as f64;
    let b2 = hyper.beta2 as f64;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let lr = hyper.lr as f64;
    let eps = hyper.eps as f64;
    let pv = param.values_mut();
    let gv = grad.values();
    let mv = state.m.values_mut();
    let vv = state.v.values_mut();
    for i in 0..pv.len() {
        let g = gv[i] as f64;
        let m = b1 * mv[i] as f64 + (1.0 - b1) * g;
        let v = b2 * vv[i] as f64 + (1.0 - b2) * g * g;
        mv[i] = m as f32;
        vv[i] = v as f32;
        let mhat = m / bc1;
        let vhat = v / bc2;
        pv[i] = (pv[i] as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
    }
    Ok(())
}
