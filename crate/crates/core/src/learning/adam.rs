use crate::error::{shape_err, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step on `param` descending `grad`.
pub fn adam_step(
    param: &Matrix,
    grad: &Matrix,
    state: AdamState,
    eta: f64,
    params: AdamParams,
) -> Result<(Matrix, AdamState)> {
    if param.shape() != grad.shape()
        || state.m.shape() != param.shape()
        || state.v.shape() != param.shape()
    {
        return Err(shape_err(
            "adam_step",
            format!(
                "param {:?}, grad {:?}, moments {:?}",
                param.shape(),
                grad.shape(),
                state.m.shape()
            ),
        ));
    }
    let AdamParams { beta1, beta2, eps } = params;
    let t = state.t + 1;
    let m = state
        .m
        .zip_map(grad, |m, g| beta1 * m + (1.0 - beta1) * g)?;
    let v = state
        .v
        .zip_map(grad, |v, g| beta2 * v + (1.0 - beta2) * g * g)?;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    let mut out = param.clone();
    for ((p, &mi), &vi) in out.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        *p -= eta * m_hat / (v_hat.sqrt() + eps);
    }
    Ok((out, AdamState { m, v, t }))
}
