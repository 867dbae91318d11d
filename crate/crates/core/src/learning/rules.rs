//! Local parameter updates. Every function returns the update direction
//! `Δ`; callers apply `P ← P + η Δ`.

use crate::error::{shape_err, Result};
use crate::tensor::{matmul, matmul_tn, outer_mean, row_sq_mean, Matrix};

/// COPI forward-weight update `mean[z xᵀ] − W diag(mean[x²])` with target
/// state `z = a + α δ`.
pub fn copi_forward_update(
    w: &Matrix,
    x: &Matrix,
    a: &Matrix,
    delta: &Matrix,
    alpha: f64,
) -> Result<Matrix> {
    let m = row_sq_mean(x)?;
    copi_forward_update_with(w, x, a, delta, alpha, &m)
}

pub(crate) fn copi_forward_update_with(
    w: &Matrix,
    x: &Matrix,
    a: &Matrix,
    delta: &Matrix,
    alpha: f64,
    x_sq_mean: &[f64],
) -> Result<Matrix> {
    if a.shape() != delta.shape() || a.cols() != x.cols() {
        return Err(shape_err(
            "copi_forward_update",
            format!(
                "a {:?}, delta {:?}, x {:?}",
                a.shape(),
                delta.shape(),
                x.shape()
            ),
        ));
    }
    if w.shape() != (a.rows(), x.rows()) {
        return Err(shape_err(
            "copi_forward_update",
            format!(
                "W {:?} does not map x {:?} to a {:?}",
                w.shape(),
                x.shape(),
                a.shape()
            ),
        ));
    }
    let z = a.zip_map(delta, |a, d| a + alpha * d)?;
    let hebb = outer_mean(&z, x)?;
    let decay = w.scale_columns(x_sq_mean)?;
    hebb.sub(&decay)
}

fn check_lateral(op: &'static str, r: &Matrix, x: &Matrix) -> Result<()> {
    if r.rows() != r.cols() || r.cols() != x.rows() {
        return Err(shape_err(
            op,
            format!("R {:?} with x {:?}", r.shape(), x.shape()),
        ));
    }
    Ok(())
}

/// COPI decorrelation update `−(mean[x xᵀ] − diag(mean[x²])) R`, where `x`
/// is the decorrelated activity `R y` of the current batch.
pub fn copi_decorr_update(r: &Matrix, x: &Matrix) -> Result<Matrix> {
    let m = row_sq_mean(x)?;
    copi_decorr_update_with(r, x, &m)
}

pub(crate) fn copi_decorr_update_with(r: &Matrix, x: &Matrix, x_sq_mean: &[f64]) -> Result<Matrix> {
    check_lateral("copi_decorr_update", r, x)?;
    // mean[x xᵀ] R evaluated as x (xᵀ R) / N: 2NK² instead of K³ + NK².
    let n = x.cols() as f64;
    let xt_r = matmul_tn(x, r)?;
    let corr_r = matmul(x, &xt_r)?;
    let diag_r = r.scale_rows(x_sq_mean)?;
    corr_r.zip_map(&diag_r, |c, d| d - c / n)
}

/// BIO-COPI decorrelation update `−(mean[q xᵀ] − R diag(mean[x²]))` with
/// `q = R x`. The decay term scales columns (presynaptic activity).
pub fn bio_copi_decorr_update(r: &Matrix, x: &Matrix) -> Result<Matrix> {
    let m = row_sq_mean(x)?;
    bio_copi_decorr_update_with(r, x, &m)
}

pub(crate) fn bio_copi_decorr_update_with(
    r: &Matrix,
    x: &Matrix,
    x_sq_mean: &[f64],
) -> Result<Matrix> {
    check_lateral("bio_copi_decorr_update", r, x)?;
    let q = matmul(r, x)?;
    let hebb = outer_mean(&q, x)?;
    let decay = r.scale_columns(x_sq_mean)?;
    decay.sub(&hebb)
}

/// Backprop weight update `mean[δ xᵀ]` (the negative gradient when `δ` is
/// the backpropagated error).
pub fn bp_update(w: &Matrix, x: &Matrix, delta: &Matrix) -> Result<Matrix> {
    if w.shape() != (delta.rows(), x.rows()) || delta.cols() != x.cols() {
        return Err(shape_err(
            "bp_update",
            format!(
                "W {:?}, x {:?}, delta {:?}",
                w.shape(),
                x.shape(),
                delta.shape()
            ),
        ));
    }
    outer_mean(delta, x)
}
