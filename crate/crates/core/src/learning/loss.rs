use crate::data::is_one_hot;
use crate::error::{shape_err, CopiError, Result};
use crate::network::Activation;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `ℓ = (1/N) Σₙ ||y − y*||²`
    Quadratic,
    /// Softmax over the network output, mean negative log-likelihood.
    CrossEntropy,
}

/// Column-wise softmax.
pub fn softmax_columns(y: &Matrix) -> Matrix {
    let mut out = y.clone();
    for j in 0..y.cols() {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..y.rows() {
            mx = mx.max(y.get(i, j));
        }
        let mut z = 0.0;
        for i in 0..y.rows() {
            z += (y.get(i, j) - mx).exp();
        }
        for i in 0..y.rows() {
            out.set(i, j, (y.get(i, j) - mx).exp() / z);
        }
    }
    out
}

/// Mean batch loss and the per-sample output error `δ_L = −∂ℓₙ/∂a_L`.
///
/// Each column of `δ_L` is the negative gradient of that sample's own loss,
/// so it carries no `1/N`; the update rules average over the batch.
/// Quadratic: `δ_L = −f'(a_L) ⊙ 2(y − y*)`. Cross-entropy: the gradient
/// `g = ∂ℓₙ/∂y` is recast as a target `t = y − g` and `δ_L = −f'(a_L) ⊙ (y − t)`,
/// so both losses drive the same target-state machinery.
pub fn loss_and_output_delta(
    y: &Matrix,
    a: &Matrix,
    target: &Matrix,
    kind: LossKind,
    output_activation: Activation,
) -> Result<(f64, Matrix)> {
    if y.shape() != target.shape() || y.shape() != a.shape() {
        return Err(shape_err(
            "loss_and_output_delta",
            format!(
                "y {:?}, a {:?}, target {:?}",
                y.shape(),
                a.shape(),
                target.shape()
            ),
        ));
    }
    let n = y.cols() as f64;
    if y.cols() == 0 {
        return Err(CopiError::InvalidArgument(
            "loss over an empty batch".into(),
        ));
    }
    let fprime = output_activation.derivative(a);
    match kind {
        LossKind::Quadratic => {
            let resid = y.sub(target)?;
            let loss = resid.frobenius_sq() / n;
            let delta = fprime.zip_map(&resid, |f, r| -f * 2.0 * r)?;
            Ok((loss, delta))
        }
        LossKind::CrossEntropy => {
            if !is_one_hot(target) {
                return Err(CopiError::Config(
                    "cross-entropy loss requires one-hot targets".into(),
                ));
            }
            let p = softmax_columns(y);
            let mut nll = 0.0;
            for j in 0..y.cols() {
                for i in 0..y.rows() {
                    if target.get(i, j) == 1.0 {
                        nll -= p.get(i, j).max(f64::MIN_POSITIVE).ln();
                    }
                }
            }
            let grad = p.sub(target)?;
            let t_star = y.sub(&grad)?;
            let delta = fprime.hadamard(&y.sub(&t_star)?)?.scale(-1.0);
            Ok((nll / n, delta))
        }
    }
}
