use crate::error::{shape_err, CopiError, Result};
use crate::network::{LayerState, Network};
use crate::tensor::{matmul, matmul_tn, Matrix};

/// How the output error is carried to hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorSignalMode {
    /// `δ_l = f'(a_l) ⊙ R_{l+1}ᵀ W_{l+1}ᵀ δ_{l+1}`
    Backprop,
    /// `δ_l = f'(a_l) ⊙ B_{l+1} δ_{l+1}` with fixed random `B`.
    FeedbackAlignment,
}

/// Per-layer error signals, output layer last. `delta_out` is the output
/// error `δ_L = −∂ℓ/∂a_L`.
pub fn error_signals(
    network: &Network,
    states: &[LayerState],
    delta_out: &Matrix,
    mode: ErrorSignalMode,
) -> Result<Vec<Matrix>> {
    let n_layers = network.num_layers();
    if states.len() != n_layers {
        return Err(shape_err(
            "error_signals",
            format!("{} states for {n_layers} layers", states.len()),
        ));
    }
    if delta_out.shape() != states[n_layers - 1].a.shape() {
        return Err(shape_err(
            "error_signals",
            format!(
                "output delta {:?} vs activation {:?}",
                delta_out.shape(),
                states[n_layers - 1].a.shape()
            ),
        ));
    }
    let feedback = match mode {
        ErrorSignalMode::FeedbackAlignment => Some(network.feedback.as_ref().ok_or_else(|| {
            CopiError::Config("feedback alignment requires feedback weights in the network".into())
        })?),
        ErrorSignalMode::Backprop => None,
    };

    let mut deltas = vec![Matrix::zeros(0, 0); n_layers];
    deltas[n_layers - 1] = delta_out.clone();
    for l in (0..n_layers - 1).rev() {
        let upstream = &deltas[l + 1];
        let carried = match feedback {
            Some(fb) => matmul(&fb[l], upstream)?,
            None => {
                let next = &network.layers[l + 1];
                let through_w = matmul_tn(&next.w, upstream)?;
                matmul_tn(&next.r, &through_w)?
            }
        };
        let fprime = network.layers[l].activation.derivative(&states[l].a);
        deltas[l] = fprime.hadamard(&carried)?;
    }
    Ok(deltas)
}
