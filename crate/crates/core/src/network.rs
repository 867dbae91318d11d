//! Layered model with decorrelating lateral weights.
//!
//! Layer `l` maps the previous output `y_{l-1}` through
//! `x_l = R_l y_{l-1}`, `a_l = W_l x_l`, `y_l = f(a_l)`.

use crate::error::{shape_err, CopiError, Result};
use crate::rng::Rng;
use crate::tensor::{matmul, rand_matrix, Init, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope <= 1.0) {
            return Err(CopiError::InvalidArgument(format!(
                "leaky-relu slope must lie in (0, 1], got {slope}"
            )));
        }
        Ok(Activation::LeakyRelu { slope })
    }

    pub fn apply(&self, a: &Matrix) -> Matrix {
        match *self {
            Activation::LeakyRelu { slope } => leaky_relu(a, slope),
            Activation::Identity => a.clone(),
        }
    }

    pub fn derivative(&self, a: &Matrix) -> Matrix {
        match *self {
            Activation::LeakyRelu { slope } => leaky_relu_deriv(a, slope),
            Activation::Identity => a.map(|_| 1.0),
        }
    }
}

/// `f(a) = a` for `a > 0`, `slope * a` otherwise.
pub fn leaky_relu(a: &Matrix, slope: f64) -> Matrix {
    a.map(|v| if v > 0.0 { v } else { slope * v })
}

/// `f'(a) = 1` for `a > 0`, `slope` otherwise (including `a == 0`).
pub fn leaky_relu_deriv(a: &Matrix, slope: f64) -> Matrix {
    a.map(|v| if v > 0.0 { 1.0 } else { slope })
}

/// One layer: forward weights `w` (`out x in`), lateral weights `r` (`in x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub r: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn new(w: Matrix, r: Matrix, activation: Activation) -> Result<Self> {
        if r.rows() != r.cols() || w.cols() != r.rows() {
            return Err(shape_err(
                "Layer::new",
                format!(
                    "W is {}x{}, R is {}x{}",
                    w.rows(),
                    w.cols(),
                    r.rows(),
                    r.cols()
                ),
            ));
        }
        if let Activation::LeakyRelu { slope } = activation {
            Activation::leaky_relu(slope)?;
        }
        Ok(Self { w, r, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Fixed random feedback matrices for feedback alignment. Entry `l`
    /// carries the error of layer `l + 1` back to layer `l` and has shape
    /// `K_l x K_{l+1}`.
    pub feedback: Option<Vec<Matrix>>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, feedback: Option<Vec<Matrix>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CopiError::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(shape_err(
                    "Network::new",
                    format!(
                        "layer {} outputs {} but layer {} expects {}",
                        l,
                        pair[0].output_dim(),
                        l + 1,
                        pair[1].input_dim()
                    ),
                ));
            }
        }
        if let Some(fb) = &feedback {
            if fb.len() != layers.len() - 1 {
                return Err(shape_err(
                    "Network::new",
                    format!("{} feedback matrices for {} layers", fb.len(), layers.len()),
                ));
            }
            for (l, b) in fb.iter().enumerate() {
                let expect = (layers[l].output_dim(), layers[l + 1].output_dim());
                if b.shape() != expect {
                    return Err(shape_err(
                        "Network::new",
                        format!(
                            "feedback {l} is {}x{}, expected {}x{}",
                            b.rows(),
                            b.cols(),
                            expect.0,
                            expect.1
                        ),
                    ));
                }
            }
        }
        Ok(Self { layers, feedback })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// `[K_0, K_1, ..., K_L]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    /// Network output `y_L` without keeping intermediate states.
    pub fn predict(&self, y0: &Matrix) -> Result<Matrix> {
        let mut y = y0.clone();
        for layer in &self.layers {
            let (_, a) = layer_pre(layer, &y)?;
            y = layer.activation.apply(&a);
        }
        Ok(y)
    }
}

/// How forward weights are drawn at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Uniform on `±sqrt(1/fan_in)`.
    ScaledUniform,
    Uniform {
        lo: f64,
        hi: f64,
    },
}

/// Architecture description for [`build_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `[K_0, K_1, ..., K_L]`, input dimension first.
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub init: WeightInit,
    pub feedback: bool,
}

impl NetworkSpec {
    /// Leaky-ReLU(0.1) hidden layers, identity output, scaled-uniform weights.
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            hidden: Activation::LeakyRelu { slope: 0.1 },
            output: Activation::Identity,
            init: WeightInit::ScaledUniform,
            feedback: false,
        }
    }

    pub fn with_feedback(mut self, feedback: bool) -> Self {
        self.feedback = feedback;
        self
    }
}

/// Random forward weights, identity lateral weights, and (optionally)
/// scaled-uniform feedback matrices.
pub fn build_network(rng: &mut Rng, spec: &NetworkSpec) -> Result<Network> {
    if spec.dims.len() < 2 {
        return Err(CopiError::InvalidArgument(
            "dims must list at least an input and an output size".into(),
        ));
    }
    if let Some(pos) = spec.dims.iter().position(|&d| d == 0) {
        return Err(CopiError::InvalidArgument(format!(
            "dimension {pos} of {:?} is zero",
            spec.dims
        )));
    }
    let mut init_rng = rng.split(0);
    let mut fb_rng = rng.split(1);
    let n_layers = spec.dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (spec.dims[l], spec.dims[l + 1]);
        let dist = match spec.init {
            WeightInit::ScaledUniform => Init::ScaledUniform { fan_in },
            WeightInit::Uniform { lo, hi } => Init::Uniform { lo, hi },
        };
        let w = rand_matrix(&mut init_rng, fan_out, fan_in, dist)?;
        let activation = if l + 1 == n_layers {
            spec.output
        } else {
            spec.hidden
        };
        layers.push(Layer::new(w, Matrix::identity(fan_in), activation)?);
    }
    let feedback = if spec.feedback {
        let mut fb = Vec::with_capacity(n_layers - 1);
        for l in 0..n_layers - 1 {
            let (rows, cols) = (spec.dims[l + 1], spec.dims[l + 2]);
            fb.push(rand_matrix(
                &mut fb_rng,
                rows,
                cols,
                Init::ScaledUniform { fan_in: cols },
            )?);
        }
        Some(fb)
    } else {
        None
    };
    Network::new(layers, feedback)
}

/// Everything one layer computed for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Decorrelated input `R y_{l-1}`.
    pub x: Matrix,
    /// Pre-activation `W x`.
    pub a: Matrix,
    /// Output `f(a)`.
    pub y: Matrix,
}

fn layer_pre(layer: &Layer, y_prev: &Matrix) -> Result<(Matrix, Matrix)> {
    if y_prev.rows() != layer.input_dim() {
        return Err(shape_err(
            "forward",
            format!(
                "input has {} rows, layer expects {}",
                y_prev.rows(),
                layer.input_dim()
            ),
        ));
    }
    let x = matmul(&layer.r, y_prev)?;
    let a = matmul(&layer.w, &x)?;
    Ok((x, a))
}

/// Forward pass recording `x`, `a`, `y` for every layer.
pub fn forward(network: &Network, y0: &Matrix) -> Result<Vec<LayerState>> {
    let mut states: Vec<LayerState> = Vec::with_capacity(network.num_layers());
    for layer in &network.layers {
        let input = states.last().map_or(y0, |s| &s.y);
        let (x, a) = layer_pre(layer, input)?;
        let y = layer.activation.apply(&a);
        states.push(LayerState { x, a, y });
    }
    Ok(states)
}
