//! Inverse-free linear readouts on decorrelated activity, feature maps, and
//! one-shot compression of trailing layers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{batches, BatchPlan, Dataset};
use crate::error::{shape_err, CopiError, Result};
use crate::network::{forward, Activation, Layer, Network};
use crate::tensor::{matmul, matmul_nt, outer_mean, row_sq_mean, Matrix};

/// Mean-square activity below which an input row counts as dead.
pub const EPS_ACT: f64 = 1e-12;

/// Off-diagonal to diagonal correlation ratio above which a fit is flagged.
pub const DECORR_WARN_RATIO: f64 = 0.1;

/// Samples per streamed chunk when walking a dataset.
const CHUNK: usize = 1000;

/// Samples used for the decorrelation-quality check of a fit.
const WARN_PROBE: usize = 2000;

/// `||C − diag(C)||_F²` of the sample correlation `C = mean[x xᵀ]`.
pub fn offdiag_norm(x: &Matrix) -> Result<f64> {
    let c = outer_mean(x, x)?;
    let mut s = 0.0;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if i != j {
                s += c.get(i, j) * c.get(i, j);
            }
        }
    }
    Ok(s)
}

/// `offdiag_norm(x) / ||diag(C)||²`; 0 for an all-zero batch.
pub fn decorrelation_ratio(x: &Matrix) -> Result<f64> {
    let off = offdiag_norm(x)?;
    let diag: f64 = row_sq_mean(x)?.iter().map(|m| m * m).sum();
    Ok(if diag > 0.0 { off / diag } else { 0.0 })
}

/// `y ≈ B x` fitted on decorrelated `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    pub b: Matrix,
    /// Layer (1-based) whose decorrelated input `x` is read.
    pub source_layer: usize,
    /// Layer (1-based) whose pre-activation is approximated.
    pub target_layer: usize,
    /// Mean-square activity of each input row over the fitting data.
    pub fit_diag: Vec<f64>,
}

impl LinearReadout {
    pub fn in_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        matmul(&self.b, x)
    }

    /// Input rows that were inactive during fitting and got zero columns.
    pub fn dead_inputs(&self) -> Vec<usize> {
        self.fit_diag
            .iter()
            .enumerate()
            .filter(|(_, &m)| m < EPS_ACT)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Streaming sums `Σ y xᵀ` and `Σ x²` for a readout fit.
#[derive(Debug, Clone)]
pub struct ReadoutAccumulator {
    yx: Matrix,
    x_sq: Vec<f64>,
    n: usize,
    probe: Vec<Matrix>,
    probe_len: usize,
}

impl ReadoutAccumulator {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        Self {
            yx: Matrix::zeros(out_dim, in_dim),
            x_sq: vec![0.0; in_dim],
            n: 0,
            probe: Vec::new(),
            probe_len: 0,
        }
    }

    pub fn add(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        if x.cols() != y.cols() || x.rows() != self.x_sq.len() || y.rows() != self.yx.rows() {
            return Err(shape_err(
                "ReadoutAccumulator::add",
                format!(
                    "x {:?}, y {:?} into a {:?} readout",
                    x.shape(),
                    y.shape(),
                    self.yx.shape()
                ),
            ));
        }
        self.yx = self.yx.add(&matmul_nt(y, x)?)?;
        for (i, s) in self.x_sq.iter_mut().enumerate() {
            for &v in x.row(i) {
                *s += v * v;
            }
        }
        self.n += x.cols();
        if self.probe_len < WARN_PROBE {
            let take = (WARN_PROBE - self.probe_len).min(x.cols());
            self.probe.push(x.column_range(0, take));
            self.probe_len += take;
        }
        Ok(())
    }

    pub fn finish(self, source_layer: usize, target_layer: usize) -> Result<LinearReadout> {
        if self.n == 0 {
            return Err(CopiError::InvalidArgument(
                "readout fitted on zero samples".into(),
            ));
        }
        let probe = Matrix::hcat(&self.probe)?;
        let ratio = decorrelation_ratio(&probe)?;
        if ratio > DECORR_WARN_RATIO {
            log::warn!(
                "readout input from layer {source_layer} is poorly decorrelated (off-diagonal ratio {ratio:.3})"
            );
        }
        let n = self.n as f64;
        let fit_diag: Vec<f64> = self.x_sq.iter().map(|s| s / n).collect();
        let inv: Vec<f64> = self
            .x_sq
            .iter()
            .zip(&fit_diag)
            .map(|(s, m)| if *m < EPS_ACT { 0.0 } else { 1.0 / s })
            .collect();
        let dead = inv.iter().filter(|v| **v == 0.0).count();
        if dead > 0 {
            log::warn!("{dead} inactive input rows get zero readout columns");
        }
        Ok(LinearReadout {
            b: self.yx.scale_columns(&inv)?,
            source_layer,
            target_layer,
            fit_diag,
        })
    }
}

/// `B = (Y Xᵀ) diag(1 / Σₙ x_m²)`, the least-squares map when the rows of
/// `x` are mutually orthogonal.
pub fn fit_readout(x: &Matrix, y: &Matrix) -> Result<LinearReadout> {
    let mut acc = ReadoutAccumulator::new(y.rows(), x.rows());
    acc.add(x, y)?;
    acc.finish(0, 0)
}

fn chunks(dataset: &Dataset) -> Result<BatchPlan> {
    if dataset.is_empty() {
        return Err(CopiError::InvalidArgument("empty dataset".into()));
    }
    BatchPlan::sequential(dataset.len(), CHUNK.min(dataset.len()))
}

/// Linear features of the requested layers (1-based) over the first layer's
/// decorrelated input: `A_l ≈ B_l X_1`. Row `i` of `B_l` is unit `i`'s
/// preferred input pattern.
pub fn feature_maps(
    network: &Network,
    dataset: &Dataset,
    layers: &[usize],
) -> Result<Vec<LinearReadout>> {
    let n_layers = network.num_layers();
    if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > n_layers) {
        return Err(CopiError::InvalidArgument(format!(
            "layer {bad} out of range 1..={n_layers}"
        )));
    }
    let mut accs: Vec<ReadoutAccumulator> = layers
        .iter()
        .map(|&l| ReadoutAccumulator::new(network.layers[l - 1].output_dim(), network.input_dim()))
        .collect();
    for (y0, _) in batches(dataset, &chunks(dataset)?) {
        let states = forward(network, &y0)?;
        for (acc, &l) in accs.iter_mut().zip(layers) {
            acc.add(&states[0].x, &states[l - 1].a)?;
        }
    }
    accs.into_iter()
        .zip(layers)
        .map(|(acc, &l)| acc.finish(1, l))
        .collect()
}

/// A network whose trailing layers are replaced by one linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedNetwork {
    /// Untouched leading layers.
    pub prefix: Vec<Layer>,
    /// Decorrelating matrix of the first removed layer.
    pub lateral: Option<Matrix>,
    /// Maps the first removed layer's decorrelated input to `a_L`.
    pub readout: Option<LinearReadout>,
    pub output_activation: Activation,
}

impl CompressedNetwork {
    pub fn keep_layers(&self) -> usize {
        self.prefix.len()
    }

    pub fn input_dim(&self) -> usize {
        match (&self.prefix.first(), &self.lateral) {
            (Some(l), _) => l.input_dim(),
            (None, Some(r)) => r.cols(),
            (None, None) => 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.readout {
            Some(r) => r.out_dim(),
            None => self.prefix.last().map_or(0, |l| l.output_dim()),
        }
    }

    /// Output `y_L` for a batch of inputs.
    pub fn predict(&self, y0: &Matrix) -> Result<Matrix> {
        let mut y = y0.clone();
        if !self.prefix.is_empty() {
            let net = Network::new(self.prefix.clone(), None)?;
            y = net.predict(&y)?;
        }
        match (&self.lateral, &self.readout) {
            (Some(r), Some(b)) => Ok(self.output_activation.apply(&b.apply(&matmul(r, &y)?)?)),
            _ => Ok(y),
        }
    }

    /// Fraction of samples whose output argmax matches the label argmax.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for (y0, labels) in batches(dataset, &chunks(dataset)?) {
            let out = self.predict(&y0)?;
            correct += out
                .argmax_columns()
                .iter()
                .zip(labels.argmax_columns())
                .filter(|(p, t)| **p == *t)
                .count();
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

/// Keeps the first `keep_layers` layers and replaces the rest with a readout
/// fitted on `dataset`. `keep_layers == L` returns the network unchanged;
/// `keep_layers == 0` reads out directly from the first decorrelated input.
pub fn compress(
    network: &Network,
    dataset: &Dataset,
    keep_layers: usize,
) -> Result<CompressedNetwork> {
    Ok(compress_many(network, dataset, &[keep_layers])?.remove(0))
}

/// [`compress`] for several depths, sharing one pass over `dataset`.
pub fn compress_many(
    network: &Network,
    dataset: &Dataset,
    keeps: &[usize],
) -> Result<Vec<CompressedNetwork>> {
    let n_layers = network.num_layers();
    if let Some(&bad) = keeps.iter().find(|&&k| k > n_layers) {
        return Err(CopiError::InvalidArgument(format!(
            "keep_layers {bad} out of range 0..={n_layers}"
        )));
    }
    let mut accs: Vec<Option<ReadoutAccumulator>> = keeps
        .iter()
        .map(|&k| {
            (k < n_layers).then(|| {
                ReadoutAccumulator::new(network.output_dim(), network.layers[k].input_dim())
            })
        })
        .collect();
    if accs.iter().any(Option::is_some) {
        for (y0, _) in batches(dataset, &chunks(dataset)?) {
            let states = forward(network, &y0)?;
            let a_out = &states[n_layers - 1].a;
            for (acc, &k) in accs.iter_mut().zip(keeps) {
                if let Some(acc) = acc {
                    acc.add(&states[k].x, a_out)?;
                }
            }
        }
    }
    accs.into_iter()
        .zip(keeps)
        .map(|(acc, &k)| {
            let readout = acc.map(|a| a.finish(k + 1, n_layers)).transpose()?;
            Ok(CompressedNetwork {
                prefix: network.layers[..k].to_vec(),
                lateral: (k < n_layers).then(|| network.layers[k].r.clone()),
                readout,
                output_activation: network.output_activation(),
            })
        })
        .collect()
}

/// Pixel layout of one rendered tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
    /// Channel planes, stored one after another and drawn side by side.
    pub channels: usize,
}

impl ImageShape {
    pub fn mnist() -> Self {
        Self {
            width: 28,
            height: 28,
            channels: 1,
        }
    }

    pub fn cifar10() -> Self {
        Self {
            width: 32,
            height: 32,
            channels: 3,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Renders each row of `items` as a tile in a grid of `grid_cols` columns,
/// as 8-bit grey levels. Each tile is scaled symmetrically so 0 maps to 128
/// and its largest magnitude to 1 or 255. Tiles are separated by 1-pixel
/// white lines. Returns `(width, height, pixels)`.
pub fn render_grid(
    items: &Matrix,
    shape: ImageShape,
    grid_cols: usize,
) -> Result<(usize, usize, Vec<u8>)> {
    if items.cols() != shape.len() || shape.is_empty() {
        return Err(shape_err(
            "render_grid",
            format!(
                "items have {} values, tile needs {}",
                items.cols(),
                shape.len()
            ),
        ));
    }
    if grid_cols == 0 || items.rows() == 0 {
        return Err(CopiError::InvalidArgument("empty grid".into()));
    }
    let cols = grid_cols.min(items.rows());
    let rows = items.rows().div_ceil(cols);
    let tile_w = shape.width * shape.channels;
    let width = cols * tile_w + cols + 1;
    let height = rows * shape.height + rows + 1;
    let mut pix = vec![255u8; width * height];
    for item in 0..items.rows() {
        let values = items.row(item);
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ox = 1 + (item % cols) * (tile_w + 1);
        let oy = 1 + (item / cols) * (shape.height + 1);
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let v = values[c * shape.width * shape.height + y * shape.width + x];
                    let g = if peak > 0.0 {
                        128.0 + 127.0 * v / peak
                    } else {
                        128.0
                    };
                    pix[(oy + y) * width + ox + c * shape.width + x] =
                        g.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok((width, height, pix))
}

/// Writes a grid from [`render_grid`] as a binary PGM (P5) file.
pub fn write_pgm_grid(
    path: impl AsRef<Path>,
    items: &Matrix,
    shape: ImageShape,
    grid_cols: usize,
) -> Result<()> {
    let (w, h, pix) = render_grid(items, shape, grid_cols)?;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.write_all(&pix)?;
    out.flush()?;
    Ok(())
}
