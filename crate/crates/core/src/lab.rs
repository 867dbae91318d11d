//! Single-step comparison of lateral-weight rules under the rescaling
//! `x = (cR)(y/c)`, which leaves the decorrelated output unchanged.

use std::io::Write;

use crate::data::{synth_gaussian, CovSpec};
use crate::error::{shape_err, CopiError, Result};
use crate::learning::copi_decorr_update;
use crate::rng::Rng;
use crate::tensor::{matmul, outer_mean, rand_matrix, Init, Matrix};

/// A loss increase beyond this factor marks a cell as divergent.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabRule {
    Copi,
    AntiHebbian,
    GradOnR,
}

impl LabRule {
    pub const ALL: [LabRule; 3] = [LabRule::Copi, LabRule::AntiHebbian, LabRule::GradOnR];

    pub fn name(&self) -> &'static str {
        match self {
            LabRule::Copi => "copi",
            LabRule::AntiHebbian => "anti-hebbian",
            LabRule::GradOnR => "grad-on-r",
        }
    }

    /// `ΔR` for decorrelating matrix `r`, input `y`, and output `x = r y`.
    pub fn update(&self, r: &Matrix, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        match self {
            LabRule::Copi => copi_decorr_update(r, x),
            LabRule::AntiHebbian => rule_anti_hebbian(r, x),
            LabRule::GradOnR => rule_grad_on_r(r, x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub dim: usize,
    pub n_samples: usize,
    /// Half-width of the uniform noise added to `R = I` at initialisation.
    pub r_init_noise: f64,
    pub scales: Vec<f64>,
    pub eta: f64,
    pub seed: u64,
    /// Ridge added to the random factor covariance `A Aᵀ`.
    pub ridge: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            n_samples: 1000,
            r_init_noise: 0.1,
            scales: vec![0.1, 1.0, 10.0],
            eta: 1e-3,
            seed: 0,
            ridge: 0.1,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_samples == 0 {
            return Err(CopiError::Config(
                "lab dim and n_samples must be positive".into(),
            ));
        }
        if self.scales.is_empty() || self.scales.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(CopiError::Config(format!(
                "scales must be non-empty and positive, got {:?}",
                self.scales
            )));
        }
        if !(self.eta >= 0.0) || !(self.r_init_noise >= 0.0) || !(self.ridge > 0.0) {
            return Err(CopiError::Config(
                "eta and r_init_noise must be >= 0 and ridge > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `ΔR = −(mean[x xᵀ] − diag(mean[x²]))`, independent of `R`.
pub fn rule_anti_hebbian(r: &Matrix, x: &Matrix) -> Result<Matrix> {
    if r.rows() != x.rows() {
        return Err(shape_err(
            "rule_anti_hebbian",
            format!("R {:?} with x {:?}", r.shape(), x.shape()),
        ));
    }
    let mut c = outer_mean(x, x)?;
    for i in 0..c.rows() {
        c.set(i, i, 0.0);
    }
    Ok(c.scale(-1.0))
}

/// Per-sample mean of `||x xᵀ − diag(x²)||_F² = (Σᵢ xᵢ²)² − Σᵢ xᵢ⁴`.
pub fn decorr_loss(x: &Matrix) -> Result<f64> {
    if x.cols() == 0 {
        return Err(CopiError::InvalidArgument(
            "loss over an empty batch".into(),
        ));
    }
    let mut total = 0.0;
    for j in 0..x.cols() {
        let (mut s, mut q) = (0.0, 0.0);
        for i in 0..x.rows() {
            let v2 = x.get(i, j) * x.get(i, j);
            s += v2;
            q += v2 * v2;
        }
        total += s * s - q;
    }
    Ok(total / x.cols() as f64)
}

/// Negative gradient of [`decorr_loss`] with respect to `R`, for `x = R y`:
/// `ΔR = −mean[g yᵀ]` with `gᵢ = 4 xᵢ (Σⱼ xⱼ² − xᵢ²)`.
pub fn rule_grad_on_r(r: &Matrix, x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if r.rows() != x.rows() || r.cols() != y.rows() || x.cols() != y.cols() {
        return Err(shape_err(
            "rule_grad_on_r",
            format!("R {:?}, x {:?}, y {:?}", r.shape(), x.shape(), y.shape()),
        ));
    }
    let mut g = x.clone();
    for j in 0..x.cols() {
        let s: f64 = (0..x.rows()).map(|i| x.get(i, j) * x.get(i, j)).sum();
        for i in 0..x.rows() {
            let v = x.get(i, j);
            g.set(i, j, 4.0 * v * (s - v * v));
        }
    }
    Ok(outer_mean(&g, y)?.scale(-1.0))
}

/// One (rule, scale) cell of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct LabCell {
    pub rule: LabRule,
    pub c: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub diverged: bool,
}

impl LabCell {
    pub fn reduction(&self) -> f64 {
        self.loss_before - self.loss_after
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabResult {
    pub cells: Vec<LabCell>,
}

impl LabResult {
    pub fn cells_for(&self, rule: LabRule) -> impl Iterator<Item = &LabCell> {
        self.cells.iter().filter(move |c| c.rule == rule)
    }

    /// `max/min` of a rule's reductions across scales. Infinite when the
    /// reductions change sign or one is zero while another is not.
    pub fn reduction_spread(&self, rule: LabRule) -> f64 {
        let r: Vec<f64> = self.cells_for(rule).map(LabCell::reduction).collect();
        let all_pos = r.iter().all(|v| *v > 0.0);
        let all_neg = r.iter().all(|v| *v < 0.0);
        if all_pos || all_neg {
            let mags = r.iter().map(|v| v.abs());
            let max = mags.clone().fold(f64::MIN, f64::max);
            let min = mags.fold(f64::MAX, f64::min);
            max / min
        } else if r.iter().all(|v| *v == 0.0) {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// Largest relative deviation of a rule's reductions from their mean.
    pub fn relative_deviation(&self, rule: LabRule) -> f64 {
        let r: Vec<f64> = self.cells_for(rule).map(LabCell::reduction).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let dev = r.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if mean == 0.0 {
            if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            dev / mean.abs()
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "rule,c,loss_before,loss_after,reduction")?;
        for cell in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{}",
                cell.rule.name(),
                cell.c,
                cell.loss_before,
                cell.loss_after,
                cell.reduction()
            )?;
        }
        Ok(())
    }
}

/// Samples `y` and `R = I + noise`, then for every rule and scale `c` applies
/// one update to `cR` driven by `y/c` and measures the loss change.
pub fn run_lab(config: &LabConfig) -> Result<LabResult> {
    config.validate()?;
    let rng = Rng::new(config.seed);
    let y = synth_gaussian(
        &mut rng.split(0),
        config.dim,
        config.n_samples,
        &CovSpec::RandomFactor {
            ridge: config.ridge,
        },
    )?
    .features;
    let noise = config.r_init_noise;
    let r = if noise > 0.0 {
        Matrix::identity(config.dim).add(&rand_matrix(
            &mut rng.split(1),
            config.dim,
            config.dim,
            Init::Uniform {
                lo: -noise,
                hi: noise,
            },
        )?)?
    } else {
        Matrix::identity(config.dim)
    };
    let mut cells = Vec::new();
    for rule in LabRule::ALL {
        for &c in &config.scales {
            // baseline from the rescaled product itself so that eta = 0
            // reproduces it exactly
            let loss_before = decorr_loss(&matmul(&r.scale(c), &y.scale(1.0 / c))?)?;
            let after = decorr_loss(&updated_output(rule, &r, &y, c, config.eta)?)?;
            let loss_after = if after.is_finite() {
                after
            } else {
                f64::INFINITY
            };
            let diverged = loss_after > DIVERGENCE_FACTOR * loss_before;
            if diverged {
                log::warn!(
                    "{} at c = {c} diverged ({loss_before} -> {loss_after})",
                    rule.name()
                );
            }
            cells.push(LabCell {
                rule,
                c,
                loss_before,
                loss_after,
                diverged,
            });
        }
    }
    Ok(LabResult { cells })
}

/// `(cR + ηΔ(cR)) (y/c)` for `rule`, the quantity whose invariance in `c`
/// distinguishes the COPI rule.
pub fn updated_output(rule: LabRule, r: &Matrix, y: &Matrix, c: f64, eta: f64) -> Result<Matrix> {
    let rc = r.scale(c);
    let yc = y.scale(1.0 / c);
    let xc = matmul(&rc, &yc)?;
    let mut updated = rc;
    updated.add_scaled_assign(eta, &rule.update(&updated, &xc, &yc)?)?;
    matmul(&updated, &yc)
}
