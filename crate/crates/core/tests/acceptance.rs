//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fail.
//!
//! `COPI_ACCEPTANCE_ONLY=1,4,8` restricts the run to the listed criteria.
//! `COPI_MNIST_DIR` and `COPI_CIFAR_DIR` override the default data locations
//! under `<workspace>/data`.

// the oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use copi_core::analysis::{compress_many, fit_readout};
use copi_core::data::{
    load_cifar10_dir, load_mnist_dir, synth_gaussian, BatchPlan, CovSpec, Dataset,
};
use copi_core::lab::{run_lab, updated_output, LabConfig, LabRule};
use copi_core::learning::{
    copi_forward_update, decorrelation_epoch, error_signals, loss_and_output_delta,
    train_with_observer, DecorrRule, ErrorSignalMode, LossKind, Rule, TrainConfig, TrainMetrics,
};
use copi_core::network::{build_network, forward, Activation, Layer, Network, NetworkSpec};
use copi_core::tensor::matmul;
use copi_core::{Matrix, Rng};

type Outcome = Result<(bool, String), String>;

const MNIST_DIMS: [usize; 8] = [784, 500, 500, 500, 500, 500, 500, 10];
const MNIST_EPOCHS: usize = 20;

fn workspace_data(env: &str, sub: &str) -> PathBuf {
    std::env::var_os(env).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .join(sub)
    })
}

// ---------------------------------------------------------------------------
// Independent oracles: plain loops over Vec<Vec<f64>>, no library kernels.

type Dense = Vec<Vec<f64>>;

fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn dense_mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Summed quadratic loss of the network from layer `l` onward, given that
/// layer's pre-activation.
fn oracle_tail_loss(
    net: &[(Dense, Dense, Option<f64>)],
    l: usize,
    a_l: &Dense,
    target: &Dense,
) -> f64 {
    let act = |a: &Dense, slope: Option<f64>| -> Dense {
        a.iter()
            .map(|r| {
                r.iter()
                    .map(|&v| slope.map_or(v, |s| leaky(v, s)))
                    .collect()
            })
            .collect()
    };
    let mut y = act(a_l, net[l].2);
    for (w, r, slope) in &net[l + 1..] {
        y = act(&dense_mul(w, &dense_mul(r, &y)), *slope);
    }
    let mut s = 0.0;
    for (yr, tr) in y.iter().zip(target) {
        for (a, b) in yr.iter().zip(tr) {
            s += (a - b) * (a - b);
        }
    }
    s
}

fn criterion_1() -> Outcome {
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let layers = 1 + rng.below(3) as usize;
        let dims: Vec<usize> = (0..=layers).map(|_| 1 + rng.below(8) as usize).collect();
        let batch = 1 + rng.below(4) as usize;
        let mut net =
            build_network(&mut rng, &NetworkSpec::new(dims.clone())).map_err(|e| e.to_string())?;
        for layer in &mut net.layers {
            let k = layer.r.rows();
            layer.r = Matrix::from_fn(
                k,
                k,
                |i, j| if i == j { 1.0 } else { 0.0 } + rng.uniform(-0.3, 0.3),
            );
        }
        let y0 = Matrix::from_fn(dims[0], batch, |_, _| rng.uniform(-1.0, 1.0));
        let target = Matrix::from_fn(dims[layers], batch, |_, _| rng.uniform(0.0, 1.0));
        let states = forward(&net, &y0).map_err(|e| e.to_string())?;
        let last = states.last().unwrap();
        let (_, d_out) = loss_and_output_delta(
            &last.y,
            &last.a,
            &target,
            LossKind::Quadratic,
            net.output_activation(),
        )
        .map_err(|e| e.to_string())?;
        let deltas = error_signals(&net, &states, &d_out, ErrorSignalMode::Backprop)
            .map_err(|e| e.to_string())?;

        let oracle_net: Vec<(Dense, Dense, Option<f64>)> = net
            .layers
            .iter()
            .map(|l| {
                let slope = match l.activation {
                    Activation::LeakyRelu { slope } => Some(slope),
                    Activation::Identity => None,
                };
                (dense(&l.w), dense(&l.r), slope)
            })
            .collect();
        let t = dense(&target);
        let h = 1e-6;
        for l in 0..layers {
            let a = dense(&states[l].a);
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..a.len() {
                for j in 0..batch {
                    let mut ap = a.clone();
                    ap[i][j] += h;
                    let mut am = a.clone();
                    am[i][j] -= h;
                    let fd = -(oracle_tail_loss(&oracle_net, l, &ap, &t)
                        - oracle_tail_loss(&oracle_net, l, &am, &t))
                        / (2.0 * h);
                    num += (deltas[l].get(i, j) - fd).powi(2);
                    den += fd * fd;
                }
            }
            if den > 1e-20 {
                let rel = (num / den).sqrt();
                worst = worst.max(rel);
                if rel >= 1e-5 {
                    return Ok((
                        false,
                        format!("case {case} layer {} relative error {rel:.3e}", l + 1),
                    ));
                }
            }
        }
    }
    Ok((
        true,
        format!("20 networks, worst relative error {worst:.3e} (< 1e-5)"),
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = 1 + rng.below(6) as usize;
        let n = k + rng.below(6) as usize;
        let m = 1 + rng.below(5) as usize;
        // rows of x are orthonormal times sqrt(n), so mean[x xᵀ] = I
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < k {
            let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= dot * ri;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-3 {
                rows.push(v.iter().map(|a| a / norm).collect());
            }
        }
        let x = Matrix::from_fn(k, n, |i, j| rows[i][j] * (n as f64).sqrt());
        let w = Matrix::from_fn(m, k, |_, _| rng.uniform(-1.0, 1.0));
        let a = matmul(&w, &x).map_err(|e| e.to_string())?;
        let delta = Matrix::from_fn(m, n, |_, _| rng.uniform(-1.0, 1.0));
        let copi = copi_forward_update(&w, &x, &a, &delta, 1.0).map_err(|e| e.to_string())?;
        // vanilla form: mean[(a + δ) xᵀ] − W mean[x xᵀ], by plain loops
        let (xd, ad, dd, wd) = (dense(&x), dense(&a), dense(&delta), dense(&w));
        let mut xx = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                xx[i][j] = (0..n).map(|s| xd[i][s] * xd[j][s]).sum::<f64>() / n as f64;
            }
        }
        let wxx = dense_mul(&wd, &xx);
        let mut diff = 0.0;
        for i in 0..m {
            for j in 0..k {
                let zx = (0..n)
                    .map(|s| (ad[i][s] + dd[i][s]) * xd[j][s])
                    .sum::<f64>()
                    / n as f64;
                diff += (copi.get(i, j) - (zx - wxx[i][j])).powi(2);
            }
        }
        worst = worst.max(diff.sqrt());
    }
    Ok((
        worst < 1e-10,
        format!("20 whitened batches, worst Frobenius gap {worst:.3e} (< 1e-10)"),
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = Rng::new(303);
    let ds = synth_gaussian(&mut rng, 50, 10_000, &CovSpec::RandomFactor { ridge: 0.1 })
        .map_err(|e| e.to_string())?;
    let layer = Layer::new(
        Matrix::zeros(1, 50),
        Matrix::identity(50),
        Activation::Identity,
    )
    .map_err(|e| e.to_string())?;
    let mut net = Network::new(vec![layer], None).map_err(|e| e.to_string())?;
    let before = copi_core::analysis::offdiag_norm(&ds.features).map_err(|e| e.to_string())?;
    // 10 000 samples in batches of 50 gives exactly 200 updates
    let plan = BatchPlan::shuffled(ds.len(), 50, 7, 0).map_err(|e| e.to_string())?;
    let steps = decorrelation_epoch(&mut net, &ds, &plan, DecorrRule::Copi, 1e-3)
        .map_err(|e| e.to_string())?;
    let x = matmul(&net.layers[0].r, &ds.features).map_err(|e| e.to_string())?;
    let after = copi_core::analysis::offdiag_norm(&x).map_err(|e| e.to_string())?;
    let reduction = 1.0 - after / before;
    Ok((
        steps == 200 && reduction >= 0.9,
        format!("{steps} updates at eta_R=1e-3: offdiag {before:.4e} -> {after:.4e}, reduction {:.2}% (>= 90%)", 100.0 * reduction),
    ))
}

fn criterion_4() -> Outcome {
    let cfg = LabConfig::default();
    let res = run_lab(&cfg).map_err(|e| e.to_string())?;
    let copi_dev = res.relative_deviation(LabRule::Copi);
    let copi_positive = res.cells_for(LabRule::Copi).all(|c| c.reduction() > 0.0);
    let ah = res.reduction_spread(LabRule::AntiHebbian);
    let gr = res.reduction_spread(LabRule::GradOnR);

    // literal invariance of the updated product on the lab's own scale set
    let mut rng = Rng::new(cfg.seed);
    let y = synth_gaussian(
        &mut rng,
        20,
        200,
        &CovSpec::RandomFactor { ridge: cfg.ridge },
    )
    .map_err(|e| e.to_string())?
    .features;
    let r = Matrix::from_fn(
        20,
        20,
        |i, j| if i == j { 1.0 } else { 0.0 } + rng.uniform(-0.1, 0.1),
    );
    let base = updated_output(LabRule::Copi, &r, &y, 1.0, cfg.eta).map_err(|e| e.to_string())?;
    let mut literal: f64 = 0.0;
    for &c in &cfg.scales {
        let out = updated_output(LabRule::Copi, &r, &y, c, cfg.eta).map_err(|e| e.to_string())?;
        literal =
            literal.max(out.sub(&base).map_err(|e| e.to_string())?.max_abs() / base.max_abs());
    }
    let pass = copi_dev < 1e-6 && copi_positive && ah > 1.5 && gr > 1.5 && literal < 1e-12;
    let cells: Vec<String> = res
        .cells
        .iter()
        .map(|c| {
            format!(
                "{}@{}={:.4e}{}",
                c.rule.name(),
                c.c,
                c.reduction(),
                if c.diverged { "(diverged)" } else { "" }
            )
        })
        .collect();
    Ok((
        pass,
        format!(
            "copi relative deviation {copi_dev:.2e} (< 1e-6), updated-output gap {literal:.1e} (< 1e-12); \
             spread anti-hebbian {ah:.3e}, grad-on-R {gr:.3e} (> 1.5); cells [{}]",
            cells.join(", ")
        ),
    ))
}

/// Explicit-inverse least squares oracle via Gauss-Jordan elimination.
fn ols_oracle(x: &Dense, y: &Dense) -> Dense {
    let m = x.len();
    let n = x[0].len();
    let mut aug: Dense = (0..m)
        .map(|i| {
            let mut row: Vec<f64> = (0..m)
                .map(|j| (0..n).map(|s| x[i][s] * x[j][s]).sum())
                .collect();
            row.extend((0..m).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..m {
        let p = (c..m)
            .max_by(|&a, &b| aug[a][c].abs().total_cmp(&aug[b][c].abs()))
            .unwrap();
        aug.swap(c, p);
        let piv = aug[c][c];
        for v in aug[c].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != c {
                let f = aug[i][c];
                for j in 0..2 * m {
                    aug[i][j] -= f * aug[c][j];
                }
            }
        }
    }
    let inv: Dense = aug.iter().map(|r| r[m..].to_vec()).collect();
    let yxt: Dense = y
        .iter()
        .map(|yr| {
            (0..m)
                .map(|j| (0..n).map(|s| yr[s] * x[j][s]).sum())
                .collect()
        })
        .collect();
    dense_mul(&yxt, &inv)
}

fn criterion_8() -> Outcome {
    let mut rng = Rng::new(808);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = 1 + rng.below(32) as usize;
        let n = m + rng.below(33 - m as u64) as usize;
        let p = 1 + rng.below(32) as usize;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < m {
            let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                let rr: f64 = r.iter().map(|a| a * a).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= dot / rr * ri;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-3 {
                let len = rng.uniform(0.2, 5.0);
                rows.push(v.iter().map(|a| a / norm * len).collect());
            }
        }
        let x = Matrix::from_fn(m, n, |i, j| rows[i][j]);
        let y = Matrix::from_fn(p, n, |_, _| rng.uniform(-3.0, 3.0));
        let b = fit_readout(&x, &y).map_err(|e| e.to_string())?.b;
        let oracle = ols_oracle(&dense(&x), &dense(&y));
        let mut diff = 0.0;
        for i in 0..p {
            for j in 0..m {
                diff += (b.get(i, j) - oracle[i][j]).powi(2);
            }
        }
        worst = worst.max(diff.sqrt());
    }
    Ok((
        worst < 1e-8,
        format!("50 orthogonal-row systems, worst Frobenius gap {worst:.3e} (< 1e-8)"),
    ))
}

// ---------------------------------------------------------------------------
// MNIST / CIFAR training criteria

struct Mnist {
    train: Dataset,
    test: Dataset,
}

fn load_mnist() -> Result<Mnist, String> {
    let dir = workspace_data("COPI_MNIST_DIR", "mnist");
    let (train, test) = load_mnist_dir(&dir)
        .map_err(|e| format!("MNIST not available in {}: {e}", dir.display()))?;
    Ok(Mnist { train, test })
}

fn mnist_run(
    m: &Mnist,
    label: &str,
    mut cfg: TrainConfig,
    feedback: bool,
) -> Result<(Network, TrainMetrics), String> {
    cfg.epochs = MNIST_EPOCHS;
    cfg.seed = 1;
    let spec = NetworkSpec::new(MNIST_DIMS.to_vec()).with_feedback(feedback);
    let net = build_network(&mut Rng::new(cfg.seed), &spec).map_err(|e| e.to_string())?;
    let start = Instant::now();
    train_with_observer(net, &m.train, &m.test, &cfg, |r| {
        eprintln!(
            "  [{label}] epoch {:>2}: train {:.4} test {:.4} ({:.0}s)",
            r.epoch,
            r.train_acc,
            r.test_acc,
            start.elapsed().as_secs_f64()
        );
    })
    .map_err(|e| format!("{label} training failed: {e}"))
}

fn criterion_5(m: &Mnist, copi: &(Network, TrainMetrics)) -> Outcome {
    let metrics = &copi.1;
    let peak = metrics.peak_test_acc().unwrap_or(0.0);
    let to99 = metrics
        .epochs_to_fraction_of_peak(0.99)
        .unwrap_or(usize::MAX);
    let (_, bio) = mnist_run(m, "bio-copi", TrainConfig::for_rule(Rule::BioCopi), false)?;
    let bio_peak = bio.peak_test_acc().unwrap_or(0.0);
    let gap = (bio_peak - peak).abs();
    Ok((
        peak >= 0.975 && to99 <= 6 && gap <= 0.003,
        format!(
            "copi(bp) peak test {peak:.4} (>= 0.975), 99% of peak at epoch {to99} (<= 6); \
             bio-copi peak {bio_peak:.4}, gap {gap:.4} (<= 0.003); {MNIST_EPOCHS} epochs + 1 warm-up"
        ),
    ))
}

fn criterion_6(m: &Mnist, copi: &(Network, TrainMetrics)) -> Outcome {
    let copi_peak = copi.1.peak_test_acc().unwrap_or(0.0);
    let mut cfg = TrainConfig::for_rule(Rule::Copi);
    cfg.signal = ErrorSignalMode::FeedbackAlignment;
    let (_, fa) = mnist_run(m, "copi-fa", cfg, true)?;
    let fa_peak = fa.peak_test_acc().unwrap_or(0.0);
    Ok((
        fa_peak >= 0.965 && fa_peak < copi_peak,
        format!(
            "copi(fa) peak test {fa_peak:.4} (>= 0.965) vs copi(bp) {copi_peak:.4} (must be lower)"
        ),
    ))
}

fn criterion_7(m: &Mnist, copi: &(Network, TrainMetrics)) -> Outcome {
    let net = &copi.0;
    let full = copi_core::learning::evaluate(net, &m.test, LossKind::Quadratic, 1000)
        .map_err(|e| e.to_string())?
        .0;
    let mut accs = Vec::new();
    let mut fit_secs = Vec::new();
    for keep in [2usize, 0] {
        let t = Instant::now();
        let c = compress_many(net, &m.train, &[keep])
            .map_err(|e| e.to_string())?
            .remove(0);
        fit_secs.push(t.elapsed().as_secs_f64());
        accs.push(c.accuracy(&m.test).map_err(|e| e.to_string())?);
    }
    let (k2, k0) = (accs[0], accs[1]);
    let loss2 = 100.0 * (full - k2);
    let drop0 = 100.0 * (k2 - k0);
    let slowest = fit_secs.iter().cloned().fold(0.0, f64::max);
    Ok((
        loss2 <= 2.0 && drop0 > 5.0 && slowest < 60.0,
        format!(
            "full {full:.4}, keep 2 {k2:.4} (loss {loss2:.2} pts <= 2.0), keep 0 {k0:.4} (drop {drop0:.2} pts > 5 vs keep 2); \
             fit times {:.1}s / {:.1}s (< 60s)",
            fit_secs[0], fit_secs[1]
        ),
    ))
}

fn criterion_9(m: &Mnist) -> Outcome {
    let mut cfg = TrainConfig::for_rule(Rule::Copi);
    cfg.loss = LossKind::CrossEntropy;
    let (_, ce) = mnist_run(m, "copi-ce", cfg, false)?;
    let peak = ce.peak_test_acc().unwrap_or(0.0);
    Ok((
        peak >= 0.97,
        format!("copi(bp) with cross-entropy, peak test {peak:.4} (>= 0.97)"),
    ))
}

fn criterion_10() -> Outcome {
    let dir = workspace_data("COPI_CIFAR_DIR", "cifar-10-batches-bin");
    let (train, test) = load_cifar10_dir(&dir)
        .map_err(|e| format!("CIFAR-10 not available in {}: {e}", dir.display()))?;
    let train = train.subset(10_000);
    let mut cfg = TrainConfig::for_rule(Rule::Copi);
    cfg.epochs = 30;
    cfg.seed = 1;
    cfg.full_train_eval = true;
    let spec = NetworkSpec::new(vec![3072, 1000, 1000, 1000, 1000, 10]);
    let net = build_network(&mut Rng::new(cfg.seed), &spec).map_err(|e| e.to_string())?;
    let (_, metrics) = train_with_observer(net, &train, &test, &cfg, |r| {
        eprintln!(
            "  [cifar] epoch {:>2}: train {:.4} test {:.4}",
            r.epoch, r.train_acc, r.test_acc
        )
    })
    .map_err(|e| e.to_string())?;
    let mut counts = [0usize; 10];
    for c in test.class_indices() {
        counts[c] += 1;
    }
    let majority = *counts.iter().max().unwrap() as f64 / test.len() as f64;
    let peak = metrics.peak_test_acc().unwrap_or(0.0);
    let train_peak = metrics.peak_train_acc().unwrap_or(0.0);
    Ok((
        peak - majority >= 0.25 && train_peak > 0.9,
        format!("test peak {peak:.4} vs majority {majority:.4} (margin >= 0.25); train peak {train_peak:.4} (> 0.9)"),
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("COPI_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut failures = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome| {
        let (ok, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, e),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} [{n:>2}] {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    };

    if wanted(1) {
        report(1, "gradient oracle", criterion_1());
    }
    if wanted(2) {
        report(2, "whitened-batch equivalence", criterion_2());
    }
    if wanted(3) {
        report(3, "decorrelation convergence", criterion_3());
    }
    if wanted(4) {
        report(4, "scale invariance lab", criterion_4());
    }
    if wanted(8) {
        report(8, "OLS equivalence", criterion_8());
    }

    if [5, 6, 7, 9].into_iter().any(wanted) {
        match load_mnist() {
            Err(e) => {
                for (n, name) in [
                    (5, "MNIST copi/bio-copi"),
                    (6, "MNIST feedback alignment"),
                    (7, "MNIST compression"),
                    (9, "MNIST cross-entropy"),
                ] {
                    if wanted(n) {
                        report(n, name, Err(e.clone()));
                    }
                }
            }
            Ok(m) => {
                let copi = if [5, 6, 7].into_iter().any(wanted) {
                    Some(mnist_run(
                        &m,
                        "copi",
                        TrainConfig::for_rule(Rule::Copi),
                        false,
                    ))
                } else {
                    None
                };
                let with_copi = |f: &dyn Fn(&(Network, TrainMetrics)) -> Outcome| match &copi {
                    Some(Ok(c)) => f(c),
                    Some(Err(e)) => Err(e.clone()),
                    None => Err("copi run skipped".into()),
                };
                if wanted(5) {
                    report(5, "MNIST copi/bio-copi", with_copi(&|c| criterion_5(&m, c)));
                }
                if wanted(6) {
                    report(
                        6,
                        "MNIST feedback alignment",
                        with_copi(&|c| criterion_6(&m, c)),
                    );
                }
                if wanted(7) {
                    report(7, "MNIST compression", with_copi(&|c| criterion_7(&m, c)));
                }
                if wanted(9) {
                    report(9, "MNIST cross-entropy", criterion_9(&m));
                }
            }
        }
    }
    if wanted(10) {
        report(10, "CIFAR-10 subset", criterion_10());
    }

    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    }
}
