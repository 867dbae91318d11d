use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use copi_core::analysis::{compress, feature_maps, write_pgm_grid, ImageShape};
use copi_core::checkpoint::{self, Checkpoint};
use copi_core::data::{load_cifar10_dir, load_mnist_dir};
use copi_core::lab::{run_lab, LabRule};
use copi_core::learning::{evaluate, train_with_observer, TrainMetrics};
use copi_core::network::{build_network, forward, NetworkSpec};
use copi_core::rng::hash2;
use copi_core::{Dataset, ErrorSignalMode, Matrix, Rng};

use crate::config::{
    comment_lines, CompressOpts, DatasetArg, EvalOpts, FeaturesOpts, LabOpts, SplitArg, TrainOpts,
};
use crate::error::{io_at, CliError, CliResult};

fn load_data(dataset: DatasetArg, dir: &Path) -> CliResult<(Dataset, Dataset)> {
    info!("loading {dataset:?} from {}", dir.display());
    Ok(match dataset {
        DatasetArg::Mnist => load_mnist_dir(dir)?,
        DatasetArg::Cifar10 => load_cifar10_dir(dir)?,
    })
}

fn cap(ds: Dataset, subset: Option<usize>) -> Dataset {
    match subset {
        Some(n) if n < ds.len() => ds.subset(n),
        _ => ds,
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn require_checkpoint(path: &Option<PathBuf>) -> CliResult<&Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))
}

/// Seed of run `index`, derived from the master seed.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    hash2(seed, index as u64)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_train(opts: TrainOpts) -> CliResult<()> {
    let dims = opts.dims.clone().expect("resolved");
    let seeds = opts.seeds.expect("resolved");
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let out_dir = opts.out_dir.clone().expect("resolved");
    let (train_set, test_set) = load_data(
        opts.dataset.expect("resolved"),
        opts.data_dir.as_deref().expect("resolved"),
    )?;
    let train_set = cap(train_set, opts.subset);
    ensure_dir(&out_dir)?;

    let comments = comment_lines("train", &opts);
    let prefix = format!(
        "{}-{}",
        copi_core::Rule::from(opts.rule.expect("resolved")).name(),
        match opts.signal.expect("resolved").into() {
            ErrorSignalMode::Backprop => "bp",
            ErrorSignalMode::FeedbackAlignment => "fa",
        }
    );
    let n_layers = dims.len().saturating_sub(1);
    let mut all = Vec::with_capacity(seeds);
    for run in 0..seeds {
        let seed = run_seed(opts.seed.expect("resolved"), run);
        let config = opts.train_config(seed);
        config.validate()?;
        let spec = NetworkSpec::new(dims.clone())
            .with_feedback(config.signal == ErrorSignalMode::FeedbackAlignment);
        let network = build_network(&mut Rng::new(seed), &spec)?;
        info!(
            "run {run} (seed {seed}): {} on {:?}",
            config.rule.name(),
            dims
        );
        let (network, metrics) =
            train_with_observer(network, &train_set, &test_set, &config, |r| {
                info!(
                "run {run} epoch {}: train acc {:.4}, test acc {:.4}, test loss {:.4} ({:.0} s)",
                r.epoch, r.train_acc, r.test_acc, r.test_loss, r.seconds
            );
            })?;

        let mut run_comments = comments.clone();
        run_comments.push(format!("run = {run}"));
        run_comments.push(format!("run-seed = {seed}"));
        let csv = out_dir.join(format!("{prefix}-run{run}.csv"));
        let mut w = create(&csv)?;
        metrics.write_csv(&mut w, n_layers, &run_comments)?;
        w.flush().map_err(io_at(&csv))?;
        let ckpt = out_dir.join(format!("{prefix}-run{run}.copi"));
        checkpoint::save_network(&ckpt, &network)?;
        info!("wrote {} and {}", csv.display(), ckpt.display());
        if let Some(peak) = metrics.peak_test_acc() {
            println!("run {run}: peak test accuracy {peak:.4}");
        }
        all.push((seed, metrics));
    }
    write_aggregate(&out_dir, &prefix, &comments, &all)
}

/// Per-epoch mean and standard deviation across runs, and a per-run summary
/// with the peak accuracies.
fn write_aggregate(
    out_dir: &Path,
    prefix: &str,
    comments: &[String],
    runs: &[(u64, TrainMetrics)],
) -> CliResult<()> {
    let path = out_dir.join(format!("{prefix}-aggregate.csv"));
    let mut w = create(&path)?;
    let mut body = String::new();
    for c in comments {
        body.push_str(&format!("# {c}\n"));
    }
    body.push_str("# std is the sample standard deviation across runs\n");
    body.push_str("epoch,runs,train_acc_mean,train_acc_std,test_acc_mean,test_acc_std,test_loss_mean,test_loss_std\n");
    let epochs = runs.iter().map(|(_, m)| m.records.len()).min().unwrap_or(0);
    for e in 0..epochs {
        let col = |f: fn(&copi_core::learning::EpochRecord) -> f64| -> Vec<f64> {
            runs.iter().map(|(_, m)| f(&m.records[e])).collect()
        };
        let (tr, trs) = mean_std(&col(|r| r.train_acc));
        let (te, tes) = mean_std(&col(|r| r.test_acc));
        let (tl, tls) = mean_std(&col(|r| r.test_loss));
        body.push_str(&format!(
            "{},{},{tr},{trs},{te},{tes},{tl},{tls}\n",
            runs[0].1.records[e].epoch,
            runs.len()
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;

    let path = out_dir.join(format!("{prefix}-summary.csv"));
    let mut w = create(&path)?;
    let mut body = String::new();
    for c in comments {
        body.push_str(&format!("# {c}\n"));
    }
    body.push_str("run,seed,peak_train_acc,peak_test_acc\n");
    let mut peaks = Vec::new();
    for (run, (seed, m)) in runs.iter().enumerate() {
        let (tr, te) = (m.peak_train_acc(), m.peak_test_acc());
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        body.push_str(&format!("{run},{seed},{},{}\n", fmt(tr), fmt(te)));
        peaks.extend(te);
    }
    w.write_all(body.as_bytes()).map_err(io_at(&path))?;
    w.flush().map_err(io_at(&path))?;
    if !peaks.is_empty() {
        let (m, s) = mean_std(&peaks);
        println!(
            "peak test accuracy over {} run(s): {m:.4} ± {s:.4}",
            peaks.len()
        );
    }
    Ok(())
}

pub fn cmd_eval(opts: EvalOpts) -> CliResult<()> {
    let path = require_checkpoint(&opts.checkpoint)?;
    let ckpt = checkpoint::load(path)?;
    let (train_set, test_set) = load_data(
        opts.dataset.expect("resolved"),
        opts.data_dir.as_deref().expect("resolved"),
    )?;
    let ds = match opts.split.expect("resolved") {
        SplitArg::Train => train_set,
        SplitArg::Test => test_set,
    };
    let ds = cap(ds, opts.subset);
    match ckpt {
        Checkpoint::Network(net) => {
            let (acc, loss) = evaluate(&net, &ds, opts.loss.expect("resolved").into(), 1000)?;
            println!("accuracy {acc:.6}");
            println!("loss {loss:.6}");
        }
        Checkpoint::Compressed(net) => {
            println!("accuracy {:.6}", net.accuracy(&ds)?);
        }
    }
    Ok(())
}

pub fn cmd_compress(opts: CompressOpts) -> CliResult<()> {
    let path = require_checkpoint(&opts.checkpoint)?;
    let network = checkpoint::load_network(path)?;
    let (train_set, test_set) = load_data(
        opts.dataset.expect("resolved"),
        opts.data_dir.as_deref().expect("resolved"),
    )?;
    let fit_set = cap(train_set, opts.subset);
    let out_dir = opts.out_dir.clone().expect("resolved");
    ensure_dir(&out_dir)?;
    let keeps = opts
        .keep_layers
        .clone()
        .unwrap_or_else(|| (0..=network.num_layers()).collect());

    let mut body = String::new();
    for c in comment_lines("compress", &opts) {
        body.push_str(&format!("# {c}\n"));
    }
    body.push_str("keep_layers,train_acc,test_acc,fit_seconds\n");
    for &k in &keeps {
        let start = Instant::now();
        let compressed = compress(&network, &fit_set, k)?;
        let secs = start.elapsed().as_secs_f64();
        let (tr, te) = (
            compressed.accuracy(&fit_set)?,
            compressed.accuracy(&test_set)?,
        );
        info!("keep {k}: train acc {tr:.4}, test acc {te:.4}, fit {secs:.1} s");
        println!("keep {k}: test accuracy {te:.4}");
        body.push_str(&format!("{k},{tr},{te},{secs:.3}\n"));
        checkpoint::save_compressed(out_dir.join(format!("compressed-k{k}.copi")), &compressed)?;
    }
    let csv = out_dir.join("compress.csv");
    let mut w = create(&csv)?;
    w.write_all(body.as_bytes()).map_err(io_at(&csv))?;
    w.flush().map_err(io_at(&csv))
}

fn tile_shape(dataset: DatasetArg, dim: usize) -> CliResult<ImageShape> {
    let channels = dataset.channels();
    let side = ((dim / channels) as f64).sqrt().round() as usize;
    if side * side * channels != dim {
        return Err(CliError::Usage(format!(
            "input dimension {dim} is not {channels} square channel(s)"
        )));
    }
    Ok(ImageShape {
        width: side,
        height: side,
        channels,
    })
}

fn first_rows(m: &Matrix, n: usize) -> Matrix {
    let n = n.min(m.rows());
    Matrix::from_fn(n, m.cols(), |i, j| m.get(i, j))
}

pub fn cmd_features(opts: FeaturesOpts) -> CliResult<()> {
    let path = require_checkpoint(&opts.checkpoint)?;
    let network = checkpoint::load_network(path)?;
    let dataset = opts.dataset.expect("resolved");
    let (train_set, _) = load_data(dataset, opts.data_dir.as_deref().expect("resolved"))?;
    let train_set = cap(train_set, opts.subset);
    let shape = tile_shape(dataset, network.input_dim())?;
    let out_dir = opts.out_dir.clone().expect("resolved");
    ensure_dir(&out_dir)?;
    let n_layers = network.num_layers();
    let layers = match &opts.layers {
        Some(l) => l.clone(),
        None => {
            let l: Vec<usize> = [2, 4, 6, 7]
                .into_iter()
                .filter(|&l| l <= n_layers)
                .collect();
            if l.is_empty() {
                vec![n_layers]
            } else {
                l
            }
        }
    };
    let units = opts.units.expect("resolved");
    let cols = opts.grid_cols.expect("resolved");
    if units == 0 || cols == 0 {
        return Err(CliError::Usage(
            "--units and --grid-cols must be positive".into(),
        ));
    }

    let sample = train_set.subset(units);
    let states = forward(&network, &sample.features)?;
    let x1 = states[0].x.transpose();
    let p = out_dir.join("decorrelated-input.pgm");
    write_pgm_grid(&p, &x1, shape, cols)?;
    println!("wrote {}", p.display());

    let maps = feature_maps(&network, &train_set, &layers)?;
    for (readout, &l) in maps.iter().zip(&layers) {
        if !readout.dead_inputs().is_empty() {
            warn!(
                "layer {l}: {} dead input direction(s) zeroed",
                readout.dead_inputs().len()
            );
        }
        let p = out_dir.join(format!("features-layer{l}.pgm"));
        write_pgm_grid(&p, &first_rows(&readout.b, units), shape, cols)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn cmd_decorr_lab(opts: LabOpts) -> CliResult<()> {
    let config = opts.lab_config();
    config.validate()?;
    let out_dir = opts.out_dir.clone().expect("resolved");
    ensure_dir(&out_dir)?;
    let result = run_lab(&config)?;
    let csv = out_dir.join("decorr-lab.csv");
    let mut w = create(&csv)?;
    result.write_csv(&mut w, &comment_lines("decorr-lab", &opts))?;
    w.flush().map_err(io_at(&csv))?;
    for rule in LabRule::ALL {
        println!(
            "{}: reduction spread {:.4e}, relative deviation {:.4e}",
            rule.name(),
            result.reduction_spread(rule),
            result.relative_deviation(rule)
        );
    }
    for cell in result.cells.iter().filter(|c| c.diverged) {
        warn!("{} diverged at c = {}", cell.rule.name(), cell.c);
    }
    println!("wrote {}", csv.display());
    Ok(())
}
