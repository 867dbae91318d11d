use std::io::Write;
use std::time::Instant;

use crate::analysis::offdiag_norm;
use crate::data::{batches, BatchPlan, Dataset};
use crate::error::{CopiError, Result};
use crate::learning::adam::{adam_step, AdamParams, AdamState};
use crate::learning::loss::{loss_and_output_delta, LossKind};
use crate::learning::rules::{
    bio_copi_decorr_update_with, bp_update, copi_decorr_update_with, copi_forward_update_with,
};
use crate::learning::signals::{error_signals, ErrorSignalMode};
use crate::network::{forward, Network};
use crate::tensor::{row_sq_mean, Matrix};

/// Forward-weight learning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// COPI forward rule with the COPI decorrelation rule.
    Copi,
    /// COPI forward rule with the BIO-COPI decorrelation rule.
    BioCopi,
    /// Vanilla SGD on the forward weights, COPI decorrelation.
    BpDecorr,
    /// Adam on the forward weights, no decorrelation.
    BpAdam,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Copi => "copi",
            Rule::BioCopi => "bio-copi",
            Rule::BpDecorr => "bp-decorr",
            Rule::BpAdam => "bp-adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecorrRule {
    Copi,
    BioCopi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_w: f64,
    pub eta_r: f64,
    /// Gain on the error signal in the target state `a + α δ`.
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs of lateral-only training before forward learning starts.
    pub warmup_epochs: usize,
    pub rule: Rule,
    pub signal: ErrorSignalMode,
    pub loss: LossKind,
    pub adam: AdamParams,
    pub seed: u64,
    /// Overrides the lateral rule implied by `rule`.
    pub decorr: Option<DecorrRule>,
    /// Re-evaluate the full training set after each epoch instead of
    /// reporting the running average over the epoch's batches.
    pub full_train_eval: bool,
    /// Training samples used to measure per-layer off-diagonal correlation.
    pub probe_samples: usize,
    pub eval_batch: usize,
}

impl TrainConfig {
    /// COPI with the learning rates, gain, and batch size used for the
    /// MNIST/CIFAR-10 experiments.
    pub fn copi() -> Self {
        Self {
            eta_w: 1e-4,
            eta_r: 1e-4,
            alpha: 1000.0,
            batch_size: 50,
            epochs: 100,
            warmup_epochs: 1,
            rule: Rule::Copi,
            signal: ErrorSignalMode::Backprop,
            loss: LossKind::Quadratic,
            adam: AdamParams::default(),
            seed: 0,
            decorr: None,
            full_train_eval: false,
            probe_samples: 1000,
            eval_batch: 1000,
        }
    }

    /// Defaults for `rule`: the Adam baseline uses α = 1 and no warm-up.
    pub fn for_rule(rule: Rule) -> Self {
        let mut cfg = Self::copi();
        cfg.rule = rule;
        if rule == Rule::BpAdam {
            cfg.alpha = 1.0;
            cfg.warmup_epochs = 0;
        }
        cfg
    }

    /// The lateral rule in effect, or `None` when lateral weights are frozen.
    pub fn decorr_rule(&self) -> Option<DecorrRule> {
        match self.rule {
            Rule::BpAdam => None,
            Rule::BioCopi => Some(self.decorr.unwrap_or(DecorrRule::BioCopi)),
            Rule::Copi | Rule::BpDecorr => Some(self.decorr.unwrap_or(DecorrRule::Copi)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CopiError::Config(m));
        if !(self.eta_w >= 0.0) || !(self.eta_r >= 0.0) {
            return bad(format!(
                "learning rates must be >= 0 (eta_w {}, eta_r {})",
                self.eta_w, self.eta_r
            ));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("gain alpha must be > 0, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        let AdamParams { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return bad(format!("invalid Adam parameters {:?}", self.adam));
        }
        if self.rule == Rule::BpAdam && self.decorr.is_some() {
            return bad("bp-adam trains without decorrelation".into());
        }
        Ok(())
    }
}

/// One row of training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    /// Off-diagonal correlation norm of each layer's decorrelated input.
    pub offdiag: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetrics {
    pub records: Vec<EpochRecord>,
}

impl TrainMetrics {
    pub fn peak_test_acc(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_acc).reduce(f64::max)
    }

    pub fn peak_train_acc(&self) -> Option<f64> {
        self.records.iter().map(|r| r.train_acc).reduce(f64::max)
    }

    /// First epoch whose test accuracy reaches `fraction` of the peak.
    pub fn epochs_to_fraction_of_peak(&self, fraction: f64) -> Option<usize> {
        let peak = self.peak_test_acc()?;
        self.records
            .iter()
            .find(|r| r.test_acc >= fraction * peak)
            .map(|r| r.epoch)
    }

    pub fn csv_header(num_layers: usize) -> String {
        let mut cols = vec![
            "epoch".to_string(),
            "train_acc".into(),
            "train_loss".into(),
            "test_acc".into(),
            "test_loss".into(),
        ];
        cols.extend((1..=num_layers).map(|l| format!("offdiag_l{l}")));
        cols.push("seconds_elapsed".into());
        cols.join(",")
    }

    /// Writes `# comment` lines, the header row, then one row per epoch.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        num_layers: usize,
        comments: &[String],
    ) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "{}", Self::csv_header(num_layers))?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_acc, r.train_loss, r.test_acc, r.test_loss
            )?;
            for v in &r.offdiag {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{:.3}", r.seconds)?;
        }
        Ok(())
    }
}

/// Accuracy and mean loss of `network` on `dataset`.
pub fn evaluate(
    network: &Network,
    dataset: &Dataset,
    loss: LossKind,
    batch: usize,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(CopiError::InvalidArgument(
            "evaluation on an empty dataset".into(),
        ));
    }
    let plan = BatchPlan::sequential(dataset.len(), batch.min(dataset.len()))?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let act = network.output_activation();
    for (y0, target) in batches(dataset, &plan) {
        let states = forward(network, &y0)?;
        let last = states.last().expect("non-empty network");
        let (l, _) = loss_and_output_delta(&last.y, &last.a, &target, loss, act)?;
        loss_sum += l * y0.cols() as f64;
        correct += count_correct(&last.y, &target);
    }
    let n = dataset.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

fn count_correct(output: &Matrix, target: &Matrix) -> usize {
    output
        .argmax_columns()
        .iter()
        .zip(target.argmax_columns())
        .filter(|(p, t)| **p == *t)
        .count()
}

/// Per-layer off-diagonal correlation of the decorrelated inputs on `probe`.
pub fn layer_offdiag(network: &Network, probe: &Matrix) -> Result<Vec<f64>> {
    forward(network, probe)?
        .iter()
        .map(|s| offdiag_norm(&s.x))
        .collect()
}

/// Runs warm-up and training epochs, returning the trained network.
pub fn train(
    network: Network,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<(Network, TrainMetrics)> {
    train_with_observer(network, train_set, test_set, config, |_| {})
}

/// As [`train`], calling `observer` after each epoch's metrics are recorded.
pub fn train_with_observer(
    mut network: Network,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(Network, TrainMetrics)> {
    config.validate()?;
    if config.signal == ErrorSignalMode::FeedbackAlignment && network.feedback.is_none() {
        return Err(CopiError::Config(
            "feedback alignment requires a network built with feedback weights".into(),
        ));
    }
    if train_set.input_dim() != network.input_dim()
        || train_set.num_classes() != network.output_dim()
    {
        return Err(CopiError::Config(format!(
            "dataset is {}->{}, network is {}->{}",
            train_set.input_dim(),
            train_set.num_classes(),
            network.input_dim(),
            network.output_dim()
        )));
    }
    if config.loss == LossKind::CrossEntropy && !train_set.labels_are_one_hot() {
        return Err(CopiError::Config(
            "cross-entropy loss requires one-hot labels".into(),
        ));
    }
    let mut metrics = TrainMetrics::default();
    if config.epochs == 0 {
        return Ok((network, metrics));
    }

    let start = Instant::now();
    let batch = config.batch_size.min(train_set.len());
    let probe = train_set
        .features
        .column_range(0, config.probe_samples.clamp(1, train_set.len()));
    let mut adam: Vec<AdamState> = network
        .layers
        .iter()
        .map(|l| AdamState::new(l.w.rows(), l.w.cols()))
        .collect();
    let decorr = config.decorr_rule();

    if let Some(rule) = decorr {
        for w in 0..config.warmup_epochs {
            // warm-up epochs draw from a separate seed range so that joint
            // epoch orders do not depend on the warm-up length
            let plan =
                BatchPlan::shuffled(train_set.len(), batch, config.seed, u64::MAX - w as u64)?;
            decorrelation_epoch(&mut network, train_set, &plan, rule, config.eta_r)?;
            log::info!(
                "warm-up epoch {} done ({:.1}s)",
                w + 1,
                start.elapsed().as_secs_f64()
            );
        }
    }

    let out_act = network.output_activation();
    for epoch in 1..=config.epochs {
        let plan = BatchPlan::shuffled(train_set.len(), batch, config.seed, epoch as u64)?;
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for (y0, target) in batches(train_set, &plan) {
            let states = forward(&network, &y0)?;
            let last = states.last().expect("non-empty network");
            let (loss, delta_out) =
                loss_and_output_delta(&last.y, &last.a, &target, config.loss, out_act)?;
            loss_sum += loss * y0.cols() as f64;
            correct += count_correct(&last.y, &target);
            let deltas = error_signals(&network, &states, &delta_out, config.signal)?;

            // all updates come from this batch's cached states and are
            // applied together afterwards
            let mut w_updates = Vec::with_capacity(states.len());
            let mut r_updates = Vec::with_capacity(states.len());
            for ((layer, s), delta) in network.layers.iter().zip(&states).zip(&deltas) {
                let m = row_sq_mean(&s.x)?;
                let dw = match config.rule {
                    Rule::Copi | Rule::BioCopi => {
                        copi_forward_update_with(&layer.w, &s.x, &s.a, delta, config.alpha, &m)?
                    }
                    Rule::BpDecorr | Rule::BpAdam => {
                        bp_update(&layer.w, &s.x, &delta.scale(config.alpha))?
                    }
                };
                w_updates.push(dw);
                r_updates.push(lateral_update(decorr, &layer.r, &s.x, &m)?);
            }
            for (l, ((layer, dw), dr)) in network
                .layers
                .iter_mut()
                .zip(w_updates)
                .zip(r_updates)
                .enumerate()
            {
                if config.rule == Rule::BpAdam {
                    let state = std::mem::replace(&mut adam[l], AdamState::new(0, 0));
                    let (w, st) =
                        adam_step(&layer.w, &dw.scale(-1.0), state, config.eta_w, config.adam)?;
                    layer.w = w;
                    adam[l] = st;
                } else {
                    layer.w.add_scaled_assign(config.eta_w, &dw)?;
                }
                if let Some(dr) = dr {
                    layer.r.add_scaled_assign(config.eta_r, &dr)?;
                }
                if !layer.w.all_finite() {
                    return Err(CopiError::Diverged {
                        param: "W",
                        layer: l + 1,
                        epoch,
                    });
                }
                if !layer.r.all_finite() {
                    return Err(CopiError::Diverged {
                        param: "R",
                        layer: l + 1,
                        epoch,
                    });
                }
            }
        }

        let (train_acc, train_loss) = if config.full_train_eval {
            evaluate(&network, train_set, config.loss, config.eval_batch)?
        } else {
            let n = train_set.len() as f64;
            (correct as f64 / n, loss_sum / n)
        };
        let (test_acc, test_loss) = evaluate(&network, test_set, config.loss, config.eval_batch)?;
        let record = EpochRecord {
            epoch,
            train_acc,
            train_loss,
            test_acc,
            test_loss,
            offdiag: layer_offdiag(&network, &probe)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} ({:.4}) test {:.4} ({:.4}) {:.1}s",
            train_acc,
            train_loss,
            test_acc,
            test_loss,
            record.seconds
        );
        observer(&record);
        metrics.records.push(record);
    }
    Ok((network, metrics))
}

/// One pass over `dataset` in `plan` order that updates only the lateral
/// weights, as in the warm-up phase. Returns the number of updates applied.
pub fn decorrelation_epoch(
    network: &mut Network,
    dataset: &Dataset,
    plan: &BatchPlan,
    rule: DecorrRule,
    eta_r: f64,
) -> Result<usize> {
    let mut steps = 0;
    for (y0, _) in batches(dataset, plan) {
        let states = forward(network, &y0)?;
        let mut updates = Vec::with_capacity(states.len());
        for (layer, s) in network.layers.iter().zip(&states) {
            let m = row_sq_mean(&s.x)?;
            updates.push(lateral_update(Some(rule), &layer.r, &s.x, &m)?);
        }
        for (l, (layer, dr)) in network.layers.iter_mut().zip(updates).enumerate() {
            if let Some(dr) = dr {
                layer.r.add_scaled_assign(eta_r, &dr)?;
            }
            if !layer.r.all_finite() {
                return Err(CopiError::Diverged {
                    param: "R",
                    layer: l + 1,
                    epoch: 0,
                });
            }
        }
        steps += 1;
    }
    Ok(steps)
}

fn lateral_update(
    rule: Option<DecorrRule>,
    r: &Matrix,
    x: &Matrix,
    x_sq_mean: &[f64],
) -> Result<Option<Matrix>> {
    Ok(match rule {
        None => None,
        Some(DecorrRule::Copi) => Some(copi_decorr_update_with(r, x, x_sq_mean)?),
        Some(DecorrRule::BioCopi) => Some(bio_copi_decorr_update_with(r, x, x_sq_mean)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use crate::network::{build_network, NetworkSpec};
    use crate::rng::Rng;

    /// Two Gaussian blobs per class in 6-D, linearly separable.
    fn toy(seed: u64, n: usize) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut labels = Vec::with_capacity(n);
        let features = Matrix::from_fn(6, n, |_, _| 0.0);
        let mut f = features;
        for j in 0..n {
            let c = (rng.below(3)) as u8;
            labels.push(c);
            for i in 0..6 {
                let centre = if i / 2 == c as usize { 0.8 } else { 0.2 };
                f.set(i, j, (centre + 0.1 * rng.normal()).clamp(0.0, 1.0));
            }
        }
        Dataset::new("toy", f, one_hot(&labels, 3).unwrap()).unwrap()
    }

    fn small_config(rule: Rule) -> TrainConfig {
        let mut cfg = TrainConfig::for_rule(rule);
        cfg.epochs = 5;
        cfg.batch_size = 10;
        cfg.eta_w = 1e-3;
        cfg.eta_r = 1e-3;
        cfg.alpha = if rule == Rule::BpAdam { 1.0 } else { 100.0 };
        cfg.probe_samples = 100;
        cfg
    }

    #[test]
    fn zero_epochs_leave_network_untouched() {
        let net = build_network(&mut Rng::new(1), &NetworkSpec::new(vec![6, 8, 3])).unwrap();
        let ds = toy(1, 50);
        let mut cfg = small_config(Rule::Copi);
        cfg.epochs = 0;
        let (out, metrics) = train(net.clone(), &ds, &ds, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(metrics.records.is_empty());
    }

    #[test]
    fn every_rule_learns_the_toy_problem() {
        let train_set = toy(2, 300);
        let test_set = toy(3, 150);
        for rule in [Rule::Copi, Rule::BioCopi, Rule::BpDecorr, Rule::BpAdam] {
            let net = build_network(&mut Rng::new(4), &NetworkSpec::new(vec![6, 8, 3])).unwrap();
            let mut cfg = small_config(rule);
            if matches!(rule, Rule::BpDecorr | Rule::BpAdam) {
                cfg.eta_w = 1e-2;
            }
            let (_, m) = train(net, &train_set, &test_set, &cfg).unwrap();
            assert_eq!(m.records.len(), 5);
            let acc = m.peak_test_acc().unwrap();
            assert!(acc > 0.9, "{} reached only {acc}", rule.name());
            assert!(m.records.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
        }
    }

    #[test]
    fn feedback_alignment_trains() {
        let train_set = toy(5, 300);
        let net = build_network(
            &mut Rng::new(4),
            &NetworkSpec::new(vec![6, 8, 3]).with_feedback(true),
        )
        .unwrap();
        let mut cfg = small_config(Rule::Copi);
        cfg.signal = ErrorSignalMode::FeedbackAlignment;
        cfg.epochs = 8;
        let (_, m) = train(net, &train_set, &train_set, &cfg).unwrap();
        assert!(m.peak_test_acc().unwrap() > 0.85);
    }

    #[test]
    fn fa_requires_feedback_weights() {
        let ds = toy(1, 50);
        let net = build_network(&mut Rng::new(1), &NetworkSpec::new(vec![6, 8, 3])).unwrap();
        let mut cfg = small_config(Rule::Copi);
        cfg.signal = ErrorSignalMode::FeedbackAlignment;
        assert!(matches!(
            train(net, &ds, &ds, &cfg),
            Err(CopiError::Config(_))
        ));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = toy(7, 120);
        let spec = NetworkSpec::new(vec![6, 5, 3]);
        let cfg = small_config(Rule::Copi);
        let (a, ma) = train(
            build_network(&mut Rng::new(3), &spec).unwrap(),
            &ds,
            &ds,
            &cfg,
        )
        .unwrap();
        let (b, mb) = train(
            build_network(&mut Rng::new(3), &spec).unwrap(),
            &ds,
            &ds,
            &cfg,
        )
        .unwrap();
        assert_eq!(a, b);
        let strip = |m: &TrainMetrics| {
            m.records
                .iter()
                .map(|r| {
                    (
                        r.train_acc,
                        r.train_loss,
                        r.test_acc,
                        r.test_loss,
                        r.offdiag.clone(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&ma), strip(&mb));
    }

    #[test]
    fn divergence_is_reported_with_layer_and_epoch() {
        let ds = toy(1, 60);
        let net = build_network(&mut Rng::new(1), &NetworkSpec::new(vec![6, 8, 3])).unwrap();
        let mut cfg = small_config(Rule::Copi);
        cfg.eta_w = 1e6;
        cfg.alpha = 1e6;
        match train(net, &ds, &ds, &cfg) {
            Err(CopiError::Diverged { epoch, layer, .. }) => {
                assert!(epoch >= 1);
                assert!((1..=2).contains(&layer));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn warmup_reduces_input_correlation_without_touching_w() {
        let ds = toy(9, 400);
        let net = build_network(&mut Rng::new(1), &NetworkSpec::new(vec![6, 4, 3])).unwrap();
        let before = layer_offdiag(&net, &ds.features).unwrap()[0];
        let mut cfg = small_config(Rule::Copi);
        cfg.eta_w = 0.0;
        cfg.warmup_epochs = 3;
        cfg.epochs = 1;
        cfg.eta_r = 5e-2;
        let (out, _) = train(net.clone(), &ds, &ds, &cfg).unwrap();
        assert_eq!(out.layers[0].w, net.layers[0].w);
        let after = layer_offdiag(&out, &ds.features).unwrap()[0];
        assert!(after < 0.5 * before, "{after} vs {before}");
    }

    #[test]
    fn metrics_csv_layout() {
        let m = TrainMetrics {
            records: vec![EpochRecord {
                epoch: 1,
                train_acc: 0.5,
                train_loss: 1.0,
                test_acc: 0.25,
                test_loss: 2.0,
                offdiag: vec![0.1, 0.2],
                seconds: 1.5,
            }],
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 2, &["seed=1".into()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "# seed=1\nepoch,train_acc,train_loss,test_acc,test_loss,offdiag_l1,offdiag_l2,seconds_elapsed\n1,0.5,1,0.25,2,0.1,0.2,1.500\n"
        );
        assert_eq!(m.epochs_to_fraction_of_peak(0.99), Some(1));
    }
}
