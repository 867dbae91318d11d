use copi_core::analysis::compress;
use copi_core::checkpoint::{self, Checkpoint};
use copi_core::data::one_hot;
use copi_core::learning::{evaluate, train};
use copi_core::network::{build_network, NetworkSpec};
use copi_core::{Dataset, LossKind, Matrix, Rng, Rule, TrainConfig};

/// Three Gaussian blobs in 8 dimensions, classes in the first three of ten
/// one-hot slots.
fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let x = Matrix::from_fn(8, n, |d, s| {
        let centre = if d == labels[s] as usize { 2.0 } else { 0.0 };
        centre + 0.3 * rng.normal()
    });
    Dataset::new("blobs", x, one_hot(&labels, 10).unwrap()).unwrap()
}

fn small(rule: Rule) -> TrainConfig {
    let mut cfg = TrainConfig::for_rule(rule);
    cfg.epochs = 4;
    cfg.batch_size = 10;
    cfg.eta_w = 1e-3;
    cfg.eta_r = 1e-3;
    if rule != Rule::BpAdam {
        cfg.alpha = 100.0;
    }
    cfg
}

#[test]
fn trained_network_survives_a_checkpoint_round_trip() {
    let (tr, te) = (blobs(300, 1), blobs(90, 2));
    let net = build_network(&mut Rng::new(3), &NetworkSpec::new(vec![8, 16, 10])).unwrap();
    let (net, metrics) = train(net, &tr, &te, &small(Rule::Copi)).unwrap();
    assert!(metrics.peak_test_acc().unwrap() > 0.9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.copi");
    checkpoint::save_network(&path, &net).unwrap();
    let back = checkpoint::load_network(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(
        evaluate(&back, &te, LossKind::Quadratic, 50).unwrap(),
        evaluate(&net, &te, LossKind::Quadratic, 50).unwrap()
    );
}

#[test]
fn compressed_network_round_trips_and_predicts_identically() {
    let (tr, te) = (blobs(300, 4), blobs(90, 5));
    let net = build_network(&mut Rng::new(6), &NetworkSpec::new(vec![8, 16, 16, 10])).unwrap();
    let (net, _) = train(net, &tr, &te, &small(Rule::BioCopi)).unwrap();
    let c = compress(&net, &tr, 1).unwrap();
    let bytes = checkpoint::encode_compressed(&c);
    let Checkpoint::Compressed(back) = checkpoint::decode(&bytes).unwrap() else {
        panic!("decoded a plain network");
    };
    assert_eq!(
        back.predict(&te.features).unwrap(),
        c.predict(&te.features).unwrap()
    );
    assert_eq!(back.accuracy(&te).unwrap(), c.accuracy(&te).unwrap());
}

#[test]
fn missing_checkpoint_names_the_path() {
    let err = checkpoint::load("/definitely/not/here.copi").unwrap_err();
    assert!(
        err.to_string().contains("/definitely/not/here.copi"),
        "{err}"
    );
}
