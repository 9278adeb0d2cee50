use pfu_core::config::TrainConfig;
use pfu_core::corpus::{generate_synthetic, PointDistribution, SyntheticSpec};
use pfu_core::detector;
use pfu_core::error::Error;
use pfu_core::gradcheck::{gradient_check, gradient_check_impl, Component};
use pfu_core::pipeline::{simulate_labels, LabelScheme};
use pfu_core::train::{train_full, train_partial};

fn tiny_spec(n_samples: usize, noise_sigma: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_samples,
        t: 12,
        m: 4,
        d_v: 8,
        d_q: 8,
        concept_count: 2,
        noise_sigma,
        min_width: 0.2,
        max_width: 0.5,
        seed: 11,
    }
}

fn labeled(spec: &SyntheticSpec) -> Vec<(pfu_core::corpus::FeatureRecord, pfu_core::corpus::Annotation)> {
    let corpus = generate_synthetic(spec).unwrap();
    let labels = simulate_labels(
        &corpus,
        LabelScheme::Point(PointDistribution::Uniform),
        spec.seed,
    );
    corpus
        .iter()
        .zip(&labels)
        .map(|((r, _), l)| (r.clone(), *l))
        .collect()
}

fn tiny_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.d_model = 8;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.002;
    cfg
}

#[test]
fn partial_curve_length_matches_step_count() {
    let corpus = labeled(&tiny_spec(4, 0.1));
    let cfg = tiny_cfg();
    let outcome = train_partial(&corpus, &cfg).unwrap();
    // one epoch over 4 samples with batch_size 4 is a single step
    assert_eq!(outcome.curves.len(), 1);
    assert_eq!(outcome.curves[0].epoch, 0);
    assert_eq!(outcome.curves[0].step, 0);

    let mut cfg2 = cfg.clone();
    cfg2.batch_size = 2;
    cfg2.epochs = 3;
    let outcome = train_partial(&corpus, &cfg2).unwrap();
    assert_eq!(outcome.curves.len(), 6);
    assert_eq!(outcome.curves.last().unwrap().epoch, 2);
    assert_eq!(outcome.curves.last().unwrap().step, 5);
}

#[test]
fn partial_training_is_deterministic() {
    let corpus = labeled(&tiny_spec(8, 0.1));
    let mut cfg = tiny_cfg();
    cfg.epochs = 3;
    let a = train_partial(&corpus, &cfg).unwrap();
    let b = train_partial(&corpus, &cfg).unwrap();
    assert_eq!(a.curves.len(), b.curves.len());
    for (x, y) in a.curves.iter().zip(&b.curves) {
        assert!((x.parts.total - y.parts.total).abs() < 1e-6);
    }
    for (name, t) in a.params.iter() {
        let u = b.params.get(name);
        for (p, q) in t.data.iter().zip(&u.data) {
            assert!((p - q).abs() < 1e-6, "{name} diverged");
        }
    }
}

#[test]
fn partial_loss_halves_on_noiseless_corpus() {
    let mut spec = tiny_spec(200, 0.0);
    spec.t = 48;
    spec.d_v = 16;
    spec.d_q = 16;
    spec.concept_count = 4;
    let corpus = labeled(&spec);
    let mut cfg = tiny_cfg();
    cfg.d_model = 16;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    let outcome = train_partial(&corpus, &cfg).unwrap();
    let per_epoch = outcome.curves.len() / 30;
    let first: f64 = outcome.curves[..per_epoch]
        .iter()
        .map(|c| c.parts.total)
        .sum::<f64>()
        / per_epoch as f64;
    let last: f64 = outcome.curves[outcome.curves.len() - per_epoch..]
        .iter()
        .map(|c| c.parts.total)
        .sum::<f64>()
        / per_epoch as f64;
    assert!(
        last <= 0.5 * first,
        "loss decreased only from {first:.4} to {last:.4}"
    );
}

#[test]
fn partial_rejects_full_annotations() {
    let spec = tiny_spec(4, 0.1);
    let corpus = generate_synthetic(&spec).unwrap(); // full gt annotations
    let err = match train_partial(&corpus, &tiny_cfg()) {
        Err(e) => e,
        Ok(_) => panic!("full annotations must be rejected"),
    };
    assert!(matches!(err, Error::FullAnnotationInPartialContext));
}

fn full_setup(
    n: usize,
    epochs: usize,
) -> (
    Vec<(pfu_core::corpus::FeatureRecord, pfu_core::corpus::Annotation)>,
    Vec<pfu_core::corpus::PseudoLabel>,
    pfu_core::nn::ParamStore,
    TrainConfig,
) {
    let corpus = labeled(&tiny_spec(n, 0.1));
    let mut cfg = tiny_cfg();
    cfg.epochs = epochs;
    let partial = train_partial(&corpus, &cfg).unwrap();
    let enc_cfg = pfu_core::train::encoder_config(&corpus, &cfg).unwrap();
    let pseudo =
        detector::emit_pseudo_labels(&corpus, &partial.params, &enc_cfg, cfg.mask_shape).unwrap();
    (corpus, pseudo, partial.params, cfg)
}

#[test]
fn full_curve_length_matches_step_count() {
    let (corpus, pseudo, enc, mut cfg) = full_setup(4, 1);
    cfg.batch_size = 2;
    cfg.epochs = 2;
    let outcome = train_full(&corpus, &pseudo, &enc, &cfg).unwrap();
    assert_eq!(outcome.curves.len(), 4);
}

#[test]
fn full_training_is_deterministic() {
    let (corpus, pseudo, enc, mut cfg) = full_setup(8, 1);
    cfg.epochs = 3;
    let a = train_full(&corpus, &pseudo, &enc, &cfg).unwrap();
    let b = train_full(&corpus, &pseudo, &enc, &cfg).unwrap();
    for (x, y) in a.curves.iter().zip(&b.curves) {
        assert!((x.parts.total - y.parts.total).abs() < 1e-6);
    }
}

#[test]
fn full_training_loss_decreases() {
    let (corpus, pseudo, enc, mut cfg) = full_setup(32, 10);
    cfg.epochs = 50;
    cfg.learning_rate = 0.005;
    let outcome = train_full(&corpus, &pseudo, &enc, &cfg).unwrap();
    let first = outcome.curves.first().unwrap().parts.total;
    let last = outcome.curves.last().unwrap().parts.total;
    assert!(
        last <= 0.5 * first,
        "full loss decreased only from {first:.4} to {last:.4}"
    );
}

#[test]
fn gradient_check_passes_for_raml() {
    let report = gradient_check(Component::LossRaml, 100, 1e-4, 9).unwrap();
    assert_eq!(report.passed, 100);
    assert!(report.failures.is_empty());
}

#[test]
fn corrupted_gradients_are_reported() {
    let report = gradient_check_impl(Component::LossRaml, 10, 1e-4, 9, 1e-2).unwrap();
    assert!(report.passed < 10);
    assert!(!report.failures.is_empty());
}

#[test]
fn unreachable_tolerance_reports_failures_without_crashing() {
    let report = gradient_check(Component::LossRaml, 10, 1e-12, 9).unwrap();
    assert!(report.passed < 10);
    assert!(!report.failures.is_empty());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(
        &path,
        "learning_rate = 0.002\nepochs = 7  # trailing comment\nmask_shape = gaussian\nraun_weight = 0.0\n",
    )
    .unwrap();
    let mut cfg = TrainConfig::from_file(&path).unwrap();
    assert_eq!(cfg.learning_rate, 0.002);
    assert_eq!(cfg.epochs, 7);
    assert!(matches!(cfg.mask_shape, detector::MaskShape::Gaussian));
    assert_eq!(cfg.constraints.raun_weight, 0.0);
    // --set style override
    cfg.set("epochs", "9").unwrap();
    assert_eq!(cfg.epochs, 9);
    assert!(cfg.set("no_such_key", "1").is_err());
    assert!(cfg.set("learning_rate", "fast").is_err());
}

#[test]
fn config_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "learning_rate = -1\n").unwrap();
    assert!(TrainConfig::from_file(&path).is_err());
    let missing = dir.path().join("nope.cfg");
    assert!(TrainConfig::from_file(&missing).is_err());
}
