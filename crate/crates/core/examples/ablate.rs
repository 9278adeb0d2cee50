//! Directional ablations on the synthetic corpus: pseudo-label quality of the
//! full quadruple loss vs raml-only, plateau vs Gaussian masks, and Gaussian
//! vs Uniform point labels, averaged over seeds.

use pfu_core::config::TrainConfig;
use pfu_core::corpus::{generate_synthetic, PointDistribution, SyntheticSpec, TimeSpan};
use pfu_core::detector::{self, MaskShape};
use pfu_core::metrics::{evaluate, DEFAULT_THRESHOLDS};
use pfu_core::pipeline::{simulate_labels, LabelScheme};
use pfu_core::train;

fn run_arm(cfg: &TrainConfig, scheme: LabelScheme) -> f64 {
    let spec = SyntheticSpec {
        n_samples: 200,
        t: 48,
        m: 6,
        d_v: 16,
        d_q: 16,
        concept_count: 4,
        noise_sigma: 0.1,
        min_width: 0.15,
        max_width: 0.5,
        seed: 7,
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let labels = simulate_labels(&corpus, scheme, spec.seed);
    let train_corpus: Vec<_> = corpus
        .iter()
        .zip(&labels)
        .map(|((r, _), l)| (r.clone(), *l))
        .collect();
    let outcome = train::train_partial(&train_corpus, cfg).unwrap();
    let enc_cfg = train::encoder_config(&train_corpus, cfg).unwrap();
    let pseudo =
        detector::emit_pseudo_labels(&train_corpus, &outcome.params, &enc_cfg, cfg.mask_shape)
            .unwrap();
    let preds: Vec<(String, TimeSpan)> = pseudo
        .iter()
        .map(|p| (p.id.clone(), TimeSpan { s: p.s, e: p.e }))
        .collect();
    let gt: Vec<(String, TimeSpan)> = corpus
        .iter()
        .map(|(r, a)| (r.id.clone(), a.span))
        .collect();
    evaluate(&preds, &gt, &DEFAULT_THRESHOLDS).unwrap().mean_iou
}

fn main() {
    let seeds = [0u64, 1, 2];
    let base = || {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 30;
        cfg.d_model = 16;
        cfg.learning_rate = 0.002;
        cfg
    };
    let mean = |f: &dyn Fn(u64) -> f64| -> f64 {
        seeds.iter().map(|&s| f(s)).sum::<f64>() / seeds.len() as f64
    };

    let quad = mean(&|s| {
        let mut cfg = base();
        cfg.seed = s;
        run_arm(&cfg, LabelScheme::Point(PointDistribution::Uniform))
    });
    println!("quadruple        {quad:.4}");
    let raml_only = mean(&|s| {
        let mut cfg = base();
        cfg.seed = s;
        cfg.constraints.raun_weight = 0.0;
        cfg.constraints.lambda = 0.0;
        run_arm(&cfg, LabelScheme::Point(PointDistribution::Uniform))
    });
    println!("raml-only        {raml_only:.4}  (quad - ramlOnly = {:+.4})", quad - raml_only);

    let gauss_mask = mean(&|s| {
        let mut cfg = base();
        cfg.seed = s;
        cfg.mask_shape = MaskShape::Gaussian;
        run_arm(&cfg, LabelScheme::Point(PointDistribution::Uniform))
    });
    println!("gaussian mask    {gauss_mask:.4}  (plateau - gaussian = {:+.4})", quad - gauss_mask);

    let gauss_labels = mean(&|s| {
        let mut cfg = base();
        cfg.seed = s;
        run_arm(&cfg, LabelScheme::Point(PointDistribution::Gaussian))
    });
    println!("gaussian labels  {gauss_labels:.4}  (gaussian - uniform = {:+.4})", gauss_labels - quad);
}
