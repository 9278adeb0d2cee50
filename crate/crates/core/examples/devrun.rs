//! Development driver for the synthetic end-to-end pipeline; prints loss and
//! pseudo-label quality so thresholds can be validated before wiring tests.

use std::time::Instant;

use pfu_core::config::TrainConfig;
use pfu_core::corpus::{generate_synthetic, PointDistribution, SyntheticSpec, TimeSpan};
use pfu_core::detector::{self, MaskShape};
use pfu_core::metrics::{evaluate, DEFAULT_THRESHOLDS};
use pfu_core::pipeline::{simulate_labels, LabelScheme};
use pfu_core::train;

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(30);
    let d_model: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(16);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0);
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.0004);

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
    let t0 = Instant::now();
    let corpus = generate_synthetic(&spec).unwrap();
    let labels = simulate_labels(
        &corpus,
        LabelScheme::Point(PointDistribution::Uniform),
        spec.seed,
    );
    let train_corpus: Vec<_> = corpus
        .iter()
        .zip(&labels)
        .map(|((r, _), l)| (r.clone(), *l))
        .collect();

    let mut cfg = TrainConfig::default();
    cfg.epochs = epochs;
    cfg.d_model = d_model;
    cfg.seed = seed;
    cfg.learning_rate = lr;
    println!("generated in {:?}", t0.elapsed());

    let t1 = Instant::now();
    let outcome = train::train_partial(&train_corpus, &cfg).unwrap();
    println!("trained {} steps in {:?}", outcome.curves.len(), t1.elapsed());
    println!("clusters: {}", outcome.clusters.k);
    let k = outcome.curves.len();
    let head: f64 = outcome.curves[..7].iter().map(|c| c.parts.total).sum::<f64>() / 7.0;
    let tail: f64 = outcome.curves[k - 7..].iter().map(|c| c.parts.total).sum::<f64>() / 7.0;
    println!("first-epoch loss {head:.4}  last-epoch loss {tail:.4}  ratio {:.3}", tail / head);

    let enc_cfg = train::encoder_config(&train_corpus, &cfg).unwrap();
    // diagnostic: how separable are fused rows inside vs outside the event
    {
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut within = 0.0;
        let mut across = 0.0;
        let mut n = 0;
        for (r, gt) in corpus.iter().take(20).map(|(r, _)| r).zip(corpus.iter().take(20).map(|(_, a)| a.span)) {
            let pair = pfu_core::encoder::encode(r, &outcome.params, &enc_cfg).unwrap();
            let rows: Vec<Vec<f64>> = (0..r.valid_frames)
                .map(|t| (0..cfg.d_model).map(|c| pair.v.get(t, c)).collect())
                .collect();
            let inside: Vec<usize> = (0..r.valid_frames)
                .filter(|&t| {
                    let x = (t as f64 + 0.5) / r.valid_frames as f64;
                    x >= gt.s && x <= gt.e
                })
                .collect();
            let outside: Vec<usize> =
                (0..r.valid_frames).filter(|t| !inside.contains(t)).collect();
            if inside.len() < 2 || outside.is_empty() {
                continue;
            }
            within += cos(&rows[inside[0]], &rows[inside[1]]);
            across += cos(&rows[inside[0]], &rows[outside[0]]);
            n += 1;
        }
        println!(
            "fused row cos: within-event {:.3} across {:.3}",
            within / n as f64,
            across / n as f64
        );
    }
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
    let parts = &outcome.curves[outcome.curves.len() - 1].parts;
    println!(
        "final parts: raml {:.3} raun {:.3} erml {:.3} erun {:.3} grnd {:.4}",
        parts.raml, parts.raun, parts.erml, parts.erun, parts.grnd
    );
    for i in 0..8 {
        let p = &pseudo[i];
        let g = corpus[i].1.span;
        let a = labels[i].span.center();
        println!(
            "  {}: pred ({:.3},{:.3}) gt ({:.3},{:.3}) anchor {:.3}",
            p.id, p.s, p.e, g.s, g.e, a
        );
    }
    let mean_w: f64 = pseudo.iter().map(|p| p.e - p.s).sum::<f64>() / pseudo.len() as f64;
    let mean_gt_w: f64 = corpus.iter().map(|(_, a)| a.span.width()).sum::<f64>() / corpus.len() as f64;
    println!("mean pred width {mean_w:.3} vs gt width {mean_gt_w:.3}");
    let report = evaluate(&preds, &gt, &DEFAULT_THRESHOLDS).unwrap();
    println!("pseudo mIoU {:.4}", report.mean_iou);
    for r in &report.recall_at {
        println!("  R@{:.1} = {:.3}", r.iou, r.recall);
    }

    // full branch on pseudo labels, tested on a held-out split
    let t2 = Instant::now();
    let mut full_cfg = cfg.clone();
    full_cfg.epochs = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.epochs);
    if let Some(lr) = std::env::args().nth(6).and_then(|s| s.parse().ok()) {
        full_cfg.learning_rate = lr;
    }
    let full = train::train_full(&train_corpus, &pseudo, &outcome.params, &full_cfg).unwrap();
    println!(
        "full branch {} steps in {:?}, degenerate {}",
        full.curves.len(),
        t2.elapsed(),
        full.degenerate_targets
    );
    let train_full_preds: Vec<(String, TimeSpan)> =
        train::infer_full(&train_corpus, &full.params, &cfg)
            .unwrap()
            .into_iter()
            .map(|(id, p)| (id, p.span))
            .collect();
    let train_full_report = evaluate(&train_full_preds, &gt, &DEFAULT_THRESHOLDS).unwrap();
    println!("full-branch train mIoU {:.4}", train_full_report.mean_iou);
    for (id, p) in &train_full_preds[..6] {
        let g = corpus.iter().find(|(r, _)| &r.id == id).unwrap().1.span;
        println!("  {id}: full ({:.3},{:.3}) gt ({:.3},{:.3})", p.s, p.e, g.s, g.e);
    }
    let test = pfu_core::corpus::generate_synthetic_range(&spec, spec.n_samples, 50).unwrap();
    let test_preds: Vec<(String, TimeSpan)> = train::infer_full(&test, &full.params, &cfg)
        .unwrap()
        .into_iter()
        .map(|(id, p)| (id, p.span))
        .collect();
    let test_gt: Vec<(String, TimeSpan)> = test
        .iter()
        .map(|(r, a)| (r.id.clone(), a.span))
        .collect();
    let test_report = evaluate(&test_preds, &test_gt, &DEFAULT_THRESHOLDS).unwrap();
    println!("full-branch test mIoU {:.4}", test_report.mean_iou);
    println!("total {:?}", t0.elapsed());
}
