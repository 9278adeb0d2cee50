use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfu_core::corpus::TimeSpan;
use pfu_core::metrics::{evaluate, iou, DEFAULT_THRESHOLDS};

fn span(s: f64, e: f64) -> TimeSpan {
    TimeSpan { s, e }
}

#[test]
fn iou_hand_values() {
    assert_eq!(iou(&span(0.2, 0.6), &span(0.2, 0.6)), 1.0);
    assert_eq!(iou(&span(0.0, 0.4), &span(0.6, 1.0)), 0.0);
    let v = iou(&span(0.2, 0.6), &span(0.4, 0.8));
    assert!((v - 0.2 / 0.6).abs() < 1e-12);
    // zero-length union
    assert_eq!(iou(&span(0.5, 0.5), &span(0.5, 0.5)), 0.0);
}

#[test]
fn perfect_predictions_score_one() {
    let gt: Vec<(String, TimeSpan)> = (0..5)
        .map(|i| (format!("s{i}"), span(0.1 * i as f64, 0.1 * i as f64 + 0.2)))
        .collect();
    let report = evaluate(&gt, &gt, &DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(report.mean_iou, 1.0);
    assert_eq!(report.n_samples, 5);
    for r in &report.recall_at {
        assert_eq!(r.recall, 1.0);
    }
}

/// Scalar reference: straight loops, no shared code with the library.
fn reference_eval(
    pairs: &[(TimeSpan, TimeSpan)],
    thresholds: &[f64],
) -> (Vec<f64>, f64) {
    let mut ious = Vec::new();
    for (p, g) in pairs {
        let inter = (p.e.min(g.e) - p.s.max(g.s)).max(0.0);
        let union = (p.e.max(g.e) - p.s.min(g.s)).max(0.0);
        ious.push(if union > 0.0 { inter / union } else { 0.0 });
    }
    let recalls = thresholds
        .iter()
        .map(|&m| ious.iter().filter(|&&x| x > m).count() as f64 / ious.len() as f64)
        .collect();
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    (recalls, miou)
}

#[test]
fn evaluate_matches_scalar_reference_on_200_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..200 {
        let id = format!("s{i}");
        let ps = rng.gen_range(0.0..0.9);
        let p = span(ps, rng.gen_range(ps..1.0));
        let gs = rng.gen_range(0.0..0.9);
        let g = span(gs, rng.gen_range(gs..1.0));
        preds.push((id.clone(), p));
        gts.push((id, g));
        pairs.push((p, g));
    }
    let report = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap();
    let (recalls, miou) = reference_eval(&pairs, &DEFAULT_THRESHOLDS);
    assert_eq!(report.mean_iou, miou);
    for (r, want) in report.recall_at.iter().zip(&recalls) {
        assert_eq!(r.recall, *want);
    }
}

#[test]
fn crafted_ious_give_hand_counted_recalls() {
    // IoUs 0.2, 0.4, 0.6, 0.8 via spans of width 1 shifted against (0,1)
    // iou(shifted by d) = (1-d)/(1+d); solve d for each target
    let targets = [0.2, 0.4, 0.6, 0.8];
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, &t) in targets.iter().enumerate() {
        let d = (1.0 - t) / (1.0 + t);
        // use duration-2 normalized halves to stay in [0,1]
        let g = span(0.0, 0.5);
        let p = span(d * 0.5, 0.5 + d * 0.5);
        assert!((iou(&p, &g) - t).abs() < 1e-9);
        preds.push((format!("s{i}"), p));
        gts.push((format!("s{i}"), g));
    }
    let report = evaluate(&preds, &gts, &[0.3, 0.5]).unwrap();
    assert_eq!(report.recall_at[0].recall, 0.75);
    assert_eq!(report.recall_at[1].recall, 0.5);
}

#[test]
fn recall_is_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for i in 0..n {
            let id = format!("s{i}");
            let ps = rng.gen_range(0.0..0.9);
            let gs = rng.gen_range(0.0..0.9);
            preds.push((id.clone(), span(ps, rng.gen_range(ps..1.0))));
            gts.push((id, span(gs, rng.gen_range(gs..1.0))));
        }
        let report = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap();
        for w in report.recall_at.windows(2) {
            assert!(w[1].recall <= w[0].recall);
        }
        assert!((0.0..=1.0).contains(&report.mean_iou));
    }
}

#[test]
fn strict_inequality_at_threshold() {
    let preds = vec![("a".to_string(), span(0.0, 0.5))];
    let gts = vec![("a".to_string(), span(0.0, 0.5))];
    // IoU is exactly 1.0; thresholds below 1 count, 1.0 itself does not
    let report = evaluate(&preds, &gts, &[0.99, 1.0]).unwrap();
    assert_eq!(report.recall_at[0].recall, 1.0);
    assert_eq!(report.recall_at[1].recall, 0.0);
}

#[test]
fn id_mismatch_is_reported() {
    let preds = vec![("a".to_string(), span(0.0, 0.5))];
    let gts = vec![("b".to_string(), span(0.0, 0.5))];
    assert!(evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).is_err());
    let gts2 = vec![
        ("a".to_string(), span(0.0, 0.5)),
        ("b".to_string(), span(0.0, 0.5)),
    ];
    assert!(evaluate(&preds, &gts2, &DEFAULT_THRESHOLDS).is_err());
}
