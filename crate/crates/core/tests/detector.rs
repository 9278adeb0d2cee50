use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfu_core::corpus::{AnnKind, Annotation, LabelDistribution, TimeSpan};
use pfu_core::detector::{
    self, build_mask, decode_event, frame_positions, grounding_loss_value, pool_fg_bg_values,
    span_from_offsets, MaskShape, SoftMask,
};
use pfu_core::tape::Tape;
use pfu_core::tensor::Tensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn point(t: f64) -> Annotation {
    Annotation {
        kind: AnnKind::Point,
        span: TimeSpan { s: t, e: t },
        source: LabelDistribution::Manual,
    }
}

fn clip(s: f64, e: f64) -> Annotation {
    Annotation {
        kind: AnnKind::Clip,
        span: TimeSpan { s, e },
        source: LabelDistribution::Manual,
    }
}

#[test]
fn decode_event_arithmetic() {
    let est = decode_event(0.5, 0.1, 0.4);
    assert!((est.p - 0.6).abs() < 1e-12);
    assert!((est.span.s - 0.4).abs() < 1e-12);
    assert!((est.span.e - 0.8).abs() < 1e-12);
}

#[test]
fn decode_event_clamps_at_boundary() {
    let est = decode_event(0.05, -0.2, 0.5);
    assert_eq!(est.p, 0.0);
    assert_eq!(est.span.s, 0.0);
    assert!((est.span.e - 0.25).abs() < 1e-12);
}

#[test]
fn span_vars_match_decode_event() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t_c = rng.gen_range(0.0..1.0);
        let delta = rng.gen_range(-0.5..0.5);
        let ell = rng.gen_range(0.01..1.0);
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::scalar(delta));
        let l = tape.constant(Tensor::scalar(ell));
        let vars = span_from_offsets(&mut tape, t_c, d, l);
        let est = vars.estimate(&tape);
        let oracle = decode_event(t_c, delta, ell);
        assert!((est.p - oracle.p).abs() < 1e-12);
        assert!((est.span.s - oracle.span.s).abs() < 1e-12);
        assert!((est.span.e - oracle.span.e).abs() < 1e-12);
    }
}

#[test]
fn plateau_mask_closed_form_at_edge() {
    // place a frame center exactly at s_hat: T=10, frame 2 center = 0.25
    let span = TimeSpan { s: 0.25, e: 0.75 };
    let mask = build_mask(&span, 10, 10, MaskShape::Plateau { steepness: 60.0 });
    let expected = 0.5 * sigmoid(60.0 * 0.5);
    assert!((mask.m[2] - expected).abs() < 1e-12);
    assert!((expected - 0.5).abs() < 1e-9); // sigma(30) ~ 1
}

#[test]
fn plateau_mask_saturates_at_center() {
    let span = TimeSpan { s: 0.15, e: 0.95 };
    // T=10: frame 5 center = 0.55 = span center
    let mask = build_mask(&span, 10, 10, MaskShape::Plateau { steepness: 500.0 });
    assert!((mask.m[5] - 1.0).abs() < 1e-9);
}

#[test]
fn gaussian_mask_peaks_at_center() {
    let span = TimeSpan { s: 0.15, e: 0.95 };
    let mask = build_mask(&span, 10, 10, MaskShape::Gaussian);
    assert!((mask.m[5] - 1.0).abs() < 1e-12);
    let x = frame_positions(10);
    let sigma = (span.e - span.s) / 2.0;
    for t in 0..10 {
        let expected = (-(x[t] - 0.55).powi(2) / (2.0 * sigma * sigma)).exp();
        assert!((mask.m[t] - expected).abs() < 1e-12);
    }
}

#[test]
fn masks_are_zero_on_padding_and_bounded() {
    let span = TimeSpan { s: 0.2, e: 0.6 };
    for shape in [MaskShape::Plateau { steepness: 40.0 }, MaskShape::Gaussian] {
        let mask = build_mask(&span, 12, 8, shape);
        assert_eq!(mask.m.len(), 12);
        for t in 8..12 {
            assert_eq!(mask.m[t], 0.0);
        }
        for t in 0..8 {
            assert!((0.0..=1.0).contains(&mask.m[t]));
        }
    }
}

#[test]
fn plateau_mask_is_unimodal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s = rng.gen_range(0.0..0.8);
        let e = rng.gen_range(s..1.0);
        let span = TimeSpan { s, e };
        let k = [20.0, 40.0, 60.0][rng.gen_range(0..3)];
        let t = 200;
        let mask = build_mask(&span, t, t, MaskShape::Plateau { steepness: k });
        let p = span.s + (span.e - span.s) / 2.0;
        let x = frame_positions(t);
        for w in 0..t - 1 {
            if x[w + 1] <= p {
                assert!(mask.m[w + 1] >= mask.m[w] - 1e-12);
            }
            if x[w] >= p {
                assert!(mask.m[w + 1] <= mask.m[w] + 1e-12);
            }
        }
    }
}

#[test]
fn pooling_by_hand_two_frames() {
    let v = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let mask = SoftMask {
        m: vec![1.0, 0.0],
        shape: MaskShape::Gaussian,
    };
    let pooled = pool_fg_bg_values(&v, &mask, 2);
    assert_eq!(pooled.v_fg, vec![0.5, 1.0]);
    assert_eq!(pooled.v_bg, vec![1.5, 2.0]);
}

#[test]
fn zero_mask_pools_everything_to_background() {
    let v = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mask = SoftMask {
        m: vec![0.0; 3],
        shape: MaskShape::Gaussian,
    };
    let pooled = pool_fg_bg_values(&v, &mask, 3);
    assert_eq!(pooled.v_fg, vec![0.0, 0.0]);
    assert!((pooled.v_bg[0] - 3.0).abs() < 1e-12);
    assert!((pooled.v_bg[1] - 4.0).abs() < 1e-12);
}

#[test]
fn pooling_identity_over_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t_max = rng.gen_range(2..12);
        let tv = rng.gen_range(1..=t_max);
        let d = rng.gen_range(1..6);
        let mut v = Tensor::zeros(t_max, d);
        for r in 0..tv {
            for c in 0..d {
                v.set(r, c, rng.gen_range(-2.0..2.0));
            }
        }
        let mut m = vec![0.0; t_max];
        for x in m.iter_mut().take(tv) {
            *x = rng.gen_range(0.0..1.0);
        }
        let mask = SoftMask {
            m,
            shape: MaskShape::Gaussian,
        };
        let pooled = pool_fg_bg_values(&v, &mask, tv);
        for c in 0..d {
            let mean: f64 = (0..tv).map(|r| v.get(r, c)).sum::<f64>() / tv as f64;
            assert!((pooled.v_fg[c] + pooled.v_bg[c] - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn grounding_loss_hand_values() {
    assert_eq!(
        grounding_loss_value(&clip(0.4, 0.5), &TimeSpan { s: 0.3, e: 0.8 }).unwrap(),
        0.0
    );
    let l = grounding_loss_value(&clip(0.4, 0.6), &TimeSpan { s: 0.5, e: 0.9 }).unwrap();
    assert!((l - 0.1).abs() < 1e-12);
    assert_eq!(
        grounding_loss_value(&point(0.2), &TimeSpan { s: 0.2, e: 0.7 }).unwrap(),
        0.0
    );
}

#[test]
fn grounding_loss_rejects_full_annotation() {
    let full = Annotation::full(TimeSpan { s: 0.1, e: 0.9 });
    assert!(grounding_loss_value(&full, &TimeSpan { s: 0.0, e: 1.0 }).is_err());
}

#[test]
fn grounding_loss_zero_iff_containment_on_grid() {
    // all span pairs on a 20-frame grid
    let n = 20;
    for a in 0..=n {
        for b in a..=n {
            let partial = clip(a as f64 / n as f64, b as f64 / n as f64);
            for c in 0..=n {
                for d in c..=n {
                    let span = TimeSpan {
                        s: c as f64 / n as f64,
                        e: d as f64 / n as f64,
                    };
                    let l = grounding_loss_value(&partial, &span).unwrap();
                    let contained = span.contains(&partial.span);
                    assert_eq!(l == 0.0, contained, "partial {partial:?} span {span:?}");
                    assert!(l >= 0.0);
                }
            }
        }
    }
}

#[test]
fn mask_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let s0 = rng.gen_range(0.05..0.5);
        let e0 = rng.gen_range(s0 + 0.1..0.95);
        let shape = if case % 2 == 0 {
            MaskShape::Plateau { steepness: 40.0 }
        } else {
            MaskShape::Gaussian
        };
        let tv = 6;
        let weights: Vec<f64> = (0..tv).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |s: f64, e: f64| -> f64 {
            let mask = build_mask(&TimeSpan { s, e }, tv, tv, shape);
            mask.m.iter().zip(&weights).map(|(m, w)| m * w).sum()
        };
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(s0));
        let e = tape.leaf(Tensor::scalar(e0));
        let m = detector::build_mask_vars(&mut tape, s, e, tv, tv, shape);
        let w = tape.constant(Tensor::row(weights.clone()));
        let prod = tape.mul(m, w);
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss);
        let gs = grads.wrt(&tape, s).item();
        let ge = grads.wrt(&tape, e).item();
        let h = 1e-6;
        let fd_s = (eval(s0 + h, e0) - eval(s0 - h, e0)) / (2.0 * h);
        let fd_e = (eval(s0, e0 + h) - eval(s0, e0 - h)) / (2.0 * h);
        for (a, f) in [(gs, fd_s), (ge, fd_e)] {
            let denom = a.abs().max(f.abs()).max(1.0);
            assert!((a - f).abs() / denom < 1e-4, "case {case}: {a} vs {f}");
        }
    }
}
