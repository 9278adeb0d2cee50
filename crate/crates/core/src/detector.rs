//! Anchor-based event detection.
//!
//! The detector pools fused video rows with a learned attention probe, maps
//! them through a two-head perceptron to a center offset and event width,
//! decodes the span around the seed anchor, builds a differentiable temporal
//! mask, and pools event/background features.

use serde::{Deserialize, Serialize};

use crate::corpus::{Annotation, FeatureRecord, PseudoLabel, TimeSpan};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{BoundParams, Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NEG_INF: f64 = -1e9;
/// Floor for the Gaussian mask sigma when the span degenerates to a point.
const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "shape")]
pub enum MaskShape {
    Plateau { steepness: f64 },
    Gaussian,
}

impl Default for MaskShape {
    fn default() -> Self {
        MaskShape::Plateau { steepness: 60.0 }
    }
}

/// Detector output for one sample.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EventEstimate {
    pub delta: f64,
    pub ell: f64,
    pub p: f64,
    pub span: TimeSpan,
}

/// Detector output as tape variables (all 1x1).
pub struct EventVars {
    pub delta: Var,
    pub ell: Var,
    pub p: Var,
    pub s: Var,
    pub e: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    /// [T_max] mask values; padded frames are zero.
    pub m: Vec<f64>,
    pub shape: MaskShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatures {
    pub v_fg: Vec<f64>,
    pub v_bg: Vec<f64>,
}

/// Initialize detector parameters under the `det.` prefix.
pub fn init_params(d_model: usize, init: &mut Init) -> ParamStore {
    let mut store = ParamStore::new();
    // the probe is a learned map of the pooled query, so frame attention is
    // query-conditioned; identity init makes the initial scores plain
    // query-frame dot products
    let mut probe = init.zeros(d_model, d_model);
    for i in 0..d_model {
        probe.data[i * d_model + i] = 1.0;
    }
    store.insert("det.probe.w", probe);
    // +2: the attention-pooled frame position and the anchor are appended
    store.insert("det.mlp1.w", init.linear(d_model + 2, d_model));
    store.insert("det.mlp1.b", init.zeros(1, d_model));
    // zero head init: training starts from delta = 0, ell = 0.5
    store.insert("det.mlp2.w", init.zeros(d_model, 2));
    store.insert("det.mlp2.b", init.zeros(1, 2));
    store
}

/// Decode (delta, ell) around an anchor: p = clamp(t_c + delta), the span is
/// p -+ ell/2, clamped to [0, 1].
pub fn decode_event(t_c: f64, delta: f64, ell: f64) -> EventEstimate {
    let p = (t_c + delta).clamp(0.0, 1.0);
    EventEstimate {
        delta,
        ell,
        p,
        span: TimeSpan {
            s: (p - ell / 2.0).clamp(0.0, 1.0),
            e: (p + ell / 2.0).clamp(0.0, 1.0),
        },
    }
}

/// Map fused video features to an event estimate around anchor `t_c`.
pub fn predict_event(
    tape: &mut Tape,
    v: Var,
    q: Var,
    valid_frames: usize,
    t_c: f64,
    bound: &BoundParams,
) -> EventVars {
    let rows = tape.value(v).rows;
    assert!(valid_frames >= 1 && valid_frames <= rows);

    let probe = {
        let w = bound.var("det.probe.w");
        let p = tape.matmul(q, w);
        tape.transpose(p)
    };
    let scores = tape.matmul(v, probe);
    let scores_t = tape.transpose(scores);
    let mut mask = Tensor::zeros(1, rows);
    for c in valid_frames..rows {
        mask.data[c] = NEG_INF;
    }
    let attn = tape.row_softmax(scores_t, Some(mask));
    let pooled = tape.matmul(attn, v);
    // pool frame positions with the same attention: a soft position estimate
    let mut xcol = Tensor::zeros(rows, 1);
    for (t, x) in frame_positions(valid_frames).into_iter().enumerate() {
        xcol.data[t] = x;
    }
    let xcol = tape.constant(xcol);
    let pos_est = tape.matmul(attn, xcol);
    let anchor_in = tape.constant(Tensor::scalar(t_c));
    let pooled = tape.concat_cols(&[pooled, pos_est, anchor_in]);

    let h = {
        let m = tape.matmul(pooled, bound.var("det.mlp1.w"));
        let b = tape.add_row(m, bound.var("det.mlp1.b"));
        tape.relu(b)
    };
    let raw = {
        let m = tape.matmul(h, bound.var("det.mlp2.w"));
        tape.add_row(m, bound.var("det.mlp2.b"))
    };
    let raw_delta = tape.index(raw, 0, 0);
    let raw_ell = tape.index(raw, 0, 1);
    let t_delta = tape.tanh(raw_delta);
    let refine = tape.scale(t_delta, 0.5);
    // the soft-argmax seeds the offset; the head only refines it
    let anchor_s = tape.scalar(t_c);
    let drift = tape.sub(pos_est, anchor_s);
    let delta = tape.add(refine, drift);
    let ell = tape.sigmoid(raw_ell);

    span_from_offsets(tape, t_c, delta, ell)
}

/// Decode span variables from (delta, ell) around the anchor.
pub fn span_from_offsets(tape: &mut Tape, t_c: f64, delta: Var, ell: Var) -> EventVars {
    let anchor = tape.scalar(t_c);
    let p_raw = tape.add(anchor, delta);
    let p = tape.clamp01(p_raw);
    let half = tape.scale(ell, 0.5);
    let s_raw = tape.sub(p, half);
    let e_raw = tape.add(p, half);
    EventVars {
        delta,
        ell,
        p,
        s: tape.clamp01(s_raw),
        e: tape.clamp01(e_raw),
    }
}

impl EventVars {
    pub fn estimate(&self, tape: &Tape) -> EventEstimate {
        EventEstimate {
            delta: tape.value(self.delta).item(),
            ell: tape.value(self.ell).item(),
            p: tape.value(self.p).item(),
            span: TimeSpan {
                s: tape.value(self.s).item(),
                e: tape.value(self.e).item(),
            },
        }
    }
}

/// Frame-center positions of the valid frames, in normalized time.
pub fn frame_positions(valid_frames: usize) -> Vec<f64> {
    (0..valid_frames)
        .map(|t| (t as f64 + 0.5) / valid_frames as f64)
        .collect()
}

/// Differentiable temporal mask over `t_max` frames from span variables.
/// Padded frames (beyond `valid_frames`) are zero.
pub fn build_mask_vars(
    tape: &mut Tape,
    s: Var,
    e: Var,
    t_max: usize,
    valid_frames: usize,
    shape: MaskShape,
) -> Var {
    let x = tape.constant(Tensor::row(frame_positions(valid_frames)));
    let tv = valid_frames;
    let m_valid = match shape {
        MaskShape::Plateau { steepness } => {
            let sb = tape.broadcast_scalar(s, 1, tv);
            let eb = tape.broadcast_scalar(e, 1, tv);
            let rise = {
                let d = tape.sub(x, sb);
                let k = tape.scale(d, steepness);
                tape.sigmoid(k)
            };
            let fall = {
                let d = tape.sub(eb, x);
                let k = tape.scale(d, steepness);
                tape.sigmoid(k)
            };
            tape.mul(rise, fall)
        }
        MaskShape::Gaussian => {
            let sum = tape.add(s, e);
            let p = tape.scale(sum, 0.5);
            let width = tape.sub(e, s);
            let half = tape.scale(width, 0.5);
            let floor = tape.scalar(SIGMA_FLOOR);
            let sigma = tape.max2(half, floor);
            let pb = tape.broadcast_scalar(p, 1, tv);
            let sg = tape.broadcast_scalar(sigma, 1, tv);
            let d = tape.sub(x, pb);
            let d2 = tape.mul(d, d);
            let s2 = tape.mul(sg, sg);
            let s2x2 = tape.scale(s2, 2.0);
            let z = tape.div(d2, s2x2);
            let nz = tape.neg(z);
            tape.exp(nz)
        }
    };
    if valid_frames == t_max {
        m_valid
    } else {
        let pad = tape.constant(Tensor::zeros(1, t_max - valid_frames));
        tape.concat_cols(&[m_valid, pad])
    }
}

/// Evaluate a mask for a fixed span outside any training tape.
pub fn build_mask(span: &TimeSpan, t_max: usize, valid_frames: usize, shape: MaskShape) -> SoftMask {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::scalar(span.s));
    let e = tape.constant(Tensor::scalar(span.e));
    let m = build_mask_vars(&mut tape, s, e, t_max, valid_frames, shape);
    SoftMask {
        m: tape.value(m).data.clone(),
        shape,
    }
}

/// Foreground/background pooling: v_fg = (1/T) sum m_t v_t over valid frames,
/// v_bg the complement, so v_fg + v_bg equals the mean of the valid rows.
pub fn pool_fg_bg(tape: &mut Tape, v: Var, mask: Var, valid_frames: usize) -> (Var, Var) {
    let t_max = tape.value(v).rows;
    assert_eq!(tape.value(mask).cols, t_max, "mask length mismatch");
    let inv = 1.0 / valid_frames as f64;
    let fg = {
        let p = tape.matmul(mask, v);
        tape.scale(p, inv)
    };
    let mut ones = Tensor::zeros(1, t_max);
    for c in 0..valid_frames {
        ones.data[c] = 1.0;
    }
    let ones = tape.constant(ones);
    let complement = tape.sub(ones, mask);
    let bg = {
        let p = tape.matmul(complement, v);
        tape.scale(p, inv)
    };
    (fg, bg)
}

/// Plain-value pooling for callers outside a tape.
pub fn pool_fg_bg_values(v: &Tensor, mask: &SoftMask, valid_frames: usize) -> PooledFeatures {
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone());
    let mv = tape.constant(Tensor::row(mask.m.clone()));
    let (fg, bg) = pool_fg_bg(&mut tape, vv, mv, valid_frames);
    PooledFeatures {
        v_fg: tape.value(fg).data.clone(),
        v_bg: tape.value(bg).data.clone(),
    }
}

/// Partial grounding loss: max(t_e - e_hat, s_hat - t_s, 0). Zero exactly when
/// the annotated clip is contained in the predicted span.
pub fn grounding_loss(
    tape: &mut Tape,
    partial: &Annotation,
    s_hat: Var,
    e_hat: Var,
) -> Result<Var> {
    if !partial.is_partial() {
        return Err(Error::FullAnnotationInPartialContext);
    }
    let t_s = tape.scalar(partial.span.s);
    let t_e = tape.scalar(partial.span.e);
    let over = tape.sub(t_e, e_hat);
    let under = tape.sub(s_hat, t_s);
    Ok(tape.hinge_max(over, under))
}

/// Plain-value grounding loss.
pub fn grounding_loss_value(partial: &Annotation, span: &TimeSpan) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::scalar(span.s));
    let e = tape.constant(Tensor::scalar(span.e));
    let l = grounding_loss(&mut tape, partial, s, e)?;
    Ok(tape.value(l).item())
}

/// Run the detector on one encoded sample and emit its pseudo-label. The
/// anchor is the center of the sample's partial annotation; the score is the
/// mean mask value inside the decoded span.
pub fn pseudo_label_for(
    record: &FeatureRecord,
    partial: &Annotation,
    store: &ParamStore,
    cfg: &EncoderConfig,
    shape: MaskShape,
) -> Result<PseudoLabel> {
    if !partial.is_partial() {
        return Err(Error::FullAnnotationInPartialContext);
    }
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let (v0, q0) = encoder::project(&mut tape, record, &bound, cfg)?;
    let fused = encoder::fuse(
        &mut tape,
        v0,
        q0,
        record.valid_frames,
        record.valid_tokens,
        &bound,
        cfg,
    )?;
    let event = predict_event(
        &mut tape,
        fused.v,
        fused.q,
        record.valid_frames,
        partial.span.center(),
        &bound,
    );
    let est = event.estimate(&tape);
    let mask = build_mask_vars(
        &mut tape,
        event.s,
        event.e,
        cfg.t_max,
        record.valid_frames,
        shape,
    );
    let m = tape.value(mask);
    let positions = frame_positions(record.valid_frames);
    let inside: Vec<f64> = positions
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= est.span.s && x <= est.span.e)
        .map(|(t, _)| m.data[t])
        .collect();
    let score = if inside.is_empty() {
        0.0
    } else {
        inside.iter().sum::<f64>() / inside.len() as f64
    };
    Ok(PseudoLabel {
        id: record.id.clone(),
        s: est.span.s,
        e: est.span.e,
        score,
        duration_s: record.duration_s,
    })
}

/// Pseudo-labels for an entire training corpus; deterministic given params.
pub fn emit_pseudo_labels(
    corpus: &[(FeatureRecord, Annotation)],
    store: &ParamStore,
    cfg: &EncoderConfig,
    shape: MaskShape,
) -> Result<Vec<PseudoLabel>> {
    corpus
        .iter()
        .map(|(r, a)| pseudo_label_for(r, a, store, cfg, shape))
        .collect()
}
