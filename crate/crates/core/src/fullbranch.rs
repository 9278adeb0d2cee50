//! Span-based fully-supervised branch trained on pseudo-labels.
//!
//! A shared per-frame trunk feeds three heads: start logits, end logits, and a
//! per-frame foreground logit. Start/end probabilities are softmaxed over the
//! valid frames; decoding takes the joint argmax over ordered (start, end)
//! pairs and scores the span by its average foreground probability.

use crate::corpus::TimeSpan;
use crate::error::{Error, Result};
use crate::nn::{BoundParams, Init, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SpanPrediction {
    /// Softmax over valid frames.
    pub p_start: Vec<f64>,
    /// Softmax over valid frames.
    pub p_end: Vec<f64>,
    /// Per-frame foreground probability over valid frames.
    pub p_fg: Vec<f64>,
}

/// Span-head outputs as tape variables, all 1 x valid_frames.
pub struct SpanVars {
    pub start_logits: Var,
    pub end_logits: Var,
    pub fg_logits: Var,
    pub valid_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventPrediction {
    pub span: TimeSpan,
    pub score: f64,
}

/// Initialize full-branch parameters under the `full.` prefix.
pub fn init_params(d_model: usize, init: &mut Init) -> ParamStore {
    let mut store = ParamStore::new();
    // 3 blocks per frame: the frame itself plus its backward and forward
    // neighbor differences, so the per-frame trunk can see boundaries
    store.insert("full.trunk1.w", init.linear(3 * d_model, d_model));
    store.insert("full.trunk1.b", init.zeros(1, d_model));
    store.insert("full.trunk2.w", init.linear(d_model, d_model));
    store.insert("full.trunk2.b", init.zeros(1, d_model));
    for head in ["start", "end", "fg"] {
        store.insert(&format!("full.head_{head}.w"), init.linear(d_model, 1));
        store.insert(&format!("full.head_{head}.b"), init.zeros(1, 1));
    }
    store
}

/// Per-frame heads on fused video features.
pub fn predict_spans(
    tape: &mut Tape,
    v: Var,
    valid_frames: usize,
    bound: &BoundParams,
) -> Result<SpanVars> {
    if valid_frames < 2 {
        return Err(Error::DimensionMismatch(
            "span prediction needs at least 2 valid frames".into(),
        ));
    }
    // boundary features: neighbor differences within the valid range, via
    // constant shift matrices (edges see a zero neighbor)
    let rows = tape.value(v).rows;
    let mut prev = crate::tensor::Tensor::zeros(rows, rows);
    for t in 1..valid_frames {
        prev.set(t, t - 1, 1.0);
    }
    let mut next = crate::tensor::Tensor::zeros(rows, rows);
    for t in 0..valid_frames - 1 {
        next.set(t, t + 1, 1.0);
    }
    let prev = tape.constant(prev);
    let next = tape.constant(next);
    let vp = tape.matmul(prev, v);
    let vn = tape.matmul(next, v);
    let d_back = tape.sub(v, vp);
    let d_fwd = tape.sub(vn, v);
    let x = tape.concat_cols(&[v, d_back, d_fwd]);

    // tanh trunk: smooth everywhere, so finite-difference checks are not
    // tripped by activation kinks
    let h1 = {
        let m = tape.matmul(x, bound.var("full.trunk1.w"));
        let b = tape.add_row(m, bound.var("full.trunk1.b"));
        tape.tanh(b)
    };
    let h2 = {
        let m = tape.matmul(h1, bound.var("full.trunk2.w"));
        let b = tape.add_row(m, bound.var("full.trunk2.b"));
        tape.tanh(b)
    };
    let head = |tape: &mut Tape, name: &str| {
        let m = tape.matmul(h2, bound.var(&format!("full.head_{name}.w")));
        let b = tape.add_row(m, bound.var(&format!("full.head_{name}.b")));
        let t = tape.transpose(b);
        tape.slice_cols(t, 0, valid_frames)
    };
    Ok(SpanVars {
        start_logits: head(tape, "start"),
        end_logits: head(tape, "end"),
        fg_logits: head(tape, "fg"),
        valid_frames,
    })
}

impl SpanVars {
    /// Materialize probabilities for decoding.
    pub fn prediction(&self, tape: &mut Tape) -> SpanPrediction {
        let ps = tape.row_softmax(self.start_logits, None);
        let pe = tape.row_softmax(self.end_logits, None);
        let pf = tape.sigmoid(self.fg_logits);
        SpanPrediction {
            p_start: tape.value(ps).data.clone(),
            p_end: tape.value(pe).data.clone(),
            p_fg: tape.value(pf).data.clone(),
        }
    }
}

/// Map a normalized time to the nearest frame-center index,
/// round(x * valid_frames - 0.5), clamped. Using frame centers keeps the
/// loss targets consistent with `decode_span`, which emits frame-center
/// times.
pub fn frame_index(x: f64, valid_frames: usize) -> usize {
    ((x * valid_frames as f64 - 0.5).round() as i64).clamp(0, valid_frames as i64 - 1) as usize
}

/// Cross-entropy on the start and end frames plus mean binary cross-entropy
/// of the foreground head against the span indicator. Returns the loss and
/// whether the span degenerated to a single frame (end shifted by one).
pub fn full_loss(tape: &mut Tape, spans: &SpanVars, target: &TimeSpan) -> (Var, bool) {
    let tv = spans.valid_frames;
    let i_s = frame_index(target.s, tv);
    let mut i_e = frame_index(target.e, tv);
    let mut degenerate = false;
    if i_e <= i_s {
        degenerate = i_e == i_s;
        i_e = (i_s + 1).min(tv - 1);
    }

    let ce = |tape: &mut Tape, logits: Var, idx: usize| {
        let lse = tape.logsumexp(logits);
        let z = tape.index(logits, 0, idx);
        tape.sub(lse, z)
    };
    let ce_s = ce(tape, spans.start_logits, i_s);
    let ce_e = ce(tape, spans.end_logits, i_e);

    // bce(z, y) = y softplus(-z) + (1 - y) softplus(z)
    let mut y = vec![0.0; tv];
    let mut y_inv = vec![1.0; tv];
    for t in i_s..=i_e {
        y[t] = 1.0;
        y_inv[t] = 0.0;
    }
    let yv = tape.constant(crate::tensor::Tensor::row(y));
    let yiv = tape.constant(crate::tensor::Tensor::row(y_inv));
    let z = spans.fg_logits;
    let nz = tape.neg(z);
    let sp_n = tape.softplus(nz);
    let sp_p = tape.softplus(z);
    let term_pos = tape.mul(yv, sp_n);
    let term_neg = tape.mul(yiv, sp_p);
    let bce_sum = {
        let s = tape.add(term_pos, term_neg);
        tape.sum_all(s)
    };
    let bce = tape.scale(bce_sum, 1.0 / tv as f64);

    let ce_total = tape.add(ce_s, ce_e);
    (tape.add(ce_total, bce), degenerate)
}

/// Joint argmax over ordered pairs i <= j of p_start[i] * p_end[j]; ties break
/// to the smaller i, then the smaller j. The span is the frame-center times of
/// the chosen pair; the score is the mean foreground probability inside it.
pub fn decode_span(pred: &SpanPrediction) -> EventPrediction {
    let tv = pred.p_start.len();
    let (mut best_i, mut best_j, mut best) = (0usize, 0usize, f64::NEG_INFINITY);
    for i in 0..tv {
        for j in i..tv {
            let v = pred.p_start[i] * pred.p_end[j];
            if v > best {
                best = v;
                best_i = i;
                best_j = j;
            }
        }
    }
    let score = pred.p_fg[best_i..=best_j].iter().sum::<f64>() / (best_j - best_i + 1) as f64;
    EventPrediction {
        span: TimeSpan {
            s: (best_i as f64 + 0.5) / tv as f64,
            e: (best_j as f64 + 0.5) / tv as f64,
        },
        score,
    }
}
