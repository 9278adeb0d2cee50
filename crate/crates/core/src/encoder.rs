//! Feature projection and cross-modal fusion.
//!
//! Raw per-modality features are projected to a shared width, given learned
//! positional embeddings, and fused by two cross-modal attention stacks: one
//! treats video rows as attention queries over token keys/values, the other
//! the reverse. Pre-normalization is applied before each sublayer and padded
//! rows are kept at zero throughout, so permuting padding never changes any
//! output.

use crate::corpus::FeatureRecord;
use crate::error::{Error, Result};
use crate::nn::{BoundParams, Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NEG_INF: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub t_max: usize,
    pub m_max: usize,
    pub d_v: usize,
    pub d_q: usize,
}

impl EncoderConfig {
    pub fn new(d_model: usize, t_max: usize, m_max: usize, d_v: usize, d_q: usize) -> Self {
        EncoderConfig {
            d_model,
            layers: 3,
            heads: 4,
            t_max,
            m_max,
            d_v,
            d_q,
        }
    }

    pub fn head_dim(&self) -> usize {
        assert!(
            self.d_model % self.heads == 0,
            "d_model must be divisible by heads"
        );
        self.d_model / self.heads
    }
}

/// Initialize all encoder parameters under the `enc.` prefix.
pub fn init_params(cfg: &EncoderConfig, init: &mut Init) -> ParamStore {
    let d = cfg.d_model;
    let mut store = ParamStore::new();
    store.insert("enc.proj_v.w", init.linear(cfg.d_v, d));
    store.insert("enc.proj_v.b", init.zeros(1, d));
    store.insert("enc.proj_q.w", init.linear(cfg.d_q, d));
    store.insert("enc.proj_q.b", init.zeros(1, d));
    store.insert("enc.pos_v", init.small(cfg.t_max, d, 0.02));
    store.insert("enc.pos_q", init.small(cfg.m_max, d, 0.02));
    for stack in ["v2q", "q2v"] {
        for l in 0..cfg.layers {
            let p = format!("enc.{stack}.l{l}");
            for w in ["wq", "wk", "wv"] {
                store.insert(&format!("{p}.{w}"), init.linear(d, d));
            }
            // small residual-path projections keep early fusion close to the
            // projected inputs instead of a shared cross-modal component
            store.insert(&format!("{p}.wo"), init.small(d, d, 0.05));
            for b in ["bq", "bk", "bv", "bo"] {
                store.insert(&format!("{p}.{b}"), init.zeros(1, d));
            }
            store.insert(&format!("{p}.ff1.w"), init.linear(d, 4 * d));
            store.insert(&format!("{p}.ff1.b"), init.zeros(1, 4 * d));
            store.insert(&format!("{p}.ff2.w"), init.small(4 * d, d, 0.05));
            store.insert(&format!("{p}.ff2.b"), init.zeros(1, d));
        }
    }
    store
}

/// Fused features for one sample, as tape variables.
pub struct Fused {
    /// [T_max x D] fused video rows; padded rows are zero.
    pub v: Var,
    /// [M_max x D] fused token rows; padded rows are zero.
    pub q_mat: Var,
    /// [1 x D] mean of valid token rows.
    pub q: Var,
    /// [1 x D] mean of valid video rows.
    pub v_vd: Var,
    /// Attention distributions (values) of every layer/head, for inspection.
    pub attn: Vec<Tensor>,
}

/// Plain-value counterpart of [`Fused`] for callers outside a tape.
#[derive(Clone, Debug)]
pub struct FusedPair {
    pub v: Tensor,
    pub q_mat: Tensor,
    pub q: Tensor,
    pub v_vd: Tensor,
}

fn row_mask(rows: usize, cols: usize, valid: usize) -> Tensor {
    let mut m = Tensor::zeros(rows, cols);
    for r in 0..valid {
        for c in 0..cols {
            m.set(r, c, 1.0);
        }
    }
    m
}

fn key_mask(rows: usize, cols: usize, valid_cols: usize) -> Tensor {
    let mut m = Tensor::zeros(rows, cols);
    for r in 0..rows {
        for c in valid_cols..cols {
            m.set(r, c, NEG_INF);
        }
    }
    m
}

/// Per-row affine projection of the raw features; padded rows stay zero.
pub fn project(
    tape: &mut Tape,
    record: &FeatureRecord,
    bound: &BoundParams,
    cfg: &EncoderConfig,
) -> Result<(Var, Var)> {
    if record.video_feat.rows != cfg.t_max
        || record.video_feat.cols != cfg.d_v
        || record.query_feat.rows != cfg.m_max
        || record.query_feat.cols != cfg.d_q
    {
        return Err(Error::DimensionMismatch(format!(
            "record {} does not match encoder config",
            record.id
        )));
    }
    let v_raw = tape.constant(record.video_feat.clone());
    let q_raw = tape.constant(record.query_feat.clone());
    let v0 = affine_masked(
        tape,
        v_raw,
        bound.var("enc.proj_v.w"),
        bound.var("enc.proj_v.b"),
        cfg.t_max,
        cfg.d_model,
        record.valid_frames,
    );
    let q0 = affine_masked(
        tape,
        q_raw,
        bound.var("enc.proj_q.w"),
        bound.var("enc.proj_q.b"),
        cfg.m_max,
        cfg.d_model,
        record.valid_tokens,
    );
    Ok((v0, q0))
}

fn affine_masked(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    rows: usize,
    cols: usize,
    valid: usize,
) -> Var {
    let xw = tape.matmul(x, w);
    let xwb = tape.add_row(xw, b);
    let mask = tape.constant(row_mask(rows, cols, valid));
    tape.mul(xwb, mask)
}

struct AttnLayer<'a> {
    prefix: String,
    bound: &'a BoundParams<'a>,
}

impl<'a> AttnLayer<'a> {
    fn var(&self, name: &str) -> Var {
        self.bound.var(&format!("{}.{name}", self.prefix))
    }

    /// One pre-norm cross-attention + feed-forward block. `x` rows are the
    /// attention queries; `ctx` provides keys and values. Sublayer outputs are
    /// masked back to the valid rows of `x` before the residual add.
    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        ctx: Var,
        valid_rows: usize,
        valid_keys: usize,
        cfg: &EncoderConfig,
        attn_out: &mut Vec<Tensor>,
    ) -> Var {
        let (rows, d) = {
            let t = tape.value(x);
            (t.rows, t.cols)
        };
        let ctx_rows = tape.value(ctx).rows;
        let dh = cfg.head_dim();

        let xn = tape.layer_norm_rows(x, LN_EPS);
        let cn = tape.layer_norm_rows(ctx, LN_EPS);
        let qp = {
            let m = tape.matmul(xn, self.var("wq"));
            tape.add_row(m, self.var("bq"))
        };
        let kp = {
            let m = tape.matmul(cn, self.var("wk"));
            tape.add_row(m, self.var("bk"))
        };
        let vp = {
            let m = tape.matmul(cn, self.var("wv"));
            tape.add_row(m, self.var("bv"))
        };

        let kmask = key_mask(rows, ctx_rows, valid_keys);
        let mut head_outs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice_cols(qp, h * dh, dh);
            let kh = tape.slice_cols(kp, h * dh, dh);
            let vh = tape.slice_cols(vp, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let probs = tape.row_softmax(scaled, Some(kmask.clone()));
            attn_out.push(tape.value(probs).clone());
            head_outs.push(tape.matmul(probs, vh));
        }
        let concat = tape.concat_cols(&head_outs);
        let om = tape.matmul(concat, self.var("wo"));
        let ob = tape.add_row(om, self.var("bo"));
        let rmask = tape.constant(row_mask(rows, d, valid_rows));
        let masked = tape.mul(ob, rmask);
        let x = tape.add(x, masked);

        let hn = tape.layer_norm_rows(x, LN_EPS);
        let f1 = {
            let m = tape.matmul(hn, self.var("ff1.w"));
            tape.add_row(m, self.var("ff1.b"))
        };
        let f1a = tape.relu(f1);
        let f2 = {
            let m = tape.matmul(f1a, self.var("ff2.w"));
            tape.add_row(m, self.var("ff2.b"))
        };
        let rmask2 = tape.constant(row_mask(rows, d, valid_rows));
        let f2m = tape.mul(f2, rmask2);
        tape.add(x, f2m)
    }
}

/// Fuse projected features with the two cross-modal stacks and pool.
pub fn fuse(
    tape: &mut Tape,
    v0: Var,
    q0: Var,
    valid_frames: usize,
    valid_tokens: usize,
    bound: &BoundParams,
    cfg: &EncoderConfig,
) -> Result<Fused> {
    if valid_frames == 0 || valid_tokens == 0 {
        return Err(Error::AllPadding("fuse".into()));
    }
    let d = cfg.d_model;

    let pos_v = bound.var("enc.pos_v");
    let pos_q = bound.var("enc.pos_q");
    let vp = {
        let a = tape.add(v0, pos_v);
        let m = tape.constant(row_mask(cfg.t_max, d, valid_frames));
        tape.mul(a, m)
    };
    let qp = {
        let a = tape.add(q0, pos_q);
        let m = tape.constant(row_mask(cfg.m_max, d, valid_tokens));
        tape.mul(a, m)
    };

    let mut attn = Vec::new();
    let mut v = vp;
    for l in 0..cfg.layers {
        let layer = AttnLayer {
            prefix: format!("enc.v2q.l{l}"),
            bound,
        };
        v = layer.forward(tape, v, qp, valid_frames, valid_tokens, cfg, &mut attn);
    }
    let mut q_mat = qp;
    for l in 0..cfg.layers {
        let layer = AttnLayer {
            prefix: format!("enc.q2v.l{l}"),
            bound,
        };
        q_mat = layer.forward(tape, q_mat, vp, valid_tokens, valid_frames, cfg, &mut attn);
    }

    let q = tape.masked_mean_rows(q_mat, valid_tokens);
    let v_vd = tape.masked_mean_rows(v, valid_frames);
    Ok(Fused {
        v,
        q_mat,
        q,
        v_vd,
        attn,
    })
}

/// Project + fuse one record on a fresh tape and return plain values.
pub fn encode(record: &FeatureRecord, store: &ParamStore, cfg: &EncoderConfig) -> Result<FusedPair> {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let (v0, q0) = project(&mut tape, record, &bound, cfg)?;
    let fused = fuse(
        &mut tape,
        v0,
        q0,
        record.valid_frames,
        record.valid_tokens,
        &bound,
        cfg,
    )?;
    Ok(FusedPair {
        v: tape.value(fused.v).clone(),
        q_mat: tape.value(fused.q_mat).clone(),
        q: tape.value(fused.q).clone(),
        v_vd: tape.value(fused.v_vd).clone(),
    })
}
