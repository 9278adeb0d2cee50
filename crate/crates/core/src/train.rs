//! Training loops for the partial and full branches.
//!
//! Both loops are deterministic given (seed, config, corpus): batches come
//! from a seeded stream, parameters from seeded initialization, and all
//! arithmetic is sequential f64.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::constraints::{self, BatchSets, ClusterTable, LossParts};
use crate::corpus::{Annotation, FeatureRecord, PseudoLabel, TimeSpan};
use crate::detector;
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::fullbranch;
use crate::nn::{Adam, Init, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub parts: LossParts,
}

pub struct PartialOutcome {
    pub params: ParamStore,
    pub curves: Vec<StepRecord>,
    pub clusters: ClusterTable,
}

pub struct FullOutcome {
    pub params: ParamStore,
    pub curves: Vec<StepRecord>,
    /// Pseudo spans that degenerated to a single frame during loss targets.
    pub degenerate_targets: usize,
}

pub fn encoder_config(corpus: &[(FeatureRecord, Annotation)], cfg: &TrainConfig) -> Result<EncoderConfig> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    Ok(EncoderConfig::new(
        cfg.d_model,
        first.0.video_feat.rows,
        first.0.query_feat.rows,
        first.0.video_feat.cols,
        first.0.query_feat.cols,
    ))
}

fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Train encoder + detector on the partial-branch loss over cluster-balanced
/// batches.
pub fn train_partial(
    corpus: &[(FeatureRecord, Annotation)],
    cfg: &TrainConfig,
) -> Result<PartialOutcome> {
    cfg.validate()?;
    for (r, a) in corpus {
        if !a.is_partial() {
            return Err(Error::FullAnnotationInPartialContext);
        }
        r.validate()?;
    }
    let enc_cfg = encoder_config(corpus, cfg)?;

    let ids: Vec<String> = corpus.iter().map(|(r, _)| r.id.clone()).collect();
    let embeddings: Vec<Vec<f64>> = corpus.iter().map(|(r, _)| r.cluster_embedding()).collect();
    let clusters = constraints::build_clusters(&ids, &embeddings, cfg.constraints.theta)?;
    let members = clusters.members();

    let mut init = Init::new(cfg.seed);
    let mut params = encoder::init_params(&enc_cfg, &mut init);
    params.absorb(&detector::init_params(cfg.d_model, &mut init));
    let mut opt = Adam::new(cfg.learning_rate, cfg.clip());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_ba7c));

    let mut curves = Vec::new();
    let steps_per_epoch = batches_per_epoch(corpus.len(), cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let batch = constraints::sample_batch(
                &members,
                cfg.clusters_per_batch,
                cfg.samples_per_cluster,
                &mut batch_rng,
            )?;
            let parts =
                partial_step(corpus, &batch, &clusters, &mut params, &enc_cfg, cfg, &mut opt, step)?;
            curves.push(StepRecord { epoch, step, parts });
            step += 1;
        }
    }
    Ok(PartialOutcome {
        params,
        curves,
        clusters,
    })
}

#[allow(clippy::too_many_arguments)]
fn partial_step(
    corpus: &[(FeatureRecord, Annotation)],
    batch: &[usize],
    clusters: &ClusterTable,
    params: &mut ParamStore,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    opt: &mut Adam,
    step: usize,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let param_vars: Vec<crate::tape::Var> = bound.vars().to_vec();

    let mut v_fgs = Vec::with_capacity(batch.len());
    let mut qs = Vec::with_capacity(batch.len());
    let mut ramls = Vec::new();
    let mut rauns = Vec::new();
    let mut grnds = Vec::new();
    for &idx in batch {
        let (record, ann) = &corpus[idx];
        let (v0, q0) = encoder::project(&mut tape, record, &bound, enc_cfg)?;
        let fused = encoder::fuse(
            &mut tape,
            v0,
            q0,
            record.valid_frames,
            record.valid_tokens,
            &bound,
            enc_cfg,
        )?;
        let event = detector::predict_event(
            &mut tape,
            fused.v,
            fused.q,
            record.valid_frames,
            ann.span.center(),
            &bound,
        );
        let mask = detector::build_mask_vars(
            &mut tape,
            event.s,
            event.e,
            enc_cfg.t_max,
            record.valid_frames,
            cfg.mask_shape,
        );
        let (v_fg, v_bg) = detector::pool_fg_bg(&mut tape, fused.v, mask, record.valid_frames);
        ramls.push(constraints::loss_raml(
            &mut tape,
            v_fg,
            fused.v_vd,
            fused.q,
            cfg.constraints.alpha,
        ));
        rauns.push(constraints::loss_raun(
            &mut tape,
            v_fg,
            v_bg,
            fused.v_vd,
            cfg.constraints.beta,
        ));
        grnds.push(detector::grounding_loss(&mut tape, ann, event.s, event.e)?);
        v_fgs.push(v_fg);
        qs.push(fused.q);
    }

    let mean_of = |tape: &mut Tape, vars: &[crate::tape::Var]| {
        let row = tape.concat_cols(vars);
        let s = tape.sum_all(row);
        tape.scale(s, 1.0 / vars.len() as f64)
    };
    let raml = mean_of(&mut tape, &ramls);
    let raun = mean_of(&mut tape, &rauns);
    let grnd = mean_of(&mut tape, &grnds);

    let batch_clusters: Vec<usize> = batch.iter().map(|&i| clusters.cluster_of(i)).collect();
    let sets = BatchSets::from_clusters(&batch_clusters);
    let erml = constraints::loss_erml(
        &mut tape,
        &v_fgs,
        &qs,
        &sets,
        cfg.constraints.tau,
        cfg.constraints.mean_reduction,
    );
    let erun = constraints::loss_erun(
        &mut tape,
        &v_fgs,
        &sets,
        cfg.constraints.tau,
        cfg.constraints.mean_reduction,
    );

    let (total, parts) = constraints::loss_combined(
        &mut tape, raml, raun, erml, erun, grnd, &cfg.constraints,
    )
    .map_err(|e| match e {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
        other => other,
    })?;
    if !parts.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("{parts:?}"),
        });
    }

    let grads_all = tape.backward(total);
    let grads: Vec<Tensor> = param_vars
        .iter()
        .map(|&v| grads_all.wrt(&tape, v))
        .collect();
    opt.step(params, &grads);
    Ok(parts)
}

/// Train the span branch on pseudo-labels. The encoder is frozen by default;
/// with `full_train_encoder` a trainable copy is updated alongside the heads.
pub fn train_full(
    corpus: &[(FeatureRecord, Annotation)],
    pseudo: &[PseudoLabel],
    encoder_params: &ParamStore,
    cfg: &TrainConfig,
) -> Result<FullOutcome> {
    cfg.validate()?;
    let enc_cfg = encoder_config(corpus, cfg)?;
    let by_id: std::collections::HashMap<&str, &PseudoLabel> =
        pseudo.iter().map(|p| (p.id.as_str(), p)).collect();
    let targets: Vec<TimeSpan> = corpus
        .iter()
        .map(|(r, _)| {
            by_id
                .get(r.id.as_str())
                .map(|p| TimeSpan { s: p.s, e: p.e })
                .ok_or_else(|| Error::MissingAnnotation(r.id.clone()))
        })
        .collect::<Result<_>>()?;

    let mut params = ParamStore::new();
    for (name, t) in encoder_params.iter() {
        if name.starts_with("enc.") {
            params.insert(name, t.clone());
        }
    }
    let n_frozen = if cfg.full_train_encoder { 0 } else { params.len() };
    let mut init = Init::new(cfg.seed.wrapping_add(0xf011));
    params.absorb(&fullbranch::init_params(cfg.d_model, &mut init));

    let mut opt = Adam::new(cfg.learning_rate, cfg.clip());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xf011_ba7c));
    let mut curves = Vec::new();
    let mut degenerate = 0usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut losses = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (record, _) = &corpus[idx];
                let (v0, q0) = encoder::project(&mut tape, record, &bound, &enc_cfg)?;
                let fused = encoder::fuse(
                    &mut tape,
                    v0,
                    q0,
                    record.valid_frames,
                    record.valid_tokens,
                    &bound,
                    &enc_cfg,
                )?;
                let spans =
                    fullbranch::predict_spans(&mut tape, fused.v, record.valid_frames, &bound)?;
                let (loss, degen) = fullbranch::full_loss(&mut tape, &spans, &targets[idx]);
                if degen {
                    degenerate += 1;
                }
                losses.push(loss);
            }
            let row = tape.concat_cols(&losses);
            let sum = tape.sum_all(row);
            let total = tape.scale(sum, 1.0 / losses.len() as f64);
            let value = tape.value(total).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("full-branch loss {value}"),
                });
            }
            let grads_all = tape.backward(total);
            let mut grads: Vec<Tensor> = bound
                .vars()
                .iter()
                .map(|&v| grads_all.wrt(&tape, v))
                .collect();
            for g in grads.iter_mut().take(n_frozen) {
                for x in &mut g.data {
                    *x = 0.0;
                }
            }
            drop(bound);
            opt.step(&mut params, &grads);
            curves.push(StepRecord {
                epoch,
                step,
                parts: LossParts {
                    total: value,
                    ..LossParts::default()
                },
            });
            step += 1;
        }
    }
    Ok(FullOutcome {
        params,
        curves,
        degenerate_targets: degenerate,
    })
}

/// Run the full branch on a corpus and decode one span per sample.
pub fn infer_full(
    corpus: &[(FeatureRecord, Annotation)],
    params: &ParamStore,
    cfg: &TrainConfig,
) -> Result<Vec<(String, fullbranch::EventPrediction)>> {
    let enc_cfg = encoder_config(corpus, cfg)?;
    let mut out = Vec::with_capacity(corpus.len());
    for (record, _) in corpus {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let (v0, q0) = encoder::project(&mut tape, record, &bound, &enc_cfg)?;
        let fused = encoder::fuse(
            &mut tape,
            v0,
            q0,
            record.valid_frames,
            record.valid_tokens,
            &bound,
            &enc_cfg,
        )?;
        let spans = fullbranch::predict_spans(&mut tape, fused.v, record.valid_frames, &bound)?;
        let pred = spans.prediction(&mut tape);
        out.push((record.id.clone(), fullbranch::decode_span(&pred)));
    }
    Ok(out)
}
