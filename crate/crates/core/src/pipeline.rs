//! Glue between the corpus generator, the two training branches, and the
//! file formats exchanged by the CLI subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, sample_clip_label, sample_point_label, Annotation, FeatureRecord, PointDistribution,
    SyntheticSpec, TimeSpan,
};
use crate::error::{Error, Result};

/// How synthetic partial labels are drawn from the planted spans.
#[derive(Copy, Clone, Debug)]
pub enum LabelScheme {
    Point(PointDistribution),
    Clip { clip_len_s: f64 },
}

/// Prediction/ground-truth line: normalized span plus score and duration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanLine {
    pub id: String,
    pub s: f64,
    pub e: f64,
    #[serde(default)]
    pub score: f64,
    #[serde(default)]
    pub duration_s: f64,
}

pub fn spans_from_file(path: &Path) -> Result<Vec<(String, TimeSpan)>> {
    let lines: Vec<SpanLine> = corpus::read_jsonl(path)?;
    lines
        .into_iter()
        .map(|l| Ok((l.id, TimeSpan::new(l.s, l.e)?)))
        .collect()
}

/// Partial labels for a generated corpus, one per sample, drawn from
/// per-sample RNG streams.
pub fn simulate_labels(
    samples: &[(FeatureRecord, Annotation)],
    scheme: LabelScheme,
    seed: u64,
) -> Vec<Annotation> {
    samples
        .iter()
        .enumerate()
        .map(|(i, (r, gt))| {
            let mut rng = corpus::label_rng(seed, i);
            match scheme {
                LabelScheme::Point(dist) => sample_point_label(&gt.span, dist, &mut rng),
                LabelScheme::Clip { clip_len_s } => {
                    sample_clip_label(&gt.span, clip_len_s, r.duration_s, &mut rng)
                }
            }
        })
        .collect()
}

/// Write one split: `manifest.json` + feature files, `annotations.jsonl`
/// holding the training labels, and `ground_truth.jsonl` holding the planted
/// spans in normalized time for evaluation.
pub fn write_split(
    dir: &Path,
    samples: &[(FeatureRecord, Annotation)],
    labels: &[Annotation],
) -> Result<()> {
    assert_eq!(samples.len(), labels.len());
    let labeled: Vec<(FeatureRecord, Annotation)> = samples
        .iter()
        .zip(labels)
        .map(|((r, _), l)| (r.clone(), *l))
        .collect();
    corpus::write_corpus(dir, &labeled)?;
    let gt: Vec<SpanLine> = samples
        .iter()
        .map(|(r, a)| SpanLine {
            id: r.id.clone(),
            s: a.span.s,
            e: a.span.e,
            score: 1.0,
            duration_s: r.duration_s,
        })
        .collect();
    corpus::write_jsonl(&dir.join("ground_truth.jsonl"), &gt)
}

/// Generate a synthetic corpus and write `train/` (partial labels) and,
/// when `n_test > 0`, `test/` (full labels) under `out`.
pub fn synth_to_dir(
    out: &Path,
    spec: &SyntheticSpec,
    n_test: usize,
    scheme: LabelScheme,
) -> Result<()> {
    let train = corpus::generate_synthetic(spec)?;
    let labels = simulate_labels(&train, scheme, spec.seed);
    write_split(&out.join("train"), &train, &labels)?;
    if n_test > 0 {
        let test = corpus::generate_synthetic_range(spec, spec.n_samples, n_test)?;
        let full: Vec<Annotation> = test.iter().map(|(_, a)| *a).collect();
        write_split(&out.join("test"), &test, &full)?;
    }
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<Vec<(FeatureRecord, Annotation)>> {
    corpus::load_corpus(&dir.join("manifest.json"))
}

/// Ground-truth spans of a split, for evaluation.
pub fn split_ground_truth(dir: &Path) -> Result<Vec<(String, TimeSpan)>> {
    let path = dir.join("ground_truth.jsonl");
    if path.exists() {
        spans_from_file(&path)
    } else {
        // fall back to full annotations
        let samples = load_split(dir)?;
        samples
            .iter()
            .map(|(r, a)| {
                if a.kind == crate::corpus::AnnKind::Full {
                    Ok((r.id.clone(), a.span))
                } else {
                    Err(Error::MissingAnnotation(r.id.clone()))
                }
            })
            .collect()
    }
}
