//! Data model and file I/O: feature records, annotations, partial-label
//! simulation, and a synthetic corpus generator with known ground truth.
//!
//! All times are normalized to [0, 1] internally; seconds appear only at the
//! I/O boundary (annotations.jsonl and manifest durations). Feature files are
//! raw little-endian float32, row-major.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalized [start, end] with 0 <= s <= e <= 1.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub s: f64,
    pub e: f64,
}

impl TimeSpan {
    pub fn new(s: f64, e: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) || s > e {
            return Err(Error::InvalidSpan(s, e));
        }
        Ok(TimeSpan { s, e })
    }

    pub fn width(&self) -> f64 {
        self.e - self.s
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.s + self.e)
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.s <= other.s && other.e <= self.e
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnKind {
    Full,
    Clip,
    Point,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelDistribution {
    Uniform,
    Gaussian,
    Manual,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: AnnKind,
    pub span: TimeSpan,
    pub source: LabelDistribution,
}

impl Annotation {
    pub fn full(span: TimeSpan) -> Self {
        Annotation {
            kind: AnnKind::Full,
            span,
            source: LabelDistribution::Manual,
        }
    }

    pub fn is_partial(&self) -> bool {
        matches!(self.kind, AnnKind::Clip | AnnKind::Point)
    }
}

/// One (video, query) sample: padded feature matrices plus valid lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub video_feat: Tensor,
    pub query_feat: Tensor,
    pub sent_feat: Option<Vec<f64>>,
    pub valid_frames: usize,
    pub valid_tokens: usize,
    pub duration_s: f64,
}

impl FeatureRecord {
    /// Check padding/NaN invariants.
    pub fn validate(&self) -> Result<()> {
        if self.valid_frames == 0 || self.valid_frames > self.video_feat.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}: valid_frames {} out of range",
                self.id, self.valid_frames
            )));
        }
        if self.valid_tokens == 0 || self.valid_tokens > self.query_feat.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}: valid_tokens {} out of range",
                self.id, self.valid_tokens
            )));
        }
        let finite = |t: &Tensor, valid: usize| {
            t.data[..valid * t.cols].iter().all(|x| x.is_finite())
        };
        if !finite(&self.video_feat, self.valid_frames)
            || !finite(&self.query_feat, self.valid_tokens)
        {
            return Err(Error::NonFiniteFeature(self.id.clone()));
        }
        if let Some(s) = &self.sent_feat {
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteFeature(self.id.clone()));
            }
        }
        Ok(())
    }

    /// Embedding used for query clustering: the sentence feature when present,
    /// otherwise the mean of the valid query token rows.
    pub fn cluster_embedding(&self) -> Vec<f64> {
        if let Some(s) = &self.sent_feat {
            return s.clone();
        }
        let d = self.query_feat.cols;
        let mut out = vec![0.0; d];
        for r in 0..self.valid_tokens {
            for c in 0..d {
                out[c] += self.query_feat.get(r, c);
            }
        }
        for v in &mut out {
            *v /= self.valid_tokens as f64;
        }
        out
    }
}

// ---- manifest / annotation file formats ----

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub t_max: usize,
    pub m_max: usize,
    pub d_v: usize,
    pub d_q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_s: Option<usize>,
    pub samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub video_file: String,
    pub query_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sent_file: Option<String>,
    pub valid_frames: usize,
    pub valid_tokens: usize,
    pub duration_s: f64,
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    id: String,
    kind: AnnKind,
    /// Seconds.
    s: f64,
    /// Seconds.
    e: f64,
}

fn read_f32_file(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut f = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 4 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

fn write_f32_file(path: &Path, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &x in data {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a corpus directory: `manifest.json` plus `annotations.jsonl` and the
/// referenced `.f32` feature files. Annotations are normalized to [0, 1] by
/// each sample's duration.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<(FeatureRecord, Annotation)>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_reader(BufReader::new(
        File::open(manifest_path).map_err(|_| Error::MissingFile(manifest_path.to_path_buf()))?,
    ))?;

    let ann_path = dir.join("annotations.jsonl");
    let ann_file =
        File::open(&ann_path).map_err(|_| Error::MissingFile(ann_path.clone()))?;
    let mut annotations = std::collections::HashMap::new();
    for line in BufReader::new(ann_file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: AnnotationLine = serde_json::from_str(&line)?;
        annotations.insert(a.id.clone(), a);
    }

    let mut out = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let video = read_f32_file(&dir.join(&s.video_file), manifest.t_max * manifest.d_v)?;
        let query = read_f32_file(&dir.join(&s.query_file), manifest.m_max * manifest.d_q)?;
        let sent = match (&s.sent_file, manifest.d_s) {
            (Some(f), Some(d_s)) => Some(read_f32_file(&dir.join(f), d_s)?),
            (Some(_), None) => {
                return Err(Error::Config("sent_file given without d_s".into()))
            }
            _ => None,
        };
        let record = FeatureRecord {
            id: s.id.clone(),
            video_feat: Tensor::from_vec(manifest.t_max, manifest.d_v, video),
            query_feat: Tensor::from_vec(manifest.m_max, manifest.d_q, query),
            sent_feat: sent,
            valid_frames: s.valid_frames,
            valid_tokens: s.valid_tokens,
            duration_s: s.duration_s,
        };
        record.validate()?;

        let line = annotations
            .get(&s.id)
            .ok_or_else(|| Error::MissingAnnotation(s.id.clone()))?;
        if line.s < 0.0 || line.e > s.duration_s || line.s > line.e {
            return Err(Error::AnnotationOutOfRange {
                id: s.id.clone(),
                s: line.s,
                e: line.e,
                duration: s.duration_s,
            });
        }
        let span = TimeSpan::new(line.s / s.duration_s, line.e / s.duration_s)?;
        out.push((
            record,
            Annotation {
                kind: line.kind,
                span,
                source: LabelDistribution::Manual,
            },
        ));
    }
    Ok(out)
}

/// Write a corpus directory in the `load_corpus` layout.
pub fn write_corpus(dir: &Path, samples: &[(FeatureRecord, Annotation)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let first = samples.first().ok_or(Error::EmptyCorpus)?;
    let manifest = Manifest {
        t_max: first.0.video_feat.rows,
        m_max: first.0.query_feat.rows,
        d_v: first.0.video_feat.cols,
        d_q: first.0.query_feat.cols,
        d_s: first.0.sent_feat.as_ref().map(|s| s.len()),
        samples: samples
            .iter()
            .map(|(r, _)| ManifestSample {
                id: r.id.clone(),
                video_file: format!("{}.video.f32", r.id),
                query_file: format!("{}.query.f32", r.id),
                sent_file: r.sent_feat.as_ref().map(|_| format!("{}.sent.f32", r.id)),
                valid_frames: r.valid_frames,
                valid_tokens: r.valid_tokens,
                duration_s: r.duration_s,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(dir.join("manifest.json"))?),
        &manifest,
    )?;

    let mut ann = BufWriter::new(File::create(dir.join("annotations.jsonl"))?);
    for (r, a) in samples {
        write_f32_file(&dir.join(format!("{}.video.f32", r.id)), &r.video_feat.data)?;
        write_f32_file(&dir.join(format!("{}.query.f32", r.id)), &r.query_feat.data)?;
        if let Some(s) = &r.sent_feat {
            write_f32_file(&dir.join(format!("{}.sent.f32", r.id)), s)?;
        }
        let line = AnnotationLine {
            id: r.id.clone(),
            kind: a.kind,
            s: a.span.s * r.duration_s,
            e: a.span.e * r.duration_s,
        };
        serde_json::to_writer(&mut ann, &line)?;
        ann.write_all(b"\n")?;
    }
    ann.flush()?;
    Ok(())
}

// ---- partial-label simulation ----

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PointDistribution {
    Uniform,
    Gaussian,
}

/// Sample a single-frame label inside `gt`. The Gaussian variant is a
/// truncated normal centered on the span with std = width / 6, resampled
/// until it lands inside the span.
pub fn sample_point_label(
    gt: &TimeSpan,
    dist: PointDistribution,
    rng: &mut impl Rng,
) -> Annotation {
    let t = if gt.width() <= 0.0 {
        gt.s
    } else {
        match dist {
            PointDistribution::Uniform => rng.gen_range(gt.s..=gt.e),
            PointDistribution::Gaussian => {
                let mean = gt.center();
                let std = gt.width() / 6.0;
                loop {
                    // Box-Muller
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    let x = mean + std * z;
                    if x >= gt.s && x <= gt.e {
                        break x;
                    }
                }
            }
        }
    };
    Annotation {
        kind: AnnKind::Point,
        span: TimeSpan { s: t, e: t },
        source: match dist {
            PointDistribution::Uniform => LabelDistribution::Uniform,
            PointDistribution::Gaussian => LabelDistribution::Gaussian,
        },
    }
}

/// Sample a short-clip label of `clip_len_s` seconds inside `gt`; clips longer
/// than the event clamp to the event. The clip center is uniform over the
/// feasible positions.
pub fn sample_clip_label(
    gt: &TimeSpan,
    clip_len_s: f64,
    duration_s: f64,
    rng: &mut impl Rng,
) -> Annotation {
    let len = (clip_len_s / duration_s).min(gt.width());
    if len <= 0.0 {
        let mut a = sample_point_label(gt, PointDistribution::Uniform, rng);
        a.source = LabelDistribution::Uniform;
        return a;
    }
    let lo = gt.s + len / 2.0;
    let hi = gt.e - len / 2.0;
    let center = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    // clamp against 1-ulp rounding of center -+ len/2
    Annotation {
        kind: AnnKind::Clip,
        span: TimeSpan {
            s: (center - len / 2.0).max(gt.s),
            e: (center + len / 2.0).min(gt.e),
        },
        source: LabelDistribution::Uniform,
    }
}

// ---- synthetic corpus ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub t: usize,
    pub m: usize,
    pub d_v: usize,
    pub d_q: usize,
    pub concept_count: usize,
    pub noise_sigma: f64,
    pub min_width: f64,
    pub max_width: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.concept_count < 2 {
            return Err(Error::InvalidSpec("concept_count must be >= 2".into()));
        }
        if self.min_width > self.max_width
            || self.min_width <= 0.0
            || self.max_width > 1.0
        {
            return Err(Error::InvalidSpec(format!(
                "bad width range [{}, {}]",
                self.min_width, self.max_width
            )));
        }
        if self.n_samples == 0 || self.t == 0 || self.m == 0 || self.d_v == 0 || self.d_q == 0 {
            return Err(Error::InvalidSpec("zero-sized dimension".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec("negative noise_sigma".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Shared, seed-determined structure: concept directions and the query-to-video
/// linear map.
struct SyntheticWorld {
    concepts: Vec<Vec<f64>>,
    map: Tensor, // [d_q x d_v]
}

fn build_world(spec: &SyntheticSpec) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX); // world stream, disjoint from per-sample streams
    let concepts = (0..spec.concept_count)
        .map(|_| unit_vector(spec.d_q, &mut rng))
        .collect();
    let scale = 1.0 / (spec.d_q as f64).sqrt();
    let map = Tensor::from_vec(
        spec.d_q,
        spec.d_v,
        (0..spec.d_q * spec.d_v)
            .map(|_| gaussian(&mut rng) * scale)
            .collect(),
    );
    SyntheticWorld { concepts, map }
}

fn generate_sample(
    spec: &SyntheticSpec,
    world: &SyntheticWorld,
    index: usize,
) -> (FeatureRecord, Annotation) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let k = rng.gen_range(0..spec.concept_count);
    let mut k_bg = rng.gen_range(0..spec.concept_count - 1);
    if k_bg >= k {
        k_bg += 1;
    }
    let c = &world.concepts[k];
    let c_bg = &world.concepts[k_bg];

    let width = rng.gen_range(spec.min_width..=spec.max_width);
    let start = rng.gen_range(0.0..=(1.0 - width));
    let span = TimeSpan {
        s: start,
        e: start + width,
    };

    let mut query = Tensor::zeros(spec.m, spec.d_q);
    for r in 0..spec.m {
        for j in 0..spec.d_q {
            query.set(r, j, c[j] + spec.noise_sigma * gaussian(&mut rng));
        }
    }

    let row = |concept: &[f64]| -> Vec<f64> {
        let t = Tensor::row(concept.to_vec());
        t.matmul(&world.map).data
    };
    let fg = row(c);
    let bg = row(c_bg);
    let mut video = Tensor::zeros(spec.t, spec.d_v);
    for t in 0..spec.t {
        let x = (t as f64 + 0.5) / spec.t as f64;
        let base = if x >= span.s && x <= span.e { &fg } else { &bg };
        for j in 0..spec.d_v {
            video.set(t, j, base[j] + spec.noise_sigma * gaussian(&mut rng));
        }
    }

    let record = FeatureRecord {
        id: format!("syn{index:05}"),
        video_feat: video,
        query_feat: query,
        sent_feat: None,
        valid_frames: spec.t,
        valid_tokens: spec.m,
        duration_s: spec.t as f64,
    };
    (record, Annotation::full(span))
}

/// Generate `spec.n_samples` samples with full ground-truth spans. Fully
/// deterministic: each sample owns an RNG stream keyed by (seed, index).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<(FeatureRecord, Annotation)>> {
    generate_synthetic_range(spec, 0, spec.n_samples)
}

/// Generate samples `start .. start + count` of the corpus defined by `spec`.
/// Used to carve out held-out splits that share the same concept structure.
pub fn generate_synthetic_range(
    spec: &SyntheticSpec,
    start: usize,
    count: usize,
) -> Result<Vec<(FeatureRecord, Annotation)>> {
    spec.validate()?;
    let world = build_world(spec);
    Ok((start..start + count)
        .map(|i| generate_sample(spec, &world, i))
        .collect())
}

/// The fixed concept unit vectors of a synthetic corpus.
pub fn concept_vectors(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    Ok(build_world(spec).concepts)
}

/// Planted concept index per sample (the generator's first draw).
pub fn concept_labels(spec: &SyntheticSpec, start: usize, count: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    Ok((start..start + count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            rng.gen_range(0..spec.concept_count)
        })
        .collect())
}

/// RNG stream for annotation sampling of one sample, independent of the
/// feature streams.
pub fn label_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index as u64);
    rng
}

/// Pseudo-label record exchanged between the partial and full branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: String,
    pub s: f64,
    pub e: f64,
    pub score: f64,
    pub duration_s: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|_| Error::MissingFile(PathBuf::from(path)))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
