//! `pfu` — command-line driver for the partial-full union grounding pipeline.
//!
//! Every subcommand prints a machine-readable JSON report on standard output.
//! Training configuration comes from `--config <file>` (flat `key = value`
//! lines) overridden by repeated `--set key=value`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pfu_core::checkpoint;
use pfu_core::config::TrainConfig;
use pfu_core::corpus::{self, PointDistribution, SyntheticSpec};
use pfu_core::detector;
use pfu_core::error::Error;
use pfu_core::gradcheck::{gradient_check, Component};
use pfu_core::metrics::{evaluate, DEFAULT_THRESHOLDS};
use pfu_core::pipeline::{self, LabelScheme, SpanLine};
use pfu_core::train;

#[derive(Parser)]
#[command(name = "pfu", version, about = "partial-full union temporal grounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted ground-truth spans.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 48)]
        frames: usize,
        #[arg(long, default_value_t = 6)]
        tokens: usize,
        #[arg(long, default_value_t = 16)]
        dv: usize,
        #[arg(long, default_value_t = 16)]
        dq: usize,
        #[arg(long, default_value_t = 4)]
        concepts: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0.15)]
        min_width: f64,
        #[arg(long, default_value_t = 0.5)]
        max_width: f64,
        /// Held-out fully-annotated samples written to `<out>/test`.
        #[arg(long, default_value_t = 0)]
        test: usize,
        /// point-uniform | point-gaussian | clip
        #[arg(long, default_value = "point-uniform")]
        labels: String,
        /// Clip length in seconds for `--labels clip`.
        #[arg(long, default_value_t = 1.0)]
        clip_len: f64,
    },
    /// Train the partial branch on a split directory.
    TrainPartial {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional loss-curve JSON output.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Optional cluster-table JSON output.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Emit pseudo-labels from a partial-branch checkpoint.
    ExportPseudo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the span-based full branch on pseudo-labels.
    TrainFull {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pseudo: PathBuf,
        /// Partial-branch checkpoint providing the encoder.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode one span per sample with a full-branch checkpoint.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        /// encoder | detector | mask-plateau | mask-gaussian | loss-raml |
        /// loss-raun | loss-erml | loss-erun | loss-grnd | loss-combined |
        /// fullbranch
        #[arg(long)]
        component: String,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write `{id, cluster_id, v_fg}` JSONL for external projection plots.
    DumpEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFiniteLoss { step, detail } = &e {
                // diagnostic dump so a NaN abort is machine-readable too
                eprintln!(
                    "{}",
                    json!({ "error": "non-finite loss", "step": step, "detail": detail })
                );
            }
            ExitCode::FAILURE
        }
    }
}

fn parse_scheme(labels: &str, clip_len: f64) -> Result<LabelScheme, Error> {
    match labels {
        "point-uniform" => Ok(LabelScheme::Point(PointDistribution::Uniform)),
        "point-gaussian" => Ok(LabelScheme::Point(PointDistribution::Gaussian)),
        "clip" => Ok(LabelScheme::Clip { clip_len_s: clip_len }),
        other => Err(Error::Config(format!("unknown label scheme: {other}"))),
    }
}

fn parse_component(name: &str) -> Result<Component, Error> {
    let all = [
        ("encoder", Component::Encoder),
        ("detector", Component::Detector),
        ("mask-plateau", Component::MaskPlateau),
        ("mask-gaussian", Component::MaskGaussian),
        ("loss-raml", Component::LossRaml),
        ("loss-raun", Component::LossRaun),
        ("loss-erml", Component::LossErml),
        ("loss-erun", Component::LossErun),
        ("loss-grnd", Component::LossGrnd),
        ("loss-combined", Component::LossCombined),
        ("fullbranch", Component::FullBranch),
    ];
    all.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Config(format!("unknown component: {name}")))
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Synth {
            out,
            seed,
            samples,
            frames,
            tokens,
            dv,
            dq,
            concepts,
            noise,
            min_width,
            max_width,
            test,
            labels,
            clip_len,
        } => {
            let spec = SyntheticSpec {
                n_samples: samples,
                t: frames,
                m: tokens,
                d_v: dv,
                d_q: dq,
                concept_count: concepts,
                noise_sigma: noise,
                min_width,
                max_width,
                seed,
            };
            let scheme = parse_scheme(&labels, clip_len)?;
            pipeline::synth_to_dir(&out, &spec, test, scheme)?;
            println!(
                "{}",
                json!({ "out": out, "train_samples": samples, "test_samples": test, "seed": seed })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainPartial {
            data,
            out,
            curves,
            clusters,
            config,
        } => {
            let cfg = config.load()?;
            let corpus = pipeline::load_split(&data)?;
            let outcome = train::train_partial(&corpus, &cfg)?;
            checkpoint::save(&outcome.params, &out)?;
            if let Some(path) = curves {
                write_curves(&outcome.curves, &path)?;
            }
            if let Some(path) = clusters {
                outcome.clusters.save(cfg.constraints.theta, &path)?;
            }
            let last = outcome.curves.last().expect("non-empty corpus");
            println!(
                "{}",
                json!({
                    "checkpoint": out,
                    "steps": outcome.curves.len(),
                    "clusters": outcome.clusters.k,
                    "final_loss": last.parts.total,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportPseudo {
            data,
            ckpt,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let corpus = pipeline::load_split(&data)?;
            let params = checkpoint::load(&ckpt)?;
            let enc_cfg = train::encoder_config(&corpus, &cfg)?;
            let pseudo = detector::emit_pseudo_labels(&corpus, &params, &enc_cfg, cfg.mask_shape)?;
            corpus::write_jsonl(&out, &pseudo)?;
            let mean_score = pseudo.iter().map(|p| p.score).sum::<f64>() / pseudo.len() as f64;
            println!(
                "{}",
                json!({ "out": out, "n": pseudo.len(), "mean_score": mean_score })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainFull {
            data,
            pseudo,
            ckpt,
            out,
            curves,
            config,
        } => {
            let cfg = config.load()?;
            let corpus = pipeline::load_split(&data)?;
            let pseudo: Vec<corpus::PseudoLabel> = corpus::read_jsonl(&pseudo)?;
            let encoder_params = checkpoint::load(&ckpt)?;
            let outcome = train::train_full(&corpus, &pseudo, &encoder_params, &cfg)?;
            checkpoint::save(&outcome.params, &out)?;
            if let Some(path) = curves {
                write_curves(&outcome.curves, &path)?;
            }
            let last = outcome.curves.last().expect("non-empty corpus");
            println!(
                "{}",
                json!({
                    "checkpoint": out,
                    "steps": outcome.curves.len(),
                    "degenerate_targets": outcome.degenerate_targets,
                    "final_loss": last.parts.total,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer {
            data,
            ckpt,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let corpus = pipeline::load_split(&data)?;
            let params = checkpoint::load(&ckpt)?;
            let preds = train::infer_full(&corpus, &params, &cfg)?;
            let by_id: std::collections::HashMap<&str, f64> = corpus
                .iter()
                .map(|(r, _)| (r.id.as_str(), r.duration_s))
                .collect();
            let lines: Vec<SpanLine> = preds
                .iter()
                .map(|(id, p)| SpanLine {
                    id: id.clone(),
                    s: p.span.s,
                    e: p.span.e,
                    score: p.score,
                    duration_s: by_id[id.as_str()],
                })
                .collect();
            corpus::write_jsonl(&out, &lines)?;
            println!("{}", json!({ "out": out, "n": lines.len() }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { pred, gt } => {
            let preds = pipeline::spans_from_file(&pred)?;
            let gts = pipeline::spans_from_file(&gt)?;
            let report = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            component,
            cases,
            tolerance,
            seed,
        } => {
            let comp = parse_component(&component)?;
            let report = gradient_check(comp, cases, tolerance, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            // exit 0 on all-pass, 2 on tolerance failures; crashes surface
            // as exit 1 via the error path
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::DumpEmbeddings {
            data,
            ckpt,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let corpus = pipeline::load_split(&data)?;
            let params = checkpoint::load(&ckpt)?;
            let enc_cfg = train::encoder_config(&corpus, &cfg)?;
            let mut ids = Vec::with_capacity(corpus.len());
            let mut queries = Vec::with_capacity(corpus.len());
            let mut fgs = Vec::with_capacity(corpus.len());
            for (record, ann) in &corpus {
                let fused = pfu_core::encoder::encode(record, &params, &enc_cfg)?;
                let pseudo =
                    detector::pseudo_label_for(record, ann, &params, &enc_cfg, cfg.mask_shape)?;
                let span = corpus::TimeSpan::new(pseudo.s, pseudo.e)?;
                let mask = detector::build_mask(
                    &span,
                    enc_cfg.t_max,
                    record.valid_frames,
                    cfg.mask_shape,
                );
                let pooled =
                    detector::pool_fg_bg_values(&fused.v, &mask, record.valid_frames);
                ids.push(record.id.clone());
                queries.push(fused.q.data.clone());
                fgs.push(pooled.v_fg);
            }
            let table =
                pfu_core::constraints::build_clusters(&ids, &queries, cfg.constraints.theta)?;
            let lines: Vec<serde_json::Value> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    json!({ "id": id, "cluster_id": table.assignment[i], "v_fg": fgs[i] })
                })
                .collect();
            corpus::write_jsonl(&out, &lines)?;
            println!("{}", json!({ "out": out, "n": lines.len(), "clusters": table.k }));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_curves(curves: &[train::StepRecord], path: &std::path::Path) -> Result<(), Error> {
    let rows: Vec<serde_json::Value> = curves
        .iter()
        .map(|c| {
            json!({
                "epoch": c.epoch,
                "step": c.step,
                "total": c.parts.total,
                "raml": c.parts.raml,
                "raun": c.parts.raun,
                "erml": c.parts.erml,
                "erun": c.parts.erun,
                "grnd": c.parts.grnd,
            })
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
