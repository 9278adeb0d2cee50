use std::path::Path;
use std::process::{Command, Output};

fn pfu(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfu"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn pfu")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn eval_prints_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let line = |id: &str, s: f64, e: f64| {
        format!("{{\"id\":\"{id}\",\"s\":{s},\"e\":{e},\"score\":1.0,\"duration_s\":10.0}}\n")
    };
    std::fs::write(
        dir.path().join("p.jsonl"),
        line("a", 0.2, 0.6) + &line("b", 0.0, 0.5),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("g.jsonl"),
        line("a", 0.2, 0.6) + &line("b", 0.5, 1.0),
    )
    .unwrap();
    let out = pfu(&["eval", "--pred", "p.jsonl", "--gt", "g.jsonl"], dir.path());
    let report = stdout_json(&out);
    assert_eq!(report["n_samples"], 2);
    assert!((report["mean_iou"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        [
            "synth", "--out", out, "--seed", "3", "--samples", "6", "--frames", "10",
            "--dv", "6", "--dq", "6", "--concepts", "2", "--test", "2",
        ]
        .map(String::from)
    };
    for out in ["a", "b"] {
        let owned = args(out);
        let args: Vec<&str> = owned.iter().map(String::as_str).collect();
        assert!(pfu(&args, dir.path()).status.success());
    }
    // identical directory trees, byte for byte
    let mut entries: Vec<_> = walk(&dir.path().join("a"));
    entries.sort();
    assert!(!entries.is_empty());
    for rel in entries {
        let a = std::fs::read(dir.path().join("a").join(&rel)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical synth runs");
    }
}

fn walk(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn unknown_flag_fails_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfu(&["eval", "--no-such-flag"], dir.path());
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "stderr was: {text}");

    let out = pfu(&["no-such-subcommand"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn gradcheck_exit_codes_distinguish_tolerance_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfu(
        &["gradcheck", "--component", "loss-raml", "--cases", "5"],
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], 5);

    // unreachable tolerance: failures reported, dedicated exit code
    let out = pfu(
        &[
            "gradcheck", "--component", "loss-raml", "--cases", "5",
            "--tolerance", "1e-15",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report["failures"].as_array().unwrap().is_empty());

    // a bad component is a usage error, not a tolerance failure
    let out = pfu(&["gradcheck", "--component", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_smoke_ends_with_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = pfu(args, dir.path());
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };
    run(&[
        "synth", "--out", "data", "--seed", "7", "--samples", "24", "--frames", "16",
        "--dv", "8", "--dq", "8", "--concepts", "2", "--test", "6",
    ]);
    let cfg = ["--set", "epochs=3", "--set", "d_model=8", "--set", "learning_rate=0.002"];
    let mut args = vec![
        "train-partial", "--data", "data/train", "--out", "partial.ckpt",
        "--curves", "curves.json", "--clusters", "clusters.json",
    ];
    args.extend_from_slice(&cfg);
    let report = stdout_json(&run(&args));
    assert!(report["final_loss"].as_f64().unwrap().is_finite());
    assert!(dir.path().join("curves.json").exists());
    assert!(dir.path().join("clusters.json").exists());

    let mut args = vec![
        "export-pseudo", "--data", "data/train", "--ckpt", "partial.ckpt",
        "--out", "pseudo.jsonl",
    ];
    args.extend_from_slice(&cfg);
    let report = stdout_json(&run(&args));
    assert_eq!(report["n"], 24);

    let mut args = vec![
        "train-full", "--data", "data/train", "--pseudo", "pseudo.jsonl",
        "--ckpt", "partial.ckpt", "--out", "full.ckpt",
    ];
    args.extend_from_slice(&cfg);
    run(&args);

    let mut args = vec![
        "infer", "--data", "data/test", "--ckpt", "full.ckpt", "--out", "preds.jsonl",
    ];
    args.extend_from_slice(&cfg);
    run(&args);

    let report = stdout_json(&run(&[
        "eval", "--pred", "preds.jsonl", "--gt", "data/test/ground_truth.jsonl",
    ]));
    assert_eq!(report["n_samples"], 6);
    let miou = report["mean_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    let mut args = vec![
        "dump-embeddings", "--data", "data/train", "--ckpt", "partial.ckpt",
        "--out", "emb.jsonl",
    ];
    args.extend_from_slice(&cfg);
    let report = stdout_json(&run(&args));
    assert_eq!(report["n"], 24);
    let first = std::fs::read_to_string(dir.path().join("emb.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(line["cluster_id"].is_number());
    assert_eq!(line["v_fg"].as_array().unwrap().len(), 8);
}
