use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proofread"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Asserts a failed run printed exactly one `code: message` line.
fn assert_one_line_error(o: &Output, code: &str) {
    assert_eq!(o.status.code(), Some(1), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("{code}: ")), "stderr: {err}");
}

/// A corpus small enough to run every stage in seconds.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "corpus": {
            "train_volumes": 1,
            "calibration_volumes": 1,
            "synth": {
                "dims": [64, 64, 64],
                "neuron_count": 10,
                "tube_radius_vox": [2.5, 4.0],
                "path_length": [150, 250],
                "split_count": 30,
                "min_piece": 8
            }
        },
        "candidates": { "train_count": 60, "test_count": 40 },
        "calibrate": { "sample_size": 20 },
        "features": { "evidence_edge": 9, "context_edge": 40, "n_points": 128 },
        "cnn": {
            "network": {
                "input_edge": 9,
                "conv_blocks": [{ "filters": 2, "kernel": 3, "pool": 2 }],
                "fc_widths": [4]
            },
            "train": { "epochs": 1, "batch": 8 }
        }
    });
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn stage(cfg: &Path, data: &Path, seed: &str, args: &[&str]) -> Output {
    let mut a = vec![
        args[0],
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        seed,
        "--data-dir",
        data.to_str().unwrap(),
    ];
    a.extend_from_slice(&args[1..]);
    let o = run(&a);
    assert!(o.status.success(), "{:?} failed: {}", args, stderr(&o));
    o
}

#[test]
fn help_lists_subcommands_and_flags() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    for s in ["gen", "adjacency", "train-cnn", "orphan-link", "serve", "--seed", "--data-dir", "--config"] {
        assert!(out.contains(s), "missing {s} in help");
    }
    let o = run(&["adjacency", "--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("--factor"));
}

#[test]
fn errors_are_single_lines() {
    assert_one_line_error(&run(&["gen", "--bogus"]), "usage");
    assert_one_line_error(&run(&["frobnicate"]), "usage");

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let d = data.to_str().unwrap();
    assert_one_line_error(&run(&["gen", "--data-dir", d]), "invalid_argument");

    // A stage whose inputs are missing.
    let o = run(&["candidates", "--seed", "1", "--data-dir", d]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "colour": "blue"}"#).unwrap();
    let o = run(&["gen", "--config", bad.to_str().unwrap(), "--data-dir", d]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));

    assert_one_line_error(
        &run(&["adjacency", "--seed", "1", "--data-dir", d, "--factor", "3"]),
        "invalid_factor",
    );
}

#[test]
fn gen_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    stage(&cfg, &a, "7", &["gen"]);
    stage(&cfg, &b, "7", &["gen"]);
    stage(&cfg, &c, "8", &["gen"]);
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn adjacency_is_sorted_and_leaves_inputs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("d");
    stage(&cfg, &data, "3", &["gen"]);
    let before = tree(&data);
    stage(&cfg, &data, "3", &["adjacency", "--factor", "8"]);
    let after = tree(&data);
    for (p, bytes) in &before {
        assert_eq!(after.get(p), Some(bytes), "{} changed", p.display());
    }
    let tsv = fs::read_to_string(data.join("volumes/test/adjacency.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "a\tb\tcontact_voxels\trep_x\trep_y\trep_z\tfactor"
    );
    let mut prev = (0u64, 0u64);
    let mut n = 0;
    for l in lines {
        let f: Vec<&str> = l.split('\t').collect();
        let pair: (u64, u64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        assert!(pair.0 < pair.1);
        assert!(pair > prev, "not sorted at {l}");
        assert_eq!(f[6], "8");
        prev = pair;
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn every_stage_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("d");
    for s in [
        "gen",
        "adjacency",
        "candidates",
        "features",
        "train-cnn",
        "train-fusion",
        "score",
        "triage",
        "calibrate",
        "orphan-link",
        "eval",
    ] {
        stage(&cfg, &data, "11", &[s]);
    }
    for f in [
        "corpus.json",
        "candidates.jsonl",
        "model.aprf",
        "scores.jsonl",
        "triage.json",
        "calibration.json",
        "decisions.jsonl",
        "completeness_report.json",
        "pr_curve.csv",
        "review_precision.csv",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    // Stage flags override the config.
    let o = stage(&cfg, &data, "11", &["triage", "--budget", "1.0"]);
    let out = String::from_utf8_lossy(&o.stdout);
    let (sel, total) = out.split_once(" of ").unwrap();
    assert_eq!(sel.trim(), total.split_whitespace().next().unwrap());
}
