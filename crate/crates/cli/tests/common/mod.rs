//! Runs the binary through the whole pipeline on a small world.

#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

pub const GOLDEN_FILES: [&str; 6] =
    ["effects.csv", "evaluation.csv", "pareto.csv", "linear_hte.csv", "forest_hte.csv", "cb_compare.csv"];

pub const PIPELINE_SEED: u64 = 7;

const CONFIG: &str = r#"{
  "world": {"n_concepts": 1, "questions_per_concept": 12, "n_students": 4000},
  "min_samples": 30,
  "repeats": 4,
  "n_trees": 10
}"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_assistopt"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs the binary with `input` on stdin.
pub fn run_with_input(args: &[&str], input: &[u8]) -> Output {
    let mut child =
        bin().args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    // feed stdin from a thread so a large response stream cannot fill the
    // pipe while the input is still being written
    let mut stdin = child.stdin.take().unwrap();
    let input = input.to_vec();
    let writer = std::thread::spawn(move || stdin.write_all(&input));
    let out = child.wait_with_output().unwrap();
    writer.join().unwrap().unwrap();
    out
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// simulate, ingest, effects, train, evaluate, pareto, hte-scan and
/// cb-compare into `dir`.
pub fn run_pipeline(dir: &Path) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, CONFIG).unwrap();
    let d = dir.to_str().unwrap();
    let c = cfg.to_str().unwrap();
    let seed = PIPELINE_SEED.to_string();
    let global = ["--seed", &seed, "--config", c, "--out", d];
    let path = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let (logs, items, catalog) = (path("logs.jsonl"), path("items.jsonl"), path("catalog.json"));
    let data = ["--logs", &logs, "--items", &items, "--catalog", &catalog];
    let with = |cmd: &[&str], extra: &[&str]| -> Vec<String> {
        global.iter().chain(cmd).chain(extra).map(|s| s.to_string()).collect()
    };
    let steps: Vec<Vec<String>> = vec![
        with(&["simulate", "--sessions", "4000"], &[]),
        with(&["ingest", "--logs", &logs, "--catalog", &catalog], &[]),
        with(&["effects"], &data),
        with(&["train"], &data),
        with(&["evaluate"], &data),
        with(&["pareto"], &data),
        with(&["hte-scan"], &data),
        with(&["cb-compare"], &data),
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        run_ok(&args);
    }
}

/// Names of generated files that differ from the pinned fixtures. With
/// `UPDATE_GOLDEN` set, the fixtures are rewritten instead.
pub fn golden_mismatches(dir: &Path) -> Vec<String> {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut bad = Vec::new();
    for name in GOLDEN_FILES {
        let got = fs::read_to_string(dir.join(name)).unwrap_or_default();
        let golden = golden_dir().join(name);
        if update {
            fs::write(&golden, &got).unwrap();
        } else if fs::read_to_string(&golden).ok().as_deref() != Some(got.as_str()) {
            bad.push(name.to_string());
        }
    }
    bad
}
