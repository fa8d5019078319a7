//! The mock-mode CLI pipeline shared by the CLI tests and the acceptance run.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

/// Files produced by [`run_pipeline`] and pinned under `tests/golden`.
pub const PIPELINE_FILES: [&str; 12] = [
    "rollout.ndjson",
    "trees/engineer.tree.json",
    "trees/medic.tree.json",
    "trees/distill_report.json",
    "explain_br_path.json",
    "explain_br_states.json",
    "explain_no_br.json",
    "replay_medic.json",
    "study/rows.csv",
    "study/aggregate.csv",
    "study/features.csv",
    "study/summary.txt",
];

pub fn brx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brx"))
        .args(args)
        .env_remove("BRX_MOCK")
        .env_remove("BRX_REMOTE")
        .output()
        .expect("brx runs")
}

pub fn brx_ok(args: &[&str]) -> Output {
    let out = brx(args);
    assert!(
        out.status.success(),
        "brx {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// `rollout → distill → explain (each condition) → replay → study`, echo mock.
pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        argv(&["rollout", "--policy", "expert", "--n", "4", "--seed", "42", "--out", &p("rollout.ndjson")]),
        argv(&[
            "distill", "--input", &p("rollout.ndjson"), "--out-dir", &p("trees"), "--policy", "expert",
            "--held-out-episodes", "20", "--held-out-states", "200",
        ]),
        explain_args(dir, "br_path"),
        explain_args(dir, "br_states"),
        explain_args(dir, "no_br"),
        argv(&[
            "replay", "--input", &p("rollout.ndjson"), "--tree", &p("trees/medic.tree.json"), "--role", "medic",
            "--out", &p("replay_medic.json"),
        ]),
        argv(&[
            "study", "--mock", "echo", "--seed", "0", "--states", "3", "--train-episodes", "60",
            "--held-out-episodes", "10", "--out-dir", &p("study"),
        ]),
    ];
    for args in steps {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = brx(&refs);
        if !out.status.success() {
            return Err(format!("brx {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn argv(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

fn explain_args(dir: &Path, condition: &str) -> Vec<String> {
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    argv(&[
        "explain", "--mock", "echo", "--tree", &p("trees/medic.tree.json"), "--trajectories", &p("rollout.ndjson"),
        "--episode", "43", "--t", "5", "--condition", condition, "--k", "5", "--sample-seed", "3", "--out",
        &p(&format!("explain_{condition}.json")),
    ])
}

/// Compare pipeline outputs in `dir` with the goldens byte for byte. With
/// `UPDATE_GOLDEN=1` the goldens are rewritten instead.
pub fn check_goldens(dir: &Path) -> Result<(), String> {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut mismatched = Vec::new();
    for rel in PIPELINE_FILES {
        let got = std::fs::read(dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        let golden: PathBuf = Path::new(GOLDEN_DIR).join("pipeline").join(rel);
        if update {
            std::fs::create_dir_all(golden.parent().unwrap()).map_err(|e| e.to_string())?;
            std::fs::write(&golden, &got).map_err(|e| e.to_string())?;
            continue;
        }
        match std::fs::read(&golden) {
            Ok(want) if want == got => {}
            Ok(_) => mismatched.push(format!("{rel} differs")),
            Err(e) => mismatched.push(format!("{rel}: missing golden ({e}); rerun with UPDATE_GOLDEN=1")),
        }
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(mismatched.join("; "))
    }
}
