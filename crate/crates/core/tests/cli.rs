use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sqd_core::cli::{MatchReport, NoiseRecord};
use sqd_core::noising::NoiseSource;
use sqd_core::FrameReport;

fn sqd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqd"))
        .args(args)
        .env_remove("SQD_SEED")
        .output()
        .expect("spawn sqd")
}

fn ok(args: &[&str]) -> Output {
    let out = sqd(args);
    assert!(
        out.status.success(),
        "sqd {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl<T: serde::de::DeserializeOwned>(p: &Path) -> Vec<T> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn scenario(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["gen-scenario", "--frames", "6", "--seed", "7", "--output", s(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

#[test]
fn gen_scenario_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    ok(&["gen-scenario", "--frames", "20", "--seed", "7", "--output", s(&a)]);
    ok(&["gen-scenario", "--frames", "20", "--seed", "7", "--output", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.txt");
    ok(&["gen-scenario", "--frames", "20", "--seed", "8", "--output", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn seed_environment_variable_sets_default() {
    let dir = tempfile::tempdir().unwrap();
    let flag = scenario(dir.path(), "flag.txt", &[]);
    let env = dir.path().join("env.txt");
    let out = Command::new(env!("CARGO_BIN_EXE_sqd"))
        .args(["gen-scenario", "--frames", "6", "--output", s(&env)])
        .env("SQD_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(flag).unwrap(), std::fs::read(env).unwrap());
}

#[test]
fn static_ego_run_matches_everything() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario(dir.path(), "static.txt", &["--speed", "0"]);
    let out = dir.path().join("run.jsonl");
    ok(&["sqd-run", "--scenario", s(&scen), "--dim", "32", "--output", s(&out)]);
    let reports: Vec<FrameReport> = jsonl(&out);
    assert_eq!(reports.len(), 6);
    assert_eq!(reports[0].matched_fraction, None);
    for r in &reports[1..] {
        assert_eq!(r.matched_fraction, Some(1.0));
        assert_eq!(r.mean_distance, Some(0.0));
        assert_eq!(r.mean_decay, Some(1.0));
        assert_eq!(r.num_normal, 0);
    }
}

#[test]
fn saved_weights_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario(dir.path(), "s.txt", &[]);
    let weights = dir.path().join("weights");
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");
    ok(&["sqd-run", "--scenario", s(&scen), "--dim", "16", "--seed", "3", "--save-weights", s(&weights), "--output", s(&first)]);
    // reloading the written text files must reproduce the networks exactly
    ok(&["sqd-run", "--scenario", s(&scen), "--dim", "16", "--seed", "3", "--weights", s(&weights), "--output", s(&second)]);
    assert_eq!(std::fs::read(first).unwrap(), std::fs::read(second).unwrap());
}

#[test]
fn match_and_noise_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario(dir.path(), "s.txt", &[]);
    let matches = dir.path().join("m.jsonl");
    ok(&["match", "--scenario", s(&scen), "--output", s(&matches)]);
    let reports: Vec<MatchReport> = jsonl(&matches);
    assert_eq!(reports.len(), 6);
    assert_eq!(reports[0].prev_frame_index, None);
    assert_eq!(reports[3].prev_frame_index, Some(2));

    let single = dir.path().join("m3.jsonl");
    ok(&["match", "--scenario", s(&scen), "--frame", "3", "--output", s(&single)]);
    let one: Vec<MatchReport> = jsonl(&single);
    assert_eq!(one, vec![reports[3].clone()]);

    let plain = dir.path().join("n.jsonl");
    ok(&["noise", "--scenario", s(&scen), "--frame", "3", "--output", s(&plain)]);
    let samples: Vec<NoiseRecord> = jsonl(&plain);
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|r| r.sample.decay == 1.0 && r.sample.source == NoiseSource::Normal));

    let decayed = dir.path().join("nd.jsonl");
    ok(&["noise", "--scenario", s(&scen), "--frame", "3", "--matches", s(&matches), "--output", s(&decayed)]);
    let samples: Vec<NoiseRecord> = jsonl(&decayed);
    let stream = samples.iter().filter(|r| r.sample.source == NoiseSource::Stream).count();
    assert_eq!(stream, reports[3].matched_count * (samples.len() / reports[3].matches.len()));
    assert!(samples.iter().all(|r| r.sample.decay > 0.5));
}

#[test]
fn perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario(dir.path(), "s.txt", &[]);
    // a prediction file is the scenario's element list with a score per element
    let text = std::fs::read_to_string(&scen).unwrap();
    let mut preds = String::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let n: usize = tok[5].parse().unwrap();
        let mut out = vec![tok[0].to_string(), n.to_string()];
        let mut i = 6;
        for _ in 0..n {
            let k: usize = tok[i + 1].parse().unwrap();
            out.push(tok[i].into());
            out.push("1.0".into());
            out.extend(tok[i + 1..i + 2 + 2 * k].iter().map(|t| t.to_string()));
            i += 2 + 2 * k;
        }
        preds.push_str(&out.join(" "));
        preds.push('\n');
    }
    let pred_path = dir.path().join("p.txt");
    std::fs::write(&pred_path, preds).unwrap();
    let report = dir.path().join("eval.jsonl");
    let out = ok(&["eval-ap", "--scenario", s(&scen), "--predictions", s(&pred_path), "--output", s(&report)]);
    let json: Vec<serde_json::Value> = jsonl(&report);
    assert_eq!(json[0]["map"], 1.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mAP"));
}

#[test]
fn rendered_svg_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario(dir.path(), "s.txt", &["--yaw-rate", "0.1"]);
    let run = dir.path().join("run.jsonl");
    ok(&["sqd-run", "--scenario", s(&scen), "--dim", "16", "--output", s(&run)]);
    let svg_dir = dir.path().join("svg");
    ok(&["render-svg", "--scenario", s(&scen), "--reports", s(&run), "--output-dir", s(&svg_dir)]);
    let mut files: Vec<_> = std::fs::read_dir(&svg_dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 6);
    for f in files {
        let text = std::fs::read_to_string(&f).unwrap();
        assert_balanced(&text);
        assert!(!text.contains("NaN") && !text.contains("inf"), "{}", f.display());
        for color in ["#2ca02c", "#d62728", "#1f77b4"] {
            assert!(text.contains(color));
        }
    }
}

/// Minimal XML structure check: every element closes in order.
fn assert_balanced(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name), "mismatched </{name}>");
        } else {
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        }
    }
    assert!(stack.is_empty(), "unclosed: {stack:?}");
}

#[test]
fn failures_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x");

    let usage = sqd(&["sqd-run", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&usage.stderr).trim().lines().count(), 1);
    assert_eq!(sqd(&["gen-scenario", "--output", s(&out_path), "--lambda", "2"]).status.code(), Some(1));
    assert_eq!(sqd(&["sqd-run", "--scenario", "missing.txt", "--alpha", "0", "--output", s(&out_path)]).status.code(), Some(2));

    let missing = sqd(&["sqd-run", "--scenario", "/no/such/file", "--output", s(&out_path)]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&missing.stderr).trim().lines().count(), 1);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0 0 0 0 0 1 1 3 0 0 1\n").unwrap();
    let malformed = sqd(&["match", "--scenario", s(&bad), "--output", s(&out_path)]);
    assert_eq!(malformed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&malformed.stderr).contains("line 1"));

    let scen = scenario(dir.path(), "s.txt", &[]);
    let bad_alpha = sqd(&["sqd-run", "--scenario", s(&scen), "--alpha", "0", "--output", s(&out_path)]);
    assert_eq!(bad_alpha.status.code(), Some(1));
}
