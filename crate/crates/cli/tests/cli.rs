use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

/// Runs `mad` in `dir` with whitespace-separated `args`.
fn mad(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mad"))
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = mad(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "mad {args} failed:\n{stderr}");
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &str) -> String {
    let out = mad(dir, args);
    assert!(!out.status.success(), "mad {args} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// synth with three models, then stats and select.
fn prepared(dir: &Path, flags: &str) {
    ok(
        dir,
        "synth --out syn --images 40 --train 30 --width 32 --height 32 --noise 0.05,0.25,0.45",
    );
    ok(
        dir,
        &format!("{flags} stats --manifest syn/manifest.json --out stats.csv"),
    );
    ok(
        dir,
        &format!("{flags} select --manifest syn/manifest.json --stats stats.csv --out run/madset.jsonl"),
    );
}

fn rank(dir: &Path) -> String {
    ok(
        dir,
        "rank --manifest syn/manifest.json --madset run/madset.jsonl --out run",
    )
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn without_timestamps(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains("created_unix_ms")).collect();
    kept.join("\n")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn repeated_runs_are_identical_up_to_timestamps() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        prepared(d, "");
        rank(d);
    }
    let listed = files(a.path());
    assert_eq!(listed, files(b.path()));
    assert!(listed.iter().any(|p| p.ends_with("ranking.json")));
    for p in listed {
        let x = fs::read(a.path().join(&p)).unwrap();
        let y = fs::read(b.path().join(&p)).unwrap();
        assert!(
            without_timestamps(&x) == without_timestamps(&y),
            "{} differs",
            p.display()
        );
    }
}

#[test]
fn rank_prints_both_rankings_in_noise_order() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "");
    let text = rank(dir.path());
    let order: Vec<&str> = text
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .filter(|w| w.starts_with('m'))
        .collect();
    assert_eq!(order, ["m1", "m2", "m3", "m1", "m2", "m3"], "{text}");
    let out = ok(dir.path(), "srcc run/ranking.json syn/truth_ranking.json");
    assert_eq!(out.trim(), "1");
    let out = ok(
        dir.path(),
        "srcc --key resistance run/ranking.json syn/truth_ranking.json",
    );
    assert_eq!(out.trim(), "1");
}

#[test]
fn missing_prediction_names_model_and_image() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "");
    fs::remove_file(dir.path().join("syn/models/m2/img00003.png")).unwrap();
    let msg = err(
        dir.path(),
        "select --manifest syn/manifest.json --stats stats.csv --out again.jsonl",
    );
    assert!(msg.contains("img00003") && msg.contains("m2"), "{msg}");
}

#[test]
fn rank_lists_images_without_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "");
    let first = fs::read_to_string(dir.path().join("run/madset.jsonl")).unwrap();
    let record: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let image = record["image_id"].as_str().unwrap();
    fs::remove_file(dir.path().join(format!("syn/annotations/{image}.png"))).unwrap();
    let msg = err(
        dir.path(),
        "rank --manifest syn/manifest.json --madset run/madset.jsonl --out run",
    );
    assert!(msg.contains("annotate") && msg.contains(image), "{msg}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mad.conf"), "# regime\nmetric = fwiou\nk = 2\n").unwrap();
    prepared(dir.path(), "--config mad.conf --k 1");
    let prov = json(&dir.path().join("run/madset.provenance.json"));
    assert_eq!(prov["metric"], "fwiou");
    assert_eq!(prov["k"], 1);
    assert_eq!(prov["command"], "select");
    assert_eq!(prov["inputs"].as_object().unwrap().len(), 2);

    let msg = err(
        dir.path(),
        "--config mad.conf --metric accuracy stats --manifest syn/manifest.json",
    );
    assert!(msg.contains("accuracy"), "{msg}");
}

#[test]
fn add_model_needs_prior_state() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "");
    fs::create_dir(dir.path().join("empty")).unwrap();
    let msg = err(
        dir.path(),
        "add-model --manifest syn/manifest.json --state empty --model m3 --stats stats.csv --out next",
    );
    assert!(msg.contains("A.csv"), "{msg}");
}

/// A state directory ranking m1 and m2, with m3 left to add.
fn two_model_state(dir: &Path) {
    prepared(dir, "");
    let mut m = json(&dir.join("syn/manifest.json"));
    m["models"].as_array_mut().unwrap().truncate(2);
    fs::write(dir.join("syn/manifest2.json"), m.to_string()).unwrap();
    ok(
        dir,
        "select --manifest syn/manifest2.json --stats stats.csv --out two/madset.jsonl",
    );
    ok(
        dir,
        "rank --manifest syn/manifest2.json --madset two/madset.jsonl --out two",
    );
}

const ADD_M3: &str = "add-model --manifest syn/manifest.json --state two --model m3 --stats stats.csv --out three";

#[test]
fn add_model_writes_a_worklist_then_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    two_model_state(d);
    fs::create_dir(d.join("partial")).unwrap();
    let add = || ok(d, &format!("{ADD_M3} --annotations partial"));

    let text = add();
    assert!(text.contains("need ground truth"), "{text}");
    let worklist = fs::read_to_string(d.join("three/worklist.txt")).unwrap();
    assert!(!worklist.is_empty());
    assert!(!d.join("three/A.csv").exists());

    for id in worklist.lines() {
        let name = format!("{id}.png");
        fs::copy(d.join("syn/annotations").join(&name), d.join("partial").join(&name)).unwrap();
    }
    let text = add();
    assert!(text.contains("aggressiveness"), "{text}");
    let ranking = json(&d.join("three/ranking.json"));
    let models = ranking["aggressiveness"]["models"].as_array().unwrap();
    assert_eq!(models.len(), 3);
    let m3 = models.iter().find(|m| m["id"] == "m3").unwrap();
    assert_eq!(m3["rank"], 3);
}

#[test]
fn add_model_keeps_the_prior_regime() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    two_model_state(d);
    let msg = err(d, &format!("--metric mpa {ADD_M3}"));
    assert!(msg.contains("same regime"), "{msg}");
    let msg = err(d, &ADD_M3.replace("m3", "m2"));
    assert!(msg.contains("already ranked"), "{msg}");
}

#[test]
fn serve_refuses_a_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path(), "");
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let msg = err(
        dir.path(),
        &format!("--port {port} serve --manifest syn/manifest.json --madset run/madset.jsonl"),
    );
    assert!(msg.contains("binding"), "{msg}");
}
