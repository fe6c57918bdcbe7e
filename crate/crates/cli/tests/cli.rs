//! The `kshift` binary end to end: exit codes, stdout documents, output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use kshift_core::geometry::write_phase;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    doc: Value,
    stderr: String,
}

fn kshift(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_kshift")).args(args).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let doc =
        serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("stdout is not one JSON document ({e}): {stdout}"));
    Run {
        code: out.status.code().unwrap(),
        doc,
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

/// One mock run shared by the tests that need a benchmark with answers.
fn mock() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("mock");
        let run = kshift(&["mock-run", "--config", s(&desk_config()), "--out", s(&out)]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        tmp
    })
    .path()
    .join("mock")
    .leak()
}

fn cell(branch: &str) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let root = mock();
    let eval = root.join("benchmark/physics").join(branch).join("eval");
    let answers = root.join("answers/physics").join(branch);
    (
        eval.join("probes_pre.jsonl"),
        eval.join("probes_post.jsonl"),
        answers.join("faithful-pre.jsonl"),
        answers.join("faithful-post.jsonl"),
    )
}

#[test]
fn generate_writes_the_configured_counts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    let run = kshift(&["generate", "--config", s(&desk_config()), "--out", s(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.doc["training_samples"], 66);
    assert_eq!(run.doc["eval_items"], 60);
    assert!(out.join("summary.json").is_file());
    assert!(out.join("physics/leaf/train/edit/scale_10.jsonl").is_file());

    let again = kshift(&["generate", "--config", s(&desk_config()), "--out", s(&out)]);
    assert_eq!(again.code, 2);
    assert_eq!(again.doc["exit_code"], 2);
    assert!(again.doc["error"].as_str().unwrap().contains("--force"));

    let forced = kshift(&["--force", "generate", "--config", s(&desk_config()), "--out", s(&out)]);
    assert_eq!(forced.code, 0, "{}", forced.stderr);
}

#[test]
fn generate_with_a_missing_graph_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(desk_config())
        .unwrap()
        .replace("../data/kg/physics.json", "/nonexistent/physics.json");
    let config = tmp.path().join("bad.toml");
    fs::write(&config, text).unwrap();
    let run = kshift(&["generate", "--config", s(&config), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn seed_override_changes_the_bundle() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        kshift(&["generate", "--config", s(&desk_config()), "--out", s(&a)]).code,
        0
    );
    assert_eq!(
        kshift(&["--seed", "8", "generate", "--config", s(&desk_config()), "--out", s(&b)]).code,
        0
    );
    let file = "physics/root/train/edit/scale_10.jsonl";
    assert_ne!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
}

#[test]
fn evaluate_scores_faithful_answers() {
    let (pre_key, post_key, pre, post) = cell("root");
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("eval");
    let run = kshift(&[
        "evaluate",
        "--probes",
        s(&pre_key),
        "--probes",
        s(&post_key),
        "--pre",
        s(&pre),
        "--post",
        s(&post),
        "--out",
        s(&out),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let ccr = run.doc["ccr"].as_f64().unwrap();
    let rr = run.doc["rr"].as_f64().unwrap();
    assert_eq!(ccr + rr, 1.0);
    assert_eq!(run.doc["conflict_rate"], 0.0);
    let written: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(written, run.doc);
    assert!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count() > 1);
}

#[test]
fn evaluate_names_a_missing_answer() {
    let (pre_key, post_key, pre, post) = cell("intermediate");
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(&post).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped: Value = serde_json::from_str(lines.remove(0)).unwrap();
    let trimmed = tmp.path().join("post.jsonl");
    fs::write(&trimmed, lines.join("\n") + "\n").unwrap();
    let run = kshift(&[
        "evaluate",
        "--probes",
        s(&pre_key),
        "--probes",
        s(&post_key),
        "--pre",
        s(&pre),
        "--post",
        s(&trimmed),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(run.code, 1);
    let id = dropped["probe_id"].as_str().unwrap();
    assert!(run.doc["error"].as_str().unwrap().contains(id), "{}", run.doc);
}

#[test]
fn kl_distance_needs_choice_probabilities() {
    let (pre_key, post_key, pre, post) = cell("leaf");
    let tmp = TempDir::new().unwrap();
    let stripped = tmp.path().join("post.jsonl");
    let lines: Vec<String> = fs::read_to_string(&post)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("choice_probs");
            v.to_string()
        })
        .collect();
    fs::write(&stripped, lines.join("\n") + "\n").unwrap();
    let config = tmp.path().join("eval.toml");
    fs::write(&config, "distance = \"kl\"\n").unwrap();
    let args = |post: &Path, out: &str| {
        kshift(&[
            "evaluate",
            "--probes",
            s(&pre_key),
            "--probes",
            s(&post_key),
            "--pre",
            s(&pre),
            "--post",
            s(post),
            "--config",
            s(&config),
            "--out",
            s(&tmp.path().join(out)),
        ])
    };
    let ok = args(&post, "with");
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert_eq!(ok.doc["distance"], "kl");
    assert_eq!(args(&stripped, "without").code, 1);
}

#[test]
fn evaluate_rejects_a_bad_config() {
    let (pre_key, _, pre, post) = cell("root");
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("eval.toml");
    fs::write(&config, "distance = \"cosine\"\n").unwrap();
    let run = kshift(&[
        "evaluate",
        "--probes",
        s(&pre_key),
        "--pre",
        s(&pre),
        "--post",
        s(&post),
        "--config",
        s(&config),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(run.code, 2);
}

#[test]
fn validate_accepts_the_bundle_and_flags_damage() {
    let (pre_key, post_key, pre, post) = cell("root");
    let run = kshift(&[
        "validate",
        "--probes",
        s(&pre_key),
        "--probes",
        s(&post_key),
        "--answers",
        s(&pre),
        "--answers",
        s(&post),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.doc["ok"], true);
    assert_eq!(run.doc["files"].as_array().unwrap().len(), 4);

    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("answers.jsonl");
    let first = fs::read_to_string(&post).unwrap().lines().next().unwrap().to_string();
    fs::write(&bad, format!("{first}\n{first}\n{{\"probe_id\": 3}}\n")).unwrap();
    let run = kshift(&["validate", "--answers", s(&bad)]);
    assert_eq!(run.code, 1);
}

fn random_phase(rng: &mut impl Rng, shapes: &[(&str, usize, usize)]) -> Vec<(String, DMatrix<f64>)> {
    shapes
        .iter()
        .map(|&(name, r, c)| {
            (
                name.to_string(),
                DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)),
            )
        })
        .collect()
}

fn write(dir: &Path, phase: &[(String, DMatrix<f64>)]) {
    let refs: Vec<(&str, &DMatrix<f64>)> = phase.iter().map(|(n, m)| (n.as_str(), m)).collect();
    write_phase(dir, &refs).unwrap();
}

#[test]
fn geometry_of_copies_and_rescaled_weights() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let tmp = TempDir::new().unwrap();
    let pre = random_phase(&mut rng, &[("attn.q", 12, 8), ("mlp.up", 6, 10)]);
    let doubled: Vec<_> = pre.iter().map(|(n, m)| (n.clone(), m * 2.0)).collect();
    write(&tmp.path().join("pre"), &pre);
    write(&tmp.path().join("copy"), &pre);
    write(&tmp.path().join("double"), &doubled);

    let same = kshift(&[
        "geometry",
        "--pre",
        s(&tmp.path().join("pre")),
        "--post",
        s(&tmp.path().join("copy")),
        "--out",
        s(&tmp.path().join("g1")),
    ]);
    assert_eq!(same.code, 0, "{}", same.stderr);
    for layer in same.doc["layers"].as_array().unwrap() {
        assert_eq!(layer["l2"], 0.0);
        for r in layer["svd"]["scaling_ratios"].as_array().unwrap() {
            assert!((r.as_f64().unwrap() - 1.0).abs() < 1e-9);
        }
    }

    let twice = kshift(&[
        "geometry",
        "--pre",
        s(&tmp.path().join("pre")),
        "--post",
        s(&tmp.path().join("double")),
        "--rank",
        "4",
        "--out",
        s(&tmp.path().join("g2")),
    ]);
    assert_eq!(twice.code, 0, "{}", twice.stderr);
    for layer in twice.doc["layers"].as_array().unwrap() {
        let ratios = layer["svd"]["scaling_ratios"].as_array().unwrap();
        assert_eq!(ratios.len(), 4);
        for r in ratios {
            assert!((r.as_f64().unwrap() - 2.0).abs() < 1e-9);
        }
        assert!((layer["svd"]["left_alignment"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
    assert!(tmp.path().join("g2/geometry.csv").is_file());
}

#[test]
fn geometry_with_mismatched_layers_fails() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let tmp = TempDir::new().unwrap();
    write(&tmp.path().join("pre"), &random_phase(&mut rng, &[("a", 4, 4)]));
    write(&tmp.path().join("post"), &random_phase(&mut rng, &[("b", 4, 4)]));
    let run = kshift(&[
        "geometry",
        "--pre",
        s(&tmp.path().join("pre")),
        "--post",
        s(&tmp.path().join("post")),
        "--out",
        s(&tmp.path().join("g")),
    ]);
    assert_eq!(run.code, 1);
    assert!(!tmp.path().join("g").exists());

    let bad = kshift(&[
        "geometry",
        "--pre",
        s(&tmp.path().join("pre")),
        "--post",
        s(&tmp.path().join("pre")),
        "--rank",
        "0",
        "--out",
        s(&tmp.path().join("g")),
    ]);
    assert_eq!(bad.code, 2);
}

#[test]
fn report_builds_curves_from_an_index() {
    let root = mock();
    let tmp = TempDir::new().unwrap();
    let report = root.join("reports/physics/root/edit/report.json");
    let index = tmp.path().join("runs.toml");
    let mut text = String::new();
    for scale in [1, 10, 100] {
        text.push_str(&format!(
            "[[runs]]\ndomain = \"physics\"\nbranch = \"root\"\nmode = \"edit\"\nscale = {scale}\nreport = \"{}\"\n\n",
            report.display()
        ));
    }
    fs::write(&index, text).unwrap();
    let run = kshift(&["report", "--index", s(&index), "--out", s(&tmp.path().join("curves"))]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let curves = run.doc["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 1);
    assert_eq!(curves[0]["direct"]["scale_points"].as_array().unwrap().len(), 3);
    // A flat curve never collapses.
    assert_eq!(curves[0]["collapse_scale"], Value::Null);
    let csv = fs::read_to_string(tmp.path().join("curves/curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    fs::write(
        &index,
        "[[runs]]\ndomain = \"physics\"\nbranch = \"root\"\nmode = \"edit\"\nscale = 7\nreport = \"x\"\n",
    )
    .unwrap();
    assert_eq!(
        kshift(&["report", "--index", s(&index), "--out", s(&tmp.path().join("c2"))]).code,
        2
    );
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["--jobs", "0", "validate"][..],
        &["frobnicate"],
        &["geometry", "--pre", "x"],
    ] {
        let run = kshift(args);
        assert_eq!(run.code, 2, "{args:?}");
        assert_eq!(run.doc["exit_code"], 2);
        assert!(!run.stderr.is_empty());
    }
}

#[test]
fn worker_count_does_not_change_the_bundle() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (jobs, out) in [("1", &a), ("4", &b)] {
        let run = kshift(&[
            "--jobs",
            jobs,
            "generate",
            "--config",
            s(&desk_config()),
            "--out",
            s(out),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
    }
    assert!(kshift_cli::mock::read_tree(&a).unwrap() == kshift_cli::mock::read_tree(&b).unwrap());
}
