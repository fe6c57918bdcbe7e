//! Offline end-to-end run with two scripted models whose scores are known in
//! advance: `faithful-pre` always picks the option keyed correct for the
//! original world, `faithful-post` the one keyed correct for the updated world.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use kshift_core::fsutil::write_dir_atomically;
use kshift_core::jsonl;
use kshift_core::kg::{load_kg, InterventionSpec, KnowledgeGraph};
use kshift_core::metrics::{conflict_pairs, conflict_rate, evaluate, score, AnswerRecord, EvalConfig, EvalInput};
use kshift_core::probegen::{
    generate_benchmark, load_config, load_probe_file, validate_item, BenchmarkConfig, McqItem, ProbeType,
};
use kshift_core::Phase;
use serde::Serialize;

use crate::commands::write_report;
use crate::{to_value, write_json, CmdResult, Failure};

pub const FAITHFUL_PRE: &str = "faithful-pre";
pub const FAITHFUL_POST: &str = "faithful-post";
pub const TIME_LIMIT: Duration = Duration::from_secs(60);

/// One answer per item: the keyed option, with all probability on it.
pub fn faithful_answers(key: &[McqItem], model_id: &str, phase: Phase) -> Vec<AnswerRecord> {
    key.iter()
        .map(|item| {
            let mut probs = vec![0.0; item.options.len()];
            probs[item.correct_index] = 1.0;
            AnswerRecord {
                probe_id: item.probe.probe_id.clone(),
                model_id: model_id.to_string(),
                phase,
                chosen_index: item.correct_index,
                choice_probs: Some(probs),
            }
        })
        .collect()
}

/// Every file under `dir` by relative path, for byte-level comparison.
pub fn read_tree(dir: &Path) -> std::io::Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root").to_path_buf();
                out.insert(rel, fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn equal(&mut self, name: impl Into<String>, got: f64, want: f64) {
        self.push(name, got == want, format!("got {got}, expected {want}"));
    }
}

fn is_direct(i: &McqItem) -> bool {
    i.probe.probe_type == ProbeType::Direct
}

fn check_cell(
    cfg: &BenchmarkConfig,
    kg: &KnowledgeGraph,
    cell_dir: &Path,
    label: &str,
    root: &Path,
    checks: &mut Checks,
) -> anyhow::Result<()> {
    let eval = cell_dir.join("eval");
    let pre_key = load_probe_file(&eval.join("probes_pre.jsonl"))?;
    let post_key = load_probe_file(&eval.join("probes_post.jsonl"))?;
    let spec_path = cell_dir.join(format!("intervention_{}.json", cfg.modes[0]));
    let spec: InterventionSpec =
        serde_json::from_str(&fs::read_to_string(&spec_path)?).with_context(|| spec_path.display().to_string())?;

    let bad: Vec<String> = pre_key
        .iter()
        .chain(&post_key)
        .filter_map(|item| {
            let qc = validate_item(item, kg, &spec);
            (!qc.ok).then(|| format!("{} ({}): {:?}", item.probe.probe_id, item.keyed_phase, qc.failures))
        })
        .collect();
    checks.push(
        format!("{label}: every item passes QC"),
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} items", pre_key.len() + post_key.len())
        } else {
            bad.join("; ")
        },
    );

    let pre_answers = faithful_answers(&pre_key, FAITHFUL_PRE, Phase::Pre);
    let post_answers = faithful_answers(&post_key, FAITHFUL_POST, Phase::Post);
    let answer_dir = root
        .join("answers")
        .join(cell_dir.strip_prefix(root.join("benchmark"))?);
    fs::create_dir_all(&answer_dir)?;
    jsonl::write(&answer_dir.join(format!("{FAITHFUL_PRE}.jsonl")), &pre_answers)?;
    jsonl::write(&answer_dir.join(format!("{FAITHFUL_POST}.jsonl")), &post_answers)?;

    for (model, answers, own, other) in [
        (FAITHFUL_PRE, &pre_answers, &pre_key, &post_key),
        (FAITHFUL_POST, &post_answers, &post_key, &pre_key),
    ] {
        let own_phase = own[0].keyed_phase;
        let other_phase = other[0].keyed_phase;
        checks.equal(
            format!("{label}: {model} direct accuracy on {own_phase}-keyed items"),
            score(answers, own, is_direct)?,
            1.0,
        );
        checks.equal(
            format!("{label}: {model} direct accuracy on {other_phase}-keyed items"),
            score(answers, other, is_direct)?,
            0.0,
        );
    }

    let pairs = conflict_pairs(&pre_key, &post_key)?;
    for (model, key) in [(FAITHFUL_PRE, &pre_key), (FAITHFUL_POST, &post_key)] {
        for phase in Phase::ALL {
            let answers = faithful_answers(key, model, phase);
            checks.equal(
                format!("{label}: {model} conflict rate as {phase} answers"),
                conflict_rate(&answers, &pairs)?,
                0.0,
            );
        }
    }

    for &mode in &cfg.modes {
        let input = EvalInput {
            pre_key: pre_key.clone(),
            post_key: post_key.clone(),
            pre_answers: pre_answers.clone(),
            post_answers: post_answers.clone(),
        };
        let eval_cfg = EvalConfig {
            mode,
            ..EvalConfig::default()
        };
        let report = evaluate(&input, &eval_cfg)?;
        let out = root
            .join("reports")
            .join(cell_dir.strip_prefix(root.join("benchmark"))?)
            .join(mode.as_str());
        write_report(&out, &report, false).map_err(|e| anyhow!("{e}"))?;
        match (report.ccr, report.rr) {
            (Some(c), Some(r)) => checks.push(
                format!("{label}/{mode}: ccr + rr = 1"),
                (c + r - 1.0).abs() < 1e-12,
                format!("ccr {c}, rr {r}"),
            ),
            _ => checks.push(format!("{label}/{mode}: ccr + rr = 1"), false, "no related probes"),
        }
        checks.push(
            format!("{label}/{mode}: report conflict rates are 0"),
            report.conflict_rate == Some(0.0) && report.conflict_rate_pre == Some(0.0),
            format!("post {:?}, pre {:?}", report.conflict_rate, report.conflict_rate_pre),
        );
    }
    Ok(())
}

/// Generate the configured benchmark, answer it with both faithful models,
/// evaluate, and check the analytically known outcomes.
pub fn mock_run(config: &Path, out: &Path, seed: Option<u64>, force: bool) -> CmdResult {
    let start = Instant::now();
    let mut cfg = load_config(config).map_err(Failure::usage)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Failure::usage)?;
    if kshift_core::fsutil::is_non_empty_dir(out) && !force {
        return Err(Failure::usage(anyhow!(
            "{} exists and is not empty (use --force to replace it)",
            out.display()
        )));
    }
    let mut graphs = BTreeMap::new();
    for path in &cfg.kg_paths {
        let kg = load_kg(path)
            .with_context(|| path.display().to_string())
            .map_err(Failure::usage)?;
        graphs.insert(kg.domain().to_string(), kg);
    }

    let mut checks = Checks::default();
    let mut summary_value = serde_json::Value::Null;
    write_dir_atomically(out, force, |root| -> anyhow::Result<()> {
        let bench = root.join("benchmark");
        let summary = generate_benchmark(&cfg, &bench, false, None)?;
        summary_value = to_value(&summary);

        let again = root.join("regenerated");
        generate_benchmark(&cfg, &again, false, None)?;
        let identical = read_tree(&bench)? == read_tree(&again)?;
        fs::remove_dir_all(&again)?;
        checks.push("same seed gives a byte-identical benchmark", identical, "");

        let p = &summary.planned;
        checks.push(
            "counts match config arithmetic",
            summary.training_samples == p.training_samples
                && summary.eval_probes == p.eval_probes
                && summary.eval_items == p.eval_items
                && summary.cells.len() == p.cells,
            format!(
                "training {}/{}, probes {}/{}, items {}/{}, cells {}/{}",
                summary.training_samples,
                p.training_samples,
                summary.eval_probes,
                p.eval_probes,
                summary.eval_items,
                p.eval_items,
                summary.cells.len(),
                p.cells
            ),
        );

        for cell in &summary.cells {
            let label = format!("{}/{}", cell.domain, cell.branch);
            let dir = bench.join(&cell.domain).join(cell.branch.as_str());
            check_cell(&cfg, &graphs[&cell.domain], &dir, &label, root, &mut checks)?;
        }

        let elapsed = start.elapsed();
        checks.push(
            format!("runtime under {}s", TIME_LIMIT.as_secs()),
            elapsed < TIME_LIMIT,
            "",
        );
        let passed = checks.0.iter().all(|c| c.passed);
        write_json(
            &root.join("mock_run.json"),
            &serde_json::json!({ "passed": passed, "summary": summary_value, "checks": checks.0 }),
        )?;
        Ok(())
    })
    .map_err(Failure::runtime)?;

    let failed: Vec<&Check> = checks.0.iter().filter(|c| !c.passed).collect();
    if !failed.is_empty() {
        let lines: Vec<String> = failed.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        return Err(Failure::runtime(anyhow!(
            "mock-run checks failed:\n{}",
            lines.join("\n")
        )));
    }
    Ok(serde_json::json!({
        "passed": true,
        "elapsed_ms": start.elapsed().as_millis() as u64,
        "checks": checks.0.len(),
        "summary": summary_value,
    }))
}
