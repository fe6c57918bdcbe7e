use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use kshift_core::fsutil::{is_non_empty_dir, write_dir_atomically};
use kshift_core::geometry::{analyze, load_pairs, load_phase, DEFAULT_TOL};
use kshift_core::kg::{InterventionMode, NodeLevel};
use kshift_core::metrics::{
    collapse_point, evaluate as evaluate_report, load_answers, AccuracyCell, CurveKey, EvalConfig, EvalInput,
    MetricReport, PlasticityCurve,
};
use kshift_core::probegen::{
    generate_benchmark, load_config, load_probe_file, GeneratorKind, McqItem, ProbeError, ProbeType, ScaleTag,
};
use kshift_core::textgen::{HttpTextGenerator, TextGenerator};
use kshift_core::Phase;
use serde::{Deserialize, Serialize};

use crate::{to_value, write_json, CmdResult, Failure};

fn check_out(out: &Path, force: bool) -> Result<(), Failure> {
    if is_non_empty_dir(out) && !force {
        return Err(Failure::usage(anyhow!(
            "{} exists and is not empty (use --force to replace it)",
            out.display()
        )));
    }
    Ok(())
}

fn probe_failure(e: ProbeError) -> Failure {
    match e {
        ProbeError::Config(_) | ProbeError::InvalidScale(_) | ProbeError::Output(_) => Failure::usage(e),
        _ => Failure::runtime(e),
    }
}

pub fn generate(config: &Path, out: Option<&Path>, seed: Option<u64>, force: bool) -> CmdResult {
    let mut cfg = load_config(config).map_err(Failure::usage)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Failure::usage(anyhow!("no output directory: pass --out or set output_dir")))?;
    check_out(&out, force)?;
    let http;
    let generator: Option<&dyn TextGenerator> = match cfg.generator {
        GeneratorKind::Builtin => None,
        GeneratorKind::Llm => {
            http = HttpTextGenerator::from_env(cfg.llm_endpoint.as_deref()).map_err(Failure::usage)?;
            Some(&http)
        }
    };
    let summary = generate_benchmark(&cfg, &out, force, generator).map_err(probe_failure)?;
    Ok(to_value(&summary))
}

#[derive(Debug, Serialize)]
struct FileCheck {
    path: PathBuf,
    kind: &'static str,
    records: usize,
    error: Option<String>,
}

/// Schema checks for probe and answer files, plus agreement of options
/// between the pre- and post-keyed copies of each probe.
pub fn validate(probes: &[PathBuf], answers: &[PathBuf]) -> CmdResult {
    if probes.is_empty() && answers.is_empty() {
        return Err(Failure::usage(anyhow!(
            "nothing to validate: pass --probes and/or --answers"
        )));
    }
    let mut files = Vec::new();
    let mut keyed: BTreeMap<Phase, HashMap<String, Vec<String>>> = BTreeMap::new();
    for path in probes {
        let (records, error) = match load_probe_file(path) {
            Ok(items) => {
                let n = items.len();
                let mut dup = None;
                for item in items {
                    let map = keyed.entry(item.keyed_phase).or_default();
                    if map.insert(item.probe.probe_id.clone(), item.options).is_some() {
                        dup.get_or_insert(format!("duplicate {} item `{}`", item.keyed_phase, item.probe.probe_id));
                    }
                }
                (n, dup)
            }
            Err(e) => (0, Some(e.to_string())),
        };
        files.push(FileCheck {
            path: path.clone(),
            kind: "probes",
            records,
            error,
        });
    }
    for path in answers {
        let (records, error) = match load_answers(path) {
            Ok(a) => (a.len(), None),
            Err(e) => (0, Some(e.to_string())),
        };
        files.push(FileCheck {
            path: path.clone(),
            kind: "answers",
            records,
            error,
        });
    }
    let mut mismatched: Vec<String> = Vec::new();
    if let (Some(pre), Some(post)) = (keyed.get(&Phase::Pre), keyed.get(&Phase::Post)) {
        for (id, options) in pre {
            if post.get(id).is_some_and(|o| o != options) {
                mismatched.push(id.clone());
            }
        }
    }
    mismatched.sort();
    let failed: Vec<String> = files
        .iter()
        .filter_map(|f| f.error.as_ref().map(|e| format!("{}: {e}", f.path.display())))
        .chain(
            mismatched
                .iter()
                .map(|id| format!("`{id}` has different options in its pre and post items")),
        )
        .collect();
    if !failed.is_empty() {
        return Err(Failure::runtime(anyhow!("{}", failed.join("\n"))));
    }
    Ok(serde_json::json!({ "ok": true, "files": files }))
}

pub fn load_eval_config(config: Option<&Path>) -> Result<EvalConfig, Failure> {
    match config {
        Some(path) => EvalConfig::load(path).map_err(Failure::usage),
        None => Ok(EvalConfig::default()),
    }
}

fn load_items(paths: &[PathBuf]) -> Result<Vec<McqItem>, Failure> {
    let mut items = Vec::new();
    for p in paths {
        items.extend(load_probe_file(p).map_err(Failure::runtime)?);
    }
    Ok(items)
}

/// Score answer logs and write `report.json` and `report.csv` to `out`.
pub fn evaluate(
    probes: &[PathBuf],
    pre: &Path,
    post: &Path,
    config: Option<&Path>,
    out: &Path,
    force: bool,
) -> CmdResult {
    let cfg = load_eval_config(config)?;
    if probes.is_empty() {
        return Err(Failure::usage(anyhow!("at least one --probes file is required")));
    }
    check_out(out, force)?;
    let items = load_items(probes)?;
    let pre_answers = load_answers(pre).map_err(Failure::runtime)?;
    let post_answers = load_answers(post).map_err(Failure::runtime)?;
    let input = EvalInput::from_items(items, pre_answers, post_answers);
    let report = evaluate_report(&input, &cfg).map_err(Failure::runtime)?;
    write_report(out, &report, force)?;
    Ok(to_value(&report))
}

pub(crate) fn write_report(out: &Path, report: &MetricReport, force: bool) -> Result<(), Failure> {
    write_dir_atomically(out, force, |dir| -> anyhow::Result<()> {
        write_json(&dir.join("report.json"), report)?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        Ok(())
    })
    .map_err(Failure::runtime)
}

/// Per-layer geometry of pre vs post weights, as `geometry.json` and `geometry.csv`.
pub fn geometry(
    pre: &Path,
    post: &Path,
    fisher: Option<&Path>,
    rank: Option<usize>,
    tol: Option<f64>,
    out: &Path,
    force: bool,
) -> CmdResult {
    let tol = tol.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0) || rank == Some(0) {
        return Err(Failure::usage(anyhow!("--tol must be positive and --rank at least 1")));
    }
    check_out(out, force)?;
    let pairs = load_pairs(pre, post).map_err(Failure::runtime)?;
    let fisher = fisher.map(load_phase).transpose().map_err(Failure::runtime)?;
    let report = analyze(&pairs, fisher.as_ref(), rank, tol).map_err(Failure::runtime)?;
    write_dir_atomically(out, force, |dir| -> anyhow::Result<()> {
        write_json(&dir.join("geometry.json"), &report)?;
        fs::write(dir.join("geometry.csv"), report.to_csv())?;
        Ok(())
    })
    .map_err(Failure::runtime)?;
    Ok(to_value(&report))
}

/// One evaluated run in a curve index.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub domain: String,
    pub branch: NodeLevel,
    pub mode: InterventionMode,
    pub scale: ScaleTag,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunIndex {
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Serialize)]
struct CurveReport {
    direct: PlasticityCurve,
    reverse: PlasticityCurve,
    collapse_scale: Option<ScaleTag>,
}

type Points = Vec<(ScaleTag, f64)>;

/// Post-phase, post-keyed reverse accuracy pooled over all cells of a report.
fn reverse_accuracy(cells: &[AccuracyCell]) -> Option<f64> {
    let (n, correct) = cells
        .iter()
        .filter(|c| {
            c.key.answer_phase == Phase::Post
                && c.key.keyed_phase == Phase::Post
                && c.key.probe_type == ProbeType::Reverse
        })
        .fold((0, 0), |(n, k), c| (n + c.n, k + c.correct));
    (n > 0).then(|| correct as f64 / n as f64)
}

/// Plasticity curves and collapse points from reports evaluated at several
/// data scales, as `curves.json` and `curves.csv`.
pub fn report(index: &Path, config: Option<&Path>, out: &Path, force: bool) -> CmdResult {
    let cfg = load_eval_config(config)?;
    let text = fs::read_to_string(index)
        .with_context(|| index.display().to_string())
        .map_err(Failure::usage)?;
    let parsed: RunIndex = match index.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(Failure::usage)?,
        _ => toml::from_str(&text).map_err(Failure::usage)?,
    };
    if parsed.runs.is_empty() {
        return Err(Failure::usage(anyhow!("{} lists no runs", index.display())));
    }
    check_out(out, force)?;
    let base = index.parent().unwrap_or(Path::new("."));

    let mut points: BTreeMap<CurveKey, (Points, Points)> = BTreeMap::new();
    for run in &parsed.runs {
        let path = base.join(&run.report);
        let text = fs::read_to_string(&path)
            .with_context(|| path.display().to_string())
            .map_err(Failure::runtime)?;
        let report: MetricReport = serde_json::from_str(&text)
            .with_context(|| path.display().to_string())
            .map_err(Failure::runtime)?;
        let direct = report
            .direct_accuracy
            .ok_or_else(|| Failure::runtime(anyhow!("{} has no direct accuracy", path.display())))?;
        let reverse = reverse_accuracy(&report.accuracy)
            .ok_or_else(|| Failure::runtime(anyhow!("{} has no post-keyed reverse accuracy", path.display())))?;
        let key = CurveKey {
            domain: run.domain.clone(),
            branch: run.branch,
            mode: run.mode,
        };
        let entry = points.entry(key).or_default();
        entry.0.push((run.scale, direct));
        entry.1.push((run.scale, reverse));
    }

    let mut curves = Vec::new();
    for (key, (d, r)) in points {
        let direct = PlasticityCurve::new(key.clone(), d).map_err(Failure::runtime)?;
        let reverse = PlasticityCurve::new(key, r).map_err(Failure::runtime)?;
        let collapse_scale = collapse_point(&direct, &reverse, &cfg).map_err(Failure::runtime)?;
        curves.push(CurveReport {
            direct,
            reverse,
            collapse_scale,
        });
    }

    let mut csv = String::from("domain,branch,mode,scale,direct_accuracy,reverse_accuracy\n");
    for c in &curves {
        for (&(scale, d), &(_, r)) in c.direct.scale_points.iter().zip(&c.reverse.scale_points) {
            let k = &c.direct.key;
            csv.push_str(&format!("{},{},{},{scale},{d},{r}\n", k.domain, k.branch, k.mode));
        }
    }
    let doc = serde_json::json!({ "curves": curves });
    write_dir_atomically(out, force, |dir| -> anyhow::Result<()> {
        write_json(&dir.join("curves.json"), &doc)?;
        fs::write(dir.join("curves.csv"), &csv)?;
        Ok(())
    })
    .map_err(Failure::runtime)?;
    Ok(doc)
}
