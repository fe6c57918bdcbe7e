use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_mcq, build_probes, expand_scale, instantiate_templates, training_statements, validate_item, McqItem,
    ProbeError, ProbeRecord, ProbeType, ScaleTag, TrainingRecord,
};
use crate::fsutil::write_dir_atomically;
use crate::kg::{
    derive_intervention, load_kg, FactTriple, InterventionMode, InterventionSpec, KnowledgeGraph, NodeLevel,
};
use crate::textgen::TextGenerator;
use crate::{jsonl, Phase};

pub const DEFAULT_EVAL_PROBES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Builtin,
    Llm,
}

/// Pins the intervened fact for one (domain, branch) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetOverride {
    pub domain: String,
    pub branch: NodeLevel,
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(default)]
    pub replacement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub kg_paths: Vec<PathBuf>,
    pub domains: Vec<String>,
    pub branches: Vec<NodeLevel>,
    pub modes: Vec<InterventionMode>,
    pub scales: Vec<u64>,
    #[serde(default = "default_eval_probes")]
    pub eval_probes_per_branch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorKind,
    #[serde(default)]
    pub llm_endpoint: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Relative weight per probe type; missing types get weight 0. Equal split
    /// when absent.
    #[serde(default)]
    pub probe_mix: Option<BTreeMap<ProbeType, f64>>,
    #[serde(default)]
    pub targets: Vec<TargetOverride>,
}

fn default_eval_probes() -> usize {
    DEFAULT_EVAL_PROBES
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(ProbeError::Config(format!("`{name}` must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("kg_paths", self.kg_paths.len())?;
        nonempty("domains", self.domains.len())?;
        nonempty("branches", self.branches.len())?;
        nonempty("modes", self.modes.len())?;
        nonempty("scales", self.scales.len())?;
        if self.eval_probes_per_branch == 0 {
            return Err(ProbeError::Config("`eval_probes_per_branch` must be at least 1".into()));
        }
        for (name, len, distinct) in [
            (
                "domains",
                self.domains.len(),
                self.domains.iter().collect::<BTreeSet<_>>().len(),
            ),
            (
                "branches",
                self.branches.len(),
                self.branches.iter().collect::<BTreeSet<_>>().len(),
            ),
            (
                "modes",
                self.modes.len(),
                self.modes.iter().collect::<BTreeSet<_>>().len(),
            ),
            (
                "scales",
                self.scales.len(),
                self.scales.iter().collect::<BTreeSet<_>>().len(),
            ),
        ] {
            if len != distinct {
                return Err(ProbeError::Config(format!("`{name}` contains duplicates")));
            }
        }
        for &k in &self.scales {
            ScaleTag::try_from(k).map_err(|e| ProbeError::Config(e.to_string()))?;
        }
        if self.generator == GeneratorKind::Llm && self.llm_endpoint.is_none() {
            log::debug!("llm generator without llm_endpoint; the endpoint comes from the environment");
        }
        if let Some(mix) = &self.probe_mix {
            if mix.values().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(ProbeError::Config(
                    "`probe_mix` weights must be finite and non-negative".into(),
                ));
            }
            if mix.values().sum::<f64>() <= 0.0 {
                return Err(ProbeError::Config(
                    "`probe_mix` needs at least one positive weight".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn scale_tags(&self) -> Vec<ScaleTag> {
        let mut tags: Vec<ScaleTag> = self.scales.iter().filter_map(|&k| ScaleTag::try_from(k).ok()).collect();
        tags.sort();
        tags
    }

    /// Probes per type for one evaluation set, by largest remainder over the
    /// mix weights. An odd conflict share gives one probe to direct so that
    /// conflict probes stay paired.
    pub fn probe_quota(&self) -> BTreeMap<ProbeType, usize> {
        let weights: Vec<(ProbeType, f64)> = ProbeType::ALL
            .iter()
            .map(|&t| {
                let w = match &self.probe_mix {
                    Some(mix) => mix.get(&t).copied().unwrap_or(0.0),
                    None => 1.0,
                };
                (t, w)
            })
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let n = self.eval_probes_per_branch;
        let exact: Vec<f64> = weights.iter().map(|(_, w)| w / total * n as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = quota.iter().sum();
        for &i in order.iter().take(n - assigned) {
            quota[i] += 1;
        }
        let mut out: BTreeMap<ProbeType, usize> = weights.iter().zip(quota).map(|(&(t, _), q)| (t, q)).collect();
        let conflict = out[&ProbeType::Conflict];
        if conflict % 2 == 1 {
            *out.get_mut(&ProbeType::Conflict).expect("all types present") -= 1;
            *out.get_mut(&ProbeType::Direct).expect("all types present") += 1;
        }
        out
    }
}

/// Read a TOML or JSON config (by extension); relative paths resolve against
/// the config file's directory.
pub fn load_config(path: &Path) -> Result<BenchmarkConfig, ProbeError> {
    let text = fs::read_to_string(path).map_err(|e| ProbeError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: BenchmarkConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            serde_json::from_str(&text).map_err(|e| ProbeError::Config(format!("{}: {e}", path.display())))?
        }
        _ => toml::from_str(&text).map_err(|e| ProbeError::Config(format!("{}: {e}", path.display())))?,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for p in &mut cfg.kg_paths {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(out) = &mut cfg.output_dir {
        if out.is_relative() {
            *out = base.join(&*out);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedCounts {
    pub cells: usize,
    pub training_samples: u64,
    pub eval_probes: usize,
    pub eval_items: usize,
}

/// Counts implied by the config alone: one target fact per (domain, branch)
/// cell, training data per mode and scale, and one evaluation set per cell
/// keyed both pre and post.
pub fn planned_counts(cfg: &BenchmarkConfig) -> PlannedCounts {
    let cells = cfg.domains.len() * cfg.branches.len();
    let per_mode: u64 = cfg.scales.iter().sum();
    PlannedCounts {
        cells,
        training_samples: cells as u64 * cfg.modes.len() as u64 * per_mode,
        eval_probes: cells * cfg.eval_probes_per_branch,
        eval_items: cells * cfg.eval_probes_per_branch * 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub domain: String,
    pub branch: NodeLevel,
    pub fact_id: String,
    pub original: String,
    pub updated: String,
    pub probes_by_type: BTreeMap<ProbeType, usize>,
    pub eval_items: usize,
    pub training: BTreeMap<InterventionMode, BTreeMap<u32, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub seed: u64,
    pub planned: PlannedCounts,
    pub training_samples: u64,
    pub eval_probes: usize,
    pub eval_items: usize,
    pub cells: Vec<CellSummary>,
}

struct Cell {
    summary: CellSummary,
    specs: Vec<InterventionSpec>,
    pre: Vec<McqItem>,
    post: Vec<McqItem>,
    training: Vec<(InterventionMode, ScaleTag, Vec<TrainingRecord>)>,
}

fn load_graphs(cfg: &BenchmarkConfig) -> Result<BTreeMap<String, KnowledgeGraph>, ProbeError> {
    let mut graphs = BTreeMap::new();
    for path in &cfg.kg_paths {
        let kg = load_kg(path).map_err(|e| ProbeError::Config(format!("{}: {e}", path.display())))?;
        if graphs.insert(kg.domain().to_string(), kg).is_some() {
            return Err(ProbeError::Config(format!("domain of {} loaded twice", path.display())));
        }
    }
    for d in &cfg.domains {
        if !graphs.contains_key(d) {
            return Err(ProbeError::Config(format!("no knowledge graph for domain `{d}`")));
        }
    }
    Ok(graphs)
}

/// The fact intervened on in a cell: the configured override, otherwise the
/// first literal fact (by id) whose subject sits at `branch` and which has a
/// sibling object to be replaced with.
fn pick_target(
    cfg: &BenchmarkConfig,
    kg: &KnowledgeGraph,
    domain: &str,
    branch: NodeLevel,
) -> Result<(FactTriple, Option<String>), ProbeError> {
    if let Some(t) = cfg.targets.iter().find(|t| t.domain == domain && t.branch == branch) {
        let fact = FactTriple::new(&t.subject, &t.relation, &t.object);
        if kg.level_of(&fact.subject)? != branch {
            return Err(ProbeError::Config(format!(
                "target {fact} is not at the {branch} level"
            )));
        }
        return Ok((fact, t.replacement.clone()));
    }
    let mut candidates: Vec<&FactTriple> = kg
        .literal_facts()
        .filter(|f| kg.level_of(&f.subject).map(|l| l == branch).unwrap_or(false))
        .filter(|f| !kg.sibling_objects(f).is_empty())
        .collect();
    candidates.sort_by_key(|f| f.id());
    candidates.first().map(|f| ((*f).clone(), None)).ok_or_else(|| {
        ProbeError::Config(format!(
            "domain `{domain}` has no editable literal fact at the {branch} level"
        ))
    })
}

/// Answer and counterpart for a probe under `phase`, plus the object a reverse
/// question is bound to.
fn keyed(
    item: &super::Probe,
    kg: &KnowledgeGraph,
    spec: &InterventionSpec,
    phase: Phase,
) -> Result<(String, Option<String>, Option<String>), ProbeError> {
    let fact = kg
        .fact_by_id(&item.fact_id)
        .ok_or_else(|| ProbeError::UnknownFact(item.fact_id.clone()))?;
    let original = kg.display(&spec.item.object).to_string();
    let updated = kg
        .display(
            spec.post_object()
                .ok_or_else(|| ProbeError::MissingUpdate(spec.item.id()))?,
        )
        .to_string();
    let on_target = fact == &spec.item;
    Ok(match (item.probe_type, on_target) {
        (super::ProbeType::Reverse, true) => {
            let bound = if phase == Phase::Pre { original } else { updated };
            (kg.display(&fact.subject).to_string(), None, Some(bound))
        }
        (super::ProbeType::Reverse, false) => (
            kg.display(&fact.subject).to_string(),
            None,
            Some(kg.display(&fact.object).to_string()),
        ),
        (_, true) => match phase {
            Phase::Pre => (original, Some(updated), None),
            Phase::Post => (updated, Some(original), None),
        },
        (_, false) => (kg.display(&fact.object).to_string(), None, None),
    })
}

fn build_cell(
    cfg: &BenchmarkConfig,
    kg: &KnowledgeGraph,
    domain: &str,
    branch: NodeLevel,
    generator: Option<&dyn TextGenerator>,
) -> Result<Cell, ProbeError> {
    let seed = cfg.seed;
    let (fact, replacement) = pick_target(cfg, kg, domain, branch)?;
    let edit = derive_intervention(kg, &fact, InterventionMode::Edit, replacement.as_deref(), seed)?;
    let updated = edit.post_object().expect("edit specs carry an update").to_string();

    let quota = cfg.probe_quota();
    let types: BTreeSet<ProbeType> = quota.iter().filter(|(_, &q)| q > 0).map(|(&t, _)| t).collect();
    let count = *quota.values().max().expect("six probe types");
    let templates = instantiate_templates(kg, &fact, branch, generator, count, seed)?;
    let probes = build_probes(kg, &edit, &templates, &types, seed)?;

    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut by_type = BTreeMap::new();
    for t in ProbeType::ALL {
        let q = quota[&t];
        by_type.insert(t, q);
        for probe in probes.iter().filter(|p| p.probe_type == t).take(q) {
            for (phase, out) in [(Phase::Pre, &mut pre), (Phase::Post, &mut post)] {
                let (answer, counterpart, bind) = keyed(probe, kg, &edit, phase)?;
                let bound = match &bind {
                    Some(object) => probe.bind_object(object),
                    None => probe.clone(),
                };
                let item = build_mcq(&bound, &answer, counterpart.as_deref(), kg, phase, seed)?;
                let qc = validate_item(&item, kg, &edit);
                if !qc.ok {
                    return Err(ProbeError::QcFailure {
                        probe_id: item.probe.probe_id.clone(),
                        phase,
                        failures: qc.failures,
                    });
                }
                out.push(item);
            }
        }
    }

    let mut specs = Vec::new();
    let mut training = Vec::new();
    let mut training_counts = BTreeMap::new();
    let tags = cfg.scale_tags();
    for &mode in &cfg.modes {
        let spec = if mode == InterventionMode::Edit {
            edit.clone()
        } else {
            derive_intervention(kg, &fact, mode, Some(&updated), seed)?
        };
        let base = training_statements(kg, &spec)?;
        let largest = *tags.last().expect("scales validated non-empty");
        let pool = expand_scale(&base, largest, seed)?;
        let mut counts = BTreeMap::new();
        for &tag in &tags {
            let records: Vec<TrainingRecord> = pool[..tag.get() as usize]
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.scale_tag = tag;
                    TrainingRecord::new(&s, mode)
                })
                .collect();
            counts.insert(tag.get(), records.len());
            training.push((mode, tag, records));
        }
        training_counts.insert(mode, counts);
        specs.push(spec);
    }

    Ok(Cell {
        summary: CellSummary {
            domain: domain.to_string(),
            branch,
            fact_id: fact.id(),
            original: kg.display(&fact.object).to_string(),
            updated: kg.display(&updated).to_string(),
            probes_by_type: by_type,
            eval_items: pre.len() + post.len(),
            training: training_counts,
        },
        specs,
        pre,
        post,
        training,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeError + '_ {
    move |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ProbeError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_cell(root: &Path, cell: &Cell) -> Result<(), ProbeError> {
    let dir = root.join(&cell.summary.domain).join(cell.summary.branch.as_str());
    let eval = dir.join("eval");
    fs::create_dir_all(&eval).map_err(io_err(&eval))?;
    for spec in &cell.specs {
        write_json(&dir.join(format!("intervention_{}.json", spec.mode)), spec)?;
    }
    for (name, items) in [("probes_pre.jsonl", &cell.pre), ("probes_post.jsonl", &cell.post)] {
        let records: Vec<ProbeRecord> = items.iter().map(ProbeRecord::from).collect();
        let path = eval.join(name);
        jsonl::write(&path, &records).map_err(io_err(&path))?;
    }
    for (mode, tag, records) in &cell.training {
        let mode_dir = dir.join("train").join(mode.as_str());
        fs::create_dir_all(&mode_dir).map_err(io_err(&mode_dir))?;
        let path = mode_dir.join(format!("scale_{tag}.jsonl"));
        jsonl::write(&path, records).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Generate every (domain, branch) cell and write the bundle to `out`.
///
/// Cells are built in parallel and written by a single writer in config order;
/// the directory appears only once complete. Output is a pure function of the
/// config and seed (and generator replies, when one is given).
pub fn generate_benchmark(
    cfg: &BenchmarkConfig,
    out: &Path,
    force: bool,
    generator: Option<&dyn TextGenerator>,
) -> Result<BenchmarkSummary, ProbeError> {
    cfg.validate()?;
    let graphs = load_graphs(cfg)?;
    let jobs: Vec<(&str, NodeLevel)> = cfg
        .domains
        .iter()
        .flat_map(|d| cfg.branches.iter().map(move |&b| (d.as_str(), b)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(domain, branch)| build_cell(cfg, &graphs[domain], domain, branch, generator))
        .collect::<Result<_, _>>()?;

    let summary = BenchmarkSummary {
        seed: cfg.seed,
        planned: planned_counts(cfg),
        training_samples: cells
            .iter()
            .flat_map(|c| c.training.iter().map(|(_, _, r)| r.len() as u64))
            .sum(),
        eval_probes: cells.iter().map(|c| c.pre.len()).sum(),
        eval_items: cells.iter().map(|c| c.summary.eval_items).sum(),
        cells: cells.iter().map(|c| c.summary.clone()).collect(),
    };
    write_dir_atomically(out, force, |root| {
        for cell in &cells {
            write_cell(root, cell)?;
        }
        write_json(&root.join("summary.json"), &summary)
    })?;
    log::info!(
        "wrote {} cells, {} training samples, {} eval items to {}",
        summary.cells.len(),
        summary.training_samples,
        summary.eval_items,
        out.display()
    );
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BenchmarkConfig {
        BenchmarkConfig {
            kg_paths: vec![],
            domains: vec!["physics".into()],
            branches: NodeLevel::ALL.to_vec(),
            modes: InterventionMode::ALL.to_vec(),
            scales: vec![1, 10],
            eval_probes_per_branch: 10,
            seed: 0,
            generator: GeneratorKind::Builtin,
            llm_endpoint: None,
            output_dir: None,
            probe_mix: None,
            targets: vec![],
        }
    }

    #[test]
    fn desk_arithmetic() {
        let c = cfg();
        let p = planned_counts(&c);
        assert_eq!(p.training_samples, 3 * 2 * (1 + 10));
        assert_eq!(p.eval_items, 3 * 10 * 2);
    }

    #[test]
    fn full_grid_arithmetic() {
        let mut c = cfg();
        c.domains = vec!["biology".into(), "physics".into(), "history".into(), "economics".into()];
        c.scales = vec![10000];
        assert_eq!(planned_counts(&c).training_samples, 240_000);
    }

    #[test]
    fn quota_sums_and_pairs() {
        let mut c = cfg();
        for n in 1..=120 {
            c.eval_probes_per_branch = n;
            let q = c.probe_quota();
            assert_eq!(q.values().sum::<usize>(), n);
            assert_eq!(q[&ProbeType::Conflict] % 2, 0);
        }
        c.eval_probes_per_branch = 10;
        let q = c.probe_quota();
        assert_eq!(q[&ProbeType::Direct], 2);
        assert_eq!(q[&ProbeType::Conflict], 2);
    }

    #[test]
    fn bad_scale_is_config_error() {
        let mut c = cfg();
        c.kg_paths = vec!["x.json".into()];
        c.scales = vec![3];
        assert!(matches!(c.validate(), Err(ProbeError::Config(_))));
    }
}
