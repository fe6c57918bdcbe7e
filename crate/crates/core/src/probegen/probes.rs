use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use super::templates::FRAMINGS;
use super::{Probe, ProbeError, ProbeType, Template, CONFLICT_NEW_TAG, CONFLICT_OLD_TAG};
use crate::kg::{FactTriple, InterventionSpec, KgNode, KnowledgeGraph};
use crate::rng;

const PASSIVE_PREPOSITIONS: [&str; 9] = ["in", "by", "on", "at", "from", "for", "as", "to", "with"];

/// Readable verb phrase for a relation name: `published_in` → `was published in`,
/// `describes` → `describes`.
pub fn relation_phrase(relation: &str) -> String {
    let words: Vec<&str> = relation.split(['_', ' ']).filter(|w| !w.is_empty()).collect();
    let joined = words.join(" ");
    match words.last() {
        Some(last) if words.len() >= 2 && PASSIVE_PREPOSITIONS.contains(last) => format!("was {joined}"),
        _ => joined,
    }
}

const REVERSE_FRAMES: [&str; 4] = [
    "Which of the following {relation} {object}?",
    "Identify which of the following {relation} {object}.",
    "Among the options, which one {relation} {object}?",
    "Name the one that {relation} {object}.",
];

const CONFLICT_FRAMES: [&str; 3] = [
    "Some sources claim that {subject} {relation} {claimed}, while others say {other}. Which is correct?",
    "A report states that {subject} {relation} {claimed}; another disputes it with {other}. Which is right?",
    "You may have read that {subject} {relation} {claimed}. Others insist on {other}. Which is accurate?",
];

const MULTI_HOP_FRAMES: [&str; 3] = [
    "{far} is connected to {subject} through the knowledge hierarchy. Following that chain, {subject} {relation} which of the following?",
    "Starting from {far} and tracing its links to {subject}: {subject} {relation} what?",
    "Knowledge about {far} builds on {subject}. In that chain, {subject} {relation} which of the following?",
];

const COMPARISON_FRAMES: [&str; 3] = [
    "Between {a} and {b}, which is correct: {subject} {relation} ___?",
    "Is it {a} or {b}? {subject} {relation} which of these?",
    "Comparing {a} with {b}, {subject} {relation} which of the following?",
];

const CONTEXTUAL_FRAMES: [&str; 3] = [
    "{subject} {relation} is a topic of recent updates. Setting that aside, {ctx_subject} {ctx_relation} which of the following?",
    "While discussing {subject}, a related question comes up: {ctx_subject} {ctx_relation} what?",
    "{ctx_subject} is often mentioned alongside {subject}. {ctx_subject} {ctx_relation} which of the following?",
];

fn framed(i: usize, cycle: usize, body: String) -> String {
    format!("{}{body}", FRAMINGS[(i / cycle) % FRAMINGS.len()])
}

fn short_hash(text: &str) -> String {
    let digest = rng::seed_digest(0, text);
    let mut out = String::with_capacity(8);
    for b in &digest[..4] {
        write!(out, "{b:02x}").expect("writing to a String");
    }
    out
}

struct Ctx<'a> {
    kg: &'a KnowledgeGraph,
    spec: &'a InterventionSpec,
    subject: &'a str,
    relation: String,
    prefix: String,
    domain: String,
    branch: crate::kg::NodeLevel,
}

impl Ctx<'_> {
    fn probe(&self, probe_type: ProbeType, id_suffix: &str, question: String) -> Probe {
        Probe {
            probe_id: format!("{}-{}-{id_suffix}", self.prefix, probe_type.as_str()),
            fact_id: self.spec.item.id(),
            domain: self.domain.clone(),
            branch: self.branch,
            probe_type,
            polarity: probe_type.default_polarity(),
            question,
            hop_distance: 0,
            pair_id: None,
            tags: Vec::new(),
        }
    }

    fn updated(&self) -> Result<&FactTriple, ProbeError> {
        self.spec
            .updated
            .as_ref()
            .ok_or_else(|| ProbeError::MissingUpdate(self.spec.item.id()))
    }
}

/// Build probes of every requested type for the intervention in `spec`.
///
/// Each type yields one probe per template (conflict yields one pair per
/// template). Reverse probes keep an `{object}` placeholder that is bound per
/// keyed phase. Ids are `{domain}-{branch}-{fact hash}-{type}-{index}`.
pub fn build_probes(
    kg: &KnowledgeGraph,
    spec: &InterventionSpec,
    templates: &[Template],
    types: &BTreeSet<ProbeType>,
    seed: u64,
) -> Result<Vec<Probe>, ProbeError> {
    if templates.is_empty() {
        return Err(ProbeError::InvalidArgument("no templates given".into()));
    }
    if types.is_empty() {
        return Err(ProbeError::InvalidArgument("no probe types requested".into()));
    }
    let node = kg
        .node(&spec.item.subject)
        .ok_or_else(|| crate::kg::KgError::UnknownNode(spec.item.subject.clone()))?;
    let ctx = Ctx {
        kg,
        spec,
        subject: kg.display(&spec.item.subject),
        relation: relation_phrase(&spec.item.relation),
        prefix: format!(
            "{}-{}-{}",
            kg.node_domain(node),
            node.level,
            short_hash(&spec.item.id())
        ),
        domain: kg.node_domain(node).to_string(),
        branch: node.level,
    };
    let n = templates.len();
    let mut out = Vec::new();
    for &probe_type in types {
        match probe_type {
            ProbeType::Direct => {
                for (i, t) in templates.iter().enumerate() {
                    let mut p = ctx.probe(probe_type, &format!("{i:03}"), t.render(ctx.subject, &ctx.relation));
                    p.tags.push(format!("style:{}", t.style));
                    out.push(p);
                }
            }
            ProbeType::Reverse => {
                for i in 0..n {
                    let frame = REVERSE_FRAMES[i % REVERSE_FRAMES.len()].replace("{relation}", &ctx.relation);
                    out.push(ctx.probe(probe_type, &format!("{i:03}"), framed(i, REVERSE_FRAMES.len(), frame)));
                }
            }
            ProbeType::Conflict => out.extend(conflict_probes(&ctx, n)?),
            ProbeType::MultiHop => out.extend(multi_hop_probes(&ctx, n)?),
            ProbeType::Comparison => out.extend(comparison_probes(&ctx, n, seed)?),
            ProbeType::Contextual => out.extend(contextual_probes(&ctx, n)?),
        }
    }
    Ok(out)
}

fn conflict_probes(ctx: &Ctx<'_>, n: usize) -> Result<Vec<Probe>, ProbeError> {
    let original = ctx.kg.display(&ctx.spec.item.object);
    let updated = ctx.kg.display(&ctx.updated()?.object);
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let frame = CONFLICT_FRAMES[k % CONFLICT_FRAMES.len()]
            .replace("{subject}", ctx.subject)
            .replace("{relation}", &ctx.relation);
        let pair_id = format!("{}-pair-{k:03}", ctx.prefix);
        for (role, tag, claimed, other) in [
            ("old", CONFLICT_OLD_TAG, original, updated),
            ("new", CONFLICT_NEW_TAG, updated, original),
        ] {
            let body = frame.replace("{claimed}", claimed).replace("{other}", other);
            let mut p = ctx.probe(
                ProbeType::Conflict,
                &format!("{k:03}-{role}"),
                framed(k, CONFLICT_FRAMES.len(), body),
            );
            p.pair_id = Some(pair_id.clone());
            p.tags.push(tag.to_string());
            out.push(p);
        }
    }
    Ok(out)
}

fn multi_hop_probes(ctx: &Ctx<'_>, n: usize) -> Result<Vec<Probe>, ProbeError> {
    let far: Vec<(&KgNode, u32)> = ctx
        .kg
        .reachable(&ctx.spec.item.subject)?
        .into_iter()
        .filter(|&(_, d)| d >= 2)
        .collect();
    if far.is_empty() {
        return Err(ProbeError::MissingHierarchy {
            subject: ctx.spec.item.subject.clone(),
            needed: 2,
        });
    }
    let frames = MULTI_HOP_FRAMES.len();
    Ok((0..n)
        .map(|i| {
            let (node, d) = far[(i / frames) % far.len()];
            let body = MULTI_HOP_FRAMES[i % frames]
                .replace("{far}", &node.label)
                .replace("{subject}", ctx.subject)
                .replace("{relation}", &ctx.relation);
            let mut p = ctx.probe(
                ProbeType::MultiHop,
                &format!("{i:03}"),
                framed(i, frames * far.len(), body),
            );
            p.hop_distance = d;
            p.tags.push(format!("via:{}", node.id));
            p
        })
        .collect())
}

fn comparison_probes(ctx: &Ctx<'_>, n: usize, seed: u64) -> Result<Vec<Probe>, ProbeError> {
    let original = ctx.kg.display(&ctx.spec.item.object);
    let updated = ctx.kg.display(&ctx.updated()?.object);
    let frames = COMPARISON_FRAMES.len();
    Ok((0..n)
        .map(|i| {
            let suffix = format!("{i:03}");
            let mut p = ctx.probe(ProbeType::Comparison, &suffix, String::new());
            let (a, b) = if rng::stream(seed, &format!("order:{}", p.probe_id)).random::<bool>() {
                (original, updated)
            } else {
                (updated, original)
            };
            let body = COMPARISON_FRAMES[i % frames]
                .replace("{a}", a)
                .replace("{b}", b)
                .replace("{subject}", ctx.subject)
                .replace("{relation}", &ctx.relation);
            p.question = framed(i, frames, body);
            p
        })
        .collect())
}

fn contextual_probes(ctx: &Ctx<'_>, n: usize) -> Result<Vec<Probe>, ProbeError> {
    let dist = ctx.kg.distances_from(&ctx.spec.item.subject)?;
    let mut facts: Vec<(bool, u32, &FactTriple)> = ctx
        .kg
        .edges()
        .iter()
        .filter(|e| !ctx.spec.scope.contains(&e.subject) && e.subject != ctx.spec.item.subject)
        .filter_map(|e| {
            let idx = ctx.kg.nodes().iter().position(|n| n.id == e.subject)?;
            dist[idx].map(|d| (ctx.kg.is_node(&e.object), d, e))
        })
        .collect();
    facts.sort_by_key(|f| (f.0, f.1, f.2.id()));
    if facts.is_empty() {
        return Err(ProbeError::NoContextFacts(ctx.spec.item.subject.clone()));
    }
    let frames = CONTEXTUAL_FRAMES.len();
    Ok((0..n)
        .map(|i| {
            let (_, d, fact) = facts[(i / frames) % facts.len()];
            let body = CONTEXTUAL_FRAMES[i % frames]
                .replace("{ctx_subject}", ctx.kg.display(&fact.subject))
                .replace("{ctx_relation}", &relation_phrase(&fact.relation))
                .replace("{subject}", ctx.subject)
                .replace("{relation}", &ctx.relation);
            let mut p = ctx.probe(
                ProbeType::Contextual,
                &format!("{i:03}"),
                framed(i, frames * facts.len(), body),
            );
            p.fact_id = fact.id();
            p.hop_distance = d;
            p
        })
        .collect())
}
