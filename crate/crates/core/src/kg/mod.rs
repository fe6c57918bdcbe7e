//! Hierarchical knowledge graphs.
//!
//! A graph is a set of nodes, each at one of three levels (root, intermediate,
//! leaf), and a set of fact triples. A triple whose object names another node is a
//! structural edge; every other object is a literal (a year, a phrase). Structural
//! edges always step exactly one level down and, taken as undirected links, form a
//! forest.

mod intervention;

pub use intervention::{derive_intervention, related_probeset, InterventionMode, InterventionSpec, RetainPolicy};

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("edge subject `{0}` does not name a node")]
    DanglingReference(String),
    #[error("hierarchy violation: {0}")]
    HierarchyViolation(String),
    #[error("graph has no {0} node")]
    IncompleteHierarchy(NodeLevel),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("fact `{0}` is not in the graph")]
    FactNotFound(String),
    #[error("no replacement candidate for `{0}`")]
    NoReplacementCandidate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Position of a node in the three-level hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLevel {
    Root,
    Intermediate,
    Leaf,
}

impl NodeLevel {
    pub const ALL: [NodeLevel; 3] = [NodeLevel::Root, NodeLevel::Intermediate, NodeLevel::Leaf];

    pub fn depth(self) -> u8 {
        match self {
            NodeLevel::Root => 0,
            NodeLevel::Intermediate => 1,
            NodeLevel::Leaf => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeLevel::Root => "root",
            NodeLevel::Intermediate => "intermediate",
            NodeLevel::Leaf => "leaf",
        }
    }
}

impl fmt::Display for NodeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeLevel {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "root" => Ok(NodeLevel::Root),
            "intermediate" => Ok(NodeLevel::Intermediate),
            "leaf" => Ok(NodeLevel::Leaf),
            other => Err(KgError::SchemaViolation(format!("unknown level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgNode {
    pub id: String,
    pub label: String,
    pub level: NodeLevel,
    /// Subject tag; defaults to the graph's domain when absent from the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl FactTriple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }

    /// Stable identifier used to tie probes and samples back to the fact.
    pub fn id(&self) -> String {
        format!("{}::{}::{}", self.subject, self.relation, self.object)
    }

    pub fn with_object(&self, object: impl Into<String>) -> Self {
        Self {
            object: object.into(),
            ..self.clone()
        }
    }
}

impl fmt::Display for FactTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KgDocument {
    domain: String,
    nodes: Vec<KgNode>,
    edges: Vec<FactTriple>,
}

/// A validated, immutable knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    domain: String,
    nodes: Vec<KgNode>,
    edges: Vec<FactTriple>,
    index: HashMap<String, usize>,
    // Undirected node-to-node adjacency, sorted and deduplicated.
    adjacency: Vec<Vec<usize>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl KnowledgeGraph {
    pub fn new(domain: impl Into<String>, nodes: Vec<KgNode>, edges: Vec<FactTriple>) -> Result<Self, KgError> {
        let domain = domain.into();
        if domain.trim().is_empty() {
            return Err(KgError::SchemaViolation("empty domain".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(KgError::SchemaViolation(format!("node {i} has an empty id")));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(KgError::SchemaViolation(format!("duplicate node id `{}`", node.id)));
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut links = BTreeSet::new();
        for edge in &edges {
            if edge.relation.trim().is_empty() {
                return Err(KgError::SchemaViolation(format!("edge {edge} has an empty relation")));
            }
            let &s = index
                .get(&edge.subject)
                .ok_or_else(|| KgError::DanglingReference(edge.subject.clone()))?;
            let Some(&o) = index.get(&edge.object) else {
                continue;
            };
            let (ls, lo) = (nodes[s].level, nodes[o].level);
            if lo.depth() != ls.depth() + 1 {
                return Err(KgError::HierarchyViolation(format!(
                    "edge {edge} links {ls} to {lo}; structural edges must step one level down"
                )));
            }
            links.insert((s.min(o), s.max(o)));
        }

        // Union-find over distinct undirected links; any link joining an existing
        // component closes a cycle.
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &links {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(KgError::HierarchyViolation(format!(
                    "structural edges between `{}` and `{}` close a cycle",
                    nodes[a].id, nodes[b].id
                )));
            }
            parent[ra] = rb;
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        Ok(Self {
            domain,
            nodes,
            edges,
            index,
            adjacency,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, KgError> {
        let doc: KgDocument = serde_json::from_str(text).map_err(|e| KgError::SchemaViolation(e.to_string()))?;
        Self::new(doc.domain, doc.nodes, doc.edges)
    }

    pub fn to_json_string(&self) -> String {
        let doc = KgDocument {
            domain: self.domain.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[FactTriple] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &str) -> Option<&KgNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn is_node(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn level_of(&self, id: &str) -> Result<NodeLevel, KgError> {
        self.node(id)
            .map(|n| n.level)
            .ok_or_else(|| KgError::UnknownNode(id.to_string()))
    }

    pub fn node_domain<'a>(&'a self, node: &'a KgNode) -> &'a str {
        node.domain.as_deref().unwrap_or(&self.domain)
    }

    pub fn nodes_at(&self, level: NodeLevel) -> impl Iterator<Item = &KgNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    /// Fails unless every level has at least one node.
    pub fn require_full_hierarchy(&self) -> Result<(), KgError> {
        for level in NodeLevel::ALL {
            if self.nodes_at(level).next().is_none() {
                return Err(KgError::IncompleteHierarchy(level));
            }
        }
        Ok(())
    }

    pub fn contains_fact(&self, fact: &FactTriple) -> bool {
        self.edges.iter().any(|e| e == fact)
    }

    pub fn fact_by_id(&self, fact_id: &str) -> Option<&FactTriple> {
        self.edges.iter().find(|e| e.id() == fact_id)
    }

    /// Facts whose object is a literal rather than another node.
    pub fn literal_facts(&self) -> impl Iterator<Item = &FactTriple> {
        self.edges.iter().filter(|e| !self.is_node(&e.object))
    }

    /// Display text for a subject or object value: node label when it names a node.
    pub fn display<'a>(&'a self, value: &'a str) -> &'a str {
        self.node(value).map(|n| n.label.as_str()).unwrap_or(value)
    }

    /// Objects of other facts sharing `fact`'s relation whose subject sits at the
    /// same level, sorted and deduplicated, excluding `fact.object`.
    pub fn sibling_objects(&self, fact: &FactTriple) -> Vec<String> {
        let Ok(level) = self.level_of(&fact.subject) else {
            return Vec::new();
        };
        let set: BTreeSet<&str> = self
            .edges
            .iter()
            .filter(|e| e.relation == fact.relation && e.object != fact.object)
            .filter(|e| self.level_of(&e.subject).map(|l| l == level).unwrap_or(false))
            .map(|e| e.object.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Hop distances from `from` to every reachable node, literal objects excluded.
    pub fn distances_from(&self, from: &str) -> Result<Vec<Option<u32>>, KgError> {
        let &start = self
            .index
            .get(from)
            .ok_or_else(|| KgError::UnknownNode(from.to_string()))?;
        let mut dist = vec![None; self.nodes.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Shortest undirected path length between two nodes; `None` when disconnected.
    pub fn hop_distance(&self, a: &str, b: &str) -> Result<Option<u32>, KgError> {
        let &target = self.index.get(b).ok_or_else(|| KgError::UnknownNode(b.to_string()))?;
        Ok(self.distances_from(a)?[target])
    }

    /// Nodes reachable from `from`, with their distance, sorted by (distance, id).
    pub fn reachable(&self, from: &str) -> Result<Vec<(&KgNode, u32)>, KgError> {
        let dist = self.distances_from(from)?;
        let mut out: Vec<_> = self
            .nodes
            .iter()
            .zip(dist)
            .filter_map(|(n, d)| d.map(|d| (n, d)))
            .collect();
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        Ok(out)
    }
}

pub fn load_kg(path: &Path) -> Result<KnowledgeGraph, KgError> {
    let bytes = fs::read(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text =
        String::from_utf8(bytes).map_err(|_| KgError::SchemaViolation(format!("{} is not UTF-8", path.display())))?;
    KnowledgeGraph::from_json_str(&text)
}
