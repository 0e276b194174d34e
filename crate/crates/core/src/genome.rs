//! Workflow genome data model.
//!
//! A workflow is a DAG of operator nodes; each operator is itself a small DAG
//! of invoking nodes (model + prompt + temperature). Genomes are plain values:
//! variation operators build new genomes instead of editing existing ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::canonical::{self, sha256_hex};
use crate::embedding::EmbeddingVector;

pub const SCHEMA_VERSION: u32 = 1;

/// A model backbone and its pricing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_params: Option<u64>,
    /// Currency per 1e6 prompt tokens.
    pub prompt_price: f64,
    /// Currency per 1e6 completion tokens.
    pub completion_price: f64,
    /// Seconds; advisory only.
    #[serde(default)]
    pub latency_hint: f64,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, prompt_price: f64, completion_price: f64) -> Self {
        Self {
            model_id: model_id.into(),
            size_params: None,
            prompt_price,
            completion_price,
            latency_hint: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("model pool is empty")]
    Empty,
    #[error("model id must be nonempty")]
    EmptyId,
    #[error("duplicate model id `{0}`")]
    Duplicate(String),
    #[error("model `{0}` has a negative price")]
    NegativePrice(String),
}

/// Registry of the models a workflow may reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelSpec>", into = "Vec<ModelSpec>")]
pub struct ModelPool {
    models: Vec<ModelSpec>,
}

impl ModelPool {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self, PoolError> {
        if models.is_empty() {
            return Err(PoolError::Empty);
        }
        let mut seen = BTreeSet::new();
        for m in &models {
            if m.model_id.trim().is_empty() {
                return Err(PoolError::EmptyId);
            }
            if !seen.insert(m.model_id.clone()) {
                return Err(PoolError::Duplicate(m.model_id.clone()));
            }
            if !(m.prompt_price >= 0.0 && m.completion_price >= 0.0) {
                return Err(PoolError::NegativePrice(m.model_id.clone()));
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.get(model_id).is_some()
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.model_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl TryFrom<Vec<ModelSpec>> for ModelPool {
    type Error = PoolError;
    fn try_from(models: Vec<ModelSpec>) -> Result<Self, Self::Error> {
        Self::new(models)
    }
}

impl From<ModelPool> for Vec<ModelSpec> {
    fn from(pool: ModelPool) -> Self {
        pool.models
    }
}

/// A single model invocation: backbone, prompt template and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvokingNode {
    pub node_id: String,
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    CoT,
    Debate,
    StepBack,
    SelfConsistency,
    SelfRefine,
    Ensemble,
    ReAct,
    ExpertPrompt,
    Custom,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 9] = [
        OperatorKind::CoT,
        OperatorKind::Debate,
        OperatorKind::StepBack,
        OperatorKind::SelfConsistency,
        OperatorKind::SelfRefine,
        OperatorKind::Ensemble,
        OperatorKind::ReAct,
        OperatorKind::ExpertPrompt,
        OperatorKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::CoT => "CoT",
            OperatorKind::Debate => "Debate",
            OperatorKind::StepBack => "StepBack",
            OperatorKind::SelfConsistency => "SelfConsistency",
            OperatorKind::SelfRefine => "SelfRefine",
            OperatorKind::Ensemble => "Ensemble",
            OperatorKind::ReAct => "ReAct",
            OperatorKind::ExpertPrompt => "ExpertPrompt",
            OperatorKind::Custom => "Custom",
        }
    }

    /// Required number of invoking nodes; `None` means "one or more".
    pub fn arity(self) -> Option<usize> {
        match self {
            OperatorKind::CoT | OperatorKind::SelfConsistency | OperatorKind::ReAct => Some(1),
            OperatorKind::StepBack | OperatorKind::ExpertPrompt => Some(2),
            OperatorKind::SelfRefine => Some(3),
            OperatorKind::Debate | OperatorKind::Ensemble => Some(4),
            OperatorKind::Custom => None,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Edge = (String, String);

/// A composite reasoning pattern built from invoking nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorNode {
    pub op_id: String,
    pub kind: OperatorKind,
    pub invoking_nodes: Vec<InvokingNode>,
    pub intra_edges: Vec<Edge>,
    #[serde(default)]
    pub params: BTreeMap<String, u32>,
}

impl OperatorNode {
    pub fn param(&self, key: &str, default: u32) -> u32 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

/// Running execution statistics of a workflow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStats {
    pub exec_count: u64,
    pub mean_cost: f64,
    pub mean_perf: f64,
}

/// Where a genome came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lineage {
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub origin: String,
    #[serde(default)]
    pub mutations: Vec<String>,
}

/// One individual of the population.
#[derive(Debug, Clone, Serialize)]
pub struct WorkflowGenome {
    pub workflow_id: String,
    pub operators: Vec<OperatorNode>,
    pub inter_edges: Vec<Edge>,
    pub tags: Vec<String>,
    /// Embeddings of `tags`; derived data, never serialized.
    #[serde(skip)]
    pub tag_vectors: Option<Vec<EmbeddingVector>>,
    pub stats: RunStats,
    pub lineage: Lineage,
}

// tag_vectors are a cache of embed(tags) and do not take part in equality.
impl PartialEq for WorkflowGenome {
    fn eq(&self, other: &Self) -> bool {
        self.workflow_id == other.workflow_id
            && self.operators == other.operators
            && self.inter_edges == other.inter_edges
            && self.tags == other.tags
            && self.stats == other.stats
            && self.lineage == other.lineage
    }
}

impl WorkflowGenome {
    pub fn new(operators: Vec<OperatorNode>, inter_edges: Vec<Edge>) -> Self {
        let mut g = Self {
            workflow_id: String::new(),
            operators,
            inter_edges,
            tags: Vec::new(),
            tag_vectors: None,
            stats: RunStats::default(),
            lineage: Lineage::default(),
        };
        g.refresh_id();
        g
    }

    /// Content hash over the canonical document minus id, stats and lineage.
    pub fn content_id(&self) -> String {
        #[derive(Serialize)]
        struct Content<'a> {
            operators: &'a [OperatorNode],
            inter_edges: &'a [Edge],
            tags: &'a [String],
        }
        let text = canonical::to_canonical_string(&Content {
            operators: &self.operators,
            inter_edges: &self.inter_edges,
            tags: &self.tags,
        })
        .expect("genome content is always serializable");
        format!("wf-{}", &sha256_hex(text.as_bytes())[..16])
    }

    pub fn refresh_id(&mut self) {
        self.workflow_id = self.content_id();
    }

    pub fn operator(&self, op_id: &str) -> Option<&OperatorNode> {
        self.operators.iter().find(|o| o.op_id == op_id)
    }

    pub fn invoking_nodes(&self) -> impl Iterator<Item = &InvokingNode> {
        self.operators.iter().flat_map(|o| o.invoking_nodes.iter())
    }

    /// Distinct model ids referenced anywhere in the genome, sorted.
    pub fn model_ids(&self) -> BTreeSet<String> {
        self.invoking_nodes().map(|n| n.model_id.clone()).collect()
    }

    pub fn sink(&self) -> Option<&OperatorNode> {
        let with_out: BTreeSet<&str> = self.inter_edges.iter().map(|(a, _)| a.as_str()).collect();
        let mut sinks = self
            .operators
            .iter()
            .filter(|o| !with_out.contains(o.op_id.as_str()));
        let first = sinks.next()?;
        if sinks.next().is_some() {
            None
        } else {
            Some(first)
        }
    }

    /// Operator indices in execution order: topological layer (longest path
    /// from a source), then op_id. Fails on a cycle.
    pub fn execution_order(&self) -> Result<Vec<usize>, Violation> {
        let ids: Vec<&str> = self.operators.iter().map(|o| o.op_id.as_str()).collect();
        layered_order(&ids, &self.inter_edges)
    }

    /// Inter-edge predecessors of `op_id`, sorted by id.
    pub fn predecessors(&self, op_id: &str) -> Vec<&str> {
        let mut preds: Vec<&str> = self
            .inter_edges
            .iter()
            .filter(|(_, b)| b == op_id)
            .map(|(a, _)| a.as_str())
            .collect();
        preds.sort_unstable();
        preds.dedup();
        preds
    }
}

/// Kahn ordering with ties broken by (layer, id). Returns indices into `ids`.
pub(crate) fn layered_order(ids: &[&str], edges: &[Edge]) -> Result<Vec<usize>, Violation> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut indegree = vec![0usize; ids.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for (a, b) in edges {
        let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) else {
            return Err(Violation::UnknownEdgeEndpoint {
                scope: String::from("workflow"),
                edge: (a.clone(), b.clone()),
            });
        };
        succ[ia].push(ib);
        indegree[ib] += 1;
    }
    let mut layer = vec![0usize; ids.len()];
    let mut ready: Vec<usize> = (0..ids.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(ids.len());
    while !ready.is_empty() {
        // Pick the smallest (layer, id) among ready nodes.
        let (pos, _) = ready
            .iter()
            .enumerate()
            .min_by(|(_, &x), (_, &y)| (layer[x], ids[x]).cmp(&(layer[y], ids[y])))
            .expect("nonempty");
        let node = ready.swap_remove(pos);
        order.push(node);
        for &next in &succ[node] {
            layer[next] = layer[next].max(layer[node] + 1);
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(next);
            }
        }
    }
    if order.len() != ids.len() {
        return Err(Violation::Cycle {
            scope: String::from("workflow"),
            path: find_cycle(ids, edges).unwrap_or_default(),
        });
    }
    Ok(order)
}

/// Some cycle in the graph as a node path (first node not repeated).
fn find_cycle(ids: &[&str], edges: &[Edge]) -> Option<Vec<String>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a.as_str()).or_default().push(b.as_str());
    }
    for list in adj.values_mut() {
        list.sort_unstable();
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<&str, u8> = ids.iter().map(|id| (*id, 0u8)).collect();
    let mut sorted_ids: Vec<&str> = ids.to_vec();
    sorted_ids.sort_unstable();
    for start in sorted_ids {
        if state[start] != 0 {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        let mut path: Vec<&str> = vec![start];
        state.insert(start, 1);
        while let Some((node, next_idx)) = stack.last_mut() {
            let node = *node;
            let succs = adj.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if *next_idx < succs.len() {
                let next = succs[*next_idx];
                *next_idx += 1;
                match state.get(next).copied() {
                    Some(1) => {
                        let from = path.iter().position(|n| *n == next).expect("on stack");
                        return Some(path[from..].iter().map(|s| s.to_string()).collect());
                    }
                    Some(0) => {
                        state.insert(next, 1);
                        stack.push((next, 0));
                        path.push(next);
                    }
                    _ => {}
                }
            } else {
                state.insert(node, 2);
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// A single broken invariant. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoOperators,
    TagCount {
        found: usize,
        expected: usize,
    },
    TagVectorCount {
        found: usize,
        expected: usize,
    },
    EmptyTag {
        index: usize,
    },
    DuplicateOperatorId(String),
    DuplicateNodeId {
        op_id: String,
        node_id: String,
    },
    Temperature {
        node_id: String,
        value: f64,
    },
    UnknownModel {
        node_id: String,
        model_id: String,
    },
    Arity {
        op_id: String,
        kind: OperatorKind,
        found: usize,
    },
    UnknownEdgeEndpoint {
        scope: String,
        edge: Edge,
    },
    Cycle {
        scope: String,
        path: Vec<String>,
    },
    SinkCount {
        scope: String,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoOperators => write!(f, "workflow has no operators"),
            Violation::TagCount { found, expected } => write!(f, "tag count {found} ≠ {expected}"),
            Violation::TagVectorCount { found, expected } => {
                write!(f, "tag vector count {found} ≠ {expected}")
            }
            Violation::EmptyTag { index } => write!(f, "tag {index} is empty"),
            Violation::DuplicateOperatorId(id) => write!(f, "duplicate operator id {id}"),
            Violation::DuplicateNodeId { op_id, node_id } => {
                write!(f, "duplicate invoking node id {node_id} in {op_id}")
            }
            Violation::Temperature { node_id, value } => {
                write!(f, "temperature {value} of {node_id} outside [0,1]")
            }
            Violation::UnknownModel { node_id, model_id } => {
                write!(f, "dangling model_id {model_id} in {node_id}")
            }
            Violation::Arity { op_id, kind, found } => match kind.arity() {
                Some(n) => write!(
                    f,
                    "{kind} operator {op_id} needs {n} invoking nodes, has {found}"
                ),
                None => write!(f, "{kind} operator {op_id} needs at least 1 invoking node"),
            },
            Violation::UnknownEdgeEndpoint { scope, edge } => {
                write!(
                    f,
                    "edge {}→{} in {scope} references an unknown node",
                    edge.0, edge.1
                )
            }
            Violation::Cycle { path, .. } if path.len() == 2 => {
                write!(f, "cycle: {}↔{}", path[0], path[1])
            }
            Violation::Cycle { path, .. } => {
                let mut s = path.join("→");
                if let Some(first) = path.first() {
                    s.push('→');
                    s.push_str(first);
                }
                write!(f, "cycle: {s}")
            }
            Violation::SinkCount { scope, found } => {
                write!(f, "{scope} has {found} sinks, expected exactly 1")
            }
        }
    }
}

/// Check every genome invariant. An empty result means the genome is valid.
///
/// Violations come out in a fixed order: tags, then operators in list order
/// (ids, nodes, arity, intra edges), then inter-operator edges.
pub fn validate(genome: &WorkflowGenome, pool: &ModelPool, kappa: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if genome.tags.len() != kappa {
        out.push(Violation::TagCount {
            found: genome.tags.len(),
            expected: kappa,
        });
    }
    for (i, tag) in genome.tags.iter().enumerate() {
        if tag.trim().is_empty() {
            out.push(Violation::EmptyTag { index: i });
        }
    }
    if let Some(vectors) = &genome.tag_vectors {
        if vectors.len() != genome.tags.len() {
            out.push(Violation::TagVectorCount {
                found: vectors.len(),
                expected: genome.tags.len(),
            });
        }
    }
    if genome.operators.is_empty() {
        out.push(Violation::NoOperators);
        return out;
    }

    let mut op_ids = BTreeSet::new();
    for op in &genome.operators {
        if !op_ids.insert(op.op_id.as_str()) {
            out.push(Violation::DuplicateOperatorId(op.op_id.clone()));
        }
        validate_operator(op, pool, &mut out);
    }

    let ids: Vec<&str> = genome.operators.iter().map(|o| o.op_id.as_str()).collect();
    check_graph("workflow", &ids, &genome.inter_edges, &mut out);
    out
}

fn validate_operator(op: &OperatorNode, pool: &ModelPool, out: &mut Vec<Violation>) {
    let mut node_ids = BTreeSet::new();
    for node in &op.invoking_nodes {
        if !node_ids.insert(node.node_id.as_str()) {
            out.push(Violation::DuplicateNodeId {
                op_id: op.op_id.clone(),
                node_id: node.node_id.clone(),
            });
        }
        if !(0.0..=1.0).contains(&node.temperature) {
            out.push(Violation::Temperature {
                node_id: node.node_id.clone(),
                value: node.temperature,
            });
        }
        if !pool.contains(&node.model_id) {
            out.push(Violation::UnknownModel {
                node_id: node.node_id.clone(),
                model_id: node.model_id.clone(),
            });
        }
    }
    let found = op.invoking_nodes.len();
    let arity_ok = match op.kind.arity() {
        Some(n) => found == n,
        None => found >= 1,
    };
    if !arity_ok {
        out.push(Violation::Arity {
            op_id: op.op_id.clone(),
            kind: op.kind,
            found,
        });
    }
    if found > 0 {
        let ids: Vec<&str> = op
            .invoking_nodes
            .iter()
            .map(|n| n.node_id.as_str())
            .collect();
        let scope = format!("operator {}", op.op_id);
        // Only free-form operators must funnel into a single output node.
        if op.kind == OperatorKind::Custom {
            check_graph(&scope, &ids, &op.intra_edges, out);
        } else {
            check_edges_acyclic(&scope, &ids, &op.intra_edges, out);
        }
    }
}

/// Endpoints, acyclicity and single-sink checks. Later checks are skipped
/// once an earlier one fails, so one defect yields one violation.
fn check_graph(scope: &str, ids: &[&str], edges: &[Edge], out: &mut Vec<Violation>) {
    if !check_edges_acyclic(scope, ids, edges, out) {
        return;
    }
    let with_out: BTreeSet<&str> = edges.iter().map(|(a, _)| a.as_str()).collect();
    let sinks = ids
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|id| !with_out.contains(**id))
        .count();
    if sinks != 1 {
        out.push(Violation::SinkCount {
            scope: scope.to_string(),
            found: sinks,
        });
    }
}

fn check_edges_acyclic(
    scope: &str,
    ids: &[&str],
    edges: &[Edge],
    out: &mut Vec<Violation>,
) -> bool {
    let known: BTreeSet<&str> = ids.iter().copied().collect();
    let mut ok = true;
    for (a, b) in edges {
        if !known.contains(a.as_str()) || !known.contains(b.as_str()) {
            out.push(Violation::UnknownEdgeEndpoint {
                scope: scope.to_string(),
                edge: (a.clone(), b.clone()),
            });
            ok = false;
        }
    }
    if !ok {
        return false;
    }
    let mut unique: Vec<&str> = ids.to_vec();
    unique.sort_unstable();
    unique.dedup();
    match layered_order(&unique, edges) {
        Ok(_) => true,
        Err(Violation::Cycle { path, .. }) => {
            out.push(Violation::Cycle {
                scope: scope.to_string(),
                path,
            });
            false
        }
        Err(other) => {
            out.push(other);
            false
        }
    }
}

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot serialize: {0}")]
    Serialize(String),
}

impl From<serde_json::Error> for DocumentError {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        // serde_json appends " at line L column C"; keep just the cause.
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        DocumentError::Parse {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

fn schema_version<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    let v = u32::deserialize(d)?;
    if v != SCHEMA_VERSION {
        return Err(serde::de::Error::custom(format!(
            "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(v)
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    genome: &'a WorkflowGenome,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentIn {
    #[serde(deserialize_with = "schema_version")]
    #[allow(dead_code)]
    schema_version: u32,
    workflow_id: String,
    operators: Vec<OperatorNode>,
    inter_edges: Vec<Edge>,
    tags: Vec<String>,
    stats: RunStats,
    lineage: Lineage,
}

/// Canonical genome document (sorted keys, 12-digit reals, trailing newline).
pub fn serialize(genome: &WorkflowGenome) -> Result<String, DocumentError> {
    let mut text = canonical::to_canonical_string(&DocumentOut {
        schema_version: SCHEMA_VERSION,
        genome,
    })
    .map_err(|e| DocumentError::Serialize(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn deserialize(text: &str) -> Result<WorkflowGenome, DocumentError> {
    let doc: DocumentIn = serde_json::from_str(text)?;
    Ok(WorkflowGenome {
        workflow_id: doc.workflow_id,
        operators: doc.operators,
        inter_edges: doc.inter_edges,
        tags: doc.tags,
        tag_vectors: None,
        stats: doc.stats,
        lineage: doc.lineage,
    })
}
