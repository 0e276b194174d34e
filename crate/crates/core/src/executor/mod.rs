//! Runs a workflow genome on one query.
//!
//! Operators run in layered topological order (ties by op_id). Each one sees
//! the query text followed by its predecessors' outputs, concatenated in
//! op_id order under `### Output of <op_id>` headers. The sink's output is
//! the answer. Calls are priced against the model pool as they happen, so a
//! failed execution still reports what it spent.

mod operators;
pub mod tools;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical;
use crate::genome::{ModelPool, OperatorKind, OperatorNode, WorkflowGenome, SCHEMA_VERSION};
use crate::provider::{ChatBackend, ProviderError};
use crate::text;

use operators::Session;
pub use operators::{majority_vote, nominal_calls};
pub use tools::ToolRegistry;

pub const DEFAULT_CALL_BUDGET: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Exact,
    Numeric,
    /// Name of a callback registered with an [`Evaluator`].
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskQuery {
    pub query_id: String,
    pub text: String,
    pub domain: String,
    #[serde(default)]
    pub gold: Option<String>,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub node_id: String,
    pub sample: u32,
    pub model_id: String,
    pub request_digest: String,
    pub response_digest: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub op_id: String,
    pub kind: OperatorKind,
    pub calls: Vec<CallRecord>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub workflow_id: String,
    pub query_id: String,
    pub records: Vec<OperatorRecord>,
    pub total_cost: f64,
    pub answer: String,
    /// Seconds. Not deterministic; excluded from anything compared byte-wise.
    pub wall_time: f64,
}

impl ExecutionTrace {
    pub fn call_count(&self) -> usize {
        self.records.iter().map(|r| r.calls.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("operator {op_id}: unresolved placeholder {{{placeholder}}}")]
    Template { op_id: String, placeholder: String },
    #[error("operator {op_id}: {source}")]
    Provider {
        op_id: String,
        source: ProviderError,
    },
    #[error("call budget of {limit} exceeded")]
    BudgetExceeded { limit: u32 },
    #[error("operator {op_id}: {message}")]
    Structure { op_id: String, message: String },
    #[error("workflow is not executable: {0}")]
    InvalidGenome(String),
}

/// An execution error plus what had been spent when it happened.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} (after {calls} call(s), cost {partial_cost})")]
pub struct ExecFailure {
    pub error: ExecError,
    pub partial_cost: f64,
    pub calls: u32,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub call_budget: u32,
    pub tools: ToolRegistry,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            call_budget: DEFAULT_CALL_BUDGET,
            tools: ToolRegistry::default(),
        }
    }
}

fn header(id: &str, body: &str) -> String {
    format!("### Output of {id}\n{body}")
}

/// Execute `genome` on `query`.
pub fn execute(
    genome: &WorkflowGenome,
    query: &TaskQuery,
    backend: &dyn ChatBackend,
    pool: &ModelPool,
    opts: &ExecOptions,
) -> Result<ExecutionTrace, ExecFailure> {
    let elapsed = stopwatch();
    let mut session = Session::new(backend, pool, opts);
    let fail = |error, s: &Session| ExecFailure {
        error,
        partial_cost: s.spent,
        calls: s.calls_made,
    };

    let order = genome
        .execution_order()
        .map_err(|v| fail(ExecError::InvalidGenome(v.to_string()), &session))?;
    let sink = match genome.sink() {
        Some(s) => s.op_id.clone(),
        None => {
            return Err(fail(
                ExecError::InvalidGenome("no single sink operator".into()),
                &session,
            ))
        }
    };

    let mut outputs: BTreeMap<&str, String> = BTreeMap::new();
    let mut records = Vec::with_capacity(order.len());
    for idx in order {
        let op = &genome.operators[idx];
        let preds = genome.predecessors(&op.op_id);
        let inputs = if preds.is_empty() {
            String::from("(none)")
        } else {
            preds
                .iter()
                .map(|p| header(p, &outputs[p]))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let context = if preds.is_empty() {
            query.text.clone()
        } else {
            format!("{}\n\nResults from earlier steps:\n{inputs}", query.text)
        };
        let mut calls = Vec::new();
        let output = operators::run(op, &context, &inputs, &mut session, &mut calls)
            .map_err(|e| fail(e, &session))?;
        outputs.insert(op.op_id.as_str(), output.clone());
        records.push(OperatorRecord {
            op_id: op.op_id.clone(),
            kind: op.kind,
            calls,
            output,
        });
    }

    let total_cost = records
        .iter()
        .flat_map(|r| &r.calls)
        .fold(0.0, |acc, c| acc + c.cost);
    Ok(ExecutionTrace {
        workflow_id: genome.workflow_id.clone(),
        query_id: query.query_id.clone(),
        answer: outputs.remove(sink.as_str()).unwrap_or_default(),
        records,
        total_cost,
        wall_time: elapsed(),
    })
}

/// Run one operator in isolation with `context` as its task text.
pub fn run_operator(
    op: &OperatorNode,
    context: &str,
    backend: &dyn ChatBackend,
    pool: &ModelPool,
    opts: &ExecOptions,
) -> Result<OperatorRecord, ExecFailure> {
    let mut session = Session::new(backend, pool, opts);
    let mut calls = Vec::new();
    match operators::run(op, context, "(none)", &mut session, &mut calls) {
        Ok(output) => Ok(OperatorRecord {
            op_id: op.op_id.clone(),
            kind: op.kind,
            calls,
            output,
        }),
        Err(error) => Err(ExecFailure {
            error,
            partial_cost: session.spent,
            calls: session.calls_made,
        }),
    }
}

/// Seconds since the call. wasm32 has no clock, so it reads zero there.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

fn path_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write `trace` as `traces/{query_id}/{workflow_id}.json` under `run_dir`.
pub fn write_trace(run_dir: &Path, trace: &ExecutionTrace) -> io::Result<PathBuf> {
    let dir = run_dir.join("traces").join(path_safe(&trace.query_id));
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.json", path_safe(&trace.workflow_id)));
    let mut doc = serde_json::to_value(trace).map_err(io::Error::other)?;
    doc["schema_version"] = json!(SCHEMA_VERSION);
    let mut text = canonical::render(&doc);
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("query {0} has no gold answer")]
    MissingGold(String),
    #[error("gold answer {0:?} is not numeric")]
    NonNumericGold(String),
    #[error("no custom metric named {0}")]
    UnknownMetric(String),
}

pub type CustomMetric = dyn Fn(&str, &TaskQuery) -> f64 + Send + Sync;

/// Scores answers; holds the callbacks behind `Metric::Custom`.
#[derive(Clone, Default)]
pub struct Evaluator {
    custom: BTreeMap<String, Arc<CustomMetric>>,
}

impl Evaluator {
    pub fn register(&mut self, name: impl Into<String>, metric: Arc<CustomMetric>) {
        self.custom.insert(name.into(), metric);
    }

    pub fn evaluate(&self, answer: &str, query: &TaskQuery) -> Result<f64, EvalError> {
        let gold = || {
            query
                .gold
                .as_deref()
                .ok_or_else(|| EvalError::MissingGold(query.query_id.clone()))
        };
        let boxed = text::boxed_answers(answer).pop();
        match &query.metric {
            Metric::Exact => {
                let candidate = boxed.as_deref().unwrap_or(answer);
                Ok(if text::normalize(candidate) == text::normalize(gold()?) {
                    1.0
                } else {
                    0.0
                })
            }
            Metric::Numeric => {
                let g = gold()?;
                let g = text::parse_number(g)
                    .ok_or_else(|| EvalError::NonNumericGold(g.to_string()))?;
                let got = match &boxed {
                    Some(b) => text::parse_number(b).or_else(|| text::last_number(b)),
                    None => text::last_number(answer),
                };
                let tol = if g == 0.0 { 1e-6 } else { 1e-6 * g.abs() };
                Ok(match got {
                    Some(v) if (v - g).abs() <= tol => 1.0,
                    _ => 0.0,
                })
            }
            Metric::Custom(name) => {
                let f = self
                    .custom
                    .get(name)
                    .ok_or_else(|| EvalError::UnknownMetric(name.clone()))?;
                Ok(f(answer, query).clamp(0.0, 1.0))
            }
        }
    }
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("custom", &self.custom.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Score with the built-in metrics only.
pub fn evaluate(answer: &str, query: &TaskQuery) -> Result<f64, EvalError> {
    Evaluator::default().evaluate(answer, query)
}
