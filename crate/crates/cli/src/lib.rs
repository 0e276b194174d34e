//! Command implementations behind the `evoflow` binary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use evoflow_core::bench::{
    front_csv, front_rows, generate_suite, normalized_hypervolume, run_seed, DomainSpec,
    ExperimentConfig, SeedOutcome, SuiteConfig,
};
use evoflow_core::canonical::{sha256_hex, to_canonical_string};
use evoflow_core::config::{ConfigError, RunConfig, Runtime, RuntimeError};
use evoflow_core::embedding::{attach_tag_vectors, EmbedError};
use evoflow_core::evolution::{
    evolve_step, infer, init_population, EvoError, InferMode, ObjectivePoint, Population,
};
use evoflow_core::executor::{ExecError, Metric, TaskQuery};
use evoflow_core::memory::{ExperienceStore, LogLengths, StorageError};
use evoflow_core::provider::sim::TaskEnvelope;
use evoflow_core::snapshot::{self, Manifest, RunLayout, RunLock, StepLog};

/// Steps between persisted checkpoints.
pub const CHECKPOINT_EVERY: u64 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Provider(_) => 3,
            CliError::Storage(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Config(c) => c.into(),
            RuntimeError::Provider(p) => CliError::Provider(p.to_string()),
        }
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        CliError::Storage(e.to_string())
    }
}

impl From<EvoError> for CliError {
    fn from(e: EvoError) -> Self {
        match e {
            EvoError::Config(m) => CliError::Config(m),
            EvoError::Embed(EmbedError::Provider { .. }) => CliError::Provider(e.to_string()),
            EvoError::Embed(_) | EvoError::Eval(_) => CliError::Config(e.to_string()),
            EvoError::Storage(s) => s.into(),
        }
    }
}

fn layout(cfg: &RunConfig) -> RunLayout {
    RunLayout::new(&cfg.run_dir, &cfg.run_id)
}

/// Load the committed population and recompute its tag vectors.
fn load(layout: &RunLayout, rt: &Runtime) -> Result<(Population, Manifest), CliError> {
    let (mut pop, manifest) = snapshot::load_population(layout)?;
    for g in &mut pop.members {
        attach_tag_vectors(g, rt.embedder.as_ref()).map_err(EvoError::from)?;
    }
    Ok((pop, manifest))
}

/// Draw the initial population and write the first snapshot. With `force`,
/// an existing run's state is cleared first.
pub fn cmd_init(cfg: &RunConfig, force: bool) -> Result<Manifest, CliError> {
    let layout = layout(cfg);
    let _lock = RunLock::acquire(&layout.root)?;
    if layout.is_initialized() {
        if !force {
            return Err(CliError::Storage(format!(
                "{} already holds a population (use --force to start over)",
                layout.root.display()
            )));
        }
        for sub in ["population", "runs", "memory", "traces", "front.csv"] {
            let p = layout.root.join(sub);
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else {
                fs::remove_file(&p)
            };
            match res {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                    return Err(StorageError::Io { path: p, source: e }.into())
                }
                _ => {}
            }
        }
    }
    let tasks = cfg.tasks()?;
    let rt = Runtime::new(cfg, cfg.seed)?;
    let pop = init_population(cfg.seed, &cfg.domains(&tasks), &rt.deps(None))?;
    let steps = StepLog::open_at(&layout.steps(), 0)?;
    let memory = ExperienceStore::open_at(&layout.root, LogLengths::default())?;
    Ok(snapshot::save(
        &layout,
        &pop,
        &cfg.hash(),
        steps.len_bytes(),
        memory.lengths(),
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub generation: u64,
    pub steps: u64,
    pub accepted: u64,
}

/// Resume from the last checkpoint and run `steps` more steps.
pub fn cmd_evolve(cfg: &RunConfig, steps: u64) -> Result<EvolveSummary, CliError> {
    evolve_inner(cfg, steps, None)
}

/// As [`cmd_evolve`], but stops without a final checkpoint after
/// `abort_after` steps, leaving the directory as a crash would.
pub fn evolve_inner(
    cfg: &RunConfig,
    steps: u64,
    abort_after: Option<u64>,
) -> Result<EvolveSummary, CliError> {
    let layout = layout(cfg);
    let _lock = RunLock::acquire(&layout.root)?;
    if !layout.is_initialized() {
        return Err(CliError::Storage(format!(
            "{} has no population; run `init` first",
            layout.root.display()
        )));
    }
    let rt = Runtime::new(cfg, cfg.seed)?;
    let (mut pop, manifest) = load(&layout, &rt)?;
    if manifest.config_hash != cfg.hash() {
        return Err(CliError::Config(
            "config changed since this run was initialized".into(),
        ));
    }
    let mut log = StepLog::open_at(&layout.steps(), manifest.steps_len)?;
    let mut memory = ExperienceStore::open_at(&layout.root, manifest.logs)?;
    let tasks = cfg.tasks()?;
    let deps = rt.deps(Some(&layout.root));
    let mut accepted = 0;
    for done in 0..steps {
        if abort_after == Some(done) {
            return Ok(EvolveSummary {
                generation: pop.generation,
                steps: done,
                accepted,
            });
        }
        let query = &tasks[(pop.generation % tasks.len() as u64) as usize];
        let report = evolve_step(&mut pop, query, &deps, &mut memory)?;
        accepted += report.accepted as u64;
        log.append(&report)?;
        if pop.generation % CHECKPOINT_EVERY == 0 || done + 1 == steps {
            snapshot::save(
                &layout,
                &pop,
                &manifest.config_hash,
                log.len_bytes(),
                memory.lengths(),
            )?;
        }
    }
    Ok(EvolveSummary {
        generation: pop.generation,
        steps,
        accepted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub workflow_id: String,
    pub query_id: String,
    pub answer: String,
    pub cost: f64,
    pub calls: usize,
    /// Present when the query carries a gold answer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perf: Option<f64>,
}

/// A query from free text: domain is the text before ':', gold comes from
/// an embedded task envelope when there is one.
pub fn query_from_text(text: &str) -> TaskQuery {
    let domain = text
        .split_once(':')
        .map(|(d, _)| d.trim())
        .filter(|d| !d.is_empty())
        .unwrap_or("general");
    let envelope = TaskEnvelope::find(text);
    TaskQuery {
        query_id: format!("q-{}", &sha256_hex(text.as_bytes())[..12]),
        text: text.to_string(),
        domain: envelope
            .as_ref()
            .map_or(domain.to_string(), |e| e.domain.clone()),
        gold: envelope.map(|e| e.gold),
        metric: Metric::Numeric,
    }
}

pub fn cmd_infer(
    cfg: &RunConfig,
    text: &str,
    budget: Option<f64>,
) -> Result<InferOutput, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Config("query text is empty".into()));
    }
    if budget.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
        return Err(CliError::Config(
            "budget must be a nonnegative number".into(),
        ));
    }
    let layout = layout(cfg);
    let _lock = RunLock::acquire(&layout.root)?;
    let rt = Runtime::new(cfg, cfg.seed)?;
    let (pop, _) = load(&layout, &rt)?;
    let deps = rt.deps(Some(&layout.root));
    let query = query_from_text(text);
    let mode = budget.map_or(InferMode::Best, InferMode::Budget);
    let (workflow_id, result) = infer(&pop, &query, mode, &deps)?;
    match result {
        Ok(trace) => {
            let perf = match query.gold {
                Some(_) => Some(
                    rt.evaluator
                        .evaluate(&trace.answer, &query)
                        .map_err(|e| CliError::Config(e.to_string()))?,
                ),
                None => None,
            };
            Ok(InferOutput {
                workflow_id,
                query_id: query.query_id,
                calls: trace.call_count(),
                answer: trace.answer,
                cost: trace.total_cost,
                perf,
            })
        }
        Err(f) => match f.error {
            ExecError::Provider { .. } => Err(CliError::Provider(f.error.to_string())),
            e => Err(CliError::Failed(format!(
                "{workflow_id} failed after {} call(s): {e}",
                f.calls
            ))),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontOutput {
    pub csv: String,
    pub hypervolume: f64,
}

/// Write `front.csv` from the members' running means and report the
/// hypervolume with cost scaled by the largest mean cost.
pub fn cmd_front(cfg: &RunConfig) -> Result<FrontOutput, CliError> {
    let layout = layout(cfg);
    let _lock = RunLock::acquire(&layout.root)?;
    let (pop, _) = snapshot::load_population(&layout)?;
    let rows = front_rows(&pop.members);
    let csv = front_csv(&rows);
    let path = layout.front_csv();
    fs::write(&path, &csv).map_err(|source| StorageError::Io {
        path: path.clone(),
        source,
    })?;
    let points: Vec<ObjectivePoint> = pop
        .members
        .iter()
        .filter(|g| g.stats.exec_count > 0)
        .map(ObjectivePoint::of)
        .collect();
    let max_cost = points.iter().map(|p| p.cost).fold(0.0, f64::max);
    Ok(FrontOutput {
        csv,
        hypervolume: normalized_hypervolume(&points, max_cost),
    })
}

/// Contents of a `bench --suite` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub domains: Vec<DomainSpec>,
    #[serde(default = "default_tasks")]
    pub tasks_per_domain: usize,
    #[serde(default = "default_suite_seed")]
    pub suite_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_tasks() -> usize {
    50
}

fn default_suite_seed() -> u64 {
    1
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seeds: Vec<SeedOutcome>,
    /// Seeds whose final hypervolume is at least the initial one.
    pub improved: usize,
    /// Non-decreasing checkpoint transitions, and all transitions.
    pub monotone: (usize, usize),
    /// Seeds ending with at least three call-count tiers.
    pub diverse: usize,
}

pub fn cmd_bench(cfg: &RunConfig, suite_path: &Path) -> Result<BenchReport, CliError> {
    let text = fs::read_to_string(suite_path).map_err(|e| {
        CliError::Config(format!("cannot read suite {}: {e}", suite_path.display()))
    })?;
    let spec: BenchSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid suite: {e}")))?;
    if spec.seeds.is_empty() {
        return Err(CliError::Config("suite lists no seeds".into()));
    }
    if spec.experiment.checkpoint_every == 0 || spec.experiment.probes_per_domain == 0 {
        return Err(CliError::Config(
            "checkpoint_every and probes_per_domain must be positive".into(),
        ));
    }
    let suite_cfg = SuiteConfig {
        domains: spec.domains.clone(),
        tasks_per_domain: spec.tasks_per_domain.max(1),
    };
    let suite =
        generate_suite(&suite_cfg, spec.suite_seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut seeds = Vec::new();
    for &seed in &spec.seeds {
        let rt = Runtime::new(cfg, seed)?;
        seeds.push(run_seed(seed, &suite, &spec.experiment, &rt.deps(None))?);
    }
    let improved = seeds.iter().filter(|s| s.improved()).count();
    let monotone = seeds
        .iter()
        .map(SeedOutcome::monotone_steps)
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let diverse = seeds.iter().filter(|s| s.distinct_tiers() >= 3).count();
    let report = BenchReport {
        seeds,
        improved,
        monotone,
        diverse,
    };
    let dir = cfg.run_dir.join("bench");
    fs::create_dir_all(&dir).map_err(|source| StorageError::Io {
        path: dir.clone(),
        source,
    })?;
    let path = dir.join("report.json");
    let body = to_canonical_string(&report).map_err(|e| CliError::Failed(e.to_string()))? + "\n";
    fs::write(&path, body).map_err(|source| StorageError::Io { path, source })?;
    Ok(report)
}
