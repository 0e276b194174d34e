//! Synthetic task suites, the simulated model preset, and front metrics.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::format_real;
use crate::evolution::{
    dominates, evolve_step, init_population, stream_rng, Deps, EvoError, ObjectivePoint, Population,
};
use crate::executor::{execute, nominal_calls, Metric, TaskQuery};
use crate::genome::{ModelPool, ModelSpec, WorkflowGenome};
use crate::memory::ExperienceStore;
use crate::provider::sim::{SimModelProfile, TaskEnvelope};

/// Expression depth reached at difficulty 1.
pub const MAX_DEPTH: u32 = 4;
pub const FRONT_HEADER: &str = "workflow_id,perf,cost,on_front";

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub label: String,
    /// In [0,1]; scales expression depth.
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub domains: Vec<DomainSpec>,
    #[serde(default = "default_tasks_per_domain")]
    pub tasks_per_domain: usize,
}

fn default_tasks_per_domain() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub domains: Vec<DomainSpec>,
    /// Domains interleaved: task `i` belongs to `domains[i % len]`.
    pub tasks: Vec<TaskQuery>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Lit(i64),
    Bin(Box<Expr>, char, Box<Expr>),
}

impl Expr {
    fn value(&self) -> i64 {
        match self {
            Expr::Lit(v) => *v,
            Expr::Bin(a, op, b) => {
                let (a, b) = (a.value(), b.value());
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    _ => a * b,
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Bin(a, op, b) => write!(f, "({a} {op} {b})"),
        }
    }
}

/// Random expression of exactly `depth` levels with literals in 1..=9.
fn random_expr(depth: u32, rng: &mut impl Rng) -> Expr {
    if depth == 0 {
        return Expr::Lit(rng.random_range(1..=9));
    }
    let op = ['+', '-', '*'][rng.random_range(0..3)];
    let short = rng.random_range(0..depth);
    let (l, r) = if rng.random::<bool>() {
        (depth - 1, short)
    } else {
        (short, depth - 1)
    };
    Expr::Bin(
        Box::new(random_expr(l, rng)),
        op,
        Box::new(random_expr(r, rng)),
    )
}

fn depth_for(difficulty: f64) -> u32 {
    (difficulty.clamp(0.0, 1.0) * MAX_DEPTH as f64).round() as u32
}

/// Arithmetic tasks with exact integer golds; difficulty sets expression depth.
pub fn generate_suite(config: &SuiteConfig, seed: u64) -> Result<SyntheticSuite, BenchError> {
    if config.domains.is_empty() {
        return Err(BenchError::InvalidInput(
            "suite needs at least one domain".into(),
        ));
    }
    for d in &config.domains {
        if d.label.is_empty() || d.label.contains(char::is_whitespace) || d.label.contains(':') {
            return Err(BenchError::InvalidInput(format!(
                "domain label `{}` must be one word without ':'",
                d.label
            )));
        }
        if !(0.0..=1.0).contains(&d.difficulty) {
            return Err(BenchError::InvalidInput(format!(
                "difficulty of `{}` must be in [0,1]",
                d.label
            )));
        }
    }
    let mut rng = stream_rng(seed, "suite", 0);
    let total = config.tasks_per_domain * config.domains.len();
    let tasks = (0..total)
        .map(|i| {
            let d = &config.domains[i % config.domains.len()];
            let expr = random_expr(depth_for(d.difficulty), &mut rng);
            let gold = expr.value().to_string();
            let envelope = TaskEnvelope {
                domain: d.label.clone(),
                gold: gold.clone(),
            };
            TaskQuery {
                query_id: format!("{}-{:04}", d.label, i / config.domains.len()),
                text: format!("{}: Compute {expr}. {}", d.label, envelope.render()),
                domain: d.label.clone(),
                gold: Some(gold),
                metric: Metric::Numeric,
            }
        })
        .collect();
    Ok(SyntheticSuite {
        domains: config.domains.clone(),
        tasks,
        seed,
    })
}

/// Indices of the non-dominated points, in input order. Of several equal
/// points only the first is kept.
pub fn pareto_front(points: &[ObjectivePoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let p = points[i];
            !points.iter().any(|q| dominates(*q, p)) && !points[..i].contains(&p)
        })
        .collect()
}

/// Area weakly dominated by `front` and bounded by `reference`
/// (perf above it, cost below it).
pub fn hypervolume(front: &[ObjectivePoint], reference: ObjectivePoint) -> Result<f64, BenchError> {
    if !front.iter().any(|p| dominates(*p, reference)) {
        return Err(BenchError::InvalidInput(
            "reference point is dominated by no front point".into(),
        ));
    }
    let mut pts: Vec<ObjectivePoint> = front
        .iter()
        .copied()
        .filter(|p| p.perf > reference.perf && p.cost < reference.cost)
        .collect();
    pts.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let mut area = 0.0;
    let mut best = reference.perf;
    for (i, p) in pts.iter().enumerate() {
        best = best.max(p.perf);
        let next = pts.get(i + 1).map_or(reference.cost, |q| q.cost);
        area += (next - p.cost) * (best - reference.perf);
    }
    Ok(area)
}

/// Total nominal model calls of a genome.
pub fn total_calls(genome: &WorkflowGenome) -> u32 {
    genome.operators.iter().map(nominal_calls).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallTier {
    /// At most 2 calls.
    Simple,
    /// 3 to 8 calls.
    Moderate,
    /// 9 or more calls.
    Complex,
}

impl CallTier {
    pub fn of(calls: u32) -> Self {
        match calls {
            0..=2 => CallTier::Simple,
            3..=8 => CallTier::Moderate,
            _ => CallTier::Complex,
        }
    }
}

const SIM_PROMPT_TOKENS: u64 = 300;
const SIM_COMPLETION_TOKENS: u64 = 200;

/// (model, p on arithmetic, p on nested-expressions, prompt price, completion price)
const SIM_PRESET: [(&str, f64, f64, f64, f64); 4] = [
    ("sim-tiny", 0.55, 0.30, 0.10, 0.30),
    ("sim-small", 0.70, 0.45, 0.20, 0.60),
    ("sim-medium", 0.80, 0.60, 0.40, 1.20),
    ("sim-large", 0.92, 0.80, 0.80, 2.40),
];

/// Four simulated models from cheap and weak to expensive and strong.
pub fn sim_profiles() -> Vec<SimModelProfile> {
    SIM_PRESET
        .iter()
        .enumerate()
        .map(|(i, &(id, easy, hard, _, _))| SimModelProfile {
            model_id: id.into(),
            success: BTreeMap::from([
                ("arithmetic".into(), easy),
                ("nested-expressions".into(), hard),
            ]),
            default_success: (easy + hard) / 2.0,
            prompt_tokens: SIM_PROMPT_TOKENS,
            completion_tokens: SIM_COMPLETION_TOKENS,
            noise_salt: i as u64,
        })
        .collect()
}

pub fn sim_pool() -> ModelPool {
    ModelPool::new(
        SIM_PRESET
            .iter()
            .map(|&(id, _, _, pp, cp)| ModelSpec::new(id, pp, cp))
            .collect(),
    )
    .expect("preset pool is valid")
}

/// Two domains matching [`sim_profiles`].
pub fn preset_suite() -> SuiteConfig {
    SuiteConfig {
        domains: vec![
            DomainSpec {
                label: "arithmetic".into(),
                difficulty: 0.3,
            },
            DomainSpec {
                label: "nested-expressions".into(),
                difficulty: 0.8,
            },
        ],
        tasks_per_domain: 50,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub workflow_id: String,
    pub perf: f64,
    pub cost: f64,
    pub on_front: bool,
}

/// One row per member, from running means. Members never executed are
/// listed but kept off the front.
pub fn front_rows(members: &[WorkflowGenome]) -> Vec<FrontRow> {
    let executed: Vec<usize> = (0..members.len())
        .filter(|&i| members[i].stats.exec_count > 0)
        .collect();
    let points: Vec<ObjectivePoint> = executed
        .iter()
        .map(|&i| ObjectivePoint::of(&members[i]))
        .collect();
    let on: Vec<usize> = pareto_front(&points)
        .into_iter()
        .map(|j| executed[j])
        .collect();
    let mut rows: Vec<FrontRow> = members
        .iter()
        .enumerate()
        .map(|(i, g)| FrontRow {
            workflow_id: g.workflow_id.clone(),
            perf: g.stats.mean_perf,
            cost: g.stats.mean_cost,
            on_front: on.contains(&i),
        })
        .collect();
    rows.sort_by(|a, b| a.workflow_id.cmp(&b.workflow_id));
    rows
}

pub fn front_csv(rows: &[FrontRow]) -> String {
    let mut out = format!("{FRONT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.workflow_id,
            format_real(r.perf),
            format_real(r.cost),
            r.on_front
        ));
    }
    out
}

/// Hypervolume of points on axes (perf, cost / max cost) against (0, 1);
/// zero when no point dominates the reference.
pub fn normalized_hypervolume(points: &[ObjectivePoint], max_cost: f64) -> f64 {
    let scale = if max_cost > 0.0 { max_cost } else { 1.0 };
    let scaled: Vec<ObjectivePoint> = points
        .iter()
        .map(|p| ObjectivePoint::new(p.perf, p.cost / scale))
        .collect();
    let front: Vec<ObjectivePoint> = pareto_front(&scaled)
        .into_iter()
        .map(|i| scaled[i])
        .collect();
    hypervolume(&front, ObjectivePoint::new(0.0, 1.0)).unwrap_or(0.0)
}

/// Mean (perf, cost) of each member over a fixed probe set. Failed
/// executions score zero with their partial cost.
pub fn probe_points(
    members: &[WorkflowGenome],
    probes: &[TaskQuery],
    deps: &Deps,
) -> Result<Vec<ObjectivePoint>, EvoError> {
    let n = probes.len().max(1) as f64;
    members
        .iter()
        .map(|g| {
            let (mut perf, mut cost) = (0.0, 0.0);
            for q in probes {
                match execute(g, q, deps.backend, deps.pool, deps.exec) {
                    Ok(t) => {
                        perf += deps.evaluator.evaluate(&t.answer, q)?;
                        cost += t.total_cost;
                    }
                    Err(f) => cost += f.partial_cost,
                }
            }
            Ok(ObjectivePoint::new(perf / n, cost / n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub steps: u64,
    pub checkpoint_every: u64,
    /// Probe tasks per domain, drawn from a suite seeded apart from training.
    pub probes_per_domain: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            checkpoint_every: 20,
            probes_per_domain: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Generations at which the population was probed (0 and every checkpoint).
    pub checkpoints: Vec<u64>,
    /// Raw probe points per checkpoint, in member order.
    pub points: Vec<Vec<ObjectivePoint>>,
    /// Hypervolume per checkpoint, cost normalized by the run's largest probe cost.
    pub hypervolume: Vec<f64>,
    pub final_tiers: Vec<CallTier>,
    pub accepted: u64,
}

impl SeedOutcome {
    pub fn improved(&self) -> bool {
        match (self.hypervolume.first(), self.hypervolume.last()) {
            (Some(a), Some(b)) => *b >= *a - 1e-6,
            _ => false,
        }
    }

    /// (non-decreasing checkpoint transitions, all transitions)
    pub fn monotone_steps(&self) -> (usize, usize) {
        let ok = self
            .hypervolume
            .windows(2)
            .filter(|w| w[1] >= w[0] - 1e-6)
            .count();
        (ok, self.hypervolume.len().saturating_sub(1))
    }

    pub fn distinct_tiers(&self) -> usize {
        let mut t = self.final_tiers.clone();
        t.sort();
        t.dedup();
        t.len()
    }
}

pub fn probe_tasks(
    suite: &SyntheticSuite,
    per_domain: usize,
) -> Result<Vec<TaskQuery>, BenchError> {
    let cfg = SuiteConfig {
        domains: suite.domains.clone(),
        tasks_per_domain: per_domain,
    };
    let mut probes = generate_suite(&cfg, suite.seed.wrapping_add(0x9e37_79b9))?.tasks;
    for q in &mut probes {
        q.query_id = format!("probe-{}", q.query_id);
    }
    Ok(probes)
}

/// Initialize from `seed`, evolve on the suite's query stream, and probe
/// the population at every checkpoint.
pub fn run_seed(
    seed: u64,
    suite: &SyntheticSuite,
    cfg: &ExperimentConfig,
    deps: &Deps,
) -> Result<SeedOutcome, EvoError> {
    if suite.tasks.is_empty() {
        return Err(EvoError::Config("suite has no tasks".into()));
    }
    if cfg.checkpoint_every == 0 {
        return Err(EvoError::Config("checkpoint_every must be positive".into()));
    }
    let probes =
        probe_tasks(suite, cfg.probes_per_domain).map_err(|e| EvoError::Config(e.to_string()))?;
    let labels: Vec<String> = suite.domains.iter().map(|d| d.label.clone()).collect();
    let mut pop: Population = init_population(seed, &labels, deps)?;
    let mut memory = ExperienceStore::in_memory();
    let mut checkpoints = vec![0];
    let mut points = vec![probe_points(&pop.members, &probes, deps)?];
    let mut accepted = 0;
    for step in 0..cfg.steps {
        let q = &suite.tasks[(step % suite.tasks.len() as u64) as usize];
        if evolve_step(&mut pop, q, deps, &mut memory)?.accepted {
            accepted += 1;
        }
        if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
            checkpoints.push(step + 1);
            points.push(probe_points(&pop.members, &probes, deps)?);
        }
    }
    let max_cost = points.iter().flatten().map(|p| p.cost).fold(0.0, f64::max);
    let hypervolume = points
        .iter()
        .map(|ps| normalized_hypervolume(ps, max_cost))
        .collect();
    let final_tiers = pop
        .members
        .iter()
        .map(|g| CallTier::of(total_calls(g)))
        .collect();
    Ok(SeedOutcome {
        seed,
        checkpoints,
        points,
        hypervolume,
        final_tiers,
        accepted,
    })
}
