//! One evolution step, and inference over a population.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::init::assign_tags;
use super::selection::{niching_area, select_parents, update_stats, worst_index};
use super::variation::{crossover, mutate_llm, mutate_operator, mutate_prompt, renumber};
use super::{stream_rng, Deps, EvoError, Population};
use crate::canonical::round_real;
use crate::embedding::{similarity_score, EmbeddingVector};
use crate::executor::{execute, write_trace, ExecutionTrace, TaskQuery};
use crate::genome::{RunStats, WorkflowGenome};
use crate::memory::ExperienceStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub workflow_id: String,
    pub perf: f64,
    pub cost: f64,
    pub calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Index of this step (population generation before it ran).
    pub generation: u64,
    pub query_id: String,
    pub parents: Vec<String>,
    pub offspring_id: String,
    pub accepted: bool,
    pub eliminated: Option<String>,
    pub niche: Vec<String>,
    /// One entry per executed genome, offspring first, then by id.
    pub executions: Vec<ExecutionSummary>,
}

struct Outcome {
    summary: ExecutionSummary,
    trace: Option<ExecutionTrace>,
}

fn run(genome: &WorkflowGenome, query: &TaskQuery, deps: &Deps) -> Result<Outcome, EvoError> {
    let (perf, cost, calls, error, trace) =
        match execute(genome, query, deps.backend, deps.pool, deps.exec) {
            Ok(trace) => {
                let perf = deps.evaluator.evaluate(&trace.answer, query)?;
                (
                    perf,
                    trace.total_cost,
                    trace.call_count() as u32,
                    None,
                    Some(trace),
                )
            }
            Err(f) => (
                0.0,
                f.partial_cost,
                f.calls,
                Some(f.error.to_string()),
                None,
            ),
        };
    if let (Some(dir), Some(t)) = (deps.trace_dir, &trace) {
        write_trace(dir, t).map_err(|source| crate::memory::StorageError::Io {
            path: dir.join("traces"),
            source,
        })?;
    }
    Ok(Outcome {
        summary: ExecutionSummary {
            workflow_id: genome.workflow_id.clone(),
            perf,
            cost,
            calls,
            error,
        },
        trace,
    })
}

/// Running-mean update as stored in a population: exact update, then
/// rounded to the 12 significant digits the snapshot format keeps.
fn stored_update(stats: &RunStats, cost: f64, perf: f64) -> RunStats {
    let s = update_stats(stats, cost, perf);
    RunStats {
        exec_count: s.exec_count,
        mean_cost: round_real(s.mean_cost),
        mean_perf: round_real(s.mean_perf),
    }
}

/// Run one step of the evolutionary loop on `query`.
pub fn evolve_step(
    pop: &mut Population,
    query: &TaskQuery,
    deps: &Deps,
    memory: &mut ExperienceStore,
) -> Result<StepReport, EvoError> {
    let params = deps.params;
    params.check()?;
    if pop.members.len() != params.n {
        return Err(EvoError::Config(format!(
            "population has {} members, expected {}",
            pop.members.len(),
            params.n
        )));
    }
    let generation = pop.generation;
    let mut rng = stream_rng(pop.seed, "step", generation);
    let query_vec = deps.embedder.embed(&query.text)?;

    let parent_idx = select_parents(&pop.members, &query_vec, params.k)?;
    let parents: Vec<&WorkflowGenome> = parent_idx.iter().map(|&i| &pop.members[i]).collect();
    let parent_ids: Vec<String> = parents.iter().map(|p| p.workflow_id.clone()).collect();

    let mut child = crossover(&parents, &query.text, deps, &mut rng);
    child = mutate_llm(&child, memory, &query.domain, deps, &mut rng);
    child = mutate_prompt(&child, memory, deps, &mut rng);
    child = mutate_operator(&child, deps, &mut rng);
    child = renumber(&child);
    child.stats = RunStats::default();
    assign_tags(&mut child, &query.domain, &query.text, deps)?;

    let clone_of = pop
        .members
        .iter()
        .position(|g| g.workflow_id == child.workflow_id);

    // Offspring first, so its objective point exists before niching.
    let child_run = run(&child, query, deps)?;
    let mut outcomes: BTreeMap<String, Outcome> = BTreeMap::new();
    let mut niche_ids = Vec::new();
    let mut executed: BTreeSet<usize> = parent_idx.iter().copied().collect();

    if clone_of.is_none() {
        child.stats = stored_update(&child.stats, child_run.summary.cost, child_run.summary.perf);
        let niche = niching_area(&pop.members, &child, params.e)?;
        niche_ids = niche
            .iter()
            .map(|&i| pop.members[i].workflow_id.clone())
            .collect();
        executed.extend(niche.iter().copied());
    }
    for &i in &executed {
        let g = &pop.members[i];
        outcomes.insert(g.workflow_id.clone(), run(g, query, deps)?);
    }
    // Clone offspring: its run counts as one more execution of the member.
    if let Some(i) = clone_of {
        executed.insert(i);
        let id = pop.members[i].workflow_id.clone();
        // Already executed as a parent: the offspring run is dropped.
        outcomes.entry(id).or_insert_with(|| Outcome {
            summary: child_run.summary.clone(),
            trace: None,
        });
    }

    // Serial stat updates in id order.
    let mut by_id: Vec<usize> = executed.iter().copied().collect();
    by_id.sort_by(|&a, &b| pop.members[a].workflow_id.cmp(&pop.members[b].workflow_id));
    for &i in &by_id {
        let o = &outcomes[&pop.members[i].workflow_id];
        pop.members[i].stats = stored_update(&pop.members[i].stats, o.summary.cost, o.summary.perf);
    }

    let mut report = StepReport {
        generation,
        query_id: query.query_id.clone(),
        parents: parent_ids,
        offspring_id: child.workflow_id.clone(),
        accepted: false,
        eliminated: None,
        niche: niche_ids.clone(),
        executions: Vec::new(),
    };

    let threshold = params.success_threshold;
    if clone_of.is_none() {
        memory.record_execution(
            &child,
            &query.query_id,
            &query.domain,
            child_run.trace.as_ref(),
            child_run.summary.perf,
            child_run.summary.cost,
            threshold,
            generation,
        )?;
        report.executions.push(child_run.summary.clone());
    }
    for &i in &by_id {
        let g = &pop.members[i];
        let o = &outcomes[&g.workflow_id];
        memory.record_execution(
            g,
            &query.query_id,
            &query.domain,
            o.trace.as_ref(),
            o.summary.perf,
            o.summary.cost,
            threshold,
            generation,
        )?;
        report.executions.push(o.summary.clone());
    }

    if clone_of.is_none() {
        let niche_members: Vec<usize> = niche_ids
            .iter()
            .map(|id| {
                pop.members
                    .iter()
                    .position(|g| &g.workflow_id == id)
                    .expect("niche member")
            })
            .collect();
        let mut pool: Vec<&WorkflowGenome> =
            niche_members.iter().map(|&i| &pop.members[i]).collect();
        pool.push(&child);
        let worst = worst_index(&pool, params.phi);
        if worst < niche_members.len() {
            let victim = niche_members[worst];
            report.eliminated = Some(pop.members[victim].workflow_id.clone());
            report.accepted = true;
            pop.members[victim] = child;
        } else {
            report.eliminated = Some(report.offspring_id.clone());
        }
    }
    pop.generation += 1;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InferMode {
    Best,
    /// Only genomes whose mean cost is within this budget.
    Budget(f64),
}

/// The genome inference would run: highest similarity (ties: lower mean
/// cost, then id), restricted to the budget when one is given; the cheapest
/// genome when nothing fits.
pub fn choose_for_inference(
    members: &[WorkflowGenome],
    query_vec: &EmbeddingVector,
    mode: InferMode,
) -> Result<usize, EvoError> {
    if members.is_empty() {
        return Err(EvoError::Config("population is empty".into()));
    }
    let scores = members
        .iter()
        .map(|g| similarity_score(g, query_vec))
        .collect::<Result<Vec<_>, _>>()?;
    let eligible: Vec<usize> = match mode {
        InferMode::Best => (0..members.len()).collect(),
        InferMode::Budget(b) => (0..members.len())
            .filter(|&i| members[i].stats.mean_cost <= b)
            .collect(),
    };
    let by_cost_then_id = |a: usize, b: usize| {
        members[a]
            .stats
            .mean_cost
            .total_cmp(&members[b].stats.mean_cost)
            .then(members[a].workflow_id.cmp(&members[b].workflow_id))
    };
    let chosen = if eligible.is_empty() {
        (0..members.len()).min_by(|&a, &b| by_cost_then_id(a, b))
    } else {
        eligible
            .into_iter()
            .min_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(by_cost_then_id(a, b)))
    };
    Ok(chosen.expect("nonempty"))
}

/// Pick a genome for `query` and execute it.
pub fn infer(
    pop: &Population,
    query: &TaskQuery,
    mode: InferMode,
    deps: &Deps,
) -> Result<(String, Result<ExecutionTrace, crate::executor::ExecFailure>), EvoError> {
    let qv = deps.embedder.embed(&query.text)?;
    let g = &pop.members[choose_for_inference(&pop.members, &qv, mode)?];
    let result = execute(g, query, deps.backend, deps.pool, deps.exec);
    if let (Some(dir), Ok(t)) = (deps.trace_dir, &result) {
        write_trace(dir, t).map_err(|source| crate::memory::StorageError::Io {
            path: dir.join("traces"),
            source,
        })?;
    }
    Ok((g.workflow_id.clone(), result))
}
