//! Crossover and the three mutation classes.
//!
//! Every operator returns a new genome. Results are renumbered into a
//! canonical form (operators `op{i}` in layered order, nodes `op{i}.n{j}`)
//! so structurally equal offspring get equal ids.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Assistant, Deps, HyperParams};
use crate::genome::{self, Edge, ModelPool, OperatorKind, OperatorNode, Violation, WorkflowGenome};
use crate::memory::ExperienceStore;
use crate::provider::{ChatBackend, ChatRequest, Message};
use crate::repo::OperatorRepo;
use crate::template;

pub const STEP_DIRECTIVE: &str = "Work through each step explicitly before concluding.";
pub const FORMAT_DIRECTIVE: &str =
    "Keep the reply short and give the final answer on its own last line.";
pub const PERSONA_LINE: &str = "You are a careful, precise problem solver.";

/// Validation problems other than tag bookkeeping (tags are regenerated for
/// every offspring).
pub fn structural_violations(genome: &WorkflowGenome, pool: &ModelPool) -> Vec<Violation> {
    let mut g = genome.clone();
    g.tags = vec!["t".into()];
    g.tag_vectors = None;
    genome::validate(&g, pool, 1)
}

/// Rename operators `op{i}` in layered order and nodes `op{i}.n{j}`,
/// remapping every edge. Genomes that are not DAGs keep their order.
pub fn renumber(genome: &WorkflowGenome) -> WorkflowGenome {
    let order = genome
        .execution_order()
        .unwrap_or_else(|_| (0..genome.operators.len()).collect());
    let mut op_names = BTreeMap::new();
    let mut operators = Vec::with_capacity(order.len());
    for (i, &idx) in order.iter().enumerate() {
        let old = &genome.operators[idx];
        let new_id = format!("op{i}");
        op_names.insert(old.op_id.clone(), new_id.clone());
        let mut node_names = BTreeMap::new();
        let mut op = old.clone();
        op.op_id = new_id.clone();
        for (j, node) in op.invoking_nodes.iter_mut().enumerate() {
            let nid = format!("{new_id}.n{j}");
            node_names.insert(node.node_id.clone(), nid.clone());
            node.node_id = nid;
        }
        for (a, b) in op.intra_edges.iter_mut() {
            *a = node_names
                .get(a.as_str())
                .cloned()
                .unwrap_or_else(|| a.clone());
            *b = node_names
                .get(b.as_str())
                .cloned()
                .unwrap_or_else(|| b.clone());
        }
        operators.push(op);
    }
    let mut inter_edges: Vec<Edge> = genome
        .inter_edges
        .iter()
        .map(|(a, b)| {
            (
                op_names.get(a).cloned().unwrap_or_else(|| a.clone()),
                op_names.get(b).cloned().unwrap_or_else(|| b.clone()),
            )
        })
        .collect();
    inter_edges.sort();
    inter_edges.dedup();
    let mut out = genome.clone();
    out.operators = operators;
    out.inter_edges = inter_edges;
    out.refresh_id();
    out
}

fn chain(n: usize) -> Vec<Edge> {
    (1..n)
        .map(|i| (format!("op{}", i - 1), format!("op{i}")))
        .collect()
}

fn with_ops(
    template: &WorkflowGenome,
    operators: Vec<OperatorNode>,
    inter_edges: Vec<Edge>,
) -> WorkflowGenome {
    let mut g = template.clone();
    g.operators = operators;
    g.inter_edges = inter_edges;
    renumber(&g)
}

fn ops_in_order(g: &WorkflowGenome) -> Vec<OperatorNode> {
    let order = g
        .execution_order()
        .unwrap_or_else(|_| (0..g.operators.len()).collect());
    order.into_iter().map(|i| g.operators[i].clone()).collect()
}

fn fresh_lineage(g: &mut WorkflowGenome, parents: &[&WorkflowGenome], origin: &str) {
    g.lineage.parents = parents.iter().map(|p| p.workflow_id.clone()).collect();
    g.lineage.origin = origin.to_string();
    g.lineage.mutations.clear();
    g.stats = Default::default();
    g.tag_vectors = None;
}

/// Copy `parents[0]` and graft a contiguous run of `parents[1]`'s operators
/// (in layered order) at a uniform position, then rewire as a chain.
pub fn structural_crossover(
    parents: &[&WorkflowGenome],
    max_operators: usize,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    let p1 = parents[0];
    let mut base = ops_in_order(p1);
    let room = max_operators.saturating_sub(base.len());
    let mut child = match parents.get(1) {
        Some(p2) if room > 0 && !p2.operators.is_empty() => {
            let mut donor = ops_in_order(p2);
            let len = rng.random_range(1..=donor.len().min(room));
            let start = rng.random_range(0..=donor.len() - len);
            let at = rng.random_range(0..=base.len());
            let segment: Vec<OperatorNode> = donor.drain(start..start + len).collect();
            base.splice(at..at, segment);
            let n = base.len();
            for (i, op) in base.iter_mut().enumerate() {
                op.op_id = format!("op{i}");
            }
            let mut g = with_ops(p1, fix_node_ids(base), chain(n));
            g.lineage = p1.lineage.clone();
            g
        }
        _ => p1.clone(),
    };
    fresh_lineage(&mut child, parents, "crossover");
    child.refresh_id();
    child
}

/// Rename each operator's nodes `{op_id}.n{j}`, remapping its intra edges.
fn fix_node_ids(mut ops: Vec<OperatorNode>) -> Vec<OperatorNode> {
    for op in ops.iter_mut() {
        let mut names = BTreeMap::new();
        for (j, n) in op.invoking_nodes.iter_mut().enumerate() {
            let nid = format!("{}.n{j}", op.op_id);
            names.insert(n.node_id.clone(), nid.clone());
            n.node_id = nid;
        }
        for (a, b) in op.intra_edges.iter_mut() {
            *a = names.get(a.as_str()).cloned().unwrap_or_else(|| a.clone());
            *b = names.get(b.as_str()).cloned().unwrap_or_else(|| b.clone());
        }
    }
    ops
}

/// Largest `{ ... }` span of a reply.
fn json_span(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

/// Parse a genome document out of a model reply, filling schema_version and
/// the fields the model may leave out.
pub fn parse_offspring(
    reply: &str,
    pool: &ModelPool,
    max_operators: usize,
) -> Option<WorkflowGenome> {
    let mut doc: serde_json::Value = serde_json::from_str(json_span(reply)?).ok()?;
    let obj = doc.as_object_mut()?;
    obj.insert("schema_version".into(), genome::SCHEMA_VERSION.into());
    obj.entry("workflow_id").or_insert_with(|| "".into());
    obj.entry("tags").or_insert_with(|| serde_json::json!([]));
    obj.entry("inter_edges")
        .or_insert_with(|| serde_json::json!([]));
    obj.entry("stats").or_insert_with(
        || serde_json::json!({"exec_count": 0, "mean_cost": 0.0, "mean_perf": 0.0}),
    );
    obj.entry("lineage")
        .or_insert_with(|| serde_json::json!({}));
    let g = genome::deserialize(&doc.to_string()).ok()?;
    (g.operators.len() <= max_operators && structural_violations(&g, pool).is_empty())
        .then(|| renumber(&g))
}

/// Ask the assistant for an offspring up to `retries` times; fall back to
/// [`structural_crossover`].
pub fn crossover(
    parents: &[&WorkflowGenome],
    task: &str,
    deps: &Deps,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    if let Some(assistant) = deps.assistant {
        if let Some(mut g) = llm_crossover(parents, task, assistant, deps) {
            fresh_lineage(&mut g, parents, "crossover-llm");
            g.refresh_id();
            return g;
        }
    }
    structural_crossover(parents, deps.params.max_operators, rng)
}

fn llm_crossover(
    parents: &[&WorkflowGenome],
    task: &str,
    a: &Assistant,
    deps: &Deps,
) -> Option<WorkflowGenome> {
    let docs: Vec<String> = parents
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "Parent {}:\n{}",
                i + 1,
                genome::serialize(p).unwrap_or_default()
            )
        })
        .collect();
    let models: Vec<&str> = deps.pool.ids().collect();
    let prompt = template::render(
        &a.prompts.crossover,
        &[
            ("models", &models.join(", ")),
            ("parents", &docs.join("\n")),
            ("task", task),
        ],
    )
    .ok()?;
    for attempt in 0..deps.params.retries {
        let reply = ask(
            deps.backend,
            a,
            &format!("crossover attempt {attempt}"),
            &prompt,
        )?;
        if let Some(g) = parse_offspring(&reply, deps.pool, deps.params.max_operators) {
            return Some(g);
        }
    }
    None
}

fn ask(backend: &dyn ChatBackend, a: &Assistant, system: &str, prompt: &str) -> Option<String> {
    let req = ChatRequest {
        model_id: a.model_id.clone(),
        messages: vec![Message::system(system), Message::user(prompt)],
        temperature: 1.0,
    };
    backend.chat(&req).ok().map(|r| r.content)
}

/// Pick a replacement for `current` weighted by each candidate's smoothed
/// Positive-rate in `domain` (uniform without history).
pub fn pick_model(
    current: &str,
    pool: &ModelPool,
    memory: &ExperienceStore,
    domain: &str,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    let candidates: Vec<&str> = pool.ids().filter(|m| *m != current).collect();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|m| memory.llm_summary(m, Some(domain)).positive_rate())
        .collect();
    let dist = WeightedIndex::new(&weights).ok()?;
    Some(candidates[dist.sample(rng)].to_string())
}

/// Replace node backbones with probability `rho_l` each.
pub fn mutate_llm(
    genome: &WorkflowGenome,
    memory: &ExperienceStore,
    domain: &str,
    deps: &Deps,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    let mut g = genome.clone();
    if deps.pool.len() < 2 {
        return g;
    }
    for op in g.operators.iter_mut() {
        for node in op.invoking_nodes.iter_mut() {
            if rng.random::<f64>() >= deps.params.rho_l {
                continue;
            }
            let suggested = deps.assistant.and_then(|a| {
                llm_pick_model(&node.prompt, &node.model_id, memory, domain, a, deps)
            });
            let choice =
                suggested.or_else(|| pick_model(&node.model_id, deps.pool, memory, domain, rng));
            if let Some(m) = choice {
                g.lineage
                    .mutations
                    .push(format!("llm:{}:{}->{}", node.node_id, node.model_id, m));
                node.model_id = m;
            }
        }
    }
    g.refresh_id();
    g
}

fn llm_pick_model(
    prompt: &str,
    current: &str,
    memory: &ExperienceStore,
    domain: &str,
    a: &Assistant,
    deps: &Deps,
) -> Option<String> {
    let candidates: Vec<&str> = deps.pool.ids().filter(|m| *m != current).collect();
    let history: Vec<String> = candidates
        .iter()
        .map(|m| {
            let s = memory.llm_summary(m, Some(domain));
            format!(
                "{m}: {} positive, {} negative, {} unused",
                s.positive, s.negative, s.none
            )
        })
        .collect();
    let text = template::render(
        &a.prompts.mutate_llm,
        &[
            ("prompt", prompt),
            ("current", current),
            ("candidates", &candidates.join(", ")),
            ("domain", domain),
            ("history", &history.join("\n")),
        ],
    )
    .ok()?;
    let reply = ask(deps.backend, a, "model selection", &text)?;
    let reply = reply.trim();
    candidates
        .iter()
        .find(|c| reply == **c)
        .or_else(|| candidates.iter().find(|c| reply.contains(**c)))
        .map(|c| c.to_string())
}

/// One deterministic prompt edit, or `None` if it would be a no-op.
pub fn edit_prompt(prompt: &str, edit: usize) -> Option<String> {
    let out = match edit {
        0 if !prompt.contains(STEP_DIRECTIVE) => format!("{prompt}\n{STEP_DIRECTIVE}"),
        1 if !prompt.contains(FORMAT_DIRECTIVE) => format!("{prompt}\n{FORMAT_DIRECTIVE}"),
        2 if !prompt.contains(PERSONA_LINE) => format!("{PERSONA_LINE}\n{prompt}"),
        _ => return None,
    };
    Some(out)
}

/// A rewrite is kept only if it retains every placeholder of the original.
pub fn keeps_placeholders(original: &str, rewrite: &str) -> bool {
    template::placeholders(original).is_subset(&template::placeholders(rewrite))
}

/// Rewrite node prompts with probability `rho_p` each.
pub fn mutate_prompt(
    genome: &WorkflowGenome,
    memory: &ExperienceStore,
    deps: &Deps,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    let mut g = genome.clone();
    let history = memory
        .wf_summary(&genome.workflow_id, None)
        .recent
        .join("\n");
    for op in g.operators.iter_mut() {
        for node in op.invoking_nodes.iter_mut() {
            if rng.random::<f64>() >= deps.params.rho_p {
                continue;
            }
            let edit = rng.random_range(0..3);
            let rewrite = match deps.assistant {
                Some(a) => llm_rewrite(&node.prompt, &history, a, deps)
                    .or_else(|| edit_prompt(&node.prompt, edit)),
                None => edit_prompt(&node.prompt, edit),
            };
            if let Some(p) = rewrite.filter(|p| keeps_placeholders(&node.prompt, p)) {
                g.lineage.mutations.push(format!("prompt:{}", node.node_id));
                node.prompt = p;
            }
        }
    }
    g.refresh_id();
    g
}

fn llm_rewrite(prompt: &str, history: &str, a: &Assistant, deps: &Deps) -> Option<String> {
    let history = if history.is_empty() {
        "(no feedback yet)"
    } else {
        history
    };
    let text = template::render(
        &a.prompts.mutate_prompt,
        &[("prompt", prompt), ("history", history)],
    )
    .ok()?;
    let reply = ask(deps.backend, a, "prompt rewrite", &text)?;
    let reply = reply.trim();
    (!reply.is_empty()).then(|| reply.to_string())
}

/// Sample models for a fresh operator; ensemble answerers get distinct
/// models when the pool is large enough.
pub fn sample_models(kind: OperatorKind, pool: &ModelPool, rng: &mut ChaCha8Rng) -> Vec<String> {
    let ids: Vec<String> = pool.ids().map(String::from).collect();
    let n = OperatorRepo::node_count(kind);
    let mut models: Vec<String> = (0..n)
        .map(|_| ids.choose(rng).expect("nonempty pool").clone())
        .collect();
    if kind == OperatorKind::Ensemble && ids.len() >= 3 {
        let mut shuffled = ids.clone();
        shuffled.shuffle(rng);
        models[..3].clone_from_slice(&shuffled[..3]);
    }
    models
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMutation {
    Add,
    Delete,
    Rewire,
}

/// Add, delete or rewire one operator. Invalid results are discarded.
pub fn mutate_operator(
    genome: &WorkflowGenome,
    deps: &Deps,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    let Ok(dist) = WeightedIndex::new(deps.params.operator_weights) else {
        return genome.clone();
    };
    let kind = [
        OperatorMutation::Add,
        OperatorMutation::Delete,
        OperatorMutation::Rewire,
    ][dist.sample(rng)];
    apply_operator_mutation(genome, kind, deps.repo, deps.pool, deps.params, rng)
        .unwrap_or_else(|| genome.clone())
}

pub fn apply_operator_mutation(
    genome: &WorkflowGenome,
    mutation: OperatorMutation,
    repo: &OperatorRepo,
    pool: &ModelPool,
    params: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Option<WorkflowGenome> {
    let order = genome.execution_order().ok()?;
    let ids: Vec<String> = order
        .iter()
        .map(|&i| genome.operators[i].op_id.clone())
        .collect();
    let mut ops = genome.operators.clone();
    let mut edges = genome.inter_edges.clone();
    let label;
    match mutation {
        OperatorMutation::Add => {
            if ops.len() >= params.max_operators || repo.is_empty() {
                return None;
            }
            let kind = *repo.kinds().choose(rng)?;
            let new_id = "new".to_string();
            let models = sample_models(kind, pool, rng);
            ops.push(OperatorRepo::instantiate(kind, &new_id, &models));
            let at = rng.random_range(0..=ids.len());
            if at > 0 {
                edges.push((ids[at - 1].clone(), new_id.clone()));
            }
            if at < ids.len() {
                edges.push((new_id.clone(), ids[at].clone()));
            }
            label = format!("operator:add:{kind}");
        }
        OperatorMutation::Delete => {
            let sink = genome.sink()?.op_id.clone();
            let victims: Vec<&String> = ids.iter().filter(|id| **id != sink).collect();
            let victim = (*victims.choose(rng)?).clone();
            let preds: Vec<String> = edges
                .iter()
                .filter(|(_, b)| *b == victim)
                .map(|(a, _)| a.clone())
                .collect();
            let succs: Vec<String> = edges
                .iter()
                .filter(|(a, _)| *a == victim)
                .map(|(_, b)| b.clone())
                .collect();
            edges.retain(|(a, b)| *a != victim && *b != victim);
            for p in &preds {
                for s in &succs {
                    edges.push((p.clone(), s.clone()));
                }
            }
            ops.retain(|o| o.op_id != victim);
            label = format!("operator:delete:{victim}");
        }
        OperatorMutation::Rewire => {
            if edges.is_empty() {
                return None;
            }
            let e = rng.random_range(0..edges.len());
            let (from, to) = edges[e].clone();
            let targets: Vec<&String> = ids
                .iter()
                .filter(|t| {
                    **t != from && **t != to && !edges.contains(&(from.clone(), (*t).clone()))
                })
                .collect();
            let target = (*targets.choose(rng)?).clone();
            edges[e] = (from.clone(), target.clone());
            label = format!("operator:rewire:{from}->{to}=>{target}");
        }
    }
    edges.sort();
    edges.dedup();
    let mut candidate = genome.clone();
    candidate.operators = ops;
    candidate.inter_edges = edges;
    if !structural_violations(&candidate, pool).is_empty() {
        return None;
    }
    let mut out = renumber(&candidate);
    out.lineage.mutations.push(label);
    Some(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::genome::ModelSpec;

    fn pool() -> ModelPool {
        ModelPool::new(vec![
            ModelSpec::new("a", 1.0, 1.0),
            ModelSpec::new("b", 2.0, 2.0),
        ])
        .unwrap()
    }

    fn chain_genome(kinds: &[OperatorKind]) -> WorkflowGenome {
        let ops: Vec<OperatorNode> = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| {
                OperatorRepo::instantiate(
                    *k,
                    &format!("op{i}"),
                    &vec!["a".to_string(); OperatorRepo::node_count(*k)],
                )
            })
            .collect();
        WorkflowGenome::new(ops, chain(kinds.len()))
    }

    #[test]
    fn delete_protects_single_sink() {
        let g = chain_genome(&[OperatorKind::CoT]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = apply_operator_mutation(
            &g,
            OperatorMutation::Delete,
            &OperatorRepo::standard(),
            &pool(),
            &HyperParams::default(),
            &mut rng,
        );
        assert!(r.is_none());
    }

    #[test]
    fn add_to_chain_keeps_one_sink() {
        let g = chain_genome(&[OperatorKind::CoT, OperatorKind::StepBack]);
        let repo = OperatorRepo::new(vec![OperatorKind::CoT]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = apply_operator_mutation(
                &g,
                OperatorMutation::Add,
                &repo,
                &pool(),
                &HyperParams::default(),
                &mut rng,
            )
            .unwrap();
            assert_eq!(r.operators.len(), 3);
            assert!(structural_violations(&r, &pool()).is_empty());
            assert!(r.execution_order().is_ok());
        }
    }

    #[test]
    fn prompt_edits_keep_placeholders() {
        for e in 0..3 {
            let p = edit_prompt("Solve {task}", e).unwrap();
            assert!(keeps_placeholders("Solve {task}", &p));
            assert_eq!(edit_prompt(&p, e), None);
        }
        assert!(!keeps_placeholders("Solve {task}", "Solve it"));
    }

    #[test]
    fn renumber_is_canonical() {
        let mut g = chain_genome(&[OperatorKind::CoT, OperatorKind::CoT]);
        g.operators.swap(0, 1);
        g.refresh_id();
        assert_eq!(
            renumber(&g).workflow_id,
            chain_genome(&[OperatorKind::CoT, OperatorKind::CoT]).workflow_id
        );
    }

    #[test]
    fn structural_crossover_grafts_from_second_parent() {
        let p1 = chain_genome(&[OperatorKind::CoT]);
        let p2 = chain_genome(&[OperatorKind::Debate, OperatorKind::Ensemble]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let child = structural_crossover(&[&p1, &p2], 8, &mut rng);
        assert!(child.operators.len() >= 2);
        assert!(child.operators.iter().any(|o| o.kind == OperatorKind::CoT));
        assert!(child.operators.iter().any(|o| o.kind != OperatorKind::CoT));
        assert!(structural_violations(&child, &pool()).is_empty());
        assert_eq!(
            child.lineage.parents,
            [p1.workflow_id.clone(), p2.workflow_id.clone()]
        );
    }
}
