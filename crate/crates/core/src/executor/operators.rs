//! Per-kind operator semantics.

use std::collections::BTreeMap;

use super::tools::parse_action;
use super::{CallRecord, ExecError, ExecOptions};
use crate::genome::{layered_order, ModelPool, OperatorKind, OperatorNode};
use crate::provider::sim::STOP_MARKER;
use crate::provider::{call_cost, ChatBackend, ChatRequest, Message, ProviderError};
use crate::template;
use crate::text::final_answer;

pub(crate) struct Session<'a> {
    backend: &'a dyn ChatBackend,
    pool: &'a ModelPool,
    opts: &'a ExecOptions,
    pub(crate) calls_made: u32,
    pub(crate) spent: f64,
}

impl<'a> Session<'a> {
    pub(crate) fn new(
        backend: &'a dyn ChatBackend,
        pool: &'a ModelPool,
        opts: &'a ExecOptions,
    ) -> Self {
        Self {
            backend,
            pool,
            opts,
            calls_made: 0,
            spent: 0.0,
        }
    }

    /// One model call for invoking node `node` of `op`.
    fn call(
        &mut self,
        op: &OperatorNode,
        node: usize,
        sample: u32,
        bindings: &[(&str, &str)],
        log: &mut Vec<CallRecord>,
    ) -> Result<String, ExecError> {
        let inv = &op.invoking_nodes[node];
        let prompt = template::render(&inv.prompt, bindings).map_err(|u| ExecError::Template {
            op_id: op.op_id.clone(),
            placeholder: u.0,
        })?;
        if self.calls_made >= self.opts.call_budget {
            return Err(ExecError::BudgetExceeded {
                limit: self.opts.call_budget,
            });
        }
        let provider_err = |source| ExecError::Provider {
            op_id: op.op_id.clone(),
            source,
        };
        let spec = self
            .pool
            .get(&inv.model_id)
            .ok_or_else(|| provider_err(ProviderError::UnknownModel(inv.model_id.clone())))?;
        let req = ChatRequest {
            model_id: inv.model_id.clone(),
            messages: vec![
                Message::system(format!("Agent {}, sample {sample}.", inv.node_id)),
                Message::user(prompt),
            ],
            temperature: inv.temperature,
        };
        self.calls_made += 1;
        let resp = self.backend.chat(&req).map_err(provider_err)?;
        let cost = call_cost(&resp, spec);
        self.spent += cost;
        log.push(CallRecord {
            node_id: inv.node_id.clone(),
            sample,
            model_id: inv.model_id.clone(),
            request_digest: req.digest(),
            response_digest: resp.digest(),
            cost,
        });
        Ok(resp.content)
    }
}

/// Index of the most frequent answer; ties go to the one sampled first.
pub fn majority_vote(answers: &[String]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None; // (count, first index)
    for (i, a) in answers.iter().enumerate() {
        if answers[..i].contains(a) {
            continue;
        }
        let count = answers.iter().filter(|x| *x == a).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Calls an operator makes in the common case (early stops taken).
pub fn nominal_calls(op: &OperatorNode) -> u32 {
    match op.kind {
        OperatorKind::CoT | OperatorKind::ReAct => 1,
        OperatorKind::Debate => 3 * op.param("rounds", 2).max(1) + 1,
        OperatorKind::StepBack | OperatorKind::ExpertPrompt | OperatorKind::SelfRefine => 2,
        OperatorKind::SelfConsistency => op.param("samples", 5).max(1),
        OperatorKind::Ensemble => 4,
        OperatorKind::Custom => op.invoking_nodes.len() as u32,
    }
}

fn labeled(label: &str, items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| format!("[{label} {}]\n{t}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn run(
    op: &OperatorNode,
    task: &str,
    inputs: &str,
    s: &mut Session,
    log: &mut Vec<CallRecord>,
) -> Result<String, ExecError> {
    let structure = |message: String| ExecError::Structure {
        op_id: op.op_id.clone(),
        message,
    };
    let n = op.invoking_nodes.len();
    match op.kind.arity() {
        Some(a) if a != n => {
            return Err(structure(format!(
                "{} needs {a} invoking node(s), found {n}",
                op.kind
            )))
        }
        None if n == 0 => return Err(structure("operator has no invoking nodes".into())),
        _ => {}
    }
    let base = [("task", task), ("inputs", inputs)];

    match op.kind {
        OperatorKind::CoT => s.call(op, 0, 0, &base, log),

        OperatorKind::Debate => {
            let rounds = op.param("rounds", 2).max(1);
            let mut positions: Vec<String> = Vec::new();
            for round in 0..rounds {
                let seen = if positions.is_empty() {
                    "(none yet)".to_string()
                } else {
                    labeled("position", &positions)
                };
                let mut this_round = Vec::with_capacity(3);
                for d in 0..3 {
                    let r = s.call(op, d, round, &[base[0], base[1], ("responses", &seen)], log)?;
                    this_round.push(r);
                }
                positions.extend(this_round);
            }
            s.call(
                op,
                3,
                0,
                &[
                    base[0],
                    base[1],
                    ("responses", &labeled("position", &positions)),
                ],
                log,
            )
        }

        OperatorKind::StepBack => {
            let principles = s.call(op, 0, 0, &base, log)?;
            s.call(
                op,
                1,
                0,
                &[base[0], base[1], ("principles", &principles)],
                log,
            )
        }

        OperatorKind::SelfConsistency => {
            let samples = op.param("samples", 5).max(1);
            let mut replies = Vec::with_capacity(samples as usize);
            for i in 0..samples {
                replies.push(s.call(op, 0, i, &base, log)?);
            }
            let answers: Vec<String> = replies.iter().map(|r| final_answer(r)).collect();
            let winner = majority_vote(&answers).expect("at least one sample");
            Ok(replies.swap_remove(winner))
        }

        OperatorKind::SelfRefine => {
            let iterations = op.param("iterations", 5);
            let mut answer = s.call(op, 0, 0, &base, log)?;
            for it in 0..iterations {
                let feedback = s.call(op, 1, it, &[base[0], base[1], ("answer", &answer)], log)?;
                if feedback.contains(STOP_MARKER) {
                    break;
                }
                answer = s.call(
                    op,
                    2,
                    it,
                    &[
                        base[0],
                        base[1],
                        ("answer", &answer),
                        ("feedback", &feedback),
                    ],
                    log,
                )?;
            }
            Ok(answer)
        }

        OperatorKind::Ensemble => {
            let mut candidates = Vec::with_capacity(3);
            for m in 0..3 {
                candidates.push(s.call(op, m, 0, &base, log)?);
            }
            s.call(
                op,
                3,
                0,
                &[
                    base[0],
                    base[1],
                    ("responses", &labeled("candidate", &candidates)),
                ],
                log,
            )
        }

        OperatorKind::ReAct => {
            let iterations = op.param("iterations", 5).max(1);
            let mut scratchpad = String::new();
            let mut last = String::new();
            for it in 0..iterations {
                let pad = if scratchpad.is_empty() {
                    "(empty)"
                } else {
                    scratchpad.as_str()
                };
                last = s.call(op, 0, it, &[base[0], base[1], ("scratchpad", pad)], log)?;
                let Some((tool, argument)) = parse_action(&last) else {
                    return Ok(last);
                };
                let observation = match s.opts.tools.get(&tool) {
                    Some(t) => t.call(&argument).unwrap_or_else(|e| format!("error: {e}")),
                    None => format!("error: unknown tool {tool}"),
                };
                scratchpad.push_str(&format!(
                    "{}\nObservation: {observation}\n",
                    last.trim_end()
                ));
            }
            Ok(last)
        }

        OperatorKind::ExpertPrompt => {
            let expert = s.call(op, 0, 0, &base, log)?;
            s.call(
                op,
                1,
                0,
                &[base[0], base[1], ("expert", expert.trim())],
                log,
            )
        }

        OperatorKind::Custom => {
            let ids: Vec<&str> = op
                .invoking_nodes
                .iter()
                .map(|n| n.node_id.as_str())
                .collect();
            let order =
                layered_order(&ids, &op.intra_edges).map_err(|v| structure(v.to_string()))?;
            let sinks: Vec<&str> = ids
                .iter()
                .copied()
                .filter(|id| !op.intra_edges.iter().any(|(from, _)| from == id))
                .collect();
            let [sink] = sinks[..] else {
                return Err(structure(format!(
                    "custom operator needs one sink node, found {}",
                    sinks.len()
                )));
            };
            let mut outputs: BTreeMap<&str, String> = BTreeMap::new();
            for idx in order {
                let id = ids[idx];
                let mut preds: Vec<&str> = op
                    .intra_edges
                    .iter()
                    .filter(|(_, to)| to == id)
                    .map(|(from, _)| from.as_str())
                    .collect();
                preds.sort_unstable();
                preds.dedup();
                let node_inputs = if preds.is_empty() {
                    inputs.to_string()
                } else {
                    preds
                        .iter()
                        .map(|p| super::header(p, &outputs[p]))
                        .collect::<Vec<_>>()
                        .join("\n\n")
                };
                let out = s.call(op, idx, 0, &[base[0], ("inputs", &node_inputs)], log)?;
                outputs.insert(id, out);
            }
            Ok(outputs.remove(sink).unwrap_or_default())
        }
    }
}
