//! Operator repository: default prompts and parameters per operator kind.

use std::collections::BTreeMap;

use crate::genome::{InvokingNode, OperatorKind, OperatorNode};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

const FINISH: &str = "Finish with the final answer written in a LaTeX boxed expression.";

fn prompts(kind: OperatorKind) -> Vec<String> {
    let solve =
        format!("{{task}}\n\nReason through the task step by step before answering. {FINISH}");
    match kind {
        OperatorKind::CoT | OperatorKind::SelfConsistency => vec![solve],
        OperatorKind::Debate => {
            let debater = format!(
                "{{task}}\n\nPositions stated so far in this debate:\n{{responses}}\n\n\
                 Give your own answer with a brief justification, pointing out any flaw in the other positions. {FINISH}"
            );
            let judge = format!(
                "{{task}}\n\nFinal positions of the debaters:\n{{responses}}\n\n\
                 Weigh the arguments and settle on the answer best supported. {FINISH}"
            );
            vec![debater.clone(), debater.clone(), debater, judge]
        }
        OperatorKind::StepBack => vec![
            "{task}\n\nBefore solving anything, name the general rules, definitions or formulas this task depends on.".into(),
            format!("{{task}}\n\nUseful background:\n{{principles}}\n\nApply this background to solve the task. {FINISH}"),
        ],
        OperatorKind::SelfRefine => vec![
            solve,
            "{task}\n\nProposed solution:\n{answer}\n\nCheck the solution carefully. If it is fully correct, \
             reply with exactly NO_CHANGE. Otherwise describe the mistake and give the corrected result."
                .into(),
            format!(
                "{{task}}\n\nEarlier solution:\n{{answer}}\n\nReviewer notes:\n{{feedback}}\n\n\
                 Produce a corrected solution that addresses the notes. {FINISH}"
            ),
        ],
        OperatorKind::Ensemble => {
            let ranker = format!(
                "{{task}}\n\nCandidate solutions:\n{{responses}}\n\n\
                 Compare the candidates two at a time, decide which one is most reliable, and restate its answer. {FINISH}"
            );
            vec![solve.clone(), solve.clone(), solve, ranker]
        }
        OperatorKind::ReAct => vec![format!(
            "{{task}}\n\nA calculator is available: write a line of the form Action: eval(EXPRESSION) and its value \
             comes back as an Observation.\nProgress so far:\n{{scratchpad}}\n\n\
             Either request one calculation or give the answer. {FINISH}"
        )],
        OperatorKind::ExpertPrompt => vec![
            "{task}\n\nIn one sentence, describe the specialist who would be best placed to solve this task.".into(),
            format!("You are acting as this specialist: {{expert}}\n\n{{task}}\n\nSolve the task in that role. {FINISH}"),
        ],
        OperatorKind::Custom => vec![format!("{{task}}\n\nInputs from earlier steps:\n{{inputs}}\n\n{FINISH}")],
    }
}

/// Kind-specific parameters an operator starts with.
pub fn default_params(kind: OperatorKind) -> BTreeMap<String, u32> {
    let pairs: &[(&str, u32)] = match kind {
        OperatorKind::Debate => &[("rounds", 2)],
        OperatorKind::SelfConsistency => &[("samples", 5)],
        OperatorKind::SelfRefine => &[("iterations", 5)],
        OperatorKind::ReAct => &[("iterations", 5)],
        _ => &[],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// The default prompt for each invoking node of `kind`, by position.
pub fn default_prompts(kind: OperatorKind) -> Vec<String> {
    prompts(kind)
}

/// Catalogue of operator kinds available to population initialization and
/// operator mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorRepo {
    kinds: Vec<OperatorKind>,
}

impl OperatorRepo {
    pub fn new(kinds: Vec<OperatorKind>) -> Self {
        Self { kinds }
    }

    /// The eight listed reasoning operators (no Custom).
    pub fn standard() -> Self {
        Self::new(
            OperatorKind::ALL
                .iter()
                .copied()
                .filter(|k| *k != OperatorKind::Custom)
                .collect(),
        )
    }

    pub fn kinds(&self) -> &[OperatorKind] {
        &self.kinds
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Build an operator of `kind` named `op_id`, drawing one model id per
    /// invoking node from `models`.
    pub fn instantiate(kind: OperatorKind, op_id: &str, models: &[String]) -> OperatorNode {
        let prompts = prompts(kind);
        assert_eq!(prompts.len(), models.len(), "one model per invoking node");
        let invoking_nodes = prompts
            .into_iter()
            .zip(models)
            .enumerate()
            .map(|(j, (prompt, model))| InvokingNode {
                node_id: format!("{op_id}.n{j}"),
                model_id: model.clone(),
                prompt,
                temperature: DEFAULT_TEMPERATURE,
            })
            .collect();
        OperatorNode {
            op_id: op_id.to_string(),
            kind,
            invoking_nodes,
            intra_edges: Vec::new(),
            params: default_params(kind),
        }
    }

    /// Number of invoking nodes a fresh operator of `kind` has.
    pub fn node_count(kind: OperatorKind) -> usize {
        prompts(kind).len()
    }
}
