//! Utility tag generation: a model-written tag line, with a structural
//! tagger as the fallback.

use log::warn;

use crate::executor::nominal_calls;
use crate::genome::{self, ModelPool, WorkflowGenome};
use crate::provider::{ChatBackend, ChatRequest, Message, ProviderError};
use crate::template;

/// Attempts per tag request before the structural fallback.
pub const TAG_ATTEMPTS: u32 = 3;

const PADDING: [&str; 4] = [
    "general problem solving",
    "text answers",
    "agentic workflow",
    "model pipeline",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagPrompt {
    pub template: String,
}

impl Default for TagPrompt {
    fn default() -> Self {
        Self {
            template: include_str!("../../assets/tag_prompt.txt").to_string(),
        }
    }
}

impl TagPrompt {
    pub fn render(
        &self,
        genome: &WorkflowGenome,
        task: &str,
    ) -> Result<String, template::Unresolved> {
        let kinds: Vec<&str> = genome.operators.iter().map(|o| o.kind.name()).collect();
        let description = format!("{} operator(s): {}", kinds.len(), kinds.join(" -> "));
        let code = genome::serialize(genome).unwrap_or_default();
        template::render(
            &self.template,
            &[
                ("NAME", &genome.workflow_id),
                ("DESCRIPTION", &description),
                ("CODE", &code),
                ("TASK", task),
            ],
        )
    }
}

/// Split a reply on commas. Extra tags are truncated; fewer than `kappa`
/// nonempty tags is a malformed reply.
pub fn parse_tags(reply: &str, kappa: usize) -> Option<Vec<String>> {
    let line = reply
        .lines()
        .map(str::trim)
        .find(|l| l.contains(','))
        .unwrap_or(reply.trim());
    let tags: Vec<String> = line
        .split(',')
        .map(|t| {
            t.trim()
                .trim_matches(|c| c == '"' || c == '*' || c == '.')
                .trim()
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .take(kappa)
        .collect();
    (tags.len() == kappa).then_some(tags)
}

/// Ask `model_id` for tags up to [`TAG_ATTEMPTS`] times, then fall back to
/// [`structural_tags`]. Errors only when no attempt got any reply.
pub fn generate_tags(
    genome: &WorkflowGenome,
    backend: &dyn ChatBackend,
    model_id: &str,
    prompt: &TagPrompt,
    task: &str,
    pool: &ModelPool,
    kappa: usize,
) -> Result<Vec<String>, ProviderError> {
    let text = prompt
        .render(genome, task)
        .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
    let mut replied = false;
    let mut last_err = None;
    for attempt in 0..TAG_ATTEMPTS {
        let req = ChatRequest {
            model_id: model_id.to_string(),
            messages: vec![
                Message::system(format!("tagger attempt {attempt}")),
                Message::user(text.clone()),
            ],
            temperature: 1.0,
        };
        match backend.chat(&req) {
            Ok(resp) => {
                replied = true;
                if let Some(tags) = parse_tags(&resp.content, kappa) {
                    return Ok(tags);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (replied, last_err) {
        (false, Some(e)) => Err(e),
        _ => {
            warn!(
                "tag replies for {} were malformed; using structural tags",
                genome.workflow_id
            );
            Ok(structural_tags(
                genome,
                pool,
                Some(task_domain(task)),
                kappa,
            ))
        }
    }
}

/// The domain part of a task description: text before the first ':' if
/// present, else the whole text.
fn task_domain(task: &str) -> &str {
    task.split_once(':').map_or(task, |(d, _)| d).trim()
}

fn complexity_tier(calls: u32) -> &'static str {
    match calls {
        0..=2 => "simple single-pass",
        3..=8 => "moderate multi-call",
        _ => "complex multi-turn",
    }
}

/// Deterministic tags from structure: domain, complexity tier, cost tier,
/// operator kinds, model ids, then fixed padding.
pub fn structural_tags(
    genome: &WorkflowGenome,
    pool: &ModelPool,
    domain: Option<&str>,
    kappa: usize,
) -> Vec<String> {
    let price = |id: &str| {
        pool.get(id)
            .map_or(0.0, |m| m.prompt_price + m.completion_price)
    };
    let max_price = pool
        .models()
        .iter()
        .map(|m| m.prompt_price + m.completion_price)
        .fold(0.0, f64::max);
    let mut calls = 0;
    let mut weighted = 0.0;
    for op in &genome.operators {
        let n = nominal_calls(op);
        calls += n;
        let mean: f64 = op
            .invoking_nodes
            .iter()
            .map(|i| price(&i.model_id))
            .sum::<f64>()
            / op.invoking_nodes.len().max(1) as f64;
        weighted += n as f64 * mean;
    }
    let ratio = if max_price > 0.0 {
        weighted / max_price
    } else {
        0.0
    };
    let cost_tier = if ratio < 0.5 {
        "low cost"
    } else if ratio < 3.0 {
        "medium cost"
    } else {
        "high cost"
    };

    let mut tags: Vec<String> = Vec::new();
    fn push(tags: &mut Vec<String>, t: String) {
        if !t.is_empty() && !tags.contains(&t) {
            tags.push(t);
        }
    }
    if let Some(d) = domain.filter(|d| !d.trim().is_empty()) {
        push(&mut tags, format!("{} tasks", d.trim()));
    }
    push(&mut tags, complexity_tier(calls).to_string());
    push(&mut tags, cost_tier.to_string());
    for op in &genome.operators {
        push(&mut tags, format!("{} reasoning", op.kind.name()));
    }
    for m in genome.model_ids() {
        push(&mut tags, format!("{m} backbone"));
    }
    for p in PADDING {
        push(&mut tags, p.to_string());
    }
    let mut i = 0;
    while tags.len() < kappa {
        i += 1;
        push(&mut tags, format!("workflow trait {i}"));
    }
    tags.truncate(kappa);
    tags
}
