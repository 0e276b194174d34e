//! Deterministic simulated model pool.
//!
//! Each call is a pure function of (backend seed, model id, request digest).
//! Tasks carry a machine-readable envelope with their domain and gold answer;
//! the simulated model answers correctly with its per-domain probability.
//!
//! On a miss the model falls back, in order, to:
//! 1. the plurality `\boxed{}` candidate already present in its prompt (ties
//!    go to the most recent one), so aggregators and refiners can use context;
//! 2. a deterministic wrong answer derived from the request digest.
//!
//! Prompts that mention [`STOP_MARKER`] are critique requests: when the
//! model's answer equals the latest candidate it replies with the marker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, ProviderError};
use crate::canonical::sha256_parts;
use crate::text::{boxed_answers, plurality};

/// Critique replies containing this token stop a refinement loop.
pub const STOP_MARKER: &str = "NO_CHANGE";

const ENVELOPE_OPEN: &str = "[[sim-task ";
const ENVELOPE_CLOSE: &str = "]]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModelProfile {
    pub model_id: String,
    /// Probability of a correct answer per domain label.
    pub success: BTreeMap<String, f64>,
    /// Used for domains missing from `success`.
    #[serde(default)]
    pub default_success: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Mixed into the noise source; lets two profiles with equal numbers differ.
    #[serde(default)]
    pub noise_salt: u64,
}

impl SimModelProfile {
    pub fn success_for(&self, domain: &str) -> f64 {
        self.success
            .get(domain)
            .copied()
            .unwrap_or(self.default_success)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.default_success)
            && self.success.values().all(|p| (0.0..=1.0).contains(p))
    }
}

/// Machine-readable task marker embedded in simulated-suite prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskEnvelope {
    pub domain: String,
    pub gold: String,
}

impl TaskEnvelope {
    pub fn render(&self) -> String {
        format!(
            "{ENVELOPE_OPEN}domain={} gold={}{ENVELOPE_CLOSE}",
            self.domain, self.gold
        )
    }

    /// First envelope found in `text`.
    pub fn find(text: &str) -> Option<TaskEnvelope> {
        let start = text.find(ENVELOPE_OPEN)? + ENVELOPE_OPEN.len();
        let end = start + text[start..].find(ENVELOPE_CLOSE)?;
        let mut domain = None;
        let mut gold = None;
        for part in text[start..end].split_whitespace() {
            if let Some(v) = part.strip_prefix("domain=") {
                domain = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("gold=") {
                gold = Some(v.to_string());
            }
        }
        Some(TaskEnvelope {
            domain: domain?,
            gold: gold?,
        })
    }
}

pub struct SimulatedBackend {
    seed: u64,
    profiles: BTreeMap<String, SimModelProfile>,
}

impl SimulatedBackend {
    pub fn new(
        seed: u64,
        profiles: impl IntoIterator<Item = SimModelProfile>,
    ) -> Result<Self, ProviderError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            if !p.is_valid() {
                return Err(ProviderError::InvalidRequest(format!(
                    "profile {} has a probability outside [0,1]",
                    p.model_id
                )));
            }
            map.insert(p.model_id.clone(), p);
        }
        Ok(Self {
            seed,
            profiles: map,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SimModelProfile> {
        self.profiles.values()
    }
}

/// Uniform in [0,1) from the first 8 bytes of a hash.
fn unit(bytes: &[u8; 32]) -> f64 {
    let mut word = [0u8; 8];
    word.copy_from_slice(&bytes[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

fn wrong_answer(gold: &str, noise: &[u8; 32]) -> String {
    let magnitude = 1 + (noise[8] % 9) as i64;
    let offset = if noise[9] & 1 == 0 {
        magnitude
    } else {
        -magnitude
    };
    match gold.trim().parse::<i64>() {
        Ok(g) => (g + offset).to_string(),
        Err(_) => match gold.trim().parse::<f64>() {
            Ok(g) => crate::canonical::format_real(g + offset as f64),
            Err(_) => format!("{gold}{magnitude}"),
        },
    }
}

impl ChatBackend for SimulatedBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let profile = self
            .profiles
            .get(&req.model_id)
            .ok_or_else(|| ProviderError::UnknownModel(req.model_id.clone()))?;
        req.check()?;
        let digest = req.digest();
        let noise = sha256_parts(&[
            &self.seed.to_le_bytes(),
            &profile.noise_salt.to_le_bytes(),
            req.model_id.as_bytes(),
            &[0],
            digest.as_bytes(),
        ]);

        let prompt: String = req
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let content = match TaskEnvelope::find(&prompt) {
            None => "I could not identify a task in this request.".to_string(),
            Some(env) => {
                let candidates = boxed_answers(&prompt);
                let answer = if unit(&noise) < profile.success_for(&env.domain) {
                    env.gold.clone()
                } else if let Some(i) = plurality(&candidates) {
                    candidates[i].clone()
                } else {
                    wrong_answer(&env.gold, &noise)
                };
                let critique = prompt.contains(STOP_MARKER);
                if critique && candidates.last() == Some(&answer) {
                    STOP_MARKER.to_string()
                } else {
                    format!("Working through the problem step by step.\nThe answer is \\boxed{{{answer}}}.")
                }
            }
        };
        Ok(ChatResponse {
            content,
            prompt_tokens: profile.prompt_tokens,
            completion_tokens: profile.completion_tokens,
        })
    }
}
