//! The niching evolutionary engine.
//!
//! One step per query: retrieve the K most similar parents, build an
//! offspring (crossover, then model, prompt and operator mutation), execute
//! it, find its niche of E neighbours, execute niche and parents, update
//! running stats, and drop the niche member or offspring with the worst
//! indicator fitness.

mod init;
pub mod selection;
mod step;
pub mod variation;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::sha256_parts;
use crate::embedding::{EmbedError, Embedder, TagPrompt};
use crate::executor::{EvalError, Evaluator, ExecOptions};
use crate::genome::{ModelPool, WorkflowGenome};
use crate::memory::StorageError;
use crate::provider::ChatBackend;
use crate::repo::OperatorRepo;

pub use init::{init_population, random_genome};
pub use selection::{
    dominates, epsilon_indicator, fitness, fitness_g, indicator_g, niching_area, select_parents,
    tag_similarity, update_stats, worst_index, NormBox, ObjectivePoint,
};
pub use step::{choose_for_inference, evolve_step, infer, ExecutionSummary, InferMode, StepReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Population size N.
    pub n: usize,
    /// Parents per step K.
    pub k: usize,
    /// Tags per genome.
    pub kappa: usize,
    /// Niche size E.
    pub e: usize,
    /// Fitness scaling factor.
    pub phi: f64,
    /// Per-node model mutation rate.
    pub rho_l: f64,
    /// Per-node prompt mutation rate.
    pub rho_p: f64,
    /// Upper bound on operators in an initial genome.
    pub m_max: usize,
    /// Upper bound on operators in any offspring.
    pub max_operators: usize,
    pub call_budget: u32,
    /// Attempts for model-assisted crossover before the structural fallback.
    pub retries: u32,
    /// perf at or above this is a Positive verdict.
    pub success_threshold: f64,
    /// Relative weights of (add, delete, rewire) operator mutations.
    pub operator_weights: [f64; 3],
    /// Chance of each optional skip edge in an initial genome.
    pub skip_edge_prob: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n: 15,
            k: 3,
            kappa: 5,
            e: 5,
            phi: 0.05,
            rho_l: 0.3,
            rho_p: 0.3,
            m_max: 4,
            max_operators: 8,
            call_budget: crate::executor::DEFAULT_CALL_BUDGET,
            retries: 3,
            success_threshold: 1.0,
            operator_weights: [1.0, 1.0, 1.0],
            skip_edge_prob: 0.2,
        }
    }
}

impl HyperParams {
    pub fn check(&self) -> Result<(), EvoError> {
        let bad = |m: String| Err(EvoError::Config(m));
        if self.n < 2 {
            return bad(format!(
                "population size must be at least 2, got {}",
                self.n
            ));
        }
        if self.k == 0 || self.k > self.n {
            return bad(format!(
                "parent count must be in 1..={}, got {}",
                self.n, self.k
            ));
        }
        if self.e == 0 || self.e > self.n {
            return bad(format!(
                "niche size must be in 1..={}, got {}",
                self.n, self.e
            ));
        }
        if self.kappa == 0 {
            return bad("tag count must be positive".into());
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return bad(format!("phi must be positive, got {}", self.phi));
        }
        for (name, r) in [
            ("rho_l", self.rho_l),
            ("rho_p", self.rho_p),
            ("skip_edge_prob", self.skip_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0,1], got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return bad(format!(
                "success_threshold must be in [0,1], got {}",
                self.success_threshold
            ));
        }
        if self.m_max == 0 || self.max_operators < self.m_max {
            return bad(format!(
                "need 1 <= m_max ({}) <= max_operators ({})",
                self.m_max, self.max_operators
            ));
        }
        if self.call_budget == 0 || self.retries == 0 {
            return bad("call_budget and retries must be positive".into());
        }
        let w = self.operator_weights;
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return bad(format!(
                "operator_weights must be nonnegative with a positive sum, got {w:?}"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<WorkflowGenome>,
    /// Number of completed steps.
    pub generation: u64,
    pub seed: u64,
}

impl Population {
    pub fn ids(&self) -> Vec<&str> {
        self.members
            .iter()
            .map(|g| g.workflow_id.as_str())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&WorkflowGenome> {
        self.members.iter().find(|g| g.workflow_id == id)
    }
}

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Prompt templates used when a model drives variation and tagging.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub tag: TagPrompt,
    pub crossover: String,
    pub mutate_llm: String,
    pub mutate_prompt: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            tag: TagPrompt::default(),
            crossover: include_str!("../../assets/crossover_prompt.txt").to_string(),
            mutate_llm: include_str!("../../assets/mutate_llm_prompt.txt").to_string(),
            mutate_prompt: include_str!("../../assets/mutate_prompt_prompt.txt").to_string(),
        }
    }
}

/// A model that writes tags, offspring and mutations. Without one, the
/// deterministic operators are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Assistant {
    pub model_id: String,
    pub prompts: PromptSet,
}

/// Everything a step needs besides the population and query.
pub struct Deps<'a> {
    pub params: &'a HyperParams,
    pub pool: &'a ModelPool,
    pub repo: &'a OperatorRepo,
    pub backend: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub evaluator: &'a Evaluator,
    pub exec: &'a ExecOptions,
    pub assistant: Option<&'a Assistant>,
    /// When set, every execution trace is written under this run directory.
    pub trace_dir: Option<&'a Path>,
}

/// RNG for one purpose (`label`) at one generation of a seeded run.
pub fn stream_rng(seed: u64, label: &str, generation: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sha256_parts(&[
        label.as_bytes(),
        &seed.to_le_bytes(),
        &generation.to_le_bytes(),
    ]))
}
