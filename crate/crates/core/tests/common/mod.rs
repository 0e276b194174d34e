//! Shared fixtures for integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evoflow_core::bench::{sim_pool, sim_profiles};
use evoflow_core::embedding::{attach_tag_vectors, structural_tags, HashingEmbedder};
use evoflow_core::evolution::{random_genome, Deps, HyperParams};
use evoflow_core::executor::{Evaluator, ExecOptions, Metric, TaskQuery};
use evoflow_core::genome::{ModelPool, ModelSpec, WorkflowGenome};
use evoflow_core::provider::sim::{SimModelProfile, SimulatedBackend, TaskEnvelope};
use evoflow_core::repo::OperatorRepo;

pub struct Fixture {
    pub params: HyperParams,
    pub pool: ModelPool,
    pub repo: OperatorRepo,
    pub backend: SimulatedBackend,
    pub embedder: HashingEmbedder,
    pub evaluator: Evaluator,
    pub exec: ExecOptions,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Self::with(seed, HyperParams::default(), sim_pool(), sim_profiles())
    }

    pub fn with(
        seed: u64,
        params: HyperParams,
        pool: ModelPool,
        profiles: Vec<SimModelProfile>,
    ) -> Self {
        Self {
            exec: ExecOptions {
                call_budget: params.call_budget,
                ..ExecOptions::default()
            },
            params,
            pool,
            repo: OperatorRepo::standard(),
            backend: SimulatedBackend::new(seed, profiles).unwrap(),
            embedder: HashingEmbedder::default(),
            evaluator: Evaluator::default(),
        }
    }

    pub fn deps(&self) -> Deps<'_> {
        Deps {
            params: &self.params,
            pool: &self.pool,
            repo: &self.repo,
            backend: &self.backend,
            embedder: &self.embedder,
            evaluator: &self.evaluator,
            exec: &self.exec,
            assistant: None,
            trace_dir: None,
        }
    }

    /// A random valid genome with structural tags and vectors.
    pub fn genome(&self, rng: &mut ChaCha8Rng) -> WorkflowGenome {
        let mut g = random_genome(&self.params, &self.repo, &self.pool, rng);
        g.tags = structural_tags(&g, &self.pool, Some("arithmetic"), self.params.kappa);
        attach_tag_vectors(&mut g, &self.embedder).unwrap();
        g.refresh_id();
        g
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A profile answering every domain with probability `p`.
pub fn profile(model_id: &str, p: f64) -> SimModelProfile {
    SimModelProfile {
        model_id: model_id.into(),
        success: Default::default(),
        default_success: p,
        prompt_tokens: 300,
        completion_tokens: 200,
        noise_salt: 0,
    }
}

pub fn pool_of(ids: &[&str]) -> ModelPool {
    ModelPool::new(
        ids.iter()
            .enumerate()
            .map(|(i, id)| ModelSpec::new(*id, 0.1 * (i + 1) as f64, 0.3 * (i + 1) as f64))
            .collect(),
    )
    .unwrap()
}

pub fn task(domain: &str, expr: &str, gold: &str) -> TaskQuery {
    let env = TaskEnvelope {
        domain: domain.into(),
        gold: gold.into(),
    };
    TaskQuery {
        query_id: format!("{domain}-{gold}"),
        text: format!("{domain}: Compute {expr}. {}", env.render()),
        domain: domain.into(),
        gold: Some(gold.into()),
        metric: Metric::Numeric,
    }
}

/// Proptest settings with a fixed seed so runs are reproducible.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Default::default()
    }
}
