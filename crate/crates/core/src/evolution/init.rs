//! Random initial population.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::variation::{renumber, sample_models};
use super::{stream_rng, Deps, EvoError, HyperParams, Population};
use crate::embedding::{attach_tag_vectors, generate_tags, structural_tags};
use crate::genome::{Edge, ModelPool, WorkflowGenome};
use crate::repo::OperatorRepo;

/// A genome of `m ~ U{1..m_max}` operators with uniformly drawn kinds and
/// models, wired as a chain plus optional forward skip edges.
pub fn random_genome(
    params: &HyperParams,
    repo: &OperatorRepo,
    pool: &ModelPool,
    rng: &mut ChaCha8Rng,
) -> WorkflowGenome {
    let m = rng.random_range(1..=params.m_max);
    let operators = (0..m)
        .map(|i| {
            let kind = *repo.kinds().choose(rng).expect("nonempty repo");
            OperatorRepo::instantiate(kind, &format!("op{i}"), &sample_models(kind, pool, rng))
        })
        .collect();
    let mut edges: Vec<Edge> = (1..m)
        .map(|i| (format!("op{}", i - 1), format!("op{i}")))
        .collect();
    for i in 0..m {
        for j in i + 2..m {
            if rng.random::<f64>() < params.skip_edge_prob {
                edges.push((format!("op{i}"), format!("op{j}")));
            }
        }
    }
    let mut g = WorkflowGenome::new(operators, edges);
    g.lineage.origin = "init".into();
    renumber(&g)
}

/// Give `genome` its tags (assistant-written or structural) and tag vectors.
pub(crate) fn assign_tags(
    genome: &mut WorkflowGenome,
    domain: &str,
    task: &str,
    deps: &Deps,
) -> Result<(), EvoError> {
    let kappa = deps.params.kappa;
    genome.tags = match deps.assistant {
        Some(a) => generate_tags(
            genome,
            deps.backend,
            &a.model_id,
            &a.prompts.tag,
            task,
            deps.pool,
            kappa,
        )
        .unwrap_or_else(|_| structural_tags(genome, deps.pool, Some(domain), kappa)),
        None => structural_tags(genome, deps.pool, Some(domain), kappa),
    };
    attach_tag_vectors(genome, deps.embedder)?;
    genome.refresh_id();
    Ok(())
}

/// N distinct random genomes. Genome `i` is tagged for `domains[i % len]`.
pub fn init_population(seed: u64, domains: &[String], deps: &Deps) -> Result<Population, EvoError> {
    let params = deps.params;
    params.check()?;
    if deps.repo.is_empty() {
        return Err(EvoError::Config("operator repository is empty".into()));
    }
    if deps.pool.is_empty() {
        return Err(EvoError::Config("model pool is empty".into()));
    }
    let mut rng = stream_rng(seed, "init", 0);
    let mut members: Vec<WorkflowGenome> = Vec::with_capacity(params.n);
    let mut seen = BTreeSet::new();
    let mut attempts = 0;
    while members.len() < params.n {
        attempts += 1;
        if attempts > 100 * params.n {
            return Err(EvoError::Config(format!(
                "could not draw {} distinct genomes from this repository and pool",
                params.n
            )));
        }
        let domain = domains
            .get(members.len() % domains.len().max(1))
            .map_or("general", String::as_str);
        let mut g = random_genome(params, deps.repo, deps.pool, &mut rng);
        assign_tags(&mut g, domain, domain, deps)?;
        if seen.insert(g.workflow_id.clone()) {
            members.push(g);
        }
    }
    Ok(Population {
        members,
        generation: 0,
        seed,
    })
}
