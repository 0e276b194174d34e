//! Objective-space math and the retrieval / niching / elimination rules.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, similarity_score, EmbedError, EmbeddingVector};
use crate::genome::{RunStats, WorkflowGenome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub perf: f64,
    pub cost: f64,
}

impl ObjectivePoint {
    pub fn new(perf: f64, cost: f64) -> Self {
        Self { perf, cost }
    }

    pub fn of(genome: &WorkflowGenome) -> Self {
        Self {
            perf: genome.stats.mean_perf,
            cost: genome.stats.mean_cost,
        }
    }
}

/// Higher perf and lower cost, strictly better in at least one.
pub fn dominates(a: ObjectivePoint, b: ObjectivePoint) -> bool {
    a.perf >= b.perf && a.cost <= b.cost && (a.perf > b.perf || a.cost < b.cost)
}

/// Per-objective bounds of a pool used to map points into `[0,1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBox {
    pub perf: (f64, f64),
    pub cost: (f64, f64),
}

impl NormBox {
    pub fn of(points: &[ObjectivePoint]) -> Self {
        let fold = |f: fn(&ObjectivePoint) -> f64| {
            points
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        Self {
            perf: fold(|p| p.perf),
            cost: fold(|p| p.cost),
        }
    }

    fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    /// Both coordinates to maximize: (normalized perf, 1 - normalized cost).
    /// A degenerate objective maps to 0.5.
    pub fn g(&self, p: ObjectivePoint) -> [f64; 2] {
        [
            Self::scale(p.perf, self.perf),
            1.0 - Self::scale(p.cost, self.cost),
        ]
    }
}

/// Additive epsilon indicator on normalized coordinates:
/// `I(a, b) = max_i (g_i(b) - g_i(a))`.
pub fn epsilon_indicator(a: ObjectivePoint, b: ObjectivePoint, nb: &NormBox) -> f64 {
    indicator_g(nb.g(a), nb.g(b))
}

pub fn indicator_g(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).max(b[1] - a[1])
}

/// `F(x) = sum_{y != x} exp(-I(y,x) / (phi * Imax))` over already-normalized
/// points. Smaller is better.
pub fn fitness_g(gs: &[[f64; 2]], phi: f64) -> Vec<f64> {
    let n = gs.len();
    let mut imax: f64 = 0.0;
    for (i, a) in gs.iter().enumerate() {
        for (j, b) in gs.iter().enumerate() {
            if i != j {
                imax = imax.max(indicator_g(*a, *b).abs());
            }
        }
    }
    let scale = phi * if imax > 0.0 { imax } else { 1.0 };
    (0..n)
        .map(|x| {
            // Summed in sorted order so points with equal term multisets tie exactly.
            let mut terms: Vec<f64> = (0..n)
                .filter(|&y| y != x)
                .map(|y| (-indicator_g(gs[y], gs[x]) / scale).exp())
                .collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect()
}

/// Fitness of raw points under per-pool min-max normalization.
pub fn fitness(points: &[ObjectivePoint], phi: f64) -> Vec<f64> {
    let nb = NormBox::of(points);
    let gs: Vec<[f64; 2]> = points.iter().map(|p| nb.g(*p)).collect();
    fitness_g(&gs, phi)
}

/// Index of the individual to eliminate: largest fitness, then higher mean
/// cost, then the larger workflow id.
pub fn worst_index(pool: &[&WorkflowGenome], phi: f64) -> usize {
    assert!(!pool.is_empty(), "selection pool is empty");
    let points: Vec<ObjectivePoint> = pool.iter().map(|g| ObjectivePoint::of(g)).collect();
    let f = fitness(&points, phi);
    (0..pool.len())
        .max_by(|&a, &b| {
            f[a].total_cmp(&f[b])
                .then(pool[a].stats.mean_cost.total_cmp(&pool[b].stats.mean_cost))
                .then(pool[a].workflow_id.cmp(&pool[b].workflow_id))
        })
        .expect("nonempty")
}

/// Indices of the `k` members with the largest similarity to `query`,
/// best first; ties by ascending workflow id.
pub fn select_parents(
    members: &[WorkflowGenome],
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<usize>, EmbedError> {
    let scores = members
        .iter()
        .map(|g| similarity_score(g, query))
        .collect::<Result<Vec<_>, _>>()?;
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(members[a].workflow_id.cmp(&members[b].workflow_id))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Tag similarity between two genomes: for each tag of `probe`, the best
/// cosine against any tag of `other`, summed.
pub fn tag_similarity(probe: &WorkflowGenome, other: &WorkflowGenome) -> Result<f64, EmbedError> {
    let missing = |g: &WorkflowGenome| {
        EmbedError::InvalidState(format!("{} has no tag vectors", g.workflow_id))
    };
    let a = probe.tag_vectors.as_ref().ok_or_else(|| missing(probe))?;
    let b = other.tag_vectors.as_ref().ok_or_else(|| missing(other))?;
    let mut total = 0.0;
    for u in a {
        let mut best = f64::NEG_INFINITY;
        for v in b {
            best = best.max(cosine(u, v)?);
        }
        if best.is_finite() {
            total += best;
        }
    }
    Ok(total)
}

/// Position of each index in `order`.
fn ranks(order: &[usize]) -> Vec<usize> {
    let mut r = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos;
    }
    r
}

/// Combined rank of each member: similarity rank (most similar first) plus
/// cost-distance rank (closest first), both tie-broken by ascending id.
pub fn niche_ranks(sims: &[f64], cost_gaps: &[f64], ids: &[&str]) -> Vec<usize> {
    let n = ids.len();
    let mut by_sim: Vec<usize> = (0..n).collect();
    by_sim.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(ids[a].cmp(ids[b])));
    let mut by_cost: Vec<usize> = (0..n).collect();
    by_cost.sort_by(|&a, &b| {
        cost_gaps[a]
            .total_cmp(&cost_gaps[b])
            .then(ids[a].cmp(ids[b]))
    });
    let (rs, rc) = (ranks(&by_sim), ranks(&by_cost));
    (0..n).map(|i| rs[i] + rc[i]).collect()
}

/// Pick the `e` smallest combined ranks; ties by ascending id. Returned in
/// selection order.
pub fn pick_niche(total_ranks: &[usize], ids: &[&str], e: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| total_ranks[a].cmp(&total_ranks[b]).then(ids[a].cmp(ids[b])));
    idx.truncate(e);
    idx
}

/// The `e` members nearest `offspring` in tag similarity and mean cost.
pub fn niching_area(
    members: &[WorkflowGenome],
    offspring: &WorkflowGenome,
    e: usize,
) -> Result<Vec<usize>, EmbedError> {
    let sims = members
        .iter()
        .map(|g| tag_similarity(offspring, g))
        .collect::<Result<Vec<_>, _>>()?;
    let gaps: Vec<f64> = members
        .iter()
        .map(|g| (offspring.stats.mean_cost - g.stats.mean_cost).abs())
        .collect();
    let ids: Vec<&str> = members.iter().map(|g| g.workflow_id.as_str()).collect();
    Ok(pick_niche(&niche_ranks(&sims, &gaps, &ids), &ids, e))
}

/// Incremental mean update with one more observation.
pub fn update_stats(stats: &RunStats, observed_cost: f64, observed_perf: f64) -> RunStats {
    let n = stats.exec_count as f64;
    RunStats {
        exec_count: stats.exec_count + 1,
        mean_cost: (stats.mean_cost * n + observed_cost) / (n + 1.0),
        mean_perf: (stats.mean_perf * n + observed_perf) / (n + 1.0),
    }
}

/// Total order used when comparing objective points for output.
pub fn cmp_points(a: &ObjectivePoint, b: &ObjectivePoint) -> Ordering {
    a.cost.total_cmp(&b.cost).then(b.perf.total_cmp(&a.perf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(perf: f64, cost: f64) -> ObjectivePoint {
        ObjectivePoint::new(perf, cost)
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(p(0.9, 0.1), p(0.8, 0.2)));
        assert!(!dominates(p(0.9, 0.1), p(0.9, 0.1)));
        assert!(!dominates(p(0.9, 0.3), p(0.8, 0.1)));
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(indicator_g([1.0, 0.0], [0.5, 0.5]), 0.5);
        assert_eq!(indicator_g([0.5, 0.5], [1.0, 0.0]), 0.5);
        let nb = NormBox::of(&[p(0.2, 0.1), p(0.8, 0.4)]);
        assert_eq!(epsilon_indicator(p(0.5, 0.2), p(0.5, 0.2), &nb), 0.0);
        assert!(epsilon_indicator(p(0.8, 0.1), p(0.2, 0.4), &nb) < 0.0);
    }

    #[test]
    fn degenerate_objectives_pin_to_half() {
        let nb = NormBox::of(&[p(0.5, 1.0), p(0.5, 1.0)]);
        assert_eq!(nb.g(p(0.5, 1.0)), [0.5, 0.5]);
        let f = fitness(&[p(0.5, 1.0), p(0.5, 1.0)], 0.05);
        assert_eq!(f[0], f[1]);
    }

    #[test]
    fn niche_rank_example() {
        let ranks = niche_ranks(&[0.9, 0.5, 0.1], &[0.2, 0.1, 0.3], &["a", "b", "c"]);
        assert_eq!(ranks, [1, 1, 4]);
        assert_eq!(pick_niche(&ranks, &["a", "b", "c"], 2), [0, 1]);
    }

    #[test]
    fn stats_first_observation_is_exact() {
        let s = update_stats(&RunStats::default(), 0.004, 1.0);
        assert_eq!((s.exec_count, s.mean_cost, s.mean_perf), (1, 0.004, 1.0));
    }
}
