//! Browser demo: fitness explorer, Pareto front with hypervolume, and a
//! small simulated evolution run. The plain functions are testable on any
//! target; the `wasm_*` wrappers exchange JSON strings with the page.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use evoflow_core::bench::{
    generate_suite, normalized_hypervolume, pareto_front, preset_suite, run_seed, ExperimentConfig,
};
use evoflow_core::config::{RunConfig, Runtime};
use evoflow_core::evolution::{fitness, ObjectivePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub perf: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessView {
    pub fitness: Vec<f64>,
    /// Index that elimination would remove (largest fitness).
    pub worst: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontView {
    pub front: Vec<usize>,
    /// Area dominated by the front, cost scaled by the largest cost.
    pub hypervolume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub checkpoints: Vec<u64>,
    pub hypervolume: Vec<f64>,
    /// Final probe points, one per member.
    pub points: Vec<Point>,
    pub front: Vec<usize>,
    pub accepted: u64,
}

fn objective(points: &[Point]) -> Result<Vec<ObjectivePoint>, String> {
    points
        .iter()
        .map(|p| {
            if p.perf.is_finite() && p.cost.is_finite() && p.cost >= 0.0 {
                Ok(ObjectivePoint::new(p.perf, p.cost))
            } else {
                Err(format!("invalid point ({}, {})", p.perf, p.cost))
            }
        })
        .collect()
}

/// Fitness of every point under scaling factor `phi`.
pub fn explore_fitness(points: &[Point], phi: f64) -> Result<FitnessView, String> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err("phi must be positive".into());
    }
    let pts = objective(points)?;
    if pts.len() < 2 {
        return Ok(FitnessView {
            fitness: vec![0.0; pts.len()],
            worst: None,
        });
    }
    let f = fitness(&pts, phi);
    let worst = (0..f.len()).max_by(|&a, &b| {
        f[a].total_cmp(&f[b])
            .then(pts[a].cost.total_cmp(&pts[b].cost))
    });
    Ok(FitnessView { fitness: f, worst })
}

pub fn front_of(points: &[Point]) -> Result<FrontView, String> {
    let pts = objective(points)?;
    let max_cost = pts.iter().map(|p| p.cost).fold(0.0, f64::max);
    Ok(FrontView {
        front: pareto_front(&pts),
        hypervolume: normalized_hypervolume(&pts, max_cost),
    })
}

/// Evolve a population on the simulated model pool and probe it every
/// `checkpoint_every` steps.
pub fn simulate(seed: u64, steps: u64, checkpoint_every: u64) -> Result<RunView, String> {
    if steps == 0 || steps > 500 || checkpoint_every == 0 {
        return Err("steps must be in 1..=500 and checkpoint_every positive".into());
    }
    let cfg = RunConfig::from_str_at("{}", Path::new(".")).map_err(|e| e.to_string())?;
    let rt = Runtime::new(&cfg, seed).map_err(|e| e.to_string())?;
    let suite = generate_suite(&preset_suite(), 1).map_err(|e| e.to_string())?;
    let exp = ExperimentConfig {
        steps,
        checkpoint_every,
        probes_per_domain: 5,
    };
    let out = run_seed(seed, &suite, &exp, &rt.deps(None)).map_err(|e| e.to_string())?;
    let last = out.points.last().cloned().unwrap_or_default();
    Ok(RunView {
        checkpoints: out.checkpoints,
        hypervolume: out.hypervolume,
        front: pareto_front(&last),
        points: last
            .iter()
            .map(|p| Point {
                perf: p.perf,
                cost: p.cost,
            })
            .collect(),
        accepted: out.accepted,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

fn parse(points_json: &str) -> Result<Vec<Point>, String> {
    serde_json::from_str(points_json).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn wasm_fitness(points_json: &str, phi: f64) -> Result<String, JsValue> {
    to_js(parse(points_json).and_then(|p| explore_fitness(&p, phi)))
}

#[wasm_bindgen]
pub fn wasm_front(points_json: &str) -> Result<String, JsValue> {
    to_js(parse(points_json).and_then(|p| front_of(&p)))
}

#[wasm_bindgen]
pub fn wasm_simulate(seed: u32, steps: u32, checkpoint_every: u32) -> Result<String, JsValue> {
    to_js(simulate(seed as u64, steps as u64, checkpoint_every as u64))
}
