//! Three interactive operations for the static page in `www/`.
//!
//! Each operation is a plain function returning JSON text (so it runs and is
//! tested natively) plus a `#[wasm_bindgen]` wrapper the page calls.

use pathway_core::cli::stages::labeled_points;
use pathway_core::corpus::bfs::ShortestPaths;
use pathway_core::corpus::{generate_corpus, ingest, write_jsonl, PolicyMix};
use pathway_core::encode::StateEncoder;
use pathway_core::expr::parse;
use pathway_core::nn::Rng;
use pathway_core::seqenc::simcse_loss;
use pathway_core::strategy::geometry::{project_2d, silhouette_comparison, Level};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Deepest search the page allows; the frontier grows quickly past this.
pub const MAX_DEPTH: usize = 7;
/// Points sent back for plotting.
pub const MAX_POINTS: usize = 1500;

#[derive(Serialize)]
struct Step {
    action: Option<&'static str>,
    state: String,
}

#[derive(Serialize)]
struct PathReport {
    distance: usize,
    explored: usize,
    steps: Vec<Step>,
}

/// One shortest rewrite path from `start` to `goal`; `seed` picks among ties.
pub fn shortest_path(start: &str, goal: &str, max_depth: usize, seed: u64) -> Result<String, String> {
    let s = parse(start).map_err(|e| format!("start: {e}"))?;
    let g = parse(goal).map_err(|e| format!("goal: {e}"))?;
    let sp = ShortestPaths::search(&s, &g, max_depth.min(MAX_DEPTH)).map_err(|e| e.to_string())?;
    let (states, actions) = sp.sample_path(&mut Rng::new(seed));
    let steps = states
        .iter()
        .enumerate()
        .map(|(i, e)| Step {
            action: i.checked_sub(1).map(|j| actions[j].name()),
            state: e.canonical_string(),
        })
        .collect();
    let report = PathReport {
        distance: sp.distance(),
        explored: sp.explored(),
        steps,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[derive(Serialize)]
struct Point {
    x: f64,
    y: f64,
    problem: String,
    action: String,
}

#[derive(Serialize)]
struct GeometryReport {
    level: Level,
    n: usize,
    by_problem: f64,
    by_action: f64,
    points: Vec<Point>,
}

/// Generates a corpus, embeds its states or transitions and returns the
/// silhouettes plus a 2-D projection (subsampled to [`MAX_POINTS`]).
pub fn geometry(seed: u64, problems: usize, students: usize, dim: usize, transitions: bool) -> Result<String, String> {
    let c = generate_corpus(seed, problems, students, 3, PolicyMix::default());
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &c.pathways).map_err(|e| e.to_string())?;
    let pathways = ingest(buf.as_slice()).map_err(|e| e.to_string())?;
    let enc = StateEncoder::structural(dim, seed).map_err(|e| e.to_string())?;
    let level = if transitions { Level::Transition } else { Level::State };
    let pts = labeled_points(&enc, &pathways, level).map_err(|e| e.to_string())?;
    let sil = silhouette_comparison(&pts.vectors, &pts.problems, &pts.actions, level).map_err(|e| e.to_string())?;
    let coords = project_2d(&pts.vectors).map_err(|e| e.to_string())?;
    let stride = coords.len().div_ceil(MAX_POINTS).max(1);
    let points = coords
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, &(x, y))| Point {
            x,
            y,
            problem: pts.problems[i].clone(),
            action: pts.actions[i].clone(),
        })
        .collect();
    let report = GeometryReport {
        level,
        n: sil.n,
        by_problem: sil.by_problem,
        by_action: sil.by_action,
        points,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[derive(Serialize)]
struct LossReport {
    loss: f64,
    ln_batch: f64,
    positive_cos: f64,
}

/// SimCSE loss for `batch` random anchors whose second views are perturbed
/// by Gaussian noise of scale `noise`.
pub fn contrastive_loss(batch: usize, dim: usize, noise: f64, tau: f64, seed: u64) -> Result<String, String> {
    if batch == 0 || dim == 0 {
        return Err("batch and dim must be positive".into());
    }
    if !(tau > 0.0) || !(noise >= 0.0) {
        return Err("tau must be positive and noise non-negative".into());
    }
    let mut rng = Rng::new(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..batch)
        .map(|_| {
            let a: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let b = a.iter().map(|x| x + noise * rng.normal()).collect();
            (a, b)
        })
        .collect();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let positive_cos = pairs.iter().map(|(a, b)| cos(a, b)).sum::<f64>() / batch as f64;
    let report = LossReport {
        loss: simcse_loss(&pairs, tau),
        ln_batch: (batch as f64).ln(),
        positive_cos,
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

// Seeds are u32 on the JS side so callers pass plain numbers, not BigInt.

#[wasm_bindgen(js_name = shortestPath)]
pub fn shortest_path_js(start: &str, goal: &str, max_depth: usize, seed: u32) -> Result<String, JsValue> {
    shortest_path(start, goal, max_depth, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = geometry)]
pub fn geometry_js(seed: u32, problems: usize, students: usize, dim: usize, transitions: bool) -> Result<String, JsValue> {
    geometry(seed.into(), problems, students, dim, transitions).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = contrastiveLoss)]
pub fn contrastive_loss_js(batch: usize, dim: usize, noise: f64, tau: f64, seed: u32) -> Result<String, JsValue> {
    contrastive_loss(batch, dim, noise, tau, seed.into()).map_err(|e| JsValue::from_str(&e))
}
