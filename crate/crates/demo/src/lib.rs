//! Browser demo over the lab search space: slice geometry of two nested
//! subnets, a progressive sampling trace, and an evolutionary search
//! scored by a parameter-count surrogate. Each export returns JSON.

use growtas::evo::{search, EvoConfig};
use growtas::scheduler::Schedule;
use growtas::space::sample_uniform;
use growtas::{Architecture, EvalResult, SearchSpace, SeededRng, SliceMap, StageCap, SubspacePartition};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct TensorSlice {
    name: String,
    store: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
}

#[derive(Serialize)]
struct Geometry {
    a: String,
    b: String,
    a_params: u64,
    b_params: u64,
    a_within_b: bool,
    tensors: Vec<TensorSlice>,
}

#[derive(Serialize)]
struct Draw {
    epoch: usize,
    stage: usize,
    arch: String,
    params: u64,
}

#[derive(Serialize)]
struct Generation {
    generation: usize,
    arch: String,
    params: u64,
    score: f64,
}

fn space() -> SearchSpace {
    SearchSpace::lab()
}

fn partition(space: &SearchSpace) -> SubspacePartition {
    SubspacePartition::new(
        space,
        vec![StageCap { max_embed: 12, max_mlp_ratio: 1.5 }, StageCap { max_embed: 16, max_mlp_ratio: 2.0 }],
    )
    .expect("lab partition")
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo types serialize")
}

/// Store shape and both prefix slices for every tensor of the lab space.
pub fn slice_geometry_json(a: &str, b: &str) -> Result<String, String> {
    let space = space();
    let parse = |s: &str| -> Result<Architecture, String> {
        let arch: Architecture = s.parse().map_err(|e: growtas::Error| e.to_string())?;
        space.check_arch(&arch).map_err(|e| e.to_string())?;
        Ok(arch)
    };
    let (arch_a, arch_b) = (parse(a)?, parse(b)?);
    let (sa, sb) = (SliceMap::of(&space, &arch_a), SliceMap::of(&space, &arch_b));
    let store = SliceMap::of(&space, &space.max_arch());
    let names = growtas::supernet::param_names(&space);
    let tensors = names
        .into_iter()
        .zip(store.regions.iter().zip(sa.regions.iter().zip(&sb.regions)))
        .map(|(name, (s, (ra, rb)))| TensorSlice {
            name,
            store: s.extents.clone(),
            a: ra.extents.clone(),
            b: rb.extents.clone(),
        })
        .collect();
    Ok(to_json(&Geometry {
        a: arch_a.to_string(),
        b: arch_b.to_string(),
        a_params: space.param_count(&arch_a),
        b_params: space.param_count(&arch_b),
        a_within_b: sa.is_subset_of(&sb),
        tensors,
    }))
}

/// `per_epoch` draws for every epoch of a two-stage schedule.
pub fn schedule_trace_json(seed: u64, t1: usize, total: usize, per_epoch: usize) -> Result<String, String> {
    let space = space();
    let partition = partition(&space);
    let schedule = Schedule::two_stage(t1, total).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(seed);
    let mut draws = Vec::with_capacity(total * per_epoch);
    for epoch in 0..total {
        let stage = schedule.stage_at(epoch).map_err(|e| e.to_string())?;
        for _ in 0..per_epoch {
            let arch = sample_uniform(&space, &partition, stage, &mut rng).map_err(|e| e.to_string())?;
            draws.push(Draw { epoch, stage, params: space.param_count(&arch), arch: arch.to_string() });
        }
    }
    Ok(to_json(&draws))
}

/// Score rising with size and saturating, plus a small per-architecture
/// offset so ties are rare.
pub fn surrogate(space: &SearchSpace, arch: &Architecture) -> EvalResult {
    let p = space.param_count(arch) as f64;
    let jitter = (arch.fingerprint() % 1000) as f64 / 1e5;
    let accuracy = 1.0 - (-p / 2500.0).exp() + jitter;
    EvalResult { accuracy, loss: 1.0 - accuracy }
}

/// Best-so-far after each generation of a search under `constraint`.
pub fn evolve_json(seed: u64, constraint: u64, generations: usize, population: usize) -> Result<String, String> {
    let space = space();
    let cfg = EvoConfig {
        generations,
        population_size: population,
        parent_count: (population / 5).max(1),
        ..EvoConfig::with_limit(constraint, seed)
    };
    let eval = |a: &Architecture| Ok(surrogate(&space, a));
    let outcome = search(&space, &eval, &cfg).map_err(|e| e.to_string())?;
    let trace: Vec<Generation> = outcome
        .best_per_generation
        .iter()
        .enumerate()
        .map(|(g, r)| Generation { generation: g, arch: r.arch.to_string(), params: r.params, score: r.accuracy })
        .collect();
    Ok(to_json(&trace))
}

#[wasm_bindgen]
pub fn slice_geometry(a: &str, b: &str) -> Result<String, JsValue> {
    slice_geometry_json(a, b).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn schedule_trace(seed: u32, t1: usize, total: usize, per_epoch: usize) -> Result<String, JsValue> {
    schedule_trace_json(seed as u64, t1, total, per_epoch).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn evolve(seed: u32, constraint: u32, generations: usize, population: usize) -> Result<String, JsValue> {
    evolve_json(seed as u64, constraint as u64, generations, population).map_err(|e| JsValue::from_str(&e))
}
