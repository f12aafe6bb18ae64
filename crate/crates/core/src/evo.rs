//! Constrained evolutionary search with the supernet as evaluator.
//!
//! Each generation evaluates its population, keeps the `parent_count`
//! best as parents, and breeds the next population: half by mutation, half
//! by crossover. Children already evaluated in earlier generations are
//! redrawn; failing that, a fresh feasible sample fills the slot. Parents
//! do not carry over; the best record ever seen is tracked separately.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::space::{Architecture, SearchSpace};
use crate::supernet::{EvalResult, SupernetWeights};

/// Attempts per population slot before falling back.
pub const RETRY_BOUND: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub parent_count: usize,
    pub mutation_prob: f64,
    /// Largest admissible parameter count.
    pub max_params: u64,
    pub seed: u64,
    #[serde(default = "default_memoize")]
    pub memoize: bool,
}

fn default_memoize() -> bool {
    true
}

impl EvoConfig {
    pub fn with_limit(max_params: u64, seed: u64) -> Self {
        Self {
            population_size: 50,
            generations: 20,
            parent_count: 10,
            mutation_prob: 0.2,
            max_params,
            seed,
            memoize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.generations == 0 {
            return Err(Error::Config("evo: population_size and generations must be positive".into()));
        }
        if self.parent_count == 0 || self.parent_count > self.population_size {
            return Err(Error::Config(format!(
                "evo: parent_count {} must be in 1..={}",
                self.parent_count, self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config(format!("evo: mutation_prob {} outside [0, 1]", self.mutation_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: Architecture,
    pub accuracy: f64,
    pub loss: f64,
    pub params: u64,
    pub generation: usize,
}

/// Higher accuracy first, then lower loss, then fewer parameters, then the
/// encoding (for a total order).
pub fn rank(a: &EvalRecord, b: &EvalRecord) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.loss.total_cmp(&b.loss))
        .then(a.params.cmp(&b.params))
        .then_with(|| a.arch.to_string().cmp(&b.arch.to_string()))
}

pub trait Evaluator: Sync {
    fn evaluate(&self, arch: &Architecture) -> Result<EvalResult>;
}

/// Scores subnets of a trained store on a held-out split.
pub struct SupernetEvaluator<'a> {
    pub weights: &'a SupernetWeights,
    pub data: &'a Dataset,
    pub batch_size: usize,
}

impl Evaluator for SupernetEvaluator<'_> {
    fn evaluate(&self, arch: &Architecture) -> Result<EvalResult> {
        self.weights.evaluate(arch, self.data, self.batch_size)
    }
}

impl<F> Evaluator for F
where
    F: Fn(&Architecture) -> Result<EvalResult> + Sync,
{
    fn evaluate(&self, arch: &Architecture) -> Result<EvalResult> {
        self(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: EvalRecord,
    /// Every population member of every generation, in order.
    pub history: Vec<EvalRecord>,
    /// Best-ever record after each generation.
    pub best_per_generation: Vec<EvalRecord>,
    /// Calls made to the evaluator.
    pub evaluations: usize,
}

/// Resamples each attribute with probability `prob`. A depth change
/// truncates the block lists or extends them with uniform draws; every
/// surviving block then mutates its ratio and head count independently.
pub fn mutate(parent: &Architecture, space: &SearchSpace, prob: f64, rng: &mut SeededRng) -> Architecture {
    let mut child = parent.clone();
    if rng.bernoulli(prob) {
        child.embed_dim = space.embed_dim.value(rng.below(space.embed_dim.count())) as usize;
    }
    if rng.bernoulli(prob) {
        let depth = space.depth.value(rng.below(space.depth.count())) as usize;
        child.mlp_ratios.truncate(depth);
        child.head_nums.truncate(depth);
        let kept = child.depth.min(depth);
        child.depth = depth;
        for b in 0..depth {
            if b < kept {
                continue;
            }
            child.mlp_ratios.push(space.mlp_ratio.value(rng.below(space.mlp_ratio.count())));
            child.head_nums.push(space.head_num.value(rng.below(space.head_num.count())) as usize);
        }
    }
    for b in 0..child.depth {
        if rng.bernoulli(prob) {
            child.mlp_ratios[b] = space.mlp_ratio.value(rng.below(space.mlp_ratio.count()));
        }
        if rng.bernoulli(prob) {
            child.head_nums[b] = space.head_num.value(rng.below(space.head_num.count())) as usize;
        }
    }
    child
}

/// Embed dim and depth each from a fair coin; blocks inherited one coin per
/// block, with blocks past the shallower parent taken from the deeper one.
pub fn crossover(a: &Architecture, b: &Architecture, rng: &mut SeededRng) -> Architecture {
    let embed_dim = if rng.coin() { a.embed_dim } else { b.embed_dim };
    let depth = if rng.coin() { a.depth } else { b.depth };
    let deeper = if a.depth >= b.depth { a } else { b };
    let shared = a.depth.min(b.depth);
    let mut mlp_ratios = Vec::with_capacity(depth);
    let mut head_nums = Vec::with_capacity(depth);
    for i in 0..depth {
        let src = if i < shared {
            if rng.coin() {
                a
            } else {
                b
            }
        } else {
            deeper
        };
        mlp_ratios.push(src.mlp_ratios[i]);
        head_nums.push(src.head_nums[i]);
    }
    Architecture { embed_dim, depth, mlp_ratios, head_nums }
}

struct Search<'a, E: Evaluator> {
    space: &'a SearchSpace,
    evaluator: &'a E,
    cfg: &'a EvoConfig,
    memo: HashMap<Architecture, EvalResult>,
    seen: HashSet<Architecture>,
    evaluations: usize,
}

impl<E: Evaluator> Search<'_, E> {
    fn feasible(&self, arch: &Architecture) -> bool {
        self.space.param_count(arch) <= self.cfg.max_params
    }

    fn uniform_feasible(&self, rng: &mut SeededRng) -> Result<Option<Architecture>> {
        for _ in 0..RETRY_BOUND {
            let arch = self.space.sample(None, rng)?;
            if self.feasible(&arch) {
                return Ok(Some(arch));
            }
        }
        Ok(None)
    }

    /// Fills one slot. Prefers an unseen candidate from `make`, then an
    /// unseen uniform sample, then any feasible candidate encountered.
    fn fill_slot(
        &self,
        taken: &HashSet<Architecture>,
        rng: &mut SeededRng,
        make: &mut dyn FnMut(&mut SeededRng) -> Result<Option<Architecture>>,
    ) -> Result<Option<Architecture>> {
        let novel = |a: &Architecture| !self.seen.contains(a) && !taken.contains(a);
        let mut fallback = None;
        for _ in 0..RETRY_BOUND {
            if let Some(arch) = make(rng)? {
                if self.feasible(&arch) {
                    if novel(&arch) {
                        return Ok(Some(arch));
                    }
                    fallback.get_or_insert(arch);
                }
            }
        }
        for _ in 0..RETRY_BOUND {
            if let Some(arch) = self.uniform_feasible(rng)? {
                if novel(&arch) {
                    return Ok(Some(arch));
                }
                fallback.get_or_insert(arch);
            }
        }
        Ok(fallback)
    }

    fn evaluate_all(&mut self, population: &[Architecture], generation: usize) -> Result<Vec<EvalRecord>> {
        let pending: Vec<&Architecture> = if self.cfg.memoize {
            let mut unique = HashSet::new();
            population.iter().filter(|a| !self.memo.contains_key(*a) && unique.insert(*a)).collect()
        } else {
            population.iter().collect()
        };
        let results: Vec<Result<EvalResult>> =
            pending.par_iter().map(|a| self.evaluator.evaluate(a)).collect();
        self.evaluations += pending.len();
        let mut fresh = HashMap::new();
        for (arch, result) in pending.into_iter().zip(results) {
            fresh.insert(arch.clone(), result?);
        }
        let records = population
            .iter()
            .map(|arch| {
                let r = fresh.get(arch).or_else(|| self.memo.get(arch)).copied().expect("evaluated");
                EvalRecord {
                    arch: arch.clone(),
                    accuracy: r.accuracy,
                    loss: r.loss,
                    params: self.space.param_count(arch),
                    generation,
                }
            })
            .collect();
        if self.cfg.memoize {
            self.memo.extend(fresh);
        }
        self.seen.extend(population.iter().cloned());
        Ok(records)
    }
}

/// Runs the search. The result depends only on the evaluator's outputs and
/// `cfg` (including its seed).
pub fn search<E: Evaluator>(space: &SearchSpace, evaluator: &E, cfg: &EvoConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let min_params = space.param_count(&space.min_arch());
    if min_params > cfg.max_params {
        return Err(Error::Config(format!(
            "constraint {} is below the smallest architecture ({min_params} params)",
            cfg.max_params
        )));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut s = Search {
        space,
        evaluator,
        cfg,
        memo: HashMap::new(),
        seen: HashSet::new(),
        evaluations: 0,
    };

    let mut population = Vec::with_capacity(cfg.population_size);
    let mut taken = HashSet::new();
    for _ in 0..cfg.population_size {
        let mut uniform = |r: &mut SeededRng| s.uniform_feasible(r);
        if let Some(arch) = s.fill_slot(&taken, &mut rng, &mut uniform)? {
            taken.insert(arch.clone());
            population.push(arch);
        }
    }
    if population.is_empty() {
        return Err(Error::Config(format!(
            "no architecture within {} params found by rejection sampling",
            cfg.max_params
        )));
    }

    let mut history = Vec::new();
    let mut best: Option<EvalRecord> = None;
    let mut best_per_generation = Vec::with_capacity(cfg.generations);
    for generation in 0..cfg.generations {
        let mut records = s.evaluate_all(&population, generation)?;
        history.extend(records.iter().cloned());
        records.sort_by(rank);
        if best.as_ref().is_none_or(|b| rank(&records[0], b) == Ordering::Less) {
            best = Some(records[0].clone());
        }
        best_per_generation.push(best.clone().expect("non-empty population"));
        if generation + 1 == cfg.generations {
            break;
        }

        let parents: Vec<Architecture> =
            records.iter().take(cfg.parent_count).map(|r| r.arch.clone()).collect();
        let n_mutation = cfg.population_size / 2;
        let mut next = Vec::with_capacity(cfg.population_size);
        let mut taken = HashSet::new();
        for slot in 0..cfg.population_size {
            let mut breed = |r: &mut SeededRng| -> Result<Option<Architecture>> {
                if slot < n_mutation {
                    let p = &parents[r.below(parents.len())];
                    Ok(Some(mutate(p, space, cfg.mutation_prob, r)))
                } else {
                    let a = &parents[r.below(parents.len())];
                    let b = &parents[r.below(parents.len())];
                    Ok(Some(crossover(a, b, r)))
                }
            };
            if let Some(arch) = s.fill_slot(&taken, &mut rng, &mut breed)? {
                taken.insert(arch.clone());
                next.push(arch);
            }
        }
        population = next;
    }

    Ok(SearchOutcome {
        best: best.expect("at least one generation"),
        history,
        best_per_generation,
        evaluations: s.evaluations,
    })
}
