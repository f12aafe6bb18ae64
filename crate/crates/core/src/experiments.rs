//! Diagnostic studies run on a trained store: grow versus crop, per-block
//! feature similarity, accuracy distributions of sampled subnets, and the
//! transition-epoch ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::{search, EvoConfig, SupernetEvaluator};
use crate::report::{StudyRecord, StudyReport};
use crate::rng::SeededRng;
use crate::scheduler::{
    build_freeze_mask, finetune_plus, train_fixed, train_grow_tas, train_uniform, FinetuneConfig, Schedule,
    TrainConfig, REJECTION_BOUND,
};
use crate::space::{Architecture, SearchSpace, SubspacePartition};
use crate::supernet::{EvalResult, InitMode, SupernetWeights};
use crate::task::SyntheticTask;
use crate::tensor::Tensor;

/// Training and evaluation settings shared by the studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub train: TrainConfig,
    pub init_scale: f64,
    pub epochs: usize,
    pub eval_batch: usize,
}

/// A small and a large subnet, each trained standalone on its own store.
#[derive(Debug, Clone)]
pub struct References {
    pub small_arch: Architecture,
    pub small: SupernetWeights,
    pub large_arch: Architecture,
    pub large: SupernetWeights,
}

/// A derived subnet together with the standalone store that holds it.
#[derive(Debug, Clone)]
pub struct Variant {
    pub arch: Architecture,
    pub weights: SupernetWeights,
}

/// The small reference is the largest member of the first subspace (the
/// minimal architecture when there is a single stage); the large one is
/// the maximal architecture.
pub fn reference_archs(space: &SearchSpace, partition: &SubspacePartition) -> Result<(Architecture, Architecture)> {
    let small = if partition.k() >= 2 { partition.stage_max_arch(space, 1)? } else { space.min_arch() };
    Ok((small, space.max_arch()))
}

pub fn train_references(
    space: &SearchSpace,
    small_arch: &Architecture,
    large_arch: &Architecture,
    task: &SyntheticTask,
    settings: &StudySettings,
    seed: u64,
) -> Result<References> {
    let root = SeededRng::new(seed);
    let train_one = |arch: &Architecture, stream: u64| -> Result<SupernetWeights> {
        let mut init = root.fork(stream);
        let mut w = SupernetWeights::init(space, &mut init, settings.init_scale)?;
        let mut rng = root.fork(stream + 1);
        train_fixed(&mut w, arch, settings.epochs, &task.train, &settings.train, &mut rng)?;
        Ok(w)
    };
    Ok(References {
        small_arch: small_arch.clone(),
        small: train_one(small_arch, 10)?,
        large_arch: large_arch.clone(),
        large: train_one(large_arch, 20)?,
    })
}

fn pick(values: &[f64], rng: &mut SeededRng) -> f64 {
    values[rng.below(values.len())]
}

/// Uniform over grid architectures that dominate `source` attribute-wise.
pub fn sample_dominating(space: &SearchSpace, source: &Architecture, rng: &mut SeededRng) -> Architecture {
    let at_least = |vals: Vec<f64>, floor: f64| -> Vec<f64> { vals.into_iter().filter(|v| *v >= floor - 1e-9).collect() };
    let embed_dim = pick(&at_least(space.embed_dim.values(), source.embed_dim as f64), rng) as usize;
    let depth = pick(&at_least(space.depth.values(), source.depth as f64), rng) as usize;
    let mut mlp_ratios = Vec::with_capacity(depth);
    let mut head_nums = Vec::with_capacity(depth);
    for b in 0..depth {
        let (r, h) = if b < source.depth { (source.mlp_ratios[b], source.head_nums[b] as f64) } else { (0.0, 0.0) };
        mlp_ratios.push(pick(&at_least(space.mlp_ratio.values(), r), rng));
        head_nums.push(pick(&at_least(space.head_num.values(), h), rng) as usize);
    }
    Architecture { embed_dim, depth, mlp_ratios, head_nums }
}

/// Uniform over grid architectures dominated by `source` attribute-wise.
pub fn sample_dominated(space: &SearchSpace, source: &Architecture, rng: &mut SeededRng) -> Architecture {
    let at_most = |vals: Vec<f64>, ceil: f64| -> Vec<f64> { vals.into_iter().filter(|v| *v <= ceil + 1e-9).collect() };
    let embed_dim = pick(&at_most(space.embed_dim.values(), source.embed_dim as f64), rng) as usize;
    let depth = pick(&at_most(space.depth.values(), source.depth as f64), rng) as usize;
    let mut mlp_ratios = Vec::with_capacity(depth);
    let mut head_nums = Vec::with_capacity(depth);
    for b in 0..depth {
        mlp_ratios.push(pick(&at_most(space.mlp_ratio.values(), source.mlp_ratios[b]), rng));
        head_nums.push(pick(&at_most(space.head_num.values(), source.head_nums[b] as f64), rng) as usize);
    }
    Architecture { embed_dim, depth, mlp_ratios, head_nums }
}

/// `n` grown variants of the small reference, complement filled with the
/// store's random init scheme.
pub fn grown_variants(refs: &References, n: usize, init_scale: f64, rng: &mut SeededRng) -> Result<Vec<Variant>> {
    let space = refs.small.space();
    (0..n)
        .map(|_| {
            let arch = sample_dominating(space, &refs.small_arch, rng);
            let weights = refs.small.grow(&refs.small_arch, &arch, rng, InitMode::Random { std: init_scale })?;
            Ok(Variant { arch, weights })
        })
        .collect()
}

/// `n` cropped variants of the large reference.
pub fn cropped_variants(refs: &References, n: usize, rng: &mut SeededRng) -> Result<Vec<Variant>> {
    let space = refs.large.space();
    (0..n)
        .map(|_| {
            let arch = sample_dominated(space, &refs.large_arch, rng);
            let weights = refs.large.crop(&refs.large_arch, &arch)?;
            Ok(Variant { arch, weights })
        })
        .collect()
}

fn eval_record(group: &str, key: u64, arch: &Architecture, params: u64, r: EvalResult) -> StudyRecord {
    StudyRecord {
        group: group.into(),
        key,
        arch: arch.to_string(),
        params,
        value: r.accuracy,
        aux: r.loss,
        note: String::new(),
    }
}

fn evaluate_variants(variants: &[Variant], task: &SyntheticTask, batch: usize) -> Result<Vec<EvalResult>> {
    variants.par_iter().map(|v| v.weights.evaluate(&v.arch, &task.test, batch)).collect()
}

/// Test accuracy of both references and of `n_variants` grown and cropped
/// variants. Groups: `small_ref`, `grown`, `large_ref`, `cropped`;
/// `value` is accuracy and `aux` mean loss.
pub fn grow_crop_study(
    refs: &References,
    task: &SyntheticTask,
    n_variants: usize,
    settings: &StudySettings,
    rng: &mut SeededRng,
    config_hash: &str,
) -> Result<StudyReport> {
    if n_variants == 0 {
        return Err(Error::Config("study.n_variants must be at least 1".into()));
    }
    let space = refs.small.space().clone();
    let batch = settings.eval_batch;
    let grown = grown_variants(refs, n_variants, settings.init_scale, rng)?;
    let cropped = cropped_variants(refs, n_variants, rng)?;
    let mut records = Vec::with_capacity(2 * n_variants + 2);
    let small = refs.small.evaluate(&refs.small_arch, &task.test, batch)?;
    records.push(eval_record("small_ref", 0, &refs.small_arch, space.param_count(&refs.small_arch), small));
    for (i, (v, r)) in grown.iter().zip(evaluate_variants(&grown, task, batch)?).enumerate() {
        records.push(eval_record("grown", i as u64, &v.arch, space.param_count(&v.arch), r));
    }
    let large = refs.large.evaluate(&refs.large_arch, &task.test, batch)?;
    records.push(eval_record("large_ref", 0, &refs.large_arch, space.param_count(&refs.large_arch), large));
    for (i, (v, r)) in cropped.iter().zip(evaluate_variants(&cropped, task, batch)?).enumerate() {
        records.push(eval_record("cropped", i as u64, &v.arch, space.param_count(&v.arch), r));
    }
    Ok(StudyReport::new("grow-crop", config_hash, records))
}

/// Cosine similarity of corresponding rows of `a` and `b` over their
/// leading `min(cols)` columns. A zero row scores 0.
pub fn token_cosines(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
        return Err(Error::Dimension(format!("token features {:?} vs {:?}", a.shape(), b.shape())));
    }
    let d = a.cols().min(b.cols());
    if d == 0 {
        return Err(Error::Input("no shared feature dimensions".into()));
    }
    Ok((0..a.rows())
        .map(|i| {
            let (x, y) = (&a.row(i)[..d], &b.row(i)[..d]);
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                (dot / (nx * ny)).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Per shared block, mean and std of token cosine similarity between the
/// reference and each variant on batch `x`. The last shared block of each
/// variant goes to group `<label>/final`, earlier ones to `<label>/b<i>`.
pub fn cosine_similarity_study(
    reference: &SupernetWeights,
    ref_arch: &Architecture,
    variants: &[Variant],
    x: &Tensor,
    label: &str,
) -> Result<Vec<StudyRecord>> {
    let ref_feats = reference.block_features(ref_arch, x)?;
    let space = reference.space();
    let per_variant: Vec<Vec<StudyRecord>> = variants
        .par_iter()
        .map(|v| {
            let feats = v.weights.block_features(&v.arch, x)?;
            let shared = feats.len().min(ref_feats.len());
            if shared == 0 {
                return Err(Error::Input(format!("{} and {} share no blocks", ref_arch, v.arch)));
            }
            (0..shared)
                .map(|b| {
                    let sims = token_cosines(&ref_feats[b], &feats[b])?;
                    let n = sims.len() as f64;
                    let mean = sims.iter().sum::<f64>() / n;
                    let std = (sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
                    let group = if b + 1 == shared { format!("{label}/final") } else { format!("{label}/b{b}") };
                    Ok(StudyRecord {
                        group,
                        key: b as u64,
                        arch: v.arch.to_string(),
                        params: space.param_count(&v.arch),
                        value: mean,
                        aux: std,
                        note: String::new(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_variant.into_iter().flatten().collect())
}

/// Grown variants compared with the small reference and cropped variants
/// with the large one, on the first `eval_batch` test records.
pub fn cossim_study(
    refs: &References,
    task: &SyntheticTask,
    n_variants: usize,
    settings: &StudySettings,
    rng: &mut SeededRng,
    config_hash: &str,
) -> Result<StudyReport> {
    if n_variants == 0 {
        return Err(Error::Config("study.n_variants must be at least 1".into()));
    }
    let grown = grown_variants(refs, n_variants, settings.init_scale, rng)?;
    let cropped = cropped_variants(refs, n_variants, rng)?;
    let n = settings.eval_batch.clamp(1, task.test.len());
    let (x, _) = task.test.batch(&(0..n).collect::<Vec<_>>());
    let mut records = cosine_similarity_study(&refs.small, &refs.small_arch, &grown, &x, "grown")?;
    records.extend(cosine_similarity_study(&refs.large, &refs.large_arch, &cropped, &x, "cropped")?);
    Ok(StudyReport::new("cossim", config_hash, records))
}

/// Uniform draw among architectures with at most `constraint` parameters.
pub fn sample_feasible(space: &SearchSpace, constraint: u64, rng: &mut SeededRng) -> Result<Architecture> {
    if space.param_count(&space.min_arch()) > constraint {
        return Err(Error::Config(format!(
            "constraint {constraint} is below the smallest architecture ({} params)",
            space.param_count(&space.min_arch())
        )));
    }
    for _ in 0..REJECTION_BOUND {
        let arch = space.sample(None, rng)?;
        if space.param_count(&arch) <= constraint {
            return Ok(arch);
        }
    }
    Err(Error::Config(format!("no feasible architecture under {constraint} in {REJECTION_BOUND} draws")))
}

/// `n_samples` feasible subnets of `weights`, evaluated on `data`, as
/// records of group `group`.
pub fn accuracy_distribution(
    weights: &SupernetWeights,
    constraint: u64,
    n_samples: usize,
    data: &crate::data::Dataset,
    batch: usize,
    rng: &mut SeededRng,
    group: &str,
) -> Result<Vec<StudyRecord>> {
    if n_samples == 0 {
        return Err(Error::Config("study.n_samples must be at least 1".into()));
    }
    let space = weights.space();
    let archs: Vec<Architecture> =
        (0..n_samples).map(|_| sample_feasible(space, constraint, rng)).collect::<Result<_>>()?;
    let results: Vec<EvalResult> = archs.par_iter().map(|a| weights.evaluate(a, data, batch)).collect::<Result<_>>()?;
    Ok(archs
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (a, r))| eval_record(group, i as u64, a, space.param_count(a), r))
        .collect())
}

pub fn accuracy_distribution_study(
    weights: &SupernetWeights,
    constraint: u64,
    n_samples: usize,
    data: &crate::data::Dataset,
    batch: usize,
    rng: &mut SeededRng,
    config_hash: &str,
) -> Result<StudyReport> {
    let records = accuracy_distribution(weights, constraint, n_samples, data, batch, rng, "sample")?;
    Ok(StudyReport::new("dist", config_hash, records))
}

/// Best member of subspace `k` by accuracy on `data`, found exhaustively.
pub fn best_in_subspace(
    weights: &SupernetWeights,
    partition: &SubspacePartition,
    k: usize,
    data: &crate::data::Dataset,
    batch: usize,
) -> Result<(Architecture, EvalResult)> {
    let space = weights.space();
    let members: Vec<Architecture> = space.enumerate(1 << 20)?.filter(|a| partition.member(a, k)).collect();
    let results: Vec<EvalResult> =
        members.par_iter().map(|a| weights.evaluate(a, data, batch)).collect::<Result<_>>()?;
    members
        .into_iter()
        .zip(results)
        .reduce(|best, cand| {
            let better = cand.1.accuracy > best.1.accuracy
                || (cand.1.accuracy == best.1.accuracy && cand.1.loss < best.1.loss);
            if better {
                cand
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Config(format!("subspace {k} is empty")))
}

/// Trains a progressive and a uniform-sampling store from the same init,
/// then draws the same feasible subnets from each. Groups `growtas` and
/// `uniform` hold the sampled accuracies on the test split;
/// `growtas/best_a1` and `uniform/best_a1` hold the best first-subspace
/// member (chosen on validation, reported on test).
#[allow(clippy::too_many_arguments)]
pub fn distribution_comparison(
    space: &SearchSpace,
    partition: &SubspacePartition,
    schedule: &Schedule,
    task: &SyntheticTask,
    settings: &StudySettings,
    constraint: u64,
    n_samples: usize,
    seed: u64,
    config_hash: &str,
) -> Result<StudyReport> {
    let (grow, uniform) = train_pair(space, partition, schedule, task, settings, seed)?;
    let mut records = Vec::new();
    for (label, w) in [("growtas", &grow), ("uniform", &uniform)] {
        let mut rng = SeededRng::new(seed).fork(40);
        records.extend(accuracy_distribution(w, constraint, n_samples, &task.test, settings.eval_batch, &mut rng, label)?);
    }
    for (label, w) in [("growtas/best_a1", &grow), ("uniform/best_a1", &uniform)] {
        let (arch, _) = best_in_subspace(w, partition, 1, &task.val, settings.eval_batch)?;
        let r = w.evaluate(&arch, &task.test, settings.eval_batch)?;
        records.push(eval_record(label, 0, &arch, w.space().param_count(&arch), r));
    }
    Ok(StudyReport::new("dist", config_hash, records))
}

/// Progressive and uniform stores trained for the same number of epochs
/// from one shared initialization.
pub fn train_pair(
    space: &SearchSpace,
    partition: &SubspacePartition,
    schedule: &Schedule,
    task: &SyntheticTask,
    settings: &StudySettings,
    seed: u64,
) -> Result<(SupernetWeights, SupernetWeights)> {
    let root = SeededRng::new(seed);
    let init = SupernetWeights::init(space, &mut root.fork(30), settings.init_scale)?;
    let mut grow = init.clone();
    train_grow_tas(&mut grow, partition, schedule, &task.train, &settings.train, &mut root.fork(31), &mut Vec::new())?;
    let mut uniform = init;
    train_uniform(
        &mut uniform,
        schedule.total_epochs(),
        &task.train,
        &settings.train,
        &mut root.fork(31),
        &mut Vec::new(),
    )?;
    Ok((grow, uniform))
}

/// Ablation settings beyond the shared study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub t1_values: Vec<usize>,
    pub param_limits: Vec<u64>,
    pub finetune_epochs: usize,
    pub evo: EvoConfig,
}

/// One progressive run per `T_1` (two stages, `settings.epochs` in total),
/// optionally followed by the restricted fine-tune; then for each limit the
/// best searched subnet. Group `t1=<T_1>`, key the limit, `value` test
/// accuracy of the found subnet and `aux` its validation accuracy.
pub fn transition_ablation(
    space: &SearchSpace,
    partition: &SubspacePartition,
    task: &SyntheticTask,
    settings: &StudySettings,
    ablation: &AblationSettings,
    seed: u64,
    config_hash: &str,
) -> Result<StudyReport> {
    if partition.k() != 2 {
        return Err(Error::Config(format!("ablation needs a two-stage partition, got {} stages", partition.k())));
    }
    let total = settings.epochs;
    for &t1 in &ablation.t1_values {
        if t1 == 0 || t1 >= total {
            return Err(Error::Config(format!("study.t1_values: {t1} is not inside (0, {total})")));
        }
    }
    if ablation.param_limits.is_empty() || ablation.t1_values.is_empty() {
        return Err(Error::Config("study.t1_values and study.param_limits must be non-empty".into()));
    }
    let root = SeededRng::new(seed);
    let mut records = Vec::new();
    for &t1 in &ablation.t1_values {
        let schedule = Schedule::two_stage(t1, total)?;
        let mut w = SupernetWeights::init(space, &mut root.fork(50), settings.init_scale)?;
        let mut rng = root.fork(51);
        train_grow_tas(&mut w, partition, &schedule, &task.train, &settings.train, &mut rng, &mut Vec::new())?;
        if ablation.finetune_epochs > 0 {
            let mask = build_freeze_mask(space, partition)?;
            let ft = FinetuneConfig::from_training(&settings.train, ablation.finetune_epochs);
            finetune_plus(&mut w, partition, &mask, &ft, &settings.train, &task.train, &mut rng, &mut Vec::new())?;
        }
        let note = if t1 + 1 == total { "second stage ran a single epoch".to_string() } else { String::new() };
        let evaluator = SupernetEvaluator { weights: &w, data: &task.val, batch_size: settings.eval_batch };
        for &limit in &ablation.param_limits {
            let cfg = EvoConfig { max_params: limit, ..ablation.evo };
            let outcome = search(space, &evaluator, &cfg)?;
            let test = w.evaluate(&outcome.best.arch, &task.test, settings.eval_batch)?;
            records.push(StudyRecord {
                group: format!("t1={t1}"),
                key: limit,
                arch: outcome.best.arch.to_string(),
                params: outcome.best.params,
                value: test.accuracy,
                aux: outcome.best.accuracy,
                note: note.clone(),
            });
        }
    }
    Ok(StudyReport::new("ablate-t1", config_hash, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominating_and_dominated_samples_respect_order() {
        let space = SearchSpace::toy();
        let mut rng = SeededRng::new(3);
        let mid = Architecture::uniform(8, 2, 2.0, 1);
        for _ in 0..200 {
            let up = sample_dominating(&space, &mid, &mut rng);
            assert!(space.contains(&up) && mid.dominated_by(&up));
            let down = sample_dominated(&space, &mid, &mut rng);
            assert!(space.contains(&down) && down.dominated_by(&mid));
        }
    }

    #[test]
    fn cosine_of_identical_features_is_one() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        for s in token_cosines(&a, &a).unwrap() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_uses_leading_dims() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 3, vec![2.0, 0.0, 9.0]).unwrap();
        assert_eq!(token_cosines(&a, &b).unwrap(), vec![1.0]);
    }

    #[test]
    fn infeasible_constraint_is_config_error() {
        let space = SearchSpace::toy();
        let min = space.param_count(&space.min_arch());
        assert!(matches!(sample_feasible(&space, min - 1, &mut SeededRng::new(1)), Err(Error::Config(_))));
        assert!(sample_feasible(&space, min, &mut SeededRng::new(1)).is_ok());
    }
}
