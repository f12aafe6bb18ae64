//! Progressive subnet sampling, the supernet training loop, and the
//! restricted fine-tuning pass that freezes the smallest subspace's slice.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::AdamWConfig;
use crate::rng::SeededRng;
use crate::space::{sample_uniform, Architecture, SearchSpace, StageCap, SubspacePartition};
use crate::supernet::{SliceMap, SupernetWeights};

/// Draws allowed when rejection-sampling outside the first subspace.
pub const REJECTION_BOUND: usize = 10_000;

/// Epoch transitions `T_0 = 0 < T_1 < ... < T_K = total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    transitions: Vec<usize>,
}

impl Schedule {
    pub fn new(transitions: Vec<usize>) -> Result<Self> {
        if transitions.len() < 2 {
            return Err(Error::Config("schedule needs at least T_0 and T_K".into()));
        }
        if transitions[0] != 0 {
            return Err(Error::Config(format!("schedule must start at 0, got {}", transitions[0])));
        }
        if transitions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("schedule {transitions:?} is not strictly increasing")));
        }
        Ok(Self { transitions })
    }

    /// Two stages split at `t1`.
    pub fn two_stage(t1: usize, total: usize) -> Result<Self> {
        Self::new(vec![0, t1, total])
    }

    pub fn k(&self) -> usize {
        self.transitions.len() - 1
    }

    pub fn total_epochs(&self) -> usize {
        *self.transitions.last().unwrap()
    }

    pub fn transitions(&self) -> &[usize] {
        &self.transitions
    }

    /// The unique 1-based stage `k` with `T_{k-1} <= t < T_k`.
    pub fn stage_at(&self, t: usize) -> Result<usize> {
        if t >= self.total_epochs() {
            return Err(Error::Input(format!("epoch {t} outside 0..{}", self.total_epochs())));
        }
        Ok(self.transitions.partition_point(|&tk| tk <= t))
    }
}

/// Optimizer settings for one training run; the rate follows a single
/// cosine decay from `optim.lr` to `min_lr` across all epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optim: AdamWConfig,
    pub min_lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { optim: AdamWConfig::default(), min_lr: 2e-5, batch_size: 32 }
    }
}

pub fn cosine_lr(peak: f64, floor: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return peak;
    }
    let progress = epoch as f64 / total as f64;
    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One optimizer step of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub stage: usize,
    pub arch: Architecture,
    pub loss: f64,
}

/// Runs one epoch: shuffle, then per minibatch draw an architecture and
/// take a masked step. On error the store is left as it was at the start
/// of the epoch.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    weights: &mut SupernetWeights,
    data: &Dataset,
    batch_size: usize,
    opt: &AdamWConfig,
    rng: &mut SeededRng,
    frozen: Option<&SliceMap>,
    sample: &mut dyn FnMut(&mut SeededRng) -> Result<(usize, Architecture)>,
    log: &mut Vec<StepLog>,
) -> Result<()> {
    let snapshot = (weights.clone(), rng.clone(), log.len());
    let outcome = (|| {
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size.max(1)) {
            let (stage, arch) = sample(rng)?;
            let (x, labels) = data.batch(chunk);
            let loss = weights.train_step(&arch, &x, &labels, opt, frozen)?;
            log.push(StepLog { epoch: weights.epoch, stage, arch, loss });
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => {
            weights.epoch += 1;
            Ok(())
        }
        Err(err) => {
            let epoch = weights.epoch;
            *weights = snapshot.0;
            *rng = snapshot.1;
            log.truncate(snapshot.2);
            Err(match err {
                Error::Numeric { message, .. } => Error::Numeric { epoch, message },
                other => other,
            })
        }
    }
}

fn check_train_inputs(weights: &SupernetWeights, data: &Dataset) -> Result<()> {
    let space = weights.space();
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if data.seq_len() != space.seq_len || data.input_dim() != space.input_dim || data.num_classes() != space.num_classes {
        return Err(Error::Input("dataset geometry does not match the search space".into()));
    }
    Ok(())
}

/// Progressive training: epoch `t` samples uniformly from `A_stage_at(t)`.
/// Starts from `weights.epoch`, so a restored checkpoint resumes in place.
pub fn train_grow_tas(
    weights: &mut SupernetWeights,
    partition: &SubspacePartition,
    schedule: &Schedule,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    log: &mut Vec<StepLog>,
) -> Result<()> {
    train_grow_tas_until(weights, partition, schedule, data, cfg, rng, log, schedule.total_epochs())
}

/// As [`train_grow_tas`], stopping once `weights.epoch` reaches `stop`.
#[allow(clippy::too_many_arguments)]
pub fn train_grow_tas_until(
    weights: &mut SupernetWeights,
    partition: &SubspacePartition,
    schedule: &Schedule,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    log: &mut Vec<StepLog>,
    stop: usize,
) -> Result<()> {
    if schedule.k() != partition.k() {
        return Err(Error::Config(format!(
            "schedule has {} stages, partition has {}",
            schedule.k(),
            partition.k()
        )));
    }
    check_train_inputs(weights, data)?;
    let space = weights.space().clone();
    let total = schedule.total_epochs();
    while weights.epoch < stop.min(total) {
        let t = weights.epoch;
        let stage = schedule.stage_at(t)?;
        let opt = AdamWConfig { lr: cosine_lr(cfg.optim.lr, cfg.min_lr, t, total), ..cfg.optim };
        let mut sample = |r: &mut SeededRng| Ok((stage, sample_uniform(&space, partition, stage, r)?));
        run_epoch(weights, data, cfg.batch_size, &opt, rng, None, &mut sample, log)?;
    }
    Ok(())
}

/// Baseline: every step samples uniformly from the whole space.
pub fn train_uniform(
    weights: &mut SupernetWeights,
    epochs: usize,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    log: &mut Vec<StepLog>,
) -> Result<()> {
    check_train_inputs(weights, data)?;
    let space = weights.space().clone();
    while weights.epoch < epochs {
        let t = weights.epoch;
        let opt = AdamWConfig { lr: cosine_lr(cfg.optim.lr, cfg.min_lr, t, epochs), ..cfg.optim };
        let mut sample = |r: &mut SeededRng| Ok((1, space.sample(None, r)?));
        run_epoch(weights, data, cfg.batch_size, &opt, rng, None, &mut sample, log)?;
    }
    Ok(())
}

/// Trains the single architecture `arch` on its slice for `epochs` epochs.
pub fn train_fixed(
    weights: &mut SupernetWeights,
    arch: &Architecture,
    epochs: usize,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<()> {
    check_train_inputs(weights, data)?;
    weights.space().check_arch(arch)?;
    let start = weights.epoch;
    let mut log = Vec::new();
    while weights.epoch < start + epochs {
        let t = weights.epoch - start;
        let opt = AdamWConfig { lr: cosine_lr(cfg.optim.lr, cfg.min_lr, t, epochs), ..cfg.optim };
        let mut sample = |_: &mut SeededRng| Ok((1, arch.clone()));
        run_epoch(weights, data, cfg.batch_size, &opt, rng, None, &mut sample, &mut log)?;
    }
    Ok(())
}

/// Weights the smallest subspace reads: the slice of its attribute-wise
/// largest member.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeMask {
    pub map: SliceMap,
    pub frozen_arch: Architecture,
    stage_one: StageCap,
}

pub fn build_freeze_mask(space: &SearchSpace, partition: &SubspacePartition) -> Result<FreezeMask> {
    if partition.k() < 2 {
        return Err(Error::Config("freeze mask needs at least two stages".into()));
    }
    let frozen_arch = partition.stage_max_arch(space, 1)?;
    Ok(FreezeMask {
        map: SliceMap::of(space, &frozen_arch),
        frozen_arch,
        stage_one: *partition.cap(1)?,
    })
}

/// Settings of the restricted fine-tuning pass: `lr` held for
/// `constant_epochs`, then cosine to `min_lr` over the remaining epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub constant_epochs: usize,
    pub lr: f64,
    pub min_lr: f64,
}

impl FinetuneConfig {
    /// Rate at 1/20 of the training peak for the first half, then decaying
    /// by a further 5x.
    pub fn from_training(train: &TrainConfig, epochs: usize) -> Self {
        let lr = train.optim.lr / 20.0;
        Self { epochs, constant_epochs: epochs / 2, lr, min_lr: lr / 5.0 }
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        if t < self.constant_epochs {
            self.lr
        } else {
            let k = self.constant_epochs.min(self.epochs);
            cosine_lr(self.lr, self.min_lr, t - k, self.epochs - k)
        }
    }
}

/// Uniform draw from `A_K \ A_1` by rejection.
pub fn sample_outside_first(
    space: &SearchSpace,
    partition: &SubspacePartition,
    rng: &mut SeededRng,
) -> Result<Architecture> {
    for _ in 0..REJECTION_BOUND {
        let arch = space.sample(None, rng)?;
        if !partition.member(&arch, 1) {
            return Ok(arch);
        }
    }
    Err(Error::Config(format!(
        "no architecture outside the first subspace in {REJECTION_BOUND} draws"
    )))
}

/// Fine-tunes on architectures from `A_K \ A_1` only, with every entry of
/// `mask` (parameters and moments) held fixed.
pub fn finetune_plus(
    weights: &mut SupernetWeights,
    partition: &SubspacePartition,
    mask: &FreezeMask,
    ft: &FinetuneConfig,
    train: &TrainConfig,
    data: &Dataset,
    rng: &mut SeededRng,
    log: &mut Vec<StepLog>,
) -> Result<()> {
    let space = weights.space().clone();
    if partition.k() < 2 || *partition.cap(1)? != mask.stage_one {
        return Err(Error::Config("freeze mask was built from a different partition".into()));
    }
    let first = partition.cap(1)?;
    if first.max_embed >= space.max_embed() && first.max_mlp_ratio >= space.mlp_ratio.max {
        return Err(Error::Config("first subspace is the whole space; nothing to fine-tune".into()));
    }
    check_train_inputs(weights, data)?;
    let k = partition.k();
    for t in 0..ft.epochs {
        let opt = AdamWConfig { lr: ft.lr_at(t), ..train.optim };
        let mut sample = |r: &mut SeededRng| Ok((k, sample_outside_first(&space, partition, r)?));
        run_epoch(weights, data, train.batch_size, &opt, rng, Some(&mask.map), &mut sample, log)?;
    }
    Ok(())
}
