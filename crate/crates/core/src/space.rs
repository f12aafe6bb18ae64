//! Search-space grids, architecture encoding, parameter counting and the
//! nested subspace partition used for progressive sampling.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const GRID_TOL: f64 = 1e-9;

/// Evenly spaced attribute values `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AttributeGrid {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let grid = Self { min, max, step };
        grid.validate("grid")?;
        Ok(grid)
    }

    /// Single-valued grid.
    pub fn fixed(value: f64) -> Self {
        Self { min: value, max: value, step: 1.0 }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let Self { min, max, step } = *self;
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(Error::Config(format!("{name}: non-finite grid bounds")));
        }
        if min > max {
            return Err(Error::Config(format!("{name}: min {min} exceeds max {max}")));
        }
        if step <= 0.0 {
            return Err(Error::Config(format!("{name}: step must be positive, got {step}")));
        }
        let n = (max - min) / step;
        if (n - n.round()).abs() > GRID_TOL * n.max(1.0) {
            return Err(Error::Config(format!(
                "{name}: (max - min) = {} is not a multiple of step {step}",
                max - min
            )));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.value(i)).collect()
    }

    pub fn index_of(&self, v: f64) -> Option<usize> {
        let x = (v - self.min) / self.step;
        let i = x.round();
        if (x - i).abs() <= GRID_TOL * x.abs().max(1.0) && i >= 0.0 && (i as usize) < self.count() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Number of leading grid values not exceeding `cap`.
    pub fn count_at_most(&self, cap: f64) -> usize {
        if cap + GRID_TOL < self.min {
            return 0;
        }
        let n = ((cap - self.min) / self.step + GRID_TOL).floor() as usize + 1;
        n.min(self.count())
    }

    fn is_integral(&self) -> bool {
        [self.min, self.max, self.step].iter().all(|v| v.fract() == 0.0)
    }
}

/// The attribute grids plus the fixed geometry every subnet shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub embed_dim: AttributeGrid,
    pub mlp_ratio: AttributeGrid,
    pub head_num: AttributeGrid,
    pub depth: AttributeGrid,
    /// Per-head width; Q/K/V of a block with `h` heads have `h * head_dim` columns.
    pub head_dim: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub seq_len: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [
            ("space.embed_dim", &self.embed_dim),
            ("space.head_num", &self.head_num),
            ("space.depth", &self.depth),
        ] {
            grid.validate(name)?;
            if !grid.is_integral() || grid.min < 1.0 {
                return Err(Error::Config(format!("{name}: values must be positive integers")));
            }
        }
        self.mlp_ratio.validate("space.mlp_ratio")?;
        if self.mlp_ratio.min <= 0.0 {
            return Err(Error::Config("space.mlp_ratio: min must be positive".into()));
        }
        for (name, v) in [
            ("space.head_dim", self.head_dim),
            ("space.input_dim", self.input_dim),
            ("space.num_classes", self.num_classes),
            ("space.seq_len", self.seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Embed {8, 12, 16}, ratio {1, 1.5, 2}, heads {1, 2}, depth {2, 3},
    /// four-wide heads over 8-token, 8-feature, 4-class inputs.
    pub fn lab() -> Self {
        Self {
            embed_dim: AttributeGrid { min: 8.0, max: 16.0, step: 4.0 },
            mlp_ratio: AttributeGrid { min: 1.0, max: 2.0, step: 0.5 },
            head_num: AttributeGrid { min: 1.0, max: 2.0, step: 1.0 },
            depth: AttributeGrid { min: 2.0, max: 3.0, step: 1.0 },
            head_dim: 4,
            input_dim: 8,
            num_classes: 4,
            seq_len: 8,
        }
    }

    /// Four-attribute toy space: embed {8,16}, ratio {1,2}, heads {1,2},
    /// depth {2}; 32 architectures.
    pub fn toy() -> Self {
        Self {
            embed_dim: AttributeGrid { min: 8.0, max: 16.0, step: 8.0 },
            mlp_ratio: AttributeGrid { min: 1.0, max: 2.0, step: 1.0 },
            head_num: AttributeGrid { min: 1.0, max: 2.0, step: 1.0 },
            depth: AttributeGrid::fixed(2.0),
            head_dim: 4,
            input_dim: 8,
            num_classes: 4,
            seq_len: 8,
        }
    }

    /// The AutoFormer-T grids with ViT-Ti geometry (16x16x3 patches, 196
    /// tokens, 1000 classes, 64-wide heads).
    pub fn autoformer_tiny() -> Self {
        Self {
            embed_dim: AttributeGrid { min: 192.0, max: 240.0, step: 24.0 },
            mlp_ratio: AttributeGrid { min: 3.5, max: 4.0, step: 0.5 },
            head_num: AttributeGrid { min: 3.0, max: 4.0, step: 1.0 },
            depth: AttributeGrid { min: 12.0, max: 14.0, step: 1.0 },
            head_dim: 64,
            input_dim: 768,
            num_classes: 1000,
            seq_len: 196,
        }
    }

    pub fn max_embed(&self) -> usize {
        self.embed_dim.max as usize
    }

    pub fn max_heads(&self) -> usize {
        self.head_num.max as usize
    }

    pub fn max_depth(&self) -> usize {
        self.depth.max as usize
    }

    /// Widest MLP hidden layer any block can use.
    pub fn max_hidden(&self) -> usize {
        hidden_dim(self.max_embed(), self.mlp_ratio.max)
    }

    pub fn max_arch(&self) -> Architecture {
        let d = self.max_depth();
        Architecture {
            embed_dim: self.max_embed(),
            depth: d,
            mlp_ratios: vec![self.mlp_ratio.value(self.mlp_ratio.count() - 1); d],
            head_nums: vec![self.max_heads(); d],
        }
    }

    pub fn min_arch(&self) -> Architecture {
        let d = self.depth.min as usize;
        Architecture {
            embed_dim: self.embed_dim.min as usize,
            depth: d,
            mlp_ratios: vec![self.mlp_ratio.min; d],
            head_nums: vec![self.head_num.min as usize; d],
        }
    }

    pub fn check_arch(&self, arch: &Architecture) -> Result<()> {
        let bad = |what: String| Err(Error::Input(format!("architecture {arch}: {what}")));
        if self.embed_dim.index_of(arch.embed_dim as f64).is_none() {
            return bad(format!("embed dim {} off grid", arch.embed_dim));
        }
        if self.depth.index_of(arch.depth as f64).is_none() {
            return bad(format!("depth {} off grid", arch.depth));
        }
        if arch.mlp_ratios.len() != arch.depth || arch.head_nums.len() != arch.depth {
            return bad("per-block lists do not match depth".into());
        }
        if let Some(r) = arch.mlp_ratios.iter().find(|r| self.mlp_ratio.index_of(**r).is_none()) {
            return bad(format!("mlp ratio {r} off grid"));
        }
        if let Some(h) = arch.head_nums.iter().find(|h| self.head_num.index_of(**h as f64).is_none())
        {
            return bad(format!("head count {h} off grid"));
        }
        Ok(())
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        self.check_arch(arch).is_ok()
    }

    /// Exact parameter total, biases and layernorm affines included.
    ///
    /// input projection `D e + e`; per block `3 (e h dh + h dh)` for Q/K/V,
    /// `h dh e + e` for the output projection, `4 e` for two layernorms and
    /// `(e m + m) + (m e + e)` for the MLP with `m = ceil(r e)`; classifier
    /// `e C + C`; final layernorm `2 e`.
    pub fn param_count(&self, arch: &Architecture) -> u64 {
        let e = arch.embed_dim as u64;
        let dh = self.head_dim as u64;
        let mut total = self.input_dim as u64 * e + e;
        for (r, h) in arch.mlp_ratios.iter().zip(&arch.head_nums) {
            let inner = *h as u64 * dh;
            let m = hidden_dim(arch.embed_dim, *r) as u64;
            total += 3 * (e * inner + inner);
            total += inner * e + e;
            total += 4 * e;
            total += e * m + m + m * e + e;
        }
        total += e * self.num_classes as u64 + self.num_classes as u64;
        total + 2 * e
    }

    /// Closed-form size: `sum over depths d of E * (R * H)^d`.
    pub fn count(&self) -> u128 {
        let per_block = (self.mlp_ratio.count() * self.head_num.count()) as u128;
        self.depth
            .values()
            .iter()
            .map(|d| self.embed_dim.count() as u128 * per_block.pow(*d as u32))
            .sum()
    }

    /// Every grid-valid architecture once, ordered by depth, then embed dim,
    /// then per-block choices (block 0 varying slowest).
    pub fn enumerate(&self, cap: u128) -> Result<ArchIter<'_>> {
        let total = self.count();
        if total > cap {
            return Err(Error::Capacity(format!("space has {total} architectures, cap is {cap}")));
        }
        Ok(ArchIter { space: self, depth_idx: 0, counters: None, done: false })
    }

    /// Draws embed dim, depth, then (ratio, heads) per block, each uniform
    /// over the grid values allowed by `cap` (no cap: the full grid).
    pub fn sample(&self, cap: Option<&StageCap>, rng: &mut SeededRng) -> Result<Architecture> {
        let (n_embed, n_ratio) = match cap {
            None => (self.embed_dim.count(), self.mlp_ratio.count()),
            Some(c) => (
                self.embed_dim.count_at_most(c.max_embed as f64),
                self.mlp_ratio.count_at_most(c.max_mlp_ratio),
            ),
        };
        if n_embed == 0 || n_ratio == 0 {
            return Err(Error::Config(format!("stage caps {cap:?} admit no architecture")));
        }
        let embed_dim = self.embed_dim.value(rng.below(n_embed)) as usize;
        let depth = self.depth.value(rng.below(self.depth.count())) as usize;
        let mut mlp_ratios = Vec::with_capacity(depth);
        let mut head_nums = Vec::with_capacity(depth);
        for _ in 0..depth {
            mlp_ratios.push(self.mlp_ratio.value(rng.below(n_ratio)));
            head_nums.push(self.head_num.value(rng.below(self.head_num.count())) as usize);
        }
        Ok(Architecture { embed_dim, depth, mlp_ratios, head_nums })
    }
}

/// MLP hidden width `ceil(r * e)`.
pub fn hidden_dim(embed: usize, ratio: f64) -> usize {
    (ratio * embed as f64 - GRID_TOL).ceil() as usize
}

pub struct ArchIter<'a> {
    space: &'a SearchSpace,
    depth_idx: usize,
    // [embed, ratio_0, head_0, ratio_1, head_1, ...] grid indices
    counters: Option<Vec<usize>>,
    done: bool,
}

impl ArchIter<'_> {
    fn radix(&self, pos: usize) -> usize {
        if pos == 0 {
            self.space.embed_dim.count()
        } else if pos % 2 == 1 {
            self.space.mlp_ratio.count()
        } else {
            self.space.head_num.count()
        }
    }
}

impl Iterator for ArchIter<'_> {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        if self.done {
            return None;
        }
        let depth = self.space.depth.value(self.depth_idx) as usize;
        let counters = self.counters.get_or_insert_with(|| vec![0; 1 + 2 * depth]).clone();
        let arch = Architecture {
            embed_dim: self.space.embed_dim.value(counters[0]) as usize,
            depth,
            mlp_ratios: (0..depth).map(|b| self.space.mlp_ratio.value(counters[1 + 2 * b])).collect(),
            head_nums: (0..depth)
                .map(|b| self.space.head_num.value(counters[2 + 2 * b]) as usize)
                .collect(),
        };
        let mut next = counters;
        let mut pos = next.len();
        loop {
            if pos == 0 {
                self.depth_idx += 1;
                self.counters = None;
                if self.depth_idx >= self.space.depth.count() {
                    self.done = true;
                }
                break;
            }
            pos -= 1;
            next[pos] += 1;
            if next[pos] < self.radix(pos) {
                self.counters = Some(next);
                break;
            }
            next[pos] = 0;
        }
        Some(arch)
    }
}

/// One subnet: shared embed dim, depth, and per-block MLP ratio and heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub depth: usize,
    pub mlp_ratios: Vec<f64>,
    pub head_nums: Vec<usize>,
}

impl PartialEq for Architecture {
    fn eq(&self, other: &Self) -> bool {
        self.embed_dim == other.embed_dim
            && self.depth == other.depth
            && self.head_nums == other.head_nums
            && self.mlp_ratios.len() == other.mlp_ratios.len()
            && self.mlp_ratios.iter().zip(&other.mlp_ratios).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Architecture {}

impl Hash for Architecture {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.embed_dim.hash(state);
        self.depth.hash(state);
        self.head_nums.hash(state);
        for r in &self.mlp_ratios {
            r.to_bits().hash(state);
        }
    }
}

impl Architecture {
    pub fn uniform(embed_dim: usize, depth: usize, mlp_ratio: f64, heads: usize) -> Self {
        Self { embed_dim, depth, mlp_ratios: vec![mlp_ratio; depth], head_nums: vec![heads; depth] }
    }

    pub fn max_mlp_ratio(&self) -> f64 {
        self.mlp_ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Attribute-wise `self <= other`: embed dim, depth, and every block
    /// present in `self` has no more heads and no larger ratio.
    pub fn dominated_by(&self, other: &Architecture) -> bool {
        self.embed_dim <= other.embed_dim
            && self.depth <= other.depth
            && self.mlp_ratios.iter().zip(&other.mlp_ratios).all(|(a, b)| a <= b)
            && self.head_nums.iter().zip(&other.head_nums).all(|(a, b)| a <= b)
    }

    /// Stable 64-bit FNV-1a hash of the text encoding.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint())
    }
}

/// `e<embed>-d<depth>-r<r0>:<r1>...-h<h0>:<h1>...`
impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratios: Vec<String> = self.mlp_ratios.iter().map(|r| r.to_string()).collect();
        let heads: Vec<String> = self.head_nums.iter().map(|h| h.to_string()).collect();
        write!(f, "e{}-d{}-r{}-h{}", self.embed_dim, self.depth, ratios.join(":"), heads.join(":"))
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("cannot parse architecture `{s}`"));
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        fn field<'a>(p: &'a str, tag: char, s: &str) -> Result<&'a str> {
            p.strip_prefix(tag).ok_or_else(|| Error::Input(format!("cannot parse architecture `{s}`")))
        }
        let embed_dim = field(parts[0], 'e', s)?.parse().map_err(|_| bad())?;
        let depth: usize = field(parts[1], 'd', s)?.parse().map_err(|_| bad())?;
        let list = |p: &str| -> Vec<String> {
            if p.is_empty() {
                Vec::new()
            } else {
                p.split(':').map(str::to_string).collect()
            }
        };
        let mlp_ratios = list(field(parts[2], 'r', s)?)
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let head_nums = list(field(parts[3], 'h', s)?)
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if mlp_ratios.len() != depth || head_nums.len() != depth {
            return Err(bad());
        }
        Ok(Self { embed_dim, depth, mlp_ratios, head_nums })
    }
}

/// Caps of one subspace: largest embed dim and largest per-block MLP ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCap {
    pub max_embed: usize,
    pub max_mlp_ratio: f64,
}

/// Nested chain of subspaces `A_1 ⊂ ... ⊂ A_K`, with `A_K` the full space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspacePartition {
    stages: Vec<StageCap>,
}

impl SubspacePartition {
    pub fn new(space: &SearchSpace, stages: Vec<StageCap>) -> Result<Self> {
        let Some(last) = stages.last() else {
            return Err(Error::Config("partition needs at least one stage".into()));
        };
        if last.max_embed != space.max_embed() || last.max_mlp_ratio != space.mlp_ratio.max {
            return Err(Error::Config(format!(
                "partition: last stage caps {last:?} must equal the space maxima ({}, {})",
                space.max_embed(),
                space.mlp_ratio.max
            )));
        }
        for (k, pair) in stages.windows(2).enumerate() {
            if pair[1].max_embed < pair[0].max_embed || pair[1].max_mlp_ratio < pair[0].max_mlp_ratio
            {
                return Err(Error::Config(format!(
                    "partition: stage {} caps shrink relative to stage {}",
                    k + 2,
                    k + 1
                )));
            }
        }
        Ok(Self { stages })
    }

    /// The trivial one-stage partition (uniform sampling over the whole space).
    pub fn single(space: &SearchSpace) -> Self {
        Self {
            stages: vec![StageCap { max_embed: space.max_embed(), max_mlp_ratio: space.mlp_ratio.max }],
        }
    }

    pub fn stages(&self) -> &[StageCap] {
        &self.stages
    }

    pub fn k(&self) -> usize {
        self.stages.len()
    }

    /// Stage caps for 1-based `k`.
    pub fn cap(&self, k: usize) -> Result<&StageCap> {
        if k == 0 || k > self.k() {
            return Err(Error::Input(format!("stage {k} outside 1..={}", self.k())));
        }
        Ok(&self.stages[k - 1])
    }

    pub fn member(&self, arch: &Architecture, k: usize) -> bool {
        self.cap(k).is_ok_and(|c| {
            arch.embed_dim <= c.max_embed && arch.max_mlp_ratio() <= c.max_mlp_ratio + GRID_TOL
        })
    }

    /// Smallest 1-based stage containing `arch`.
    pub fn subspace_of(&self, arch: &Architecture) -> usize {
        (1..=self.k()).find(|&k| self.member(arch, k)).unwrap_or(self.k())
    }

    /// Attribute-wise largest member of stage `k`: capped embed dim and
    /// ratio, maximal heads and depth.
    pub fn stage_max_arch(&self, space: &SearchSpace, k: usize) -> Result<Architecture> {
        let cap = self.cap(k)?;
        let ne = space.embed_dim.count_at_most(cap.max_embed as f64);
        let nr = space.mlp_ratio.count_at_most(cap.max_mlp_ratio);
        if ne == 0 || nr == 0 {
            return Err(Error::Config(format!("stage {k} admits no architecture")));
        }
        Ok(Architecture::uniform(
            space.embed_dim.value(ne - 1) as usize,
            space.max_depth(),
            space.mlp_ratio.value(nr - 1),
            space.max_heads(),
        ))
    }
}

/// Uniform draw from stage `k` (1-based) of `partition`.
pub fn sample_uniform(
    space: &SearchSpace,
    partition: &SubspacePartition,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Architecture> {
    let cap = partition.cap(k).map_err(|e| Error::Config(e.to_string()))?;
    space.sample(Some(cap), rng)
}
