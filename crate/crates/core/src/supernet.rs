//! The shared weight store and subnet execution.
//!
//! Every tensor is allocated at the size of the maximal architecture. A
//! subnet reads and writes leading-prefix boxes of those tensors: `e`
//! embedding channels, the first `h * head_dim` Q/K/V columns, the first
//! `ceil(r * e)` hidden units, and the first `depth` blocks. Q, K and V are
//! stored as separate tensors so each slice is a single prefix box.
//!
//! Blocks are pre-norm: `h + Attn(LN(h))` then `h + MLP(LN(h))`. The head
//! applies a final layernorm, mean-pools tokens and projects to classes.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{
    self, adamw_step, attention, attention_backward, cross_entropy, gelu, gelu_backward,
    layernorm, layernorm_backward, linear, linear_backward, AdamWConfig, AttentionCache,
    AttentionWeights, LayerNormCache, UpdateMask,
};
use crate::rng::SeededRng;
use crate::space::{hidden_dim, Architecture, SearchSpace};
use crate::tensor::{Region, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const DEFAULT_INIT_SCALE: f64 = 0.02;
/// Absolute truncation bound of the weight initialiser.
pub const INIT_BOUND: f64 = 2.0;

/// Per-block tensor names in storage order.
pub const BLOCK_TENSORS: [&str; 16] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
    "attn.bo", "ln2.g", "ln2.b", "mlp.fc1.w", "mlp.fc1.b", "mlp.fc2.w", "mlp.fc2.b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Projection matrix: truncated-normal init, weight decay applies.
    Weight,
    Bias,
    /// Layernorm gain, initialised to one.
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Active prefix box of every stored tensor for one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMap {
    pub regions: Vec<Region>,
}

impl SliceMap {
    pub fn of(space: &SearchSpace, arch: &Architecture) -> Self {
        let e = arch.embed_dim;
        let mut regions = vec![Region::new(vec![space.input_dim, e]), Region::new(vec![e])];
        for b in 0..space.max_depth() {
            if b < arch.depth {
                let inner = arch.head_nums[b] * space.head_dim;
                let m = hidden_dim(e, arch.mlp_ratios[b]);
                let qkv = [Region::new(vec![e, inner]), Region::new(vec![inner])];
                regions.extend([Region::new(vec![e]), Region::new(vec![e])]);
                for _ in 0..3 {
                    regions.extend(qkv.iter().cloned());
                }
                regions.extend([
                    Region::new(vec![inner, e]),
                    Region::new(vec![e]),
                    Region::new(vec![e]),
                    Region::new(vec![e]),
                    Region::new(vec![e, m]),
                    Region::new(vec![m]),
                    Region::new(vec![m, e]),
                    Region::new(vec![e]),
                ]);
            } else {
                for name in BLOCK_TENSORS {
                    let rank = if name.contains(".w") { 2 } else { 1 };
                    regions.push(Region::empty(rank));
                }
            }
        }
        regions.extend([
            Region::new(vec![e]),
            Region::new(vec![e]),
            Region::new(vec![e, space.num_classes]),
            Region::new(vec![space.num_classes]),
        ]);
        Self { regions }
    }

    /// Every region of `self` lies inside the matching region of `other`.
    pub fn is_subset_of(&self, other: &SliceMap) -> bool {
        self.regions.len() == other.regions.len()
            && self.regions.iter().zip(&other.regions).all(|(a, b)| a.is_subset_of(b))
    }

    /// Whether flat `offset` of tensor `index` (of `shape`) is inside the map.
    pub fn covers(&self, index: usize, shape: &[usize], offset: usize) -> bool {
        self.regions[index].contains(&Region::unravel(shape, offset))
    }
}

/// Dense copies of the active slices, one struct per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: usize,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub attn: AttentionWeights,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<BlockParams>,
    pub norm_g: Tensor,
    pub norm_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl SubnetParams {
    /// Tensors in storage order (inactive blocks omitted).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed_w, &self.embed_b];
        for b in &self.blocks {
            out.extend([&b.ln1_g, &b.ln1_b]);
            out.extend(b.attn.tensors());
            out.extend([&b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b]);
        }
        out.extend([&self.norm_g, &self.norm_b, &self.head_w, &self.head_b]);
        out
    }

    fn from_ordered(mut ts: std::vec::IntoIter<Tensor>, heads: &[usize]) -> Self {
        let mut next = || ts.next().expect("subnet tensor count");
        let embed_w = next();
        let embed_b = next();
        let blocks = heads
            .iter()
            .map(|&h| BlockParams {
                heads: h,
                ln1_g: next(),
                ln1_b: next(),
                attn: AttentionWeights {
                    wq: next(),
                    bq: next(),
                    wk: next(),
                    bk: next(),
                    wv: next(),
                    bv: next(),
                    wo: next(),
                    bo: next(),
                },
                ln2_g: next(),
                ln2_b: next(),
                fc1_w: next(),
                fc1_b: next(),
                fc2_w: next(),
                fc2_b: next(),
            })
            .collect();
        SubnetParams {
            embed_w,
            embed_b,
            blocks,
            norm_g: next(),
            norm_b: next(),
            head_w: next(),
            head_b: next(),
        }
    }
}

struct BlockCache {
    ln1: LayerNormCache,
    attn: Vec<AttentionCache>,
    ln2: LayerNormCache,
    c: Tensor,
    u: Tensor,
    z: Tensor,
}

/// Activations kept by [`forward`] for [`backward`].
pub struct ForwardCache {
    x: Tensor,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    pooled: Tensor,
    seq_len: usize,
    /// Post-residual hidden state after every block.
    pub block_outputs: Vec<Tensor>,
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data).expect("add shape")
}

fn add_assign(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

fn check_tokens(x: &Tensor, seq_len: usize, input_dim: usize) -> Result<usize> {
    if x.rank() != 2 || x.cols() != input_dim || seq_len == 0 || x.rows() % seq_len != 0 {
        return Err(Error::Input(format!(
            "token batch {:?} incompatible with seq_len {seq_len}, input_dim {input_dim}",
            x.shape()
        )));
    }
    Ok(x.rows() / seq_len)
}

/// Subnet forward pass over a stacked token batch `(B * seq_len) x input_dim`.
pub fn forward(p: &SubnetParams, x: &Tensor, seq_len: usize) -> Result<(Tensor, ForwardCache)> {
    let batch = check_tokens(x, seq_len, p.embed_w.rows())?;
    let mut h = linear(x, &p.embed_w, &p.embed_b)?;
    let mut caches = Vec::with_capacity(p.blocks.len());
    let mut outputs = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let (a, ln1) = layernorm(&h, &b.ln1_g, &b.ln1_b, LN_EPS)?;
        let e = a.cols();
        let mut attn_out = Vec::with_capacity(a.len());
        let mut attn = Vec::with_capacity(batch);
        for s in 0..batch {
            let (y, cache) = attention(&a.row_block(s * seq_len, (s + 1) * seq_len), &b.attn, b.heads)?;
            attn_out.extend_from_slice(y.data());
            attn.push(cache);
        }
        let h_mid = add(&h, &Tensor::matrix(a.rows(), e, attn_out)?);
        let (c, ln2) = layernorm(&h_mid, &b.ln2_g, &b.ln2_b, LN_EPS)?;
        let u = linear(&c, &b.fc1_w, &b.fc1_b)?;
        let z = gelu(&u);
        let h_out = add(&h_mid, &linear(&z, &b.fc2_w, &b.fc2_b)?);
        caches.push(BlockCache { ln1, attn, ln2, c, u, z });
        outputs.push(h_out.clone());
        h = h_out;
    }
    let (n, ln_f) = layernorm(&h, &p.norm_g, &p.norm_b, LN_EPS)?;
    let e = n.cols();
    let mut pooled = vec![0.0; batch * e];
    for s in 0..batch {
        for t in 0..seq_len {
            for (o, v) in pooled[s * e..(s + 1) * e].iter_mut().zip(n.row(s * seq_len + t)) {
                *o += v;
            }
        }
        pooled[s * e..(s + 1) * e].iter_mut().for_each(|v| *v /= seq_len as f64);
    }
    let pooled = Tensor::matrix(batch, e, pooled)?;
    let logits = linear(&pooled, &p.head_w, &p.head_b)?;
    Ok((
        logits,
        ForwardCache { x: x.clone(), blocks: caches, ln_f, pooled, seq_len, block_outputs: outputs },
    ))
}

/// Gradients of a scalar loss with respect to every subnet tensor, given
/// `dlogits`.
pub fn backward(p: &SubnetParams, cache: &ForwardCache, dlogits: &Tensor) -> Result<SubnetParams> {
    let seq_len = cache.seq_len;
    let (dpooled, dhead_w, dhead_b) = linear_backward(&cache.pooled, &p.head_w, dlogits)?;
    let (batch, e) = (dpooled.rows(), dpooled.cols());
    let mut dn = vec![0.0; batch * seq_len * e];
    for s in 0..batch {
        for t in 0..seq_len {
            for (o, g) in dn[(s * seq_len + t) * e..(s * seq_len + t + 1) * e].iter_mut().zip(dpooled.row(s)) {
                *o = g / seq_len as f64;
            }
        }
    }
    let dn = Tensor::matrix(batch * seq_len, e, dn)?;
    let (mut dh, dnorm_g, dnorm_b) = layernorm_backward(&dn, &p.norm_g, &cache.ln_f);
    let mut block_grads = Vec::with_capacity(p.blocks.len());
    for (b, bc) in p.blocks.iter().zip(&cache.blocks).rev() {
        let (dz, dfc2_w, dfc2_b) = linear_backward(&bc.z, &b.fc2_w, &dh)?;
        let du = gelu_backward(&bc.u, &dz);
        let (dc, dfc1_w, dfc1_b) = linear_backward(&bc.c, &b.fc1_w, &du)?;
        let (dmid_ln, dln2_g, dln2_b) = layernorm_backward(&dc, &b.ln2_g, &bc.ln2);
        let dh_mid = add(&dh, &dmid_ln);
        let mut da = Vec::with_capacity(dh_mid.len());
        let mut dattn: Option<AttentionWeights> = None;
        for (s, ac) in bc.attn.iter().enumerate() {
            let dy = dh_mid.row_block(s * seq_len, (s + 1) * seq_len);
            let (dx, g) = attention_backward(&b.attn, ac, &dy)?;
            da.extend_from_slice(dx.data());
            match dattn.as_mut() {
                None => dattn = Some(g),
                Some(acc) => {
                    for (t, gt) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                        add_assign(t, gt);
                    }
                }
            }
        }
        let da = Tensor::matrix(dh_mid.rows(), e, da)?;
        let (din_ln, dln1_g, dln1_b) = layernorm_backward(&da, &b.ln1_g, &bc.ln1);
        dh = add(&dh_mid, &din_ln);
        block_grads.push(BlockParams {
            heads: b.heads,
            ln1_g: dln1_g,
            ln1_b: dln1_b,
            attn: dattn.expect("non-empty batch"),
            ln2_g: dln2_g,
            ln2_b: dln2_b,
            fc1_w: dfc1_w,
            fc1_b: dfc1_b,
            fc2_w: dfc2_w,
            fc2_b: dfc2_b,
        });
    }
    block_grads.reverse();
    let (_, dembed_w, dembed_b) = linear_backward(&cache.x, &p.embed_w, &dh)?;
    Ok(SubnetParams {
        embed_w: dembed_w,
        embed_b: dembed_b,
        blocks: block_grads,
        norm_g: dnorm_g,
        norm_b: dnorm_b,
        head_w: dhead_w,
        head_b: dhead_b,
    })
}

/// How [`SupernetWeights::grow`] fills entries the source did not have.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Same scheme as a fresh store: normal weights with this std truncated
    /// to `[-2, 2]`,
    /// unit gains, zero biases.
    Random { std: f64 },
    /// Every new entry zero, gains included.
    Zeros,
}

/// Accuracy and mean cross-entropy of one subnet on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
}

/// Maximal-size shared parameters, their AdamW moments, and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetWeights {
    space: SearchSpace,
    params: Vec<ParamTensor>,
    /// Optimizer steps taken (drives Adam bias correction).
    pub step: u64,
    /// Completed training epochs.
    pub epoch: usize,
}

fn param_layout(space: &SearchSpace) -> Vec<(String, ParamKind, Vec<usize>)> {
    let (e, d, c) = (space.max_embed(), space.input_dim, space.num_classes);
    let inner = space.max_heads() * space.head_dim;
    let m = space.max_hidden();
    let mut out = vec![
        ("embed.w".to_string(), ParamKind::Weight, vec![d, e]),
        ("embed.b".to_string(), ParamKind::Bias, vec![e]),
    ];
    for b in 0..space.max_depth() {
        let shapes: [(ParamKind, Vec<usize>); 16] = [
            (ParamKind::Gain, vec![e]),
            (ParamKind::Bias, vec![e]),
            (ParamKind::Weight, vec![e, inner]),
            (ParamKind::Bias, vec![inner]),
            (ParamKind::Weight, vec![e, inner]),
            (ParamKind::Bias, vec![inner]),
            (ParamKind::Weight, vec![e, inner]),
            (ParamKind::Bias, vec![inner]),
            (ParamKind::Weight, vec![inner, e]),
            (ParamKind::Bias, vec![e]),
            (ParamKind::Gain, vec![e]),
            (ParamKind::Bias, vec![e]),
            (ParamKind::Weight, vec![e, m]),
            (ParamKind::Bias, vec![m]),
            (ParamKind::Weight, vec![m, e]),
            (ParamKind::Bias, vec![e]),
        ];
        for (name, (kind, shape)) in BLOCK_TENSORS.iter().zip(shapes) {
            out.push((format!("blocks.{b}.{name}"), kind, shape));
        }
    }
    out.extend([
        ("norm.g".to_string(), ParamKind::Gain, vec![e]),
        ("norm.b".to_string(), ParamKind::Bias, vec![e]),
        ("head.w".to_string(), ParamKind::Weight, vec![e, c]),
        ("head.b".to_string(), ParamKind::Bias, vec![c]),
    ]);
    out
}

/// Tensor names in storage order.
pub fn param_names(space: &SearchSpace) -> Vec<String> {
    param_layout(space).into_iter().map(|(name, _, _)| name).collect()
}

fn fill_value(kind: ParamKind, mode: InitMode, rng: &mut SeededRng) -> f64 {
    match (mode, kind) {
        (InitMode::Zeros, _) => 0.0,
        (InitMode::Random { std }, ParamKind::Weight) => {
            if std == 0.0 {
                0.0
            } else {
                rng.truncated_normal(std, INIT_BOUND)
            }
        }
        (InitMode::Random { .. }, ParamKind::Gain) => 1.0,
        (InitMode::Random { .. }, ParamKind::Bias) => 0.0,
    }
}

impl SupernetWeights {
    /// Fresh store. Tensors are filled in storage order, row-major, from one
    /// generator stream.
    pub fn init(space: &SearchSpace, rng: &mut SeededRng, init_scale: f64) -> Result<Self> {
        space.validate()?;
        let mode = InitMode::Random { std: init_scale };
        let params = param_layout(space)
            .into_iter()
            .map(|(name, kind, shape)| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| fill_value(kind, mode, rng)).collect();
                ParamTensor {
                    name,
                    kind,
                    value: Tensor::from_vec(&shape, data).expect("init shape"),
                    m: Tensor::zeros(&shape),
                    v: Tensor::zeros(&shape),
                }
            })
            .collect();
        Ok(Self { space: space.clone(), params, step: 0, epoch: 0 })
    }

    /// Reassembles a store from its parts, checking names and shapes
    /// against the layout `space` implies.
    pub fn from_parts(space: SearchSpace, params: Vec<ParamTensor>, step: u64, epoch: usize) -> Result<Self> {
        let layout = param_layout(&space);
        if layout.len() != params.len() {
            return Err(Error::Input(format!(
                "{} tensors supplied, layout has {}",
                params.len(),
                layout.len()
            )));
        }
        for ((name, _, shape), p) in layout.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() || p.m.shape() != p.value.shape() || p.v.shape() != p.value.shape() {
                return Err(Error::Input(format!("tensor {} does not match layout {name} {shape:?}", p.name)));
            }
        }
        Ok(Self { space, params, step, epoch })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn slice(&self, arch: &Architecture) -> SliceMap {
        SliceMap::of(&self.space, arch)
    }

    /// Dense copies of the regions `arch` reads.
    pub fn gather(&self, arch: &Architecture) -> Result<SubnetParams> {
        self.space.check_arch(arch)?;
        let map = self.slice(arch);
        let ts = self
            .params
            .iter()
            .zip(&map.regions)
            .filter(|(_, r)| !r.is_empty())
            .map(|(p, r)| p.value.gather(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubnetParams::from_ordered(ts.into_iter(), &arch.head_nums))
    }

    pub fn forward(&self, arch: &Architecture, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        forward(&self.gather(arch)?, x, self.space.seq_len)
    }

    pub fn logits(&self, arch: &Architecture, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(arch, x)?.0)
    }

    /// Post-residual hidden states of every active block.
    pub fn block_features(&self, arch: &Architecture, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.forward(arch, x)?.1.block_outputs)
    }

    /// Loss and full-size gradients (zero outside the slice).
    pub fn loss_and_grads(
        &self,
        arch: &Architecture,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, Vec<Tensor>)> {
        let sub = self.gather(arch)?;
        let (logits, cache) = forward(&sub, x, self.space.seq_len)?;
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric { epoch: self.epoch, message: format!("loss is {loss}") });
        }
        let grads = backward(&sub, &cache, &dlogits)?;
        let mut compact = grads.tensors().into_iter();
        let full = self
            .params
            .iter()
            .zip(&self.slice(arch).regions)
            .map(|(p, r)| {
                let mut g = Tensor::zeros(p.value.shape());
                if !r.is_empty() {
                    g.scatter(compact.next().expect("grad count"))?;
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        if full.iter().any(|g| !g.all_finite()) {
            return Err(Error::Numeric { epoch: self.epoch, message: "non-finite gradient".into() });
        }
        Ok((loss, full))
    }

    /// One AdamW step on the subnet `arch`. Only entries inside its slice
    /// (and outside `frozen`, when given) change; moments likewise.
    pub fn train_step(
        &mut self,
        arch: &Architecture,
        x: &Tensor,
        labels: &[usize],
        opt: &AdamWConfig,
        frozen: Option<&SliceMap>,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(arch, x, labels)?;
        let map = self.slice(arch);
        let step = self.step + 1;
        for (i, (p, g)) in self.params.iter_mut().zip(&grads).enumerate() {
            if map.regions[i].is_empty() {
                continue;
            }
            let mask = UpdateMask {
                active: map.regions[i].clone(),
                frozen: frozen.map(|f| f.regions[i].clone()),
            };
            let decay = p.kind == ParamKind::Weight;
            adamw_step(&mut p.value, g, &mut p.m, &mut p.v, step, opt, decay, Some(&mask))?;
        }
        self.step = step;
        Ok(loss)
    }

    /// Top-1 accuracy and mean loss over `data` in index order. Per-record
    /// results do not depend on `batch_size`.
    pub fn evaluate(&self, arch: &Architecture, data: &Dataset, batch_size: usize) -> Result<EvalResult> {
        if data.is_empty() {
            return Err(Error::Input("cannot evaluate on an empty dataset".into()));
        }
        let sub = self.gather(arch)?;
        let batch_size = batch_size.max(1);
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(batch_size) {
            let (x, labels) = data.batch(chunk);
            let (logits, _) = forward(&sub, &x, data.seq_len())?;
            for (nll, (row, &y)) in kernel::nll_per_row(&logits, &labels)?
                .into_iter()
                .zip(logits.data().chunks(logits.cols()).zip(&labels))
            {
                loss_sum += nll;
                if argmax(row) == y {
                    correct += 1;
                }
            }
        }
        Ok(EvalResult { accuracy: correct as f64 / data.len() as f64, loss: loss_sum / data.len() as f64 })
    }

    /// Standalone weights for `target` built from the trained `source` slice:
    /// the source region is copied bit-exactly, the rest of the target slice
    /// is filled per `mode`, everything else is zero.
    pub fn grow(
        &self,
        source: &Architecture,
        target: &Architecture,
        rng: &mut SeededRng,
        mode: InitMode,
    ) -> Result<SupernetWeights> {
        self.space.check_arch(source)?;
        self.space.check_arch(target)?;
        if !source.dominated_by(target) {
            return Err(Error::Input(format!("grow target {target} does not dominate {source}")));
        }
        let (src, tgt) = (self.slice(source), self.slice(target));
        let params = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let shape = p.value.shape().to_vec();
                let mut value = Tensor::zeros(&shape);
                let fill: Vec<f64> = (0..p.value.len()).map(|_| fill_value(p.kind, mode, rng)).collect();
                let out = value.data_mut();
                tgt.regions[i].for_each_offset(&shape, |off| {
                    out[off] = if src.covers(i, &shape, off) { p.value.data()[off] } else { fill[off] };
                });
                fresh_param(p, value)
            })
            .collect();
        Ok(SupernetWeights { space: self.space.clone(), params, step: 0, epoch: 0 })
    }

    /// Standalone weights for a dominated `target`: its prefix slice of the
    /// trained `source`, everything else zero.
    pub fn crop(&self, source: &Architecture, target: &Architecture) -> Result<SupernetWeights> {
        self.space.check_arch(source)?;
        self.space.check_arch(target)?;
        if !target.dominated_by(source) {
            return Err(Error::Input(format!("crop target {target} is not dominated by {source}")));
        }
        let tgt = self.slice(target);
        let params = self
            .params
            .iter()
            .zip(&tgt.regions)
            .map(|(p, r)| {
                let shape = p.value.shape().to_vec();
                let mut value = Tensor::zeros(&shape);
                let out = value.data_mut();
                r.for_each_offset(&shape, |off| out[off] = p.value.data()[off]);
                fresh_param(p, value)
            })
            .collect();
        Ok(SupernetWeights { space: self.space.clone(), params, step: 0, epoch: 0 })
    }
}

fn fresh_param(template: &ParamTensor, value: Tensor) -> ParamTensor {
    let shape = value.shape().to_vec();
    ParamTensor {
        name: template.name.clone(),
        kind: template.kind,
        value,
        m: Tensor::zeros(&shape),
        v: Tensor::zeros(&shape),
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
