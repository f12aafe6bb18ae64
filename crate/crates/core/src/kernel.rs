//! Dense 2-D kernels with hand-written reverse-mode rules.
//!
//! Every forward function returns whatever the matching `*_backward` needs;
//! nothing is recorded on a tape. All kernels are pure and deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Region, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn expect_rank2(t: &Tensor, what: &str) -> Result<()> {
    if t.rank() != 2 {
        return Err(dim_err(format!("{what} must be rank 2, got {:?}", t.shape())));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank2(a, "lhs")?;
    expect_rank2(b, "rhs")?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(dim_err(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::matrix(n, m, out).expect("transpose shape")
}

/// Returns `(dA, dB)` for `Y = A B` given `dY`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k || dy.rows() != m || dy.cols() != n {
        return Err(dim_err(format!(
            "matmul backward {:?} x {:?} with upstream {:?}",
            a.shape(),
            b.shape(),
            dy.shape()
        )));
    }
    let (ad, bd, gd) = (a.data(), b.data(), dy.data());
    // dA = dY B^T: row dot products.
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let g = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] = g.iter().zip(&bd[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    // dB = A^T dY: accumulate scaled upstream rows.
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let g = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, gv) in db[p * n..(p + 1) * n].iter_mut().zip(g) {
                *o += aip * gv;
            }
        }
    }
    Ok((Tensor::matrix(m, k, da)?, Tensor::matrix(k, n, db)?))
}

/// `x w + b` with `b` broadcast over rows.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    let n = y.cols();
    if b.len() != n {
        return Err(dim_err(format!("bias of {} for {} columns", b.len(), n)));
    }
    for row in y.data_mut().chunks_mut(n) {
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)` for [`linear`].
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (dx, dw) = matmul_backward(x, w, dy)?;
    Ok((dx, dw, column_sums(dy)))
}

pub fn column_sums(t: &Tensor) -> Tensor {
    let n = t.cols();
    let mut out = vec![0.0; n];
    for row in t.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::vector(out)
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Row-wise layer normalization followed by the affine map `gamma * xhat + beta`.
pub fn layernorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    expect_rank2(x, "layernorm input")?;
    let d = x.cols();
    if d == 0 {
        return Err(dim_err("layernorm over zero features"));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(dim_err(format!(
            "layernorm affine {}/{} for width {d}",
            gamma.len(),
            beta.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Input(format!("layernorm eps must be positive, got {eps}")));
    }
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.rows());
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    let rows = x.rows();
    Ok((Tensor::matrix(rows, d, y)?, LayerNormCache { xhat: Tensor::matrix(rows, d, xhat)?, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layernorm_backward(
    dy: &Tensor,
    gamma: &Tensor,
    cache: &LayerNormCache,
) -> (Tensor, Tensor, Tensor) {
    let d = dy.cols();
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for (r, (dyr, xr)) in dy.data().chunks(d).zip(cache.xhat.data().chunks(d)).enumerate() {
        let mut sum = 0.0;
        let mut sum_x = 0.0;
        for c in 0..d {
            dgamma[c] += dyr[c] * xr[c];
            dbeta[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma.data()[c];
            sum += dxhat[c];
            sum_x += dxhat[c] * xr[c];
        }
        let scale = cache.inv_std[r] / d as f64;
        for c in 0..d {
            dx[r * d + c] = scale * (d as f64 * dxhat[c] - sum - xr[c] * sum_x);
        }
    }
    (
        Tensor::matrix(dy.rows(), d, dx).expect("layernorm dx"),
        Tensor::vector(dgamma),
        Tensor::vector(dbeta),
    )
}

/// GELU, tanh form: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v)).tanh()))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("gelu shape")
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let t = (SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v)).tanh();
            let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * v * v);
            g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("gelu grad shape")
}

/// Projections of one multi-head self-attention layer. Q/K/V columns are
/// grouped head-major: head `j` owns columns `j*dh..(j+1)*dh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionWeights {
    /// Bias-free layer (all biases zero).
    pub fn without_bias(wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor) -> Self {
        let inner = wq.cols();
        let e = wo.cols();
        Self {
            bq: Tensor::zeros(&[inner]),
            bk: Tensor::zeros(&[inner]),
            bv: Tensor::zeros(&[inner]),
            bo: Tensor::zeros(&[e]),
            wq,
            wk,
            wv,
            wo,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Vec<f64>>,
    ctx: Tensor,
    heads: usize,
}

/// Scaled dot-product multi-head self-attention over one sequence `x` (L x e).
/// The residual connection is left to the caller.
pub fn attention(
    x: &Tensor,
    w: &AttentionWeights,
    heads: usize,
) -> Result<(Tensor, AttentionCache)> {
    expect_rank2(x, "attention input")?;
    if heads == 0 {
        return Err(dim_err("attention needs at least one head"));
    }
    let inner = w.wq.cols();
    if inner == 0 || inner % heads != 0 {
        return Err(dim_err(format!("{inner} projection columns for {heads} heads")));
    }
    for (name, t) in [("wk", &w.wk), ("wv", &w.wv)] {
        if t.shape() != w.wq.shape() {
            return Err(dim_err(format!("{name} {:?} vs wq {:?}", t.shape(), w.wq.shape())));
        }
    }
    if w.wo.rows() != inner || w.wo.cols() != x.cols() {
        return Err(dim_err(format!("wo {:?} for inner {inner}, width {}", w.wo.shape(), x.cols())));
    }
    let dh = inner / heads;
    let l = x.rows();
    let q = linear(x, &w.wq, &w.bq)?;
    let k = linear(x, &w.wk, &w.bk)?;
    let v = linear(x, &w.wv, &w.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = vec![0.0; l * inner];
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let c0 = h * dh;
        let mut p = vec![0.0; l * l];
        for i in 0..l {
            let qi = &q.row(i)[c0..c0 + dh];
            let mut max = f64::NEG_INFINITY;
            for j in 0..l {
                let kj = &k.row(j)[c0..c0 + dh];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                p[i * l + j] = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for j in 0..l {
                let e = (p[i * l + j] - max).exp();
                p[i * l + j] = e;
                z += e;
            }
            for j in 0..l {
                p[i * l + j] /= z;
            }
            let out = &mut ctx[i * inner + c0..i * inner + c0 + dh];
            for j in 0..l {
                let pij = p[i * l + j];
                for (o, vv) in out.iter_mut().zip(&v.row(j)[c0..c0 + dh]) {
                    *o += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    let ctx = Tensor::matrix(l, inner, ctx)?;
    let y = linear(&ctx, &w.wo, &w.bo)?;
    Ok((y, AttentionCache { x: x.clone(), q, k, v, probs, ctx, heads }))
}

/// Returns `dx` and the weight gradients (same layout as the weights).
pub fn attention_backward(
    w: &AttentionWeights,
    cache: &AttentionCache,
    dy: &Tensor,
) -> Result<(Tensor, AttentionWeights)> {
    let (dctx, dwo, dbo) = linear_backward(&cache.ctx, &w.wo, dy)?;
    let l = cache.x.rows();
    let inner = w.wq.cols();
    let dh = inner / cache.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; l * inner];
    let mut dk = vec![0.0; l * inner];
    let mut dv = vec![0.0; l * inner];
    for h in 0..cache.heads {
        let c0 = h * dh;
        let p = &cache.probs[h];
        let mut ds = vec![0.0; l * l];
        for i in 0..l {
            let dci = &dctx.row(i)[c0..c0 + dh];
            let mut dp = vec![0.0; l];
            for j in 0..l {
                let vj = &cache.v.row(j)[c0..c0 + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                let pij = p[i * l + j];
                for t in 0..dh {
                    dv[j * inner + c0 + t] += pij * dci[t];
                }
            }
            let dot: f64 = (0..l).map(|j| dp[j] * p[i * l + j]).sum();
            for j in 0..l {
                ds[i * l + j] = p[i * l + j] * (dp[j] - dot) * scale;
            }
        }
        for i in 0..l {
            for j in 0..l {
                let s = ds[i * l + j];
                if s == 0.0 {
                    continue;
                }
                for t in 0..dh {
                    dq[i * inner + c0 + t] += s * cache.k.at(j, c0 + t);
                    dk[j * inner + c0 + t] += s * cache.q.at(i, c0 + t);
                }
            }
        }
    }
    let dq = Tensor::matrix(l, inner, dq)?;
    let dk = Tensor::matrix(l, inner, dk)?;
    let dv = Tensor::matrix(l, inner, dv)?;
    let (dx_q, dwq, dbq) = linear_backward(&cache.x, &w.wq, &dq)?;
    let (dx_k, dwk, dbk) = linear_backward(&cache.x, &w.wk, &dk)?;
    let (dx_v, dwv, dbv) = linear_backward(&cache.x, &w.wv, &dv)?;
    let dx_data = dx_q
        .data()
        .iter()
        .zip(dx_k.data())
        .zip(dx_v.data())
        .map(|((a, b), c)| a + b + c)
        .collect();
    let dx = Tensor::from_vec(cache.x.shape(), dx_data)?;
    Ok((
        dx,
        AttentionWeights { wq: dwq, bq: dbq, wk: dwk, bk: dbk, wv: dwv, bv: dbv, wo: dwo, bo: dbo },
    ))
}

/// Per-row negative log-likelihoods under a stable log-softmax.
pub fn nll_per_row(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    expect_rank2(logits, "logits")?;
    let c = logits.cols();
    if labels.len() != logits.rows() {
        return Err(dim_err(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    labels
        .iter()
        .zip(logits.data().chunks(c))
        .map(|(&y, row)| {
            if y >= c {
                return Err(Error::Input(format!("label {y} outside 0..{c}")));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Ok(lse - row[y])
        })
        .collect()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let nll = nll_per_row(logits, labels)?;
    let (b, c) = (logits.rows(), logits.cols());
    let loss = nll.iter().sum::<f64>() / b as f64;
    let mut grad = vec![0.0; b * c];
    for (r, row) in logits.data().chunks(c).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..c {
            grad[r * c + j] = (row[j] - max).exp() / z / b as f64;
        }
        grad[r * c + labels[r]] -= 1.0 / b as f64;
    }
    Ok((loss, Tensor::matrix(b, c, grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// Entries updated by a masked optimizer step: inside `active` and not
/// inside `frozen`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMask {
    pub active: Region,
    pub frozen: Option<Region>,
}

impl UpdateMask {
    pub fn active(region: Region) -> Self {
        Self { active: region, frozen: None }
    }
}

/// One decoupled-weight-decay Adam step (`step` is 1-based, used for bias
/// correction). With a mask, entries outside it keep their parameter and
/// both moments bit-for-bit.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    cfg: &AdamWConfig,
    decay: bool,
    mask: Option<&UpdateMask>,
) -> Result<()> {
    for (name, t) in [("grad", grad), ("m", &*m), ("v", &*v)] {
        if t.shape() != param.shape() {
            return Err(dim_err(format!("{name} {:?} vs param {:?}", t.shape(), param.shape())));
        }
    }
    if step == 0 {
        return Err(Error::Input("adamw step counter is 1-based".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    let shape = param.shape().to_vec();
    let p = param.data_mut();
    let (md, vd, g) = (m.data_mut(), v.data_mut(), grad.data());
    let mut update = |i: usize| {
        md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
        vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = md[i] / bc1;
        let vhat = vd[i] / bc2;
        p[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + wd * p[i]);
    };
    match mask {
        None => (0..shape.iter().product()).for_each(update),
        Some(mask) => {
            let active = Region::new(
                mask.active.extents.iter().zip(&shape).map(|(a, s)| (*a).min(*s)).collect(),
            );
            match &mask.frozen {
                None => active.for_each_offset(&shape, update),
                Some(frozen) => active.for_each_offset(&shape, |off| {
                    if !frozen.contains(&Region::unravel(&shape, off)) {
                        update(off)
                    }
                }),
            }
        }
    }
    Ok(())
}
