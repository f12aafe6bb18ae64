#![allow(dead_code)]

use growtas::data::Dataset;
use growtas::space::hidden_dim;
use growtas::supernet::LN_EPS;
use growtas::task::{generate_task, SyntheticTask, TaskParams};
use growtas::{Architecture, SearchSpace, SeededRng, StageCap, SubspacePartition, SupernetWeights, Tensor};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central difference of `f` at entry `idx` of input `which`.
pub fn central_difference(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], which: usize, idx: usize, h: f64) -> f64 {
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[idx] += h;
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Worst relative error over `probes` random entries of `inputs`.
pub fn probe_worst(
    f: &dyn Fn(&[Tensor]) -> f64,
    grads: &[Tensor],
    inputs: &[Tensor],
    probes: usize,
    rng: &mut SeededRng,
) -> f64 {
    (0..probes)
        .map(|_| {
            let which = rng.below(inputs.len());
            let idx = rng.below(inputs[which].len());
            rel_err(grads[which].data()[idx], central_difference(f, inputs, which, idx, 1e-5))
        })
        .fold(0.0, f64::max)
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Upper-tail probability of the chi-square statistic of `counts` against
/// a uniform expectation.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub fn lab_partition(space: &SearchSpace) -> SubspacePartition {
    SubspacePartition::new(
        space,
        vec![StageCap { max_embed: 12, max_mlp_ratio: 1.5 }, StageCap { max_embed: 16, max_mlp_ratio: 2.0 }],
    )
    .unwrap()
}

pub fn toy_partition(space: &SearchSpace) -> SubspacePartition {
    SubspacePartition::new(
        space,
        vec![StageCap { max_embed: 8, max_mlp_ratio: 1.0 }, StageCap { max_embed: 16, max_mlp_ratio: 2.0 }],
    )
    .unwrap()
}

pub fn lab_task() -> TaskParams {
    TaskParams {
        seq_len: 8,
        input_dim: 8,
        num_classes: 4,
        components: 2,
        separation: 2.0,
        noise: 1.0,
        symmetric: true,
        train_size: 1024,
        val_size: 512,
        test_size: 2048,
        seed: 1,
    }
}

pub fn small_task(train: usize, val: usize, test: usize) -> SyntheticTask {
    generate_task(&TaskParams { train_size: train, val_size: val, test_size: test, ..lab_task() }).unwrap()
}

pub fn first_records(data: &Dataset, n: usize) -> (Tensor, Vec<usize>) {
    data.batch(&(0..n.min(data.len())).collect::<Vec<_>>())
}

fn store<'a>(w: &'a SupernetWeights, name: &str) -> &'a Tensor {
    &w.params().iter().find(|p| p.name == name).unwrap_or_else(|| panic!("no tensor {name}")).value
}

/// `y[t][j] = b[j] + sum_i x[t][i] W[i][j]` over the leading `rows x cols`
/// corner of a stored matrix.
fn naive_linear(x: &[Vec<f64>], w: &Tensor, b: &Tensor, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let stride = w.shape()[1];
    x.iter()
        .map(|xt| {
            (0..cols)
                .map(|j| {
                    let mut s = b.data()[j];
                    for i in 0..rows {
                        s += xt[i] * w.data()[i * stride + j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn naive_layernorm(x: &[Vec<f64>], g: &Tensor, b: &Tensor, e: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|xt| {
            let mean = xt.iter().sum::<f64>() / e as f64;
            let var = xt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            (0..e).map(|j| (xt[j] - mean) * inv * g.data()[j] + b.data()[j]).collect()
        })
        .collect()
}

fn naive_gelu(v: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
}

/// Logits of `arch` computed one sequence at a time with scalar loops,
/// reading the store directly by tensor name.
pub fn naive_logits(w: &SupernetWeights, arch: &Architecture, x: &Tensor) -> Vec<Vec<f64>> {
    let space = w.space();
    let (l, d, e, c) = (space.seq_len, space.input_dim, arch.embed_dim, space.num_classes);
    let dh = space.head_dim;
    let batch = x.rows() / l;
    let mut out = Vec::with_capacity(batch);
    for s in 0..batch {
        let tokens: Vec<Vec<f64>> = (0..l).map(|t| x.row(s * l + t).to_vec()).collect();
        let mut h = naive_linear(&tokens, store(w, "embed.w"), store(w, "embed.b"), d, e);
        for b in 0..arch.depth {
            let p = |n: &str| store(w, &format!("blocks.{b}.{n}"));
            let heads = arch.head_nums[b];
            let inner = heads * dh;
            let a = naive_layernorm(&h, p("ln1.g"), p("ln1.b"), e);
            let q = naive_linear(&a, p("attn.wq"), p("attn.bq"), e, inner);
            let k = naive_linear(&a, p("attn.wk"), p("attn.bk"), e, inner);
            let v = naive_linear(&a, p("attn.wv"), p("attn.bv"), e, inner);
            let mut ctx = vec![vec![0.0; inner]; l];
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                for i in 0..l {
                    let scores: Vec<f64> = (0..l)
                        .map(|j| cols.clone().map(|cc| q[i][cc] * k[j][cc]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|z| (z - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    for cc in cols.clone() {
                        ctx[i][cc] = (0..l).map(|j| exps[j] / total * v[j][cc]).sum();
                    }
                }
            }
            let o = naive_linear(&ctx, p("attn.wo"), p("attn.bo"), inner, e);
            for t in 0..l {
                for j in 0..e {
                    h[t][j] += o[t][j];
                }
            }
            let m = hidden_dim(e, arch.mlp_ratios[b]);
            let cn = naive_layernorm(&h, p("ln2.g"), p("ln2.b"), e);
            let u: Vec<Vec<f64>> = naive_linear(&cn, p("mlp.fc1.w"), p("mlp.fc1.b"), e, m)
                .into_iter()
                .map(|row| row.into_iter().map(naive_gelu).collect())
                .collect();
            let z = naive_linear(&u, p("mlp.fc2.w"), p("mlp.fc2.b"), m, e);
            for t in 0..l {
                for j in 0..e {
                    h[t][j] += z[t][j];
                }
            }
        }
        let n = naive_layernorm(&h, store(w, "norm.g"), store(w, "norm.b"), e);
        let pooled: Vec<f64> = (0..e).map(|j| n.iter().map(|row| row[j]).sum::<f64>() / l as f64).collect();
        out.extend(naive_linear(&[pooled], store(w, "head.w"), store(w, "head.b"), e, c));
    }
    out
}

/// A store with every gain, bias and weight randomised at unit-ish scale,
/// so that gradients through every tensor are non-trivial.
pub fn perturbed_store(space: &SearchSpace, seed: u64, scale: f64) -> SupernetWeights {
    let mut rng = SeededRng::new(seed);
    let mut w = SupernetWeights::init(space, &mut rng, 0.3).unwrap();
    for p in w.params_mut() {
        for v in p.value.data_mut() {
            *v += scale * rng.normal();
        }
    }
    w
}

/// Worst relative error of every kernel's analytic gradient against
/// central differences of `sum(y * r)` for a random `r`, with `probes`
/// probes per kernel.
pub fn kernel_gradient_errors(probes: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use growtas::kernel::*;
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();

    let inputs = vec![random_tensor(&[5, 4], &mut rng), random_tensor(&[4, 3], &mut rng)];
    let r = random_tensor(&[5, 3], &mut rng);
    let (da, db) = matmul_backward(&inputs[0], &inputs[1], &r).unwrap();
    let f = |t: &[Tensor]| dot(&matmul(&t[0], &t[1]).unwrap(), &r);
    out.push(("matmul", probe_worst(&f, &[da, db], &inputs, probes, &mut rng)));

    let inputs = vec![random_tensor(&[6, 4], &mut rng), random_tensor(&[4, 5], &mut rng), random_tensor(&[5], &mut rng)];
    let r = random_tensor(&[6, 5], &mut rng);
    let (dx, dw, db) = linear_backward(&inputs[0], &inputs[1], &r).unwrap();
    let f = |t: &[Tensor]| dot(&linear(&t[0], &t[1], &t[2]).unwrap(), &r);
    out.push(("linear", probe_worst(&f, &[dx, dw, db], &inputs, probes, &mut rng)));

    let inputs = vec![random_tensor(&[5, 6], &mut rng), random_tensor(&[6], &mut rng), random_tensor(&[6], &mut rng)];
    let r = random_tensor(&[5, 6], &mut rng);
    let (_, cache) = layernorm(&inputs[0], &inputs[1], &inputs[2], LN_EPS).unwrap();
    let (dx, dg, db) = layernorm_backward(&r, &inputs[1], &cache);
    let f = |t: &[Tensor]| dot(&layernorm(&t[0], &t[1], &t[2], LN_EPS).unwrap().0, &r);
    out.push(("layernorm", probe_worst(&f, &[dx, dg, db], &inputs, probes, &mut rng)));

    let inputs = vec![random_tensor(&[7, 5], &mut rng)];
    let r = random_tensor(&[7, 5], &mut rng);
    let dx = gelu_backward(&inputs[0], &r);
    let f = |t: &[Tensor]| dot(&gelu(&t[0]), &r);
    out.push(("gelu", probe_worst(&f, &[dx], &inputs, probes, &mut rng)));

    let (l, e, heads, dh) = (5, 6, 2, 3);
    let inner = heads * dh;
    let mut inputs = vec![random_tensor(&[l, e], &mut rng)];
    for shape in [vec![e, inner], vec![inner], vec![e, inner], vec![inner], vec![e, inner], vec![inner], vec![inner, e], vec![e]] {
        inputs.push(random_tensor(&shape, &mut rng));
    }
    let weights = |t: &[Tensor]| AttentionWeights {
        wq: t[1].clone(),
        bq: t[2].clone(),
        wk: t[3].clone(),
        bk: t[4].clone(),
        wv: t[5].clone(),
        bv: t[6].clone(),
        wo: t[7].clone(),
        bo: t[8].clone(),
    };
    let r = random_tensor(&[l, e], &mut rng);
    let w = weights(&inputs);
    let (_, cache) = attention(&inputs[0], &w, heads).unwrap();
    let (dx, dw) = attention_backward(&w, &cache, &r).unwrap();
    let mut grads = vec![dx];
    grads.extend(dw.tensors().into_iter().cloned());
    let f = |t: &[Tensor]| dot(&attention(&t[0], &weights(t), heads).unwrap().0, &r);
    out.push(("attention", probe_worst(&f, &grads, &inputs, probes, &mut rng)));

    let inputs = vec![random_tensor(&[6, 4], &mut rng)];
    let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
    let (_, dlogits) = cross_entropy(&inputs[0], &labels).unwrap();
    let f = |t: &[Tensor]| cross_entropy(&t[0], &labels).unwrap().0;
    out.push(("cross_entropy", probe_worst(&f, &[dlogits], &inputs, probes, &mut rng)));
    out
}

/// Worst relative error of the end-to-end subnet loss gradient over
/// `probes` random entries inside the slice of `arch`.
pub fn subnet_gradient_error(w: &SupernetWeights, arch: &Architecture, x: &Tensor, labels: &[usize], probes: usize, rng: &mut SeededRng) -> f64 {
    let (_, grads) = w.loss_and_grads(arch, x, labels).unwrap();
    let map = w.slice(arch);
    let active: Vec<usize> = (0..map.regions.len()).filter(|&i| !map.regions[i].is_empty()).collect();
    let h = 1e-5;
    let loss_at = |i: usize, off: usize, delta: f64| {
        let mut moved = w.clone();
        moved.params_mut()[i].value.data_mut()[off] += delta;
        moved.loss_and_grads(arch, x, labels).unwrap().0
    };
    (0..probes)
        .map(|_| {
            let i = active[rng.below(active.len())];
            let extents = &map.regions[i].extents;
            let shape = w.params()[i].value.shape();
            let idx: Vec<usize> = extents.iter().map(|&n| rng.below(n)).collect();
            let off = idx.iter().zip(shape).fold(0, |acc, (k, s)| acc * s + k);
            let numeric = (loss_at(i, off, h) - loss_at(i, off, -h)) / (2.0 * h);
            rel_err(grads[i].data()[off], numeric)
        })
        .fold(0.0, f64::max)
}

/// Depth-varied toy space: embed {8,16}, ratio {1,2}, heads {1,2},
/// depth {2,3}; 160 architectures.
pub fn oracle_space() -> SearchSpace {
    SearchSpace { depth: growtas::AttributeGrid { min: 2.0, max: 3.0, step: 1.0 }, ..SearchSpace::toy() }
}

/// Accuracy is the parameter count normalised by the largest one.
pub fn param_surrogate(space: &SearchSpace) -> impl Fn(&Architecture) -> growtas::Result<growtas::EvalResult> + Sync + '_ {
    let max = space.param_count(&space.max_arch()) as f64;
    move |a: &Architecture| {
        let accuracy = space.param_count(a) as f64 / max;
        Ok(growtas::EvalResult { accuracy, loss: 1.0 - accuracy })
    }
}

/// Best feasible architecture under `rank`, by enumeration.
pub fn exhaustive_best(
    space: &SearchSpace,
    eval: &dyn Fn(&Architecture) -> growtas::Result<growtas::EvalResult>,
    max_params: u64,
) -> Architecture {
    use growtas::evo::{rank, EvalRecord};
    space
        .enumerate(1 << 20)
        .unwrap()
        .filter(|a| space.param_count(a) <= max_params)
        .map(|a| {
            let r = eval(&a).unwrap();
            EvalRecord { params: space.param_count(&a), arch: a, accuracy: r.accuracy, loss: r.loss, generation: 0 }
        })
        .min_by(rank)
        .expect("feasible architecture")
        .arch
}

/// Median parameter count of the space, used as a binding constraint.
pub fn median_params(space: &SearchSpace) -> u64 {
    let mut p: Vec<u64> = space.enumerate(1 << 20).unwrap().map(|a| space.param_count(&a)).collect();
    p.sort_unstable();
    p[p.len() / 2]
}

pub fn lab_train_config() -> growtas::scheduler::TrainConfig {
    growtas::scheduler::TrainConfig {
        optim: growtas::kernel::AdamWConfig { lr: 3e-3, ..Default::default() },
        min_lr: 6e-5,
        batch_size: 32,
    }
}

/// Toy-space progressive and uniform stores trained from one init.
pub fn toy_pair(task: &SyntheticTask, epochs: usize, t1: usize, seed: u64) -> (SupernetWeights, SupernetWeights) {
    use growtas::experiments::{train_pair, StudySettings};
    let space = SearchSpace::toy();
    let settings = StudySettings { train: lab_train_config(), init_scale: 0.02, epochs, eval_batch: 256 };
    let schedule = growtas::scheduler::Schedule::two_stage(t1, epochs).unwrap();
    train_pair(&space, &toy_partition(&space), &schedule, task, &settings, seed).unwrap()
}

/// Mean accuracy on `data` over every member of `A_K` outside `A_1`.
pub fn mean_outside_first(w: &SupernetWeights, partition: &SubspacePartition, data: &Dataset) -> f64 {
    let archs: Vec<Architecture> =
        w.space().enumerate(1 << 20).unwrap().filter(|a| !partition.member(a, 1)).collect();
    archs.iter().map(|a| w.evaluate(a, data, 256).unwrap().accuracy).sum::<f64>() / archs.len() as f64
}
