#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use swd_core::autodiff::{BatchNormMode, Graph, Tensor, Var};
use swd_core::model::{BoundParams, Mode, ModelParams, UNetConfig};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Standard normal values kept at least `gap` away from zero (no ReLU kink
/// within reach of the finite-difference step).
pub fn randn_away_from_zero(rng: &mut ChaCha8Rng, shape: [usize; 3], gap: f64) -> Tensor<f64> {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = gap.copysign(*v) + *v;
        }
    }
    t
}

/// Relative error `|a - n| / max(|a|, |n|)` in the Euclidean norm; zero
/// when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let d: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let s = na.max(nn);
    if s > 0.0 { d / s } else { d }
}

/// Builds `f` on fresh leaves holding `inputs` and returns `sum(f(x) * proj)`
/// along with each input's analytic gradient and the graph's activation
/// pattern, where `proj` is a fixed random projection of the output
/// (identity for scalar outputs).
fn eval<F>(inputs: &[Tensor<f64>], f: &F, proj_seed: u64) -> (f64, Vec<Tensor<f64>>, Vec<bool>)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let shape = g.value(out).shape();
    let proj = if shape == [1, 1, 1] { Tensor::scalar(1.0) } else { randn(&mut rng(proj_seed), shape) };
    let value = g.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
    let mut grads = g.backward_with(out, proj);
    let gs = vars.iter().zip(inputs).map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
    (value, gs, g.activation_pattern())
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    /// Relative error of the whole gradient (all inputs concatenated) over
    /// the checked coordinates.
    pub rel_err: f64,
    /// Coordinates whose probe crossed a ReLU or max-pool kink.
    pub skipped: usize,
    pub total: usize,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck { rel_err: self.rel_err.max(o.rel_err), skipped: self.skipped + o.skipped, total: self.total + o.total }
    }
}

/// Backprop against the fourth-order central difference at step `FD_STEP`
/// over every input coordinate. A coordinate whose probes switch any ReLU
/// sign or max-pool winner has no derivative inside the stencil and is left
/// out of both vectors.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let proj_seed = 0xF00D;
    let (_, analytic, pattern) = eval(inputs, &f, proj_seed);
    let mut out = GradCheck::default();
    let mut a = Vec::new();
    let mut numeric = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut probe = inputs.to_vec();
            let mut at = |offset: f64| {
                probe[k].data_mut()[j] = input.data()[j] + offset;
                eval(&probe, &f, proj_seed)
            };
            let h = FD_STEP;
            let probes = [at(h), at(-h), at(2.0 * h), at(-2.0 * h)];
            out.total += 1;
            if probes.iter().any(|p| p.2 != pattern) {
                out.skipped += 1;
                continue;
            }
            let [f1, fm1, f2, fm2] = probes.map(|p| p.0);
            a.push(analytic[k].data()[j]);
            numeric.push((8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h));
        }
    }
    out.rel_err = rel_err(&a, &numeric);
    out
}

pub const GRADIENT_OPS: [&str; 9] = ["conv1d", "maxpool2", "upsample2", "concat", "relu", "sigmoid", "batchnorm", "dice_loss", "model"];

pub fn tiny_model() -> UNetConfig {
    UNetConfig { depth: 2, base_channels: 2, kernel_size: 3, convs_per_block: 2, norm: true, input_length: 8 }
}

/// Finite-difference check of op `name` for one seed.
pub fn gradient_case(name: &str, seed: u64) -> GradCheck {
    let r = &mut rng(seed);
    match name {
        "conv1d" => {
            let inputs = [randn(r, [2, 3, 9]), randn(r, [4, 3, 5]), randn(r, [1, 4, 1])];
            check_gradients(&inputs, |g, v| g.conv1d(v[0], v[1], Some(v[2])).unwrap())
        }
        "maxpool2" => {
            // Distinct pair members so the argmax cannot flip under the probe.
            let mut x = randn(r, [2, 2, 8]);
            for pair in x.data_mut().chunks_mut(2) {
                if (pair[0] - pair[1]).abs() < 1e-2 {
                    pair[1] = pair[0] + 0.1;
                }
            }
            check_gradients(&[x], |g, v| g.maxpool2(v[0]).unwrap())
        }
        "upsample2" => check_gradients(&[randn(r, [2, 3, 5])], |g, v| g.upsample2(v[0])),
        "concat" => check_gradients(&[randn(r, [2, 2, 6]), randn(r, [2, 3, 6])], |g, v| g.concat(v[0], v[1]).unwrap()),
        "relu" => check_gradients(&[randn_away_from_zero(r, [2, 3, 7], 1e-3)], |g, v| g.relu(v[0])),
        "sigmoid" => check_gradients(&[randn(r, [2, 3, 7])], |g, v| g.sigmoid(v[0])),
        "batchnorm" => {
            let inputs = [randn(r, [3, 2, 6]), randn(r, [1, 2, 1]), randn(r, [1, 2, 1])];
            let mean = [0.3, -0.2];
            let var = [1.5, 0.7];
            let train = check_gradients(&inputs, |g, v| g.batchnorm(v[0], v[1], v[2], BatchNormMode::Train { eps: 1e-5 }).unwrap().0);
            let eval = check_gradients(&inputs, |g, v| {
                g.batchnorm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var, eps: 1e-5 }).unwrap().0
            });
            train.merge(eval)
        }
        "dice_loss" => {
            let p = Tensor::from_vec([2, 1, 10], (0..20).map(|_| r.random_range(0.05..0.95)).collect()).unwrap();
            let target = Tensor::from_vec([2, 1, 10], (0..20).map(|_| f64::from(u8::from(r.random::<bool>()))).collect()).unwrap();
            check_gradients(&[p], |g, v| g.dice_loss(v[0], &target, 1.0).unwrap())
        }
        "model" => {
            let cfg = tiny_model();
            let params = ModelParams::<f64>::init(&cfg, seed).unwrap();
            let x = randn(r, [2, 1, cfg.input_length]);
            let target = Tensor::from_vec([2, 1, 8], (0..16).map(|i| f64::from(u8::from(i % 5 < 2))).collect()).unwrap();
            let mut inputs = vec![x];
            inputs.extend(params.tensors().iter().cloned());
            check_gradients(&inputs, |g, v| {
                let bound = BoundParams { vars: v[1..].to_vec() };
                let (probs, _) = params.forward_graph(g, &bound, v[0], Mode::Train).unwrap();
                g.dice_loss(probs, &target, 1.0).unwrap()
            })
        }
        other => panic!("unknown op {other}"),
    }
}
