//! Central-difference gradient checks of every differentiable graph op in
//! f64.
//!
//! Each op is wrapped as `sum(op(inputs) * R)` with a fixed random `R`, the
//! analytic gradient of every input is compared element-wise against
//! `(f(x + h) - f(x - h)) / 2h` with `h = 1e-5`, and the relative error
//! `|a - n| / max(|a|, |n|, 1e-3)` must stay below `1e-4`. Inputs that feed a
//! kink (ReLU, leaky ReLU, max-pool ties) are kept at least `1e-3` away from
//! it so the difference quotient never straddles one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scoped_dnas::ops::{Activation, ConvAlgorithm, NormMode, PoolKind, RunningStats};
use scoped_dnas::{Graph, Result, Tensor, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const FLOOR: f64 = 1e-3;
pub const SEEDS: u64 = 100;

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;
pub type Case = (Vec<Tensor<f64>>, Box<Build>);
pub type CaseFn = Box<dyn FnMut(&mut ChaCha8Rng, u64) -> Case>;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values in `[-3, -3 * gap] U [3 * gap, 3]`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = 3.0 * rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values spaced at least `0.01` apart (no max-pool near-ties).
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.02 - n as f64 * 0.01).collect();
    v.shuffle(rng);
    for x in &mut v {
        *x += rng.gen_range(-0.004..0.004);
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `sum(out * R)` so every op reduces to a scalar.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let r = random(&mut rng, g.shape(out));
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn evaluate(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    g.value(out).data()[0]
}

/// Worst relative error over all inputs of one case.
fn check(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).expect("leaf gradient").to_vec();
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Worst relative error over `SEEDS` seeds, or the first failing seed.
pub fn run_seeds(name: &str, case: &mut CaseFn) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, build) = case(&mut rng, seed);
        let e = check(&inputs, &*build);
        if !(e < TOL) {
            return Err(format!("{name}: seed {seed} relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

fn conv(algo: ConvAlgorithm, with_bias: bool) -> CaseFn {
    Box::new(move |rng, seed| {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=k / 2);
        let hw = rng.gen_range(k.max(3)..=6);
        let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let mut inputs = vec![random(rng, &[n, cin, hw, hw]), random(rng, &[cout, cin, k, k])];
        if with_bias {
            inputs.push(random(rng, &[cout]));
        }
        let build: Box<Build> = Box::new(move |g, v| {
            *g = std::mem::take(g).with_conv_algorithm(algo);
            let y = g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)?;
            weighted_sum(g, y, seed)
        });
        (inputs, build)
    })
}

fn activation(kind: Activation) -> CaseFn {
    Box::new(move |rng, seed| {
        let inputs = vec![away_from_zero(rng, &[2, 3, 3, 3], 1e-3)];
        let build: Box<Build> = Box::new(move |g, v| {
            let y = g.activation(v[0], kind);
            weighted_sum(g, y, seed)
        });
        (inputs, build)
    })
}

fn norm(mode: NormMode) -> CaseFn {
    Box::new(move |rng, seed| {
        let (n, c, hw) = (rng.gen_range(2..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let inputs = vec![
            random(rng, &[n, c, hw, hw]),
            Tensor::from_fn(vec![c], |_| rng.gen_range(0.5..1.5)),
            random(rng, &[c]),
        ];
        let build: Box<Build> = Box::new(move |g, v| {
            let mut stats = RunningStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            let y = g.batchnorm(v[0], v[1], v[2], &mut stats, mode, 0.1, 1e-5)?;
            weighted_sum(g, y, seed)
        });
        (inputs, build)
    })
}

fn pool(kind: PoolKind) -> CaseFn {
    Box::new(move |rng, seed| {
        let window = rng.gen_range(1..=3);
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..window);
        let hw = rng.gen_range(window.max(2)..=6);
        let inputs = vec![distinct(rng, &[2, 2, hw, hw])];
        let build: Box<Build> = Box::new(move |g, v| {
            let y = g.pool(kind, v[0], window, stride, pad)?;
            weighted_sum(g, y, seed)
        });
        (inputs, build)
    })
}

fn linear() -> CaseFn {
    Box::new(|rng, seed| {
        let (n, f, c) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let inputs = vec![random(rng, &[n, f]), random(rng, &[f, c]), random(rng, &[c])];
        let build: Box<Build> = Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, seed)
        });
        (inputs, build)
    })
}

fn cross_entropy() -> CaseFn {
    Box::new(|rng, _| {
        let (n, c) = (rng.gen_range(1..=5), rng.gen_range(2..=6));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let logits = Tensor::from_fn(vec![n, c], |_| rng.gen_range(-3.0..3.0));
        let build: Box<Build> = Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels));
        (vec![logits], build)
    })
}

fn elementwise() -> CaseFn {
    Box::new(|rng, seed| {
        let inputs = vec![random(rng, &[2, 3]), random(rng, &[2, 3]), random(rng, &[1])];
        let build: Box<Build> = Box::new(move |g, v| {
            let a = g.add(v[0], v[1])?;
            let m = g.mul(a, v[1])?;
            let s = g.scale(m, v[2])?;
            weighted_sum(g, s, seed)
        });
        (inputs, build)
    })
}

/// A node consumed along paths that rejoin: its gradient must be the sum.
fn diamond() -> CaseFn {
    Box::new(|rng, seed| {
        let inputs = vec![random(rng, &[3, 4])];
        let build: Box<Build> = Box::new(move |g, v| {
            let a = g.activation(v[0], Activation::Mish);
            let left = g.mul(a, a)?;
            let right = g.activation(a, Activation::Mish);
            let joined = g.add(left, right)?;
            let again = g.add(joined, a)?;
            weighted_sum(g, again, seed)
        });
        (inputs, build)
    })
}

/// Conv, batchnorm, activation, residual add and global pooling composed
/// like a bottleneck.
fn bottleneck() -> CaseFn {
    Box::new(|rng, seed| {
        let c = 2;
        let inputs = vec![
            random(rng, &[2, c, 4, 4]),
            random(rng, &[c, c, 1, 1]),
            random(rng, &[c, c, 3, 3]),
            Tensor::from_fn(vec![c], |_| rng.gen_range(0.5..1.5)),
            random(rng, &[c]),
        ];
        let build: Box<Build> = Box::new(move |g, v| {
            let mut stats = RunningStats::new(c);
            let h = g.conv2d(v[0], v[1], None, 1, 0)?;
            let h = g.batchnorm(h, v[3], v[4], &mut stats, NormMode::Train, 0.1, 1e-5)?;
            let h = g.activation(h, Activation::Mish);
            let h = g.conv2d(h, v[2], None, 1, 1)?;
            let h = g.add(h, v[0])?;
            let h = g.activation(h, Activation::Mish);
            let p = g.pool(PoolKind::GlobalAvg, h, 0, 0, 0)?;
            weighted_sum(g, p, seed)
        });
        (inputs, build)
    })
}

/// Every case, by name.
pub fn suite() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("conv2d_im2col", conv(ConvAlgorithm::Im2col, false)),
        ("conv2d_direct", conv(ConvAlgorithm::Direct, false)),
        ("conv2d_bias", conv(ConvAlgorithm::Im2col, true)),
        ("relu", activation(Activation::Relu)),
        ("leaky_relu", activation(Activation::LeakyRelu)),
        ("mish", activation(Activation::Mish)),
        ("batchnorm_train", norm(NormMode::Train)),
        ("batchnorm_frozen_stats", norm(NormMode::TrainFrozenStats)),
        ("batchnorm_eval", norm(NormMode::Eval)),
        ("max_pool", pool(PoolKind::Max)),
        ("avg_pool", pool(PoolKind::Avg)),
        ("global_avg_pool", pool(PoolKind::GlobalAvg)),
        ("linear", linear()),
        ("softmax_cross_entropy", cross_entropy()),
        ("add_mul_scale", elementwise()),
        ("diamond_dag", diamond()),
        ("bottleneck", bottleneck()),
    ]
}

/// Runs one named case.
pub fn run_named(name: &str) -> Result<f64, String> {
    let (n, mut case) = suite().into_iter().find(|(n, _)| *n == name).expect("known case");
    run_seeds(n, &mut case)
}
