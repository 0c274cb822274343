//! Binarized-path bilevel search.
//!
//! Weight steps sample one active path per search block from softmax(alpha)
//! and update only the parameters that ran. Architecture steps sample two
//! distinct paths per block, mix them with their pair-renormalized
//! probabilities, turn gate gradients into alpha gradients for the pair only,
//! take an Adam step on those two entries and then shift both by a common
//! offset so every unsampled candidate keeps its probability.

mod retrain;
mod search;
mod trajectory;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{ForwardMode, Network, PathSelection};
use crate::optim::{OptimConfig, OptimState, ParamSlot};
use crate::searchspace::{derive_final_architecture, ArchDescription, FinalArchitecture, NUM_CANDIDATES};
use crate::tensor::{Element, Tensor};

pub use retrain::{evaluate_accuracy, retrain, train_network, RetrainMetrics};
pub use search::{run_search, stop_criterion, EpochMetrics, SearchConfig, SearchData, SearchOutcome, StopConfig, StopDecision};
pub use trajectory::{format_sig, Trajectory, TrajectoryRow};

/// Network initialized from the initialization stream of `seed`.
pub fn init_network<T: Element>(desc: &ArchDescription, seed: u64) -> Result<Network<T>> {
    Network::new(desc, &mut search::stream_rng(seed, search::STREAM_INIT))
}

/// Numerically stable softmax of an architecture vector.
pub fn arch_probabilities(alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite("NaN in architecture parameters".into()));
    }
    let max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = alpha.iter().map(|&a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draws an index from unnormalized weights.
fn draw<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding left u at the very top: take the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// One multinomial draw from softmax(alpha).
pub fn sample_active_path<R: Rng>(alpha: &[f64], rng: &mut R) -> Result<usize> {
    Ok(draw(&arch_probabilities(alpha)?, rng))
}

/// Two distinct draws: the first from softmax(alpha), the second from the
/// remaining candidates renormalized.
pub fn sample_path_pair<R: Rng>(alpha: &[f64], rng: &mut R) -> Result<[usize; 2]> {
    if alpha.len() < 2 {
        return Err(Error::Config(format!("{} candidates, need at least 2", alpha.len())));
    }
    let mut p = arch_probabilities(alpha)?;
    let first = draw(&p, rng);
    p[first] = 0.0;
    let second = draw(&p, rng);
    debug_assert_ne!(first, second);
    Ok([first, second])
}

/// Offset added to both sampled entries after their update so that the
/// pair's share of the full softmax (and hence every other candidate's
/// probability) is what it was before: `ln(s0 * R / (E * (1 - s0)))`.
pub fn rescale_offset(before: &[f64], after: &[f64], pair: [usize; 2]) -> f64 {
    let in_pair = |k: &usize| pair.contains(k);
    let n = before.len();
    let lse_all = log_sum_exp(before.iter().copied());
    let lse_pair_old = log_sum_exp(pair.iter().map(|&k| before[k]));
    let ln_r = log_sum_exp((0..n).filter(|k| !in_pair(k)).map(|k| before[k]));
    let ln_e = log_sum_exp(pair.iter().map(|&k| after[k]));
    let ln_s0 = lse_pair_old - lse_all;
    let ln_one_minus_s0 = ln_r - lse_all;
    ln_s0 + ln_r - ln_e - ln_one_minus_s0
}

/// Gradient of the loss w.r.t. the pair's alphas from gate gradients:
/// `dL/dalpha_k = sum_m dL/dg_m * p'_m * (delta_mk - p'_k)`.
pub fn pair_alpha_gradient(gate_grads: [f64; 2], pair_probs: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        for m in 0..2 {
            let delta = if m == k { 1.0 } else { 0.0 };
            *o += gate_grads[m] * pair_probs[m] * (delta - pair_probs[k]);
        }
    }
    out
}

/// Architecture parameters, binary gates and the architecture optimizer.
#[derive(Clone, Debug)]
pub struct ArchState {
    /// Network block index of each search block.
    pub block_ids: Vec<usize>,
    pub alphas: Vec<Vec<f64>>,
    /// Gate vector of each search block from the most recent step.
    pub gates: Vec<[u8; NUM_CANDIDATES]>,
    optimizer: OptimState<f64>,
    rng: ChaCha8Rng,
}

impl ArchState {
    /// Zero alphas (uniform probabilities) for every search unit of `supernet`.
    /// Gate sampling draws from its own stream of `seed`.
    pub fn new(supernet: &ArchDescription, arch_opt: OptimConfig, seed: u64) -> Result<Self> {
        let block_ids = supernet.search_block_indices();
        let n = block_ids.len();
        Ok(ArchState {
            block_ids,
            alphas: vec![vec![0.0; NUM_CANDIDATES]; n],
            gates: vec![[0; NUM_CANDIDATES]; n],
            optimizer: OptimState::new(arch_opt)?,
            rng: search::stream_rng(seed, search::STREAM_ARCH),
        })
    }

    pub fn probabilities(&self) -> Result<Vec<Vec<f64>>> {
        self.alphas.iter().map(|a| arch_probabilities(a)).collect()
    }

    pub fn optimizer(&self) -> &OptimState<f64> {
        &self.optimizer
    }

    pub fn derive_final(&self, supernet: &ArchDescription) -> Result<FinalArchitecture> {
        derive_final_architecture(supernet, &self.alphas)
    }

    fn set_gates(&mut self, block: usize, active: &[usize]) {
        self.gates[block] = [0; NUM_CANDIDATES];
        for &a in active {
            self.gates[block][a] = 1;
        }
    }
}

fn to_graph_input<T: Element>(g: &mut Graph<T>, batch: &ImageBatch) -> crate::graph::Var {
    let images: Tensor<T> = batch.images.cast();
    g.constant(images)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStepReport {
    pub loss: f64,
    pub correct: usize,
    /// Active candidate of each search block.
    pub active: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchStepReport {
    pub loss: f64,
    /// Sampled pair of each search block.
    pub pairs: Vec<[usize; 2]>,
    /// Full-length alpha gradient of each search block (zero off the pair).
    pub alpha_grads: Vec<Vec<f64>>,
}

fn count_correct<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let best = (0..classes).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            best == label
        })
        .count()
}

/// Single-path weight update on a training batch.
pub fn weight_update_step<T: Element>(
    net: &mut Network<T>,
    state: &mut ArchState,
    batch: &ImageBatch,
    opt: &mut OptimState<T>,
) -> Result<WeightStepReport> {
    let mut active = Vec::with_capacity(state.alphas.len());
    for b in 0..state.alphas.len() {
        let a = sample_active_path(&state.alphas[b], &mut state.rng)?;
        state.set_gates(b, &[a]);
        active.push(a);
    }
    let (loss, correct) = weight_step_on_paths(net, &active, batch, opt)?;
    Ok(WeightStepReport { loss, correct, active })
}

/// Weight update through the given active path of each search block.
/// Returns the batch loss and the number of correct predictions.
pub fn weight_step_on_paths<T: Element>(
    net: &mut Network<T>,
    active: &[usize],
    batch: &ImageBatch,
    opt: &mut OptimState<T>,
) -> Result<(f64, usize)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let selection: Vec<PathSelection> = active.iter().map(|&a| PathSelection::Single(a)).collect();
    let mut g = Graph::new();
    let x = to_graph_input(&mut g, batch);
    let out = net.forward(&mut g, x, &selection, ForwardMode::TRAIN)?;
    let correct = count_correct(g.value(out.logits), &batch.labels);
    let loss_var = g.softmax_cross_entropy(out.logits, &batch.labels)?;
    let loss = check_finite("training loss", g.value(loss_var).data()[0].as_f64())?;
    g.backward(loss_var)?;
    let ids: Vec<_> = out.bound.iter().map(|&(id, _)| id).collect();
    let store = net.params_mut();
    store.accumulate_grads(&g, &out.bound)?;
    store.step(opt, &ids)?;
    store.zero_grad();
    Ok((loss, correct))
}

/// Two-path architecture update on a validation batch.
pub fn arch_update_step<T: Element>(
    net: &mut Network<T>,
    state: &mut ArchState,
    batch: &ImageBatch,
) -> Result<ArchStepReport> {
    if batch.is_empty() {
        return Err(Error::Config("empty validation batch".into()));
    }
    let blocks = state.alphas.len();
    let mut pairs = Vec::with_capacity(blocks);
    let mut pair_probs = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let pair = sample_path_pair(&state.alphas[b], &mut state.rng)?;
        let alpha = &state.alphas[b];
        let p = arch_probabilities(&[alpha[pair[0]], alpha[pair[1]]])?;
        state.set_gates(b, &pair);
        pairs.push(pair);
        pair_probs.push([p[0], p[1]]);
    }
    let selection: Vec<PathSelection> = pairs
        .iter()
        .zip(&pair_probs)
        .map(|(&paths, &weights)| PathSelection::Pair { paths, weights })
        .collect();
    let mut g = Graph::new();
    let x = to_graph_input(&mut g, batch);
    let out = net.forward(&mut g, x, &selection, ForwardMode::ARCH)?;
    let loss_var = g.softmax_cross_entropy(out.logits, &batch.labels)?;
    let loss = check_finite("validation loss", g.value(loss_var).data()[0].as_f64())?;
    g.backward(loss_var)?;

    let mut alpha_grads = Vec::with_capacity(blocks);
    for (b, gates) in out.gates.iter().enumerate() {
        let [ga, gb] = gates.expect("pair selection yields gates");
        let gate_grad = |v| g.grad(v).map_or(0.0, |d| d[0].as_f64());
        let d = pair_alpha_gradient([gate_grad(ga), gate_grad(gb)], pair_probs[b]);
        let mut full = vec![0.0; NUM_CANDIDATES];
        full[pairs[b][0]] = check_finite("architecture gradient", d[0])?;
        full[pairs[b][1]] = check_finite("architecture gradient", d[1])?;
        alpha_grads.push(full);
    }

    let before = state.alphas.clone();
    let masks: Vec<[bool; NUM_CANDIDATES]> = pairs
        .iter()
        .map(|p| {
            let mut m = [false; NUM_CANDIDATES];
            m[p[0]] = true;
            m[p[1]] = true;
            m
        })
        .collect();
    {
        let mut slots: Vec<ParamSlot<'_, f64>> = state
            .alphas
            .iter_mut()
            .zip(&alpha_grads)
            .zip(&masks)
            .enumerate()
            .map(|(b, ((alpha, grad), mask))| ParamSlot::new(b, alpha, grad).masked(mask))
            .collect();
        state.optimizer.step(&mut slots)?;
    }
    for b in 0..blocks {
        let c = rescale_offset(&before[b], &state.alphas[b], pairs[b]);
        for &k in &pairs[b] {
            state.alphas[b][k] = check_finite("architecture parameter", state.alphas[b][k] + c)?;
        }
    }
    Ok(ArchStepReport {
        loss,
        pairs,
        alpha_grads,
    })
}
