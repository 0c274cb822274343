//! The search loop: alternating weight and architecture steps per epoch.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentMode, AugmentSpec, BatchStream, ImageBatch};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::{OptimConfig, OptimState};
use crate::searchspace::{count_macs, FinalArchitecture, Scope};
use crate::tensor::Element;

use super::{arch_update_step, weight_update_step, ArchState, Trajectory};

/// Convergence rule: stop once every block's top probability has been at
/// least `threshold` for `patience` consecutive epochs. `patience == 0`
/// stops after the first epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopConfig {
    pub patience: usize,
    pub threshold: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            patience: 20,
            threshold: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Converged,
    BudgetExhausted,
}

/// Pure function of the recorded trajectory.
pub fn stop_criterion(trajectory: &Trajectory, stop: &StopConfig, epoch_budget: usize) -> StopDecision {
    let epochs = trajectory.epochs();
    if epochs.is_empty() {
        return StopDecision::Continue;
    }
    if stop.patience == 0 {
        return StopDecision::Converged;
    }
    let confident = |e: usize| {
        trajectory
            .epoch_probabilities(e)
            .values()
            .all(|p| p.iter().copied().fold(0.0, f64::max) >= stop.threshold)
    };
    if epochs.len() >= stop.patience && epochs[epochs.len() - stop.patience..].iter().all(|&e| confident(e)) {
        return StopDecision::Converged;
    }
    if epochs.len() >= epoch_budget {
        return StopDecision::BudgetExhausted;
    }
    StopDecision::Continue
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub scope: Scope,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_opt: OptimConfig,
    pub arch_opt: OptimConfig,
    /// Weight steps, then architecture steps, per round.
    pub alternation: (usize, usize),
    pub stop: StopConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            scope: Scope::Small,
            epochs: 500,
            batch_size: 64,
            weight_opt: OptimConfig::weight_default(),
            arch_opt: OptimConfig::arch_default(),
            alternation: (1, 1),
            stop: StopConfig::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.alternation.0 == 0 || self.alternation.1 == 0 {
            return Err(Error::Config(format!("alternation {:?} needs both parts positive", self.alternation)));
        }
        if !(self.stop.threshold > 0.0 && self.stop.threshold <= 1.0) {
            return Err(Error::Config(format!("stop threshold {} outside (0, 1]", self.stop.threshold)));
        }
        self.weight_opt.validate()?;
        self.arch_opt.validate()
    }
}

/// Training and validation streams plus the transform applied to each
/// batch. Without a transform batches go to the network as stored.
pub struct SearchData {
    pub train: BatchStream,
    pub val: BatchStream,
    pub augment: Option<AugmentSpec>,
}

impl SearchData {
    pub(crate) fn prepare(
        spec: Option<&AugmentSpec>,
        batch: ImageBatch,
        rng: &mut ChaCha8Rng,
        mode: AugmentMode,
    ) -> Result<ImageBatch> {
        match spec {
            Some(s) => augment(&batch, s, rng, mode),
            None => Ok(batch),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub weight_steps: usize,
    pub arch_steps: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    /// Multiply-accumulates of one single-path forward pass on one image,
    /// averaged over the candidates of every search unit.
    pub macs_per_image: u64,
    /// Smallest top probability over the search blocks.
    pub min_top_probability: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub metrics: Vec<EpochMetrics>,
    pub arch: ArchState,
    pub final_architecture: FinalArchitecture,
    pub decision: StopDecision,
    /// Wall-clock seconds per epoch.
    pub epoch_seconds: Vec<f64>,
}

/// Seeded generator for one consumer of a run seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_ARCH: u64 = 1;
pub(crate) const STREAM_AUGMENT: u64 = 2;
pub(crate) const STREAM_RETRAIN: u64 = 3;

/// Runs the search on `net` (a supernet) until the stop rule or the epoch
/// budget ends it. The trajectory gets one epoch per completed epoch.
pub fn run_search<T: Element>(
    net: &mut Network<T>,
    config: &SearchConfig,
    data: &mut SearchData,
) -> Result<SearchOutcome> {
    config.validate()?;
    let supernet = net.description().clone();
    let mut arch = ArchState::new(&supernet, config.arch_opt, config.seed)?;
    let mut weight_opt = OptimState::<T>::new(config.weight_opt)?;
    let mut aug_rng = stream_rng(config.seed, STREAM_AUGMENT);
    let mut trajectory = Trajectory::new();
    let mut metrics = Vec::new();
    let mut epoch_seconds = Vec::new();
    let per_epoch = data.train.batches_per_pass();
    let (w_round, a_round) = config.alternation;
    let mut macs = None;

    let mut decision = StopDecision::Continue;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let (mut w_steps, mut a_steps) = (0usize, 0usize);
        let (mut train_loss, mut correct, mut seen, mut val_loss) = (0.0, 0usize, 0usize, 0.0);
        while w_steps < per_epoch {
            for _ in 0..w_round.min(per_epoch - w_steps) {
                let raw = data.train.next_batch();
                let batch = SearchData::prepare(data.augment.as_ref(), raw, &mut aug_rng, AugmentMode::Train)?;
                if macs.is_none() {
                    let (_, h, _) = batch.image_dims();
                    macs = Some(count_macs(&supernet, h)?);
                }
                let r = weight_update_step(net, &mut arch, &batch, &mut weight_opt)?;
                train_loss += r.loss;
                correct += r.correct;
                seen += batch.len();
                w_steps += 1;
            }
            for _ in 0..a_round {
                let raw = data.val.next_batch();
                let batch = SearchData::prepare(data.augment.as_ref(), raw, &mut aug_rng, AugmentMode::Eval)?;
                val_loss += arch_update_step(net, &mut arch, &batch)?.loss;
                a_steps += 1;
            }
        }
        let probs = arch.probabilities()?;
        let rows: Vec<(usize, Vec<f64>)> = arch.block_ids.iter().copied().zip(probs.iter().cloned()).collect();
        trajectory.push_epoch(epoch, &rows)?;
        metrics.push(EpochMetrics {
            epoch,
            weight_steps: w_steps,
            arch_steps: a_steps,
            train_loss: train_loss / w_steps as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_loss: val_loss / a_steps.max(1) as f64,
            macs_per_image: macs.unwrap_or(0),
            min_top_probability: probs
                .iter()
                .map(|p| p.iter().copied().fold(0.0, f64::max))
                .fold(1.0, f64::min),
        });
        epoch_seconds.push(started.elapsed().as_secs_f64());
        decision = stop_criterion(&trajectory, &config.stop, config.epochs);
        if decision != StopDecision::Continue {
            break;
        }
    }
    let final_architecture = arch.derive_final(&supernet)?;
    Ok(SearchOutcome {
        trajectory,
        metrics,
        arch,
        final_architecture,
        decision,
        epoch_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(tops: &[f64]) -> Trajectory {
        let mut t = Trajectory::new();
        for (e, &top) in tops.iter().enumerate() {
            let rest = (1.0 - top) / 5.0;
            let p = vec![top, rest, rest, rest, rest, rest];
            t.push_epoch(e, &[(13, p.clone()), (14, p)]).unwrap();
        }
        t
    }

    #[test]
    fn stop_rule() {
        let stop = StopConfig {
            patience: 3,
            threshold: 0.9,
        };
        assert_eq!(stop_criterion(&Trajectory::new(), &stop, 10), StopDecision::Continue);
        assert_eq!(stop_criterion(&traj(&[0.95, 0.95]), &stop, 10), StopDecision::Continue);
        assert_eq!(stop_criterion(&traj(&[0.5, 0.95, 0.95, 0.95]), &stop, 10), StopDecision::Converged);
        assert_eq!(stop_criterion(&traj(&[0.95, 0.95, 0.5]), &stop, 10), StopDecision::Continue);
        assert_eq!(stop_criterion(&traj(&[0.5, 0.5]), &stop, 2), StopDecision::BudgetExhausted);
        let now = StopConfig { patience: 0, ..stop };
        assert_eq!(stop_criterion(&traj(&[0.2]), &now, 10), StopDecision::Converged);
    }
}
