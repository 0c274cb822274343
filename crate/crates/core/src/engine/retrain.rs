//! Training a fixed (search-free) network from scratch.

use crate::data::{AugmentMode, AugmentSpec, BatchStream, ImageBatch};
use crate::error::{Error, Result};
use crate::network::{Network, PathSelection};
use crate::optim::OptimState;
use crate::searchspace::FinalArchitecture;
use crate::tensor::{Element, Tensor};

use super::search::{stream_rng, SearchConfig, SearchData, STREAM_AUGMENT, STREAM_RETRAIN};
use super::{weight_update_step, ArchState};

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

/// Eval-mode top-1 accuracy over `data`, in chunks of `batch_size`.
pub fn evaluate_accuracy<T: Element>(
    net: &mut Network<T>,
    data: &ImageBatch,
    batch_size: usize,
    augment: Option<&AugmentSpec>,
) -> Result<f64> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::Config("evaluation needs data and a positive batch size".into()));
    }
    let selection = vec![PathSelection::Single(0); net.num_search_blocks()];
    // eval transforms consume no randomness
    let mut rng = stream_rng(0, 0);
    let mut correct = 0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size) {
        let batch = SearchData::prepare(augment, data.select(chunk), &mut rng, AugmentMode::Eval)?;
        let images: Tensor<T> = batch.images.cast();
        let pred = net.predict(&images, &selection)?;
        correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains every parameter of a network without search units for `epochs`
/// passes over `train`, evaluating on `eval` after each epoch.
pub fn train_network<T: Element>(
    net: &mut Network<T>,
    config: &SearchConfig,
    train: &mut BatchStream,
    eval: &ImageBatch,
    augment: Option<&AugmentSpec>,
) -> Result<Vec<RetrainMetrics>> {
    config.validate()?;
    if net.num_search_blocks() != 0 {
        return Err(Error::Config(format!(
            "training a fixed network, found {} search units",
            net.num_search_blocks()
        )));
    }
    let mut state = ArchState::new(net.description(), config.arch_opt, config.seed)?;
    let mut opt = OptimState::<T>::new(config.weight_opt)?;
    let mut rng = stream_rng(config.seed, STREAM_AUGMENT);
    let mut out = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut loss, mut correct, mut seen) = (0.0, 0, 0);
        let steps = train.batches_per_pass();
        for _ in 0..steps {
            let batch = SearchData::prepare(augment, train.next_batch(), &mut rng, AugmentMode::Train)?;
            let r = weight_update_step(net, &mut state, &batch, &mut opt)?;
            loss += r.loss;
            correct += r.correct;
            seen += batch.len();
        }
        out.push(RetrainMetrics {
            epoch,
            train_loss: loss / steps as f64,
            train_accuracy: correct as f64 / seen as f64,
            eval_accuracy: evaluate_accuracy(net, eval, train.batch_size(), augment)?,
        });
    }
    Ok(out)
}

/// Fresh initialization of the final architecture (from a generator stream
/// distinct from the one that initialized the supernet) followed by
/// `train_network`.
pub fn retrain<T: Element>(
    architecture: &FinalArchitecture,
    config: &SearchConfig,
    train: &mut BatchStream,
    eval: &ImageBatch,
    augment: Option<&AugmentSpec>,
) -> Result<(Network<T>, Vec<RetrainMetrics>)> {
    let mut rng = stream_rng(config.seed, STREAM_RETRAIN);
    let mut net = Network::new(&architecture.description, &mut rng)?;
    let metrics = train_network(&mut net, config, train, eval, augment)?;
    Ok((net, metrics))
}
