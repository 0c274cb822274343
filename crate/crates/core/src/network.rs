//! Trainable networks realised from an [`ArchDescription`].
//!
//! Every candidate of a search unit is a complete bottleneck path with its own
//! convolutions, batchnorms and shortcut. A forward pass runs each search unit
//! either on one path or on a weighted pair of paths, so only the selected
//! paths' parameters enter the graph.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{Activation, NormMode, PoolKind, RunningStats};
use crate::optim::{OptimState, ParamSlot};
use crate::searchspace::{count_params, ArchDescription, BlockSpec, CandidateOp, CountMode};
use crate::tensor::{Element, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Element> ParamStore<T> {
    fn add(&mut self, name: String, tensor: Tensor<T>) -> ParamId {
        self.params.push(Param { name, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Adds gradients accumulated on `graph` for the bound parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, bound: &[(ParamId, Var)]) -> Result<()> {
        for &(id, var) in bound {
            if let Some(g) = graph.grad(var) {
                self.params[id.0].tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// One optimizer step over `ids` only; other parameters are not touched.
    pub fn step(&mut self, opt: &mut OptimState<T>, ids: &[ParamId]) -> Result<()> {
        let mut wanted = vec![false; self.params.len()];
        ids.iter().for_each(|id| wanted[id.0] = true);
        let mut slots: Vec<ParamSlot<'_, T>> = self
            .params
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| wanted[*i])
            .map(|(i, p)| {
                let (value, grad) = p.tensor.value_and_grad_mut();
                ParamSlot::new(i, value, grad)
            })
            .collect();
        opt.step(&mut slots)
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Norm<T> {
    gamma: ParamId,
    beta: ParamId,
    stats: RunningStats<T>,
}

#[derive(Clone, Debug)]
struct Path<T> {
    reduce: (Conv, Norm<T>),
    spatial: (Conv, Norm<T>),
    expand: (Conv, Norm<T>),
    shortcut: Option<(Conv, Norm<T>)>,
    activation: Activation,
    zeroed: bool,
}

#[derive(Clone, Debug)]
struct Block<T> {
    paths: Vec<Path<T>>,
    search: bool,
}

/// How a search unit runs during one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathSelection {
    /// One active path (candidate index).
    Single(usize),
    /// Two active paths mixed with the given weights; the weights become
    /// graph leaves whose gradients are the gate gradients.
    Pair { paths: [usize; 2], weights: [f64; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub norm: NormMode,
    /// Track gradients of the parameters that take part.
    pub param_grads: bool,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode {
        norm: NormMode::Train,
        param_grads: true,
    };
    /// Batch statistics without touching running statistics or parameters.
    pub const ARCH: ForwardMode = ForwardMode {
        norm: NormMode::TrainFrozenStats,
        param_grads: false,
    };
    pub const EVAL: ForwardMode = ForwardMode {
        norm: NormMode::Eval,
        param_grads: false,
    };
}

pub struct ForwardOutput {
    pub logits: Var,
    /// Per search block: the mixing-weight leaves of a pair selection.
    pub gates: Vec<Option<[Var; 2]>>,
    /// Parameters that entered the graph.
    pub bound: Vec<(ParamId, Var)>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    desc: ArchDescription,
    store: ParamStore<T>,
    stem: (Conv, Norm<T>),
    blocks: Vec<Block<T>>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

struct Builder<'a, T, R> {
    store: ParamStore<T>,
    rng: &'a mut R,
}

impl<T: Element, R: Rng> Builder<'_, T, R> {
    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let w = Tensor::from_fn(vec![cout, cin, k, k], |_| T::of(normal.sample(self.rng)));
        Conv {
            weight: self.store.add(name, w),
            stride,
            padding: k / 2,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm<T> {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(vec![c], T::one())),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(vec![c])),
            stats: RunningStats::new(c),
        }
    }

    fn conv_norm(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> (Conv, Norm<T>) {
        let conv = self.conv(format!("{name}.conv"), cin, cout, k, stride);
        (conv, self.norm(&format!("{name}.bn"), cout))
    }

    fn path(&mut self, name: &str, b: &BlockSpec, op: CandidateOp) -> Path<T> {
        let (i, m, o) = (b.in_channels, b.mid_channels, b.out_channels);
        Path {
            reduce: self.conv_norm(&format!("{name}.reduce"), i, m, 1, 1),
            spatial: self.conv_norm(&format!("{name}.spatial"), m, m, op.kernel, b.stride),
            expand: self.conv_norm(&format!("{name}.expand"), m, o, 1, 1),
            shortcut: b.projection.then(|| self.conv_norm(&format!("{name}.shortcut"), i, o, 1, b.stride)),
            activation: op.activation,
            zeroed: false,
        }
    }
}

impl<T: Element> Network<T> {
    /// Fresh weights: fan-in normal convolutions, unit/zero batchnorm,
    /// uniform(-1/sqrt(F), 1/sqrt(F)) classifier.
    pub fn new<R: Rng>(desc: &ArchDescription, rng: &mut R) -> Result<Self> {
        desc.validate()?;
        let mut b = Builder {
            store: ParamStore::default(),
            rng,
        };
        let s = &desc.stem;
        let stem = b.conv_norm("stem", s.in_channels, s.out_channels, s.kernel(), s.stride());
        let mut blocks = Vec::with_capacity(desc.blocks.len());
        for (i, spec) in desc.blocks.iter().enumerate() {
            let paths = spec
                .ops()
                .iter()
                .map(|&op| b.path(&format!("block{i}.{}", op.label()), spec, op))
                .collect();
            blocks.push(Block {
                paths,
                search: spec.is_search_unit(),
            });
        }
        let f = desc.head_features();
        let c = desc.num_classes;
        let bound = 1.0 / (f as f64).sqrt();
        let fc_w = Tensor::from_fn(vec![f, c], |_| T::of(b.rng.gen_range(-bound..bound)));
        let fc_b = Tensor::from_fn(vec![c], |_| T::of(b.rng.gen_range(-bound..bound)));
        let fc_weight = b.store.add("fc.weight".into(), fc_w);
        let fc_bias = b.store.add("fc.bias".into(), fc_b);
        let net = Network {
            desc: desc.clone(),
            store: b.store,
            stem,
            blocks,
            fc_weight,
            fc_bias,
        };
        debug_assert_eq!(net.store.total_values() as u64, count_params(desc, CountMode::AllPaths));
        Ok(net)
    }

    pub fn description(&self) -> &ArchDescription {
        &self.desc
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_search_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.search).count()
    }

    /// Parameters of one candidate path of a block.
    pub fn path_params(&self, block: usize, candidate: usize) -> Vec<ParamId> {
        let p = &self.blocks[block].paths[candidate];
        let mut ids = Vec::new();
        for (conv, norm) in [&p.reduce, &p.spatial, &p.expand].into_iter().chain(p.shortcut.as_ref()) {
            ids.extend([conv.weight, norm.gamma, norm.beta]);
        }
        ids
    }

    /// Makes a candidate path output zeros, planting a path that can only
    /// hurt the loss.
    pub fn zero_out_candidate(&mut self, block: usize, candidate: usize) -> Result<()> {
        let path = self
            .blocks
            .get_mut(block)
            .and_then(|b| b.paths.get_mut(candidate))
            .ok_or_else(|| Error::Config(format!("no candidate {candidate} in block {block}")))?;
        path.zeroed = true;
        Ok(())
    }

    fn bind(&self, g: &mut Graph<T>, bound: &mut Vec<(ParamId, Var)>, id: ParamId, grads: bool) -> Var {
        let v = g.leaf(self.store.get(id).tensor.clone().with_requires_grad(grads));
        bound.push((id, v));
        v
    }

    fn conv_norm(
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        bound: &mut Vec<(ParamId, Var)>,
        layer: &mut (Conv, Norm<T>),
        x: Var,
        mode: ForwardMode,
    ) -> Result<Var> {
        let (conv, norm) = layer;
        let mut bind = |id: ParamId| {
            let v = g.leaf(store.get(id).tensor.clone().with_requires_grad(mode.param_grads));
            bound.push((id, v));
            v
        };
        let w = bind(conv.weight);
        let gamma = bind(norm.gamma);
        let beta = bind(norm.beta);
        let y = g.conv2d(x, w, None, conv.stride, conv.padding)?;
        g.batchnorm(y, gamma, beta, &mut norm.stats, mode.norm, T::of(BN_MOMENTUM), T::of(BN_EPS))
    }

    fn run_path(
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        bound: &mut Vec<(ParamId, Var)>,
        path: &mut Path<T>,
        x: Var,
        mode: ForwardMode,
    ) -> Result<Var> {
        let act = path.activation;
        let h = Self::conv_norm(store, g, bound, &mut path.reduce, x, mode)?;
        let h = g.activation(h, act);
        let h = Self::conv_norm(store, g, bound, &mut path.spatial, h, mode)?;
        let h = g.activation(h, act);
        let h = Self::conv_norm(store, g, bound, &mut path.expand, h, mode)?;
        let skip = match path.shortcut.as_mut() {
            Some(layer) => Self::conv_norm(store, g, bound, layer, x, mode)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        if path.zeroed {
            let shape = g.shape(sum).to_vec();
            return Ok(g.constant(Tensor::zeros(shape)));
        }
        Ok(g.activation(sum, act))
    }

    /// Forward pass on an NCHW batch. `selection` has one entry per search
    /// block, in block order.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        selection: &[PathSelection],
        mode: ForwardMode,
    ) -> Result<ForwardOutput> {
        if selection.len() != self.num_search_blocks() {
            return Err(Error::Config(format!(
                "{} path selections for {} search blocks",
                selection.len(),
                self.num_search_blocks()
            )));
        }
        let (_, c, _, _) = g.value(input).dims4()?;
        if c != self.desc.stem.in_channels {
            return Err(Error::shape(
                "network input",
                format!("{c} channels, stem expects {}", self.desc.stem.in_channels),
            ));
        }
        let mut bound = Vec::new();
        let mut gates = Vec::new();
        let store = &self.store;
        let mut h = Self::conv_norm(store, g, &mut bound, &mut self.stem, input, mode)?;
        h = g.activation(h, Activation::Relu);
        if self.desc.stem.has_max_pool() {
            h = g.pool(PoolKind::Max, h, 3, 2, 1)?;
        }
        let mut sel = selection.iter();
        for block in &mut self.blocks {
            if !block.search {
                h = Self::run_path(store, g, &mut bound, &mut block.paths[0], h, mode)?;
                continue;
            }
            let choice = *sel.next().expect("length checked");
            let n = block.paths.len();
            match choice {
                PathSelection::Single(p) => {
                    let path = block.paths.get_mut(p).ok_or_else(|| Error::Config(format!("path {p} of {n}")))?;
                    h = Self::run_path(store, g, &mut bound, path, h, mode)?;
                    gates.push(None);
                }
                PathSelection::Pair { paths: [a, b], weights } => {
                    if a == b || a >= n || b >= n {
                        return Err(Error::Config(format!("invalid path pair ({a}, {b}) of {n}")));
                    }
                    let x = h;
                    let oa = Self::run_path(store, g, &mut bound, &mut block.paths[a], x, mode)?;
                    let ob = Self::run_path(store, g, &mut bound, &mut block.paths[b], x, mode)?;
                    let ga = g.leaf(Tensor::scalar(T::of(weights[0])).with_requires_grad(true));
                    let gb = g.leaf(Tensor::scalar(T::of(weights[1])).with_requires_grad(true));
                    let ma = g.scale(oa, ga)?;
                    let mb = g.scale(ob, gb)?;
                    h = g.add(ma, mb)?;
                    gates.push(Some([ga, gb]));
                }
            }
        }
        let pooled = g.pool(PoolKind::GlobalAvg, h, 0, 0, 0)?;
        let w = self.bind(g, &mut bound, self.fc_weight, mode.param_grads);
        let b = self.bind(g, &mut bound, self.fc_bias, mode.param_grads);
        let logits = g.linear(pooled, w, b)?;
        Ok(ForwardOutput { logits, gates, bound })
    }

    /// Predicted classes in eval mode.
    pub fn predict(&mut self, images: &Tensor<T>, selection: &[PathSelection]) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, x, selection, ForwardMode::EVAL)?;
        let logits = g.value(out.logits);
        let classes = logits.shape()[1];
        Ok(logits
            .data()
            .chunks(classes)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::searchspace::{build_supernet, ResNetShape, Scope, StemKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ArchDescription {
        ResNetShape {
            num_classes: 3,
            in_channels: 3,
            stem: StemKind::SmallInput,
            stem_channels: 4,
            stage_blocks: vec![1, 1],
            stage_mids: vec![2, 4],
        }
        .build()
        .unwrap()
    }

    #[test]
    fn parameter_total_matches_all_paths_count() {
        let sup = build_supernet(&tiny(), Scope::Small).unwrap();
        let net = Network::<f64>::new(&sup, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net.params().total_values() as u64, count_params(&sup, CountMode::AllPaths));
        let scaled = ResNetShape::resnet50_scaled(10, true, 16).unwrap().build().unwrap();
        let net = Network::<f32>::new(&scaled, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net.params().total_values() as u64, count_params(&scaled, CountMode::AllPaths));
    }

    #[test]
    fn forward_shapes_and_gates() {
        let sup = build_supernet(&tiny(), Scope::Full).unwrap();
        let mut net = Network::<f64>::new(&sup, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 3, 6, 6], 0.5));
        let sel = [
            PathSelection::Single(3),
            PathSelection::Pair {
                paths: [1, 4],
                weights: [0.4, 0.6],
            },
        ];
        let out = net.forward(&mut g, x, &sel, ForwardMode::TRAIN).unwrap();
        assert_eq!(g.shape(out.logits), &[2, 3]);
        assert!(out.gates[0].is_none() && out.gates[1].is_some());
        assert!(net.forward(&mut g, x, &sel[..1], ForwardMode::TRAIN).is_err());
    }

    #[test]
    fn zeroed_path_outputs_zero_logits_bias_only() {
        let sup = build_supernet(&tiny(), Scope::Small).unwrap();
        let mut net = Network::<f64>::new(&sup, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        net.zero_out_candidate(1, 2).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 3, 4, 4], 1.0));
        let out = net.forward(&mut g, x, &[PathSelection::Single(2)], ForwardMode::TRAIN).unwrap();
        let bias = net.params().get(net.fc_bias).tensor.data().to_vec();
        assert_eq!(&g.value(out.logits).data()[..3], bias.as_slice());
    }
}
