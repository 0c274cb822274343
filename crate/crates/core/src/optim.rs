//! SGD with Nesterov momentum and Adam, keyed per parameter buffer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    SgdNesterov,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    /// Momentum for SGD, beta1 for Adam.
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl OptimConfig {
    pub fn sgd_nesterov(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimConfig {
            kind: OptimKind::SgdNesterov,
            lr,
            momentum,
            beta2: 0.0,
            weight_decay,
            eps: 0.0,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Adam,
            lr,
            momentum: 0.9,
            beta2: 0.999,
            weight_decay,
            eps: 1e-8,
        }
    }

    /// Model-weight optimizer used for supernet search and retraining.
    pub fn weight_default() -> Self {
        Self::sgd_nesterov(0.05, 0.9, 4e-5)
    }

    /// Architecture-parameter optimizer.
    pub fn arch_default() -> Self {
        Self::adam(0.001, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer {what} out of range in {self:?}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum/beta1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay");
        }
        if self.kind == OptimKind::Adam && (!(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0)) {
            return bad("beta2/eps");
        }
        Ok(())
    }
}

/// One parameter buffer handed to a step. `key` identifies the moment
/// buffers across steps. With a `mask`, only flagged entries (and their
/// moments) change.
pub struct ParamSlot<'a, T> {
    pub key: usize,
    pub value: &'a mut [T],
    pub grad: &'a [T],
    pub mask: Option<&'a [bool]>,
}

impl<'a, T> ParamSlot<'a, T> {
    pub fn new(key: usize, value: &'a mut [T], grad: &'a [T]) -> Self {
        ParamSlot {
            key,
            value,
            grad,
            mask: None,
        }
    }

    pub fn masked(mut self, mask: &'a [bool]) -> Self {
        self.mask = Some(mask);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct OptimState<T> {
    config: OptimConfig,
    moments: BTreeMap<usize, Moments<T>>,
    step_count: u64,
}

impl<T: Element> OptimState<T> {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimState {
            config,
            moments: BTreeMap::new(),
            step_count: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Velocity (SGD) or first moment (Adam) of a tracked buffer.
    pub fn first_moment(&self, key: usize) -> Option<&[T]> {
        self.moments.get(&key).map(|m| m.first.as_slice())
    }

    pub fn second_moment(&self, key: usize) -> Option<&[T]> {
        self.moments.get(&key).map(|m| m.second.as_slice())
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_, T>]) -> Result<()> {
        match self.config.kind {
            OptimKind::SgdNesterov => sgd_nesterov_step(params, self),
            OptimKind::Adam => adam_step(params, self),
        }
    }

    fn check_kind(&self, kind: OptimKind) -> Result<()> {
        if self.config.kind != kind {
            return Err(Error::Config(format!("{kind:?} step on a {:?} state", self.config.kind)));
        }
        Ok(())
    }

    fn moments_for(&mut self, slot: &ParamSlot<'_, T>) -> Result<&mut Moments<T>> {
        let n = slot.value.len();
        if slot.grad.len() != n || slot.mask.is_some_and(|m| m.len() != n) {
            return Err(Error::shape(
                "optimizer",
                format!("parameter {} has {n} values but {} gradients", slot.key, slot.grad.len()),
            ));
        }
        let m = self.moments.entry(slot.key).or_insert_with(|| Moments {
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
        });
        if m.first.len() != n {
            return Err(Error::shape(
                "optimizer",
                format!("parameter {} has {n} values, moment buffer has {}", slot.key, m.first.len()),
            ));
        }
        Ok(m)
    }
}

fn active(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map_or(true, |m| m[i])
}

/// `g = grad + wd * w; v = mu * v + g; w -= lr * (g + mu * v)`.
pub fn sgd_nesterov_step<T: Element>(params: &mut [ParamSlot<'_, T>], state: &mut OptimState<T>) -> Result<()> {
    state.check_kind(OptimKind::SgdNesterov)?;
    let lr = T::of(state.config.lr);
    let mu = T::of(state.config.momentum);
    let wd = T::of(state.config.weight_decay);
    for slot in params.iter_mut() {
        let m = state.moments_for(slot)?;
        for i in 0..slot.value.len() {
            if !active(slot.mask, i) {
                continue;
            }
            let g = slot.grad[i] + wd * slot.value[i];
            let v = mu * m.first[i] + g;
            m.first[i] = v;
            slot.value[i] = slot.value[i] - lr * (g + mu * v);
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Bias-corrected Adam with coupled weight decay.
pub fn adam_step<T: Element>(params: &mut [ParamSlot<'_, T>], state: &mut OptimState<T>) -> Result<()> {
    state.check_kind(OptimKind::Adam)?;
    let cfg = state.config;
    let t = (state.step_count + 1) as i32;
    let (b1, b2) = (T::of(cfg.momentum), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.momentum.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, wd, eps) = (T::of(cfg.lr), T::of(cfg.weight_decay), T::of(cfg.eps));
    for slot in params.iter_mut() {
        let m = state.moments_for(slot)?;
        for i in 0..slot.value.len() {
            if !active(slot.mask, i) {
                continue;
            }
            let g = slot.grad[i] + wd * slot.value[i];
            m.first[i] = b1 * m.first[i] + (T::one() - b1) * g;
            m.second[i] = b2 * m.second[i] + (T::one() - b2) * g * g;
            let mhat = m.first[i] / c1;
            let vhat = m.second[i] / c2;
            slot.value[i] = slot.value[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    state.step_count += 1;
    Ok(())
}
