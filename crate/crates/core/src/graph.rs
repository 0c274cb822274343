//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node to the tape, so creation order is a topological
//! order and `backward` is a single reverse sweep. Gradients of leaf nodes
//! persist and accumulate across `backward` calls until [`Graph::zero_grad`];
//! gradients of interior nodes are recomputed on every sweep.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvAlgorithm, ConvGeometry};
use crate::ops::loss::{softmax_cross_entropy_backward, softmax_cross_entropy_forward};
use crate::ops::norm::{batchnorm_backward, batchnorm_forward, NormCache, NormMode, RunningStats};
use crate::ops::pool::{self, PoolGeometry, PoolKind};
use crate::ops::Activation;
use crate::tensor::{gemm, Element, MatRef, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        shape: [usize; 4],
        cache: NormCache<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geo: PoolGeometry,
    },
    GlobalAvgPool {
        x: Var,
        shape: [usize; 4],
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        factor: Var,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    /// Persistent gradient; only leaves keep one.
    grad: Option<Vec<T>>,
    op: Op<T>,
}

pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    conv_algorithm: ConvAlgorithm,
    released: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            conv_algorithm: ConvAlgorithm::default(),
            released: false,
        }
    }

    pub fn with_conv_algorithm(mut self, algo: ConvAlgorithm) -> Self {
        self.conv_algorithm = algo;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Tracks gradients when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(value, rg, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Drops interior values and saved buffers. Leaf gradients stay readable;
    /// a later `backward` fails with [`Error::FreedGraph`].
    pub fn release(&mut self) {
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::zeros(Vec::new());
                node.op = Op::Leaf;
            }
        }
        self.released = true;
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(x), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geo.out_channels] {
                return Err(Error::shape("conv2d", format!("bias shape {:?}", self.shape(b))));
            }
        }
        let out = conv2d_forward(
            &geo,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            self.conv_algorithm,
        );
        let rg = self.rg(&[x, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(geo.output_shape().to_vec(), out)?;
        Ok(self.push(value, rg, Op::Conv2d { x, weight, bias, geo }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| kind.apply(v)).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::Activation { x, kind })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let shape = [n, c, h, w];
        let (y, cache) = batchnorm_forward(
            self.value(x).data(),
            shape,
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
            momentum,
            eps,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        let value = Tensor::new(shape.to_vec(), y)?;
        Ok(self.push(value, rg, Op::BatchNorm { x, gamma, beta, shape, cache }))
    }

    /// Windowed pooling. `GlobalAvg` ignores the window arguments and yields
    /// an `N x C` tensor.
    pub fn pool(&mut self, kind: PoolKind, x: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let shape = [n, c, h, w];
        let rg = self.rg(&[x]);
        let xs = self.value(x).data();
        match kind {
            PoolKind::GlobalAvg => {
                let y = pool::global_avg_forward(xs, shape);
                Ok(self.push(Tensor::new(vec![n, c], y)?, rg, Op::GlobalAvgPool { x, shape }))
            }
            PoolKind::Max => {
                let geo = PoolGeometry::new(shape, window, stride, padding)?;
                let (y, argmax) = pool::max_pool_forward(&geo, xs);
                let value = Tensor::new(vec![n, c, geo.out_height, geo.out_width], y)?;
                Ok(self.push(value, rg, Op::MaxPool { x, argmax }))
            }
            PoolKind::Avg => {
                let geo = PoolGeometry::new(shape, window, stride, padding)?;
                let y = pool::avg_pool_forward(&geo, xs);
                let value = Tensor::new(vec![n, c, geo.out_height, geo.out_width], y)?;
                Ok(self.push(value, rg, Op::AvgPool { x, geo }))
            }
        }
    }

    /// `x (N x F) * weight (F x C) + bias (C)`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (&[n, f], &[wf, c], &[bc]) = (self.shape(x), self.shape(weight), self.shape(bias)) else {
            return Err(Error::shape(
                "linear",
                format!("x {:?}, weight {:?}, bias {:?}", self.shape(x), self.shape(weight), self.shape(bias)),
            ));
        };
        if f != wf || c != bc {
            return Err(Error::shape("linear", format!("x has {f} features, weight {wf}x{c}, bias {bc}")));
        }
        let mut y = vec![T::zero(); n * c];
        for row in y.chunks_mut(c) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(
            MatRef::new(self.value(x).data(), n, f),
            MatRef::new(self.value(weight).data(), f, c),
            T::one(),
            &mut y,
        );
        let rg = self.rg(&[x, weight, bias]);
        Ok(self.push(Tensor::new(vec![n, c], y)?, rg, Op::Linear { x, weight, bias }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let &[rows, classes] = self.shape(logits) else {
            return Err(Error::shape("softmax_cross_entropy", format!("logits {:?}", self.shape(logits))));
        };
        let (loss, probs) = softmax_cross_entropy_forward(self.value(logits).data(), rows, classes, labels)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |p, q| p + q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |p, q| p * q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Multiplies a tensor by a single-element tensor.
    pub fn scale(&mut self, x: Var, factor: Var) -> Result<Var> {
        let Some(s) = self.value(factor).item() else {
            return Err(Error::shape("scale", format!("factor shape {:?}", self.shape(factor))));
        };
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * s).collect())?;
        let rg = self.rg(&[x, factor]);
        Ok(self.push(value, rg, Op::Scale { x, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Populates leaf gradients of every differentiable ancestor of `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.released {
            return Err(Error::FreedGraph);
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, dy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, dy: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        if matches!(self.nodes[i].op, Op::Leaf) {
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&dy).for_each(|(a, b)| *a = *a + *b),
                None => node.grad = Some(dy),
            }
            return;
        }
        let nodes = &self.nodes;
        let mut send = |v: Var, g: Vec<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match grads[v.0].as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                None => grads[v.0] = Some(g),
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, weight, bias, geo } => {
                let g = conv2d_backward(
                    geo,
                    val(*x),
                    val(*weight),
                    &dy,
                    nodes[x.0].requires_grad,
                    nodes[weight.0].requires_grad,
                    self.conv_algorithm,
                );
                if let Some(dx) = g.dx {
                    send(*x, dx);
                }
                if let Some(dw) = g.dweight {
                    send(*weight, dw);
                }
                if let Some(b) = bias {
                    send(*b, g.dbias);
                }
            }
            Op::Activation { x, kind } => {
                let dx = val(*x).iter().zip(&dy).map(|(&xv, &g)| g * kind.derivative(xv)).collect();
                send(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                shape,
                cache,
            } => {
                let (dx, dgamma, dbeta) = batchnorm_backward(&dy, *shape, val(*gamma), cache);
                send(*x, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::MaxPool { x, argmax } => send(*x, pool::max_pool_backward(val(*x).len(), argmax, &dy)),
            Op::AvgPool { x, geo } => send(*x, pool::avg_pool_backward(geo, &dy)),
            Op::GlobalAvgPool { x, shape } => send(*x, pool::global_avg_backward(&dy, *shape)),
            Op::Linear { x, weight, bias } => {
                let (&[n, f], &[_, c]) = (nodes[x.0].value.shape(), nodes[weight.0].value.shape()) else {
                    unreachable!("checked in forward")
                };
                if nodes[x.0].requires_grad {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(MatRef::new(&dy, n, c), MatRef::t(val(*weight), f, c), T::zero(), &mut dx);
                    send(*x, dx);
                }
                if nodes[weight.0].requires_grad {
                    let mut dw = vec![T::zero(); f * c];
                    gemm(MatRef::t(val(*x), n, f), MatRef::new(&dy, n, c), T::zero(), &mut dw);
                    send(*weight, dw);
                }
                let mut db = vec![T::zero(); c];
                for row in dy.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                send(*bias, db);
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let classes = nodes[logits.0].value.shape()[1];
                send(*logits, softmax_cross_entropy_backward(probs, classes, labels, dy[0]));
            }
            Op::Add(a, b) => {
                send(*a, dy.clone());
                send(*b, dy);
            }
            Op::Mul(a, b) => {
                let da = dy.iter().zip(val(*b)).map(|(&g, &v)| g * v).collect();
                let db = dy.iter().zip(val(*a)).map(|(&g, &v)| g * v).collect();
                send(*a, da);
                send(*b, db);
            }
            Op::Scale { x, factor } => {
                let s = val(*factor)[0];
                let dfactor: T = dy.iter().zip(val(*x)).map(|(&g, &v)| g * v).sum();
                send(*x, dy.iter().map(|&g| g * s).collect());
                send(*factor, vec![dfactor]);
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                send(*x, vec![dy[0]; n]);
            }
        }
    }
}
