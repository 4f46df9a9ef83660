use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv3d_backward, ConvGeometry};
use super::{lane_dot, lane_sum, Real, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
        /// Unfolded input columns kept for the weight gradient.
        cols: Option<Vec<T>>,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    Nll {
        logp: Var,
        labels: Vec<usize>,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        beta: Var,
    },
    WeightedSum(Vec<(Var, T)>),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Records operations in execution order; nodes are only ever appended, so
/// every node's inputs precede it and a single reverse sweep visits each node
/// once.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant by backward.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Gradient of the last backward pass with respect to a leaf. Leaves that
    /// require a gradient but were not reached by the loss read as zeros;
    /// constants and interior nodes yield `None`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        })
    }

    /// Clears all gradients so that backward may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Populates gradients of every grad-requiring leaf with d`loss`/d`leaf`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        // Interior gradients were consumed; leaf gradients remain.
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                geo,
                cols,
            } => {
                let (xi, wi) = (*input, *weight);
                let need_in = nodes[xi.0].requires_grad;
                let need_w = nodes[wi.0].requires_grad;
                let need_b = bias.is_some_and(|b| nodes[b.0].requires_grad);
                let mut gin = need_in.then(|| {
                    grads[xi.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); nodes[xi.0].value.len()])
                });
                let mut gw = need_w.then(|| {
                    grads[wi.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); nodes[wi.0].value.len()])
                });
                let mut gb = if need_b {
                    let b = bias.unwrap();
                    Some(
                        grads[b.0]
                            .take()
                            .unwrap_or_else(|| vec![T::zero(); nodes[b.0].value.len()]),
                    )
                } else {
                    None
                };
                conv3d_backward(
                    geo,
                    nodes[xi.0].value.data(),
                    nodes[wi.0].value.data(),
                    cols.as_deref(),
                    g,
                    gin.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gin {
                    grads[xi.0] = Some(v);
                }
                if let Some(v) = gw {
                    grads[wi.0] = Some(v);
                }
                if let Some(v) = gb {
                    grads[bias.unwrap().0] = Some(v);
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |b| {
                    for ((b, &gv), &xv) in b.iter_mut().zip(g).zip(xv) {
                        *b = *b + if xv > T::zero() { gv } else { T::zero() };
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let shape = nodes[x.0].value.shape();
                let cells: usize = shape[2..].iter().product();
                let inv = T::one() / T::of(cells as f64);
                acc(*x, &mut |b| {
                    for (chunk, &gv) in b.chunks_mut(cells).zip(g) {
                        let d = gv * inv;
                        chunk.iter_mut().for_each(|v| *v = *v + d);
                    }
                });
            }
            Op::Linear { x, weight, bias } => {
                let xs = nodes[x.0].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = nodes[weight.0].value.shape()[0];
                let (xd, wd) = (val(*x), val(*weight));
                acc(*x, &mut |b| unsafe {
                    // dx (n×din) += g (n×dout) · W (dout×din)
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        g.as_ptr(),
                        dout as isize,
                        1,
                        wd.as_ptr(),
                        din as isize,
                        1,
                        T::one(),
                        b.as_mut_ptr(),
                        din as isize,
                        1,
                    );
                });
                acc(*weight, &mut |b| unsafe {
                    // dW (dout×din) += gᵀ (dout×n) · x (n×din)
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        g.as_ptr(),
                        1,
                        dout as isize,
                        xd.as_ptr(),
                        din as isize,
                        1,
                        T::one(),
                        b.as_mut_ptr(),
                        din as isize,
                        1,
                    );
                });
                acc(*bias, &mut |b| {
                    for row in g.chunks(dout) {
                        for (bv, &gv) in b.iter_mut().zip(row) {
                            *bv = *bv + gv;
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let d = *nodes[x.0].value.shape().last().unwrap();
                let y = node.value.data();
                acc(*x, &mut |b| {
                    for ((brow, grow), yrow) in b.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let gsum = grow.iter().fold(T::zero(), |a, &v| a + v);
                        for ((bv, &gv), &yv) in brow.iter_mut().zip(grow).zip(yrow) {
                            *bv = *bv + gv - yv.exp() * gsum;
                        }
                    }
                });
            }
            Op::Add(a, b2) => {
                acc(*a, &mut |b| add_into(b, g));
                acc(*b2, &mut |b| add_into(b, g));
            }
            Op::Sub(a, b2) => {
                acc(*a, &mut |b| add_into(b, g));
                acc(*b2, &mut |b| {
                    for (bv, &gv) in b.iter_mut().zip(g) {
                        *bv = *bv - gv;
                    }
                });
            }
            Op::Mul(a, b2) => {
                let (av, bv2) = (val(*a), val(*b2));
                acc(*a, &mut |b| {
                    for ((bv, &gv), &o) in b.iter_mut().zip(g).zip(bv2) {
                        *bv = *bv + gv * o;
                    }
                });
                acc(*b2, &mut |b| {
                    for ((bv, &gv), &o) in b.iter_mut().zip(g).zip(av) {
                        *bv = *bv + gv * o;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(*x, &mut |b| {
                    for (bv, &gv) in b.iter_mut().zip(g) {
                        *bv = *bv + gv * c;
                    }
                });
            }
            Op::Exp(x) => {
                let y = node.value.data();
                acc(*x, &mut |b| {
                    for ((bv, &gv), &yv) in b.iter_mut().zip(g).zip(y) {
                        *bv = *bv + gv * yv;
                    }
                });
            }
            Op::Square(x) => {
                let xv = val(*x);
                let two = T::of(2.0);
                acc(*x, &mut |b| {
                    for ((bv, &gv), &x) in b.iter_mut().zip(g).zip(xv) {
                        *bv = *bv + two * x * gv;
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = g[0];
                acc(*x, &mut |b| b.iter_mut().for_each(|v| *v = *v + gv));
            }
            Op::MeanAll(x) => {
                let gv = g[0] / T::of(nodes[x.0].value.len() as f64);
                acc(*x, &mut |b| b.iter_mut().for_each(|v| *v = *v + gv));
            }
            Op::Nll { logp, labels } => {
                let d = nodes[logp.0].value.shape()[1];
                let gv = g[0] / T::of(labels.len() as f64);
                acc(*logp, &mut |b| {
                    for (n, &l) in labels.iter().enumerate() {
                        b[n * d + l] = b[n * d + l] - gv;
                    }
                });
            }
            Op::ChannelAffine { x, scale, shift } => {
                let shape = nodes[x.0].value.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let (xv, sv) = (val(*x), val(*scale));
                acc(*x, &mut |b| {
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * inner;
                            for (bv, &gv) in b[off..off + inner].iter_mut().zip(&g[off..off + inner]) {
                                *bv = *bv + gv * sv[ch];
                            }
                        }
                    }
                });
                acc(*scale, &mut |b| {
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * inner;
                            let d = g[off..off + inner]
                                .iter()
                                .zip(&xv[off..off + inner])
                                .fold(T::zero(), |a, (&gv, &x)| a + gv * x);
                            b[ch] = b[ch] + d;
                        }
                    }
                });
                acc(*shift, &mut |b| {
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * inner;
                            b[ch] = b[ch] + g[off..off + inner].iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
                beta,
            } => {
                let shape = nodes[x.0].value.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let m = T::of((n * inner) as f64);
                let gam = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * inner;
                        sum_g[ch] = sum_g[ch] + lane_sum(&g[off..off + inner]);
                        sum_gx[ch] = sum_gx[ch] + lane_dot(&g[off..off + inner], &xhat[off..off + inner]);
                    }
                }
                acc(*x, &mut |b| {
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * inner;
                            let k = gam[ch] * inv_std[ch] / m;
                            for ((bv, &gv), &xh) in b[off..off + inner]
                                .iter_mut()
                                .zip(&g[off..off + inner])
                                .zip(&xhat[off..off + inner])
                            {
                                *bv = *bv + k * (m * gv - sum_g[ch] - xh * sum_gx[ch]);
                            }
                        }
                    }
                });
                acc(*gamma, &mut |b| add_into(b, &sum_gx));
                acc(*beta, &mut |b| add_into(b, &sum_g));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, &mut |b| b[0] = b[0] + w * g[0]);
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
