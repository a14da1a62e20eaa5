//! Minimal reverse-mode autodiff tape over 2-D arrays. Every value is a
//! matrix; scalars are 1×1. Enough ops for a small transformer.

use ndarray::{Array2, Axis};

use crate::scalar::Scalar;

pub type NodeId = usize;

enum Op<S: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a 1×d row vector to every row.
    AddBroadcast(NodeId, NodeId),
    Scale(NodeId, S),
    /// Elementwise multiply by a constant (dropout masks, attention masks).
    MulConst(NodeId, Array2<S>),
    /// Adds a constant (additive attention masks).
    AddConst(NodeId),
    Relu(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise log-softmax.
    LogSoftmax(NodeId),
    /// Row-wise layer norm with learned 1×d gain and bias.
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, normed: Array2<S>, inv_std: Vec<S> },
    /// Row gather from an embedding table.
    Gather { table: NodeId, ids: Vec<usize> },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    SumAll(Vec<NodeId>),
    /// Σ_rows [ −(1−ε)·lp[r, t_r] − (ε/V)·Σ_v lp[r, v] ], a 1×1 value.
    SmoothedNll { logprobs: NodeId, targets: Vec<usize>, epsilon: S },
}

struct Node<S: Scalar> {
    value: Array2<S>,
    grad: Option<Array2<S>>,
    op: Op<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array2<S>> {
        self.nodes[id].grad.as_ref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_broadcast(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        let r = self.nodes[row].value.row(0).to_owned();
        for mut vr in v.rows_mut() {
            vr += &r;
        }
        self.push(v, Op::AddBroadcast(x, row))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = &self.nodes[a].value * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Array2<S>) -> NodeId {
        let v = &self.nodes[a].value * &mask;
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn add_const(&mut self, a: NodeId, c: &Array2<S>) -> NodeId {
        let v = &self.nodes[a].value + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(S::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
            row.mapv_inplace(|x| x - log_sum);
        }
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let eps = S::from_f64_lossy(1e-5);
        let xv = &self.nodes[x].value;
        let d = S::from_f64_lossy(xv.ncols() as f64);
        let mut normed = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in normed.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / d;
            let istd = S::one() / (var + eps).sqrt();
            inv_std.push(istd);
            row.mapv_inplace(|v| (v - mean) * istd);
        }
        let g = self.nodes[gain].value.row(0).to_owned();
        let b = self.nodes[bias].value.row(0).to_owned();
        let mut out = normed.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std })
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = &self.nodes[table].value;
        let mut v = Array2::<S>::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).assign(&t.row(id));
        }
        self.push(v, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x].value.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat shapes");
        self.push(v, Op::ConcatCols(parts))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Sum of 1×1 scalars.
    pub fn sum_scalars(&mut self, parts: Vec<NodeId>) -> NodeId {
        let mut total = S::zero();
        for &p in &parts {
            total += self.nodes[p].value[(0, 0)];
        }
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(parts))
    }

    pub fn smoothed_nll(&mut self, logprobs: NodeId, targets: &[usize], epsilon: S) -> NodeId {
        let lp = &self.nodes[logprobs].value;
        let vocab = S::from_f64_lossy(lp.ncols() as f64);
        let mut total = S::zero();
        for (r, &t) in targets.iter().enumerate() {
            let nll_target = -lp[(r, t)];
            let nll_mean = -lp.row(r).sum() / vocab;
            total += (S::one() - epsilon) * nll_target + epsilon * nll_mean;
        }
        self.push(
            Array2::from_elem((1, 1), total),
            Op::SmoothedNll { logprobs, targets: targets.to_vec(), epsilon },
        )
    }

    fn accumulate(&mut self, id: NodeId, g: Array2<S>) {
        match &mut self.nodes[id].grad {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a 1×1 loss node.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].value.dim(), (1, 1));
        self.nodes[loss].grad = Some(Array2::from_elem((1, 1), S::one()));
        for id in (0..=loss).rev() {
            let Some(g) = self.nodes[id].grad.clone() else { continue };
            // Ops are moved out temporarily to satisfy the borrow checker.
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    self.accumulate(*a, ga);
                    self.accumulate(*b, gb);
                }
                Op::Add(a, b) => {
                    self.accumulate(*a, g.clone());
                    self.accumulate(*b, g);
                }
                Op::AddBroadcast(x, row) => {
                    let row_grad = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(*x, g);
                    self.accumulate(*row, row_grad);
                }
                Op::Scale(a, c) => self.accumulate(*a, &g * *c),
                Op::MulConst(a, mask) => self.accumulate(*a, &g * mask),
                Op::AddConst(a) => self.accumulate(*a, g),
                Op::Relu(a) => {
                    let mask = self.nodes[*a].value.mapv(|x| {
                        if x > S::zero() { S::one() } else { S::zero() }
                    });
                    self.accumulate(*a, &g * &mask);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[id].value.clone();
                    let mut gx = &g * &y;
                    for (mut row, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        for (v, &yv) in row.iter_mut().zip(yrow) {
                            *v -= dot * yv;
                        }
                    }
                    self.accumulate(*a, gx);
                }
                Op::LogSoftmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut gx = g.clone();
                    for (mut row, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let gsum = row.sum();
                        for (v, &lv) in row.iter_mut().zip(yrow) {
                            *v -= gsum * lv.exp();
                        }
                    }
                    self.accumulate(*a, gx);
                }
                Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                    let gvec = self.nodes[*gain].value.row(0).to_owned();
                    let d = S::from_f64_lossy(normed.ncols() as f64);
                    let mut gx = Array2::<S>::zeros(normed.dim());
                    let mut ggain = Array2::<S>::zeros((1, normed.ncols()));
                    let mut gbias = Array2::<S>::zeros((1, normed.ncols()));
                    for r in 0..normed.nrows() {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        for j in 0..normed.ncols() {
                            ggain[(0, j)] += gr[j] * nr[j];
                            gbias[(0, j)] += gr[j];
                        }
                        // d(normed)/dx backprop for one row.
                        let gy: Vec<S> = (0..normed.ncols()).map(|j| gr[j] * gvec[j]).collect();
                        let mean_gy = gy.iter().cloned().sum::<S>() / d;
                        let mean_gy_n =
                            gy.iter().zip(nr).map(|(&a, &b)| a * b).sum::<S>() / d;
                        for j in 0..normed.ncols() {
                            gx[(r, j)] = inv_std[r] * (gy[j] - mean_gy - nr[j] * mean_gy_n);
                        }
                    }
                    self.accumulate(*x, gx);
                    self.accumulate(*gain, ggain);
                    self.accumulate(*bias, gbias);
                }
                Op::Gather { table, ids } => {
                    let dims = self.nodes[*table].value.dim();
                    let mut gt = Array2::<S>::zeros(dims);
                    for (r, &idx) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(idx);
                        row += &g.row(r);
                    }
                    self.accumulate(*table, gt);
                }
                Op::SliceCols { x, start, len } => {
                    let dims = self.nodes[*x].value.dim();
                    let mut gx = Array2::<S>::zeros(dims);
                    gx.slice_mut(ndarray::s![.., *start..start + len]).assign(&g);
                    self.accumulate(*x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let gp = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        self.accumulate(p, gp);
                        offset += w;
                    }
                }
                Op::Transpose(a) => self.accumulate(*a, g.t().to_owned()),
                Op::SumAll(parts) => {
                    for &p in parts {
                        self.accumulate(p, g.clone());
                    }
                }
                Op::SmoothedNll { logprobs, targets, epsilon } => {
                    let lp = &self.nodes[*logprobs].value;
                    let vocab = S::from_f64_lossy(lp.ncols() as f64);
                    let scale = g[(0, 0)];
                    let mut glp = Array2::<S>::from_elem(lp.dim(), -*epsilon / vocab * scale);
                    for (r, &t) in targets.iter().enumerate() {
                        glp[(r, t)] -= (S::one() - *epsilon) * scale;
                    }
                    self.accumulate(*logprobs, glp);
                }
            }
            self.nodes[id].op = op;
        }
    }
}
