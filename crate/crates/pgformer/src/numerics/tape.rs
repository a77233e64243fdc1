use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sqrt(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Reshape(NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SumAxis0(NodeId),
    SumAxis1(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

/// Records a forward computation and replays it in reverse.
///
/// One tape serves one forward pass. `backward` may be called repeatedly;
/// each call re-seeds the adjoints and accumulates (`+=`) into the
/// parameter store, so two calls without a gradient reset double the
/// stored gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of `id` after the most recent `backward` call.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = vec![0.0; value.numel()];
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient of its own.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.input(Tensor::scalar(v))
    }

    /// Leaf backed by a stored parameter; its value is snapshotted here and
    /// its adjoint flows back into the store on `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    /// Broadcast-add a `[n]` (or `[1, n]`) row vector to each row of `[m, n]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).mat_dims();
        let (rm, rn) = self.value(row).mat_dims();
        if rm != 1 || rn != n {
            return Err(Error::Dim {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(row).shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let rdata = self.value(row).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += rdata[j];
            }
        }
        let v = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Elementwise square root. Inputs must be non-negative (it is used on
    /// sums of squares); the subgradient at 0 is defined as 0.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Contract("sqrt of negative value".into()));
        }
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a)))
    }

    /// Row-wise softmax with max-subtraction for overflow safety.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).mat_dims();
        let x = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let v = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with affine gain/bias, eps = 1e-5.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, d) = self.value(x).mat_dims();
        if d < 2 {
            return Err(Error::Contract(format!(
                "layer_norm requires width >= 2, got {d}"
            )));
        }
        let (gm, gd) = self.value(gain).mat_dims();
        let (bm, bd) = self.value(bias).mat_dims();
        if gm != 1 || gd != d || bm != 1 || bd != d {
            return Err(Error::Dim {
                op: "layer_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut data = vec![0.0; m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let v = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias }))
    }

    /// `x @ w + b`, the fully connected layer.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).mat_dims();
        if start >= end || end > m {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{end} out of bounds for {m} rows"
            )));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let v = Tensor::new(vec![end - start, n], data)?;
        Ok(self.push(v, Op::SliceRows { x: a, start }))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).mat_dims();
        if start >= end || end > n {
            return Err(Error::Contract(format!(
                "slice_cols {start}..{end} out of bounds for {n} cols"
            )));
        }
        let w = end - start;
        let x = self.value(a).data();
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w].copy_from_slice(&x[i * n + start..i * n + end]);
        }
        let v = Tensor::new(vec![m, w], data)?;
        Ok(self.push(v, Op::SliceCols { x: a, start }))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let n = self.value(parts[0]).mat_dims().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.value(p).mat_dims();
            if pn != n {
                return Err(Error::Dim {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Concatenate matrices with equal row counts side by side (channel concat).
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).mat_dims().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).mat_dims().1).collect();
        for &p in parts {
            if self.value(p).mat_dims().0 != m {
                return Err(Error::Dim {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let v = Tensor::new(vec![m, n], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_axis0(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).mat_dims();
        let x = self.value(a).data();
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += x[i * n + j];
            }
        }
        let v = Tensor::new(vec![1, n], data).unwrap();
        self.push(v, Op::SumAxis0(a))
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_axis1(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.value(a).mat_dims();
        let x = self.value(a).data();
        let mut data = vec![0.0; m];
        for i in 0..m {
            data[i] = x[i * n..(i + 1) * n].iter().sum();
        }
        let v = Tensor::new(vec![m, 1], data).unwrap();
        self.push(v, Op::SumAxis1(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::MeanAll(a))
    }

    /// Reverse sweep from a scalar loss. Parameter adjoints accumulate into
    /// `store`; constant inputs receive adjoints on the tape only.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let grad = std::mem::take(&mut self.nodes[i].grad);
            match op {
                Op::Input => {}
                Op::Param(pid) => store.accumulate_grad(pid, &grad),
                Op::Add(a, b) => {
                    self.acc(a, &grad);
                    self.acc(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.acc(a, &grad);
                    self.acc_neg(b, &grad);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data().to_vec();
                    for (k, &g) in grad.iter().enumerate() {
                        self.nodes[a.0].grad[k] += g * bv[k];
                        self.nodes[b.0].grad[k] += g * av[k];
                    }
                }
                Op::Scale(a, c) => {
                    for (k, &g) in grad.iter().enumerate() {
                        self.nodes[a.0].grad[k] += g * c;
                    }
                }
                Op::AddRow(a, row) => {
                    let (m, n) = self.nodes[a.0].value.mat_dims();
                    self.acc(a, &grad);
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[row.0].grad[j] += grad[i * n + j];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.0].value.mat_dims();
                    let n = self.nodes[b.0].value.mat_dims().1;
                    let av = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data().to_vec();
                    // dA += dC @ B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grad[i * n + j] * bv[p * n + j];
                            }
                            self.nodes[a.0].grad[i * k + p] += s;
                        }
                    }
                    // dB += A^T @ dC
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av[i * k + p] * grad[i * n + j];
                            }
                            self.nodes[b.0].grad[p * n + j] += s;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = self.nodes[a.0].value.mat_dims();
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[a.0].grad[i * n + j] += grad[j * m + i];
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = self.nodes[a.0].value.data().to_vec();
                    for (k, &g) in grad.iter().enumerate() {
                        if av[k] > 0.0 {
                            self.nodes[a.0].grad[k] += g;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[i].value.data().to_vec();
                    for (k, &g) in grad.iter().enumerate() {
                        self.nodes[a.0].grad[k] += g * (1.0 - yv[k] * yv[k]);
                    }
                }
                Op::Sqrt(a) => {
                    let yv = self.nodes[i].value.data().to_vec();
                    for (k, &g) in grad.iter().enumerate() {
                        if yv[k] > 0.0 {
                            self.nodes[a.0].grad[k] += g * 0.5 / yv[k];
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = self.nodes[i].value.mat_dims();
                    let yv = self.nodes[i].value.data().to_vec();
                    for r in 0..m {
                        let y = &yv[r * n..(r + 1) * n];
                        let g = &grad[r * n..(r + 1) * n];
                        let dot: f64 = y.iter().zip(g).map(|(&yy, &gg)| yy * gg).sum();
                        for j in 0..n {
                            self.nodes[a.0].grad[r * n + j] += y[j] * (g[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    self.layer_norm_backward(i, x, gain, bias, &grad);
                }
                Op::Reshape(a) => self.acc(a, &grad),
                Op::SliceRows { x, start } => {
                    let n = self.nodes[x.0].value.mat_dims().1;
                    for (k, &g) in grad.iter().enumerate() {
                        self.nodes[x.0].grad[start * n + k] += g;
                    }
                }
                Op::SliceCols { x, start } => {
                    let n = self.nodes[x.0].value.mat_dims().1;
                    let (m, w) = self.nodes[i].value.mat_dims();
                    for r in 0..m {
                        for c in 0..w {
                            self.nodes[x.0].grad[r * n + start + c] += grad[r * w + c];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.numel();
                        for k in 0..len {
                            self.nodes[p.0].grad[k] += grad[off + k];
                        }
                        off += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let n = self.nodes[i].value.mat_dims().1;
                    let mut off = 0;
                    for p in parts {
                        let (pm, pw) = self.nodes[p.0].value.mat_dims();
                        for r in 0..pm {
                            for c in 0..pw {
                                self.nodes[p.0].grad[r * pw + c] += grad[r * n + off + c];
                            }
                        }
                        off += pw;
                    }
                }
                Op::SumAxis0(a) => {
                    let (m, n) = self.nodes[a.0].value.mat_dims();
                    for r in 0..m {
                        for c in 0..n {
                            self.nodes[a.0].grad[r * n + c] += grad[c];
                        }
                    }
                }
                Op::SumAxis1(a) => {
                    let (m, n) = self.nodes[a.0].value.mat_dims();
                    for r in 0..m {
                        for c in 0..n {
                            self.nodes[a.0].grad[r * n + c] += grad[r];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g = grad[0];
                    for slot in self.nodes[a.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
                Op::MeanAll(a) => {
                    let g = grad[0] / self.nodes[a.0].value.numel() as f64;
                    for slot in self.nodes[a.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
            }
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn acc(&mut self, a: NodeId, grad: &[f64]) {
        for (slot, &g) in self.nodes[a.0].grad.iter_mut().zip(grad) {
            *slot += g;
        }
    }

    fn acc_neg(&mut self, a: NodeId, grad: &[f64]) {
        for (slot, &g) in self.nodes[a.0].grad.iter_mut().zip(grad) {
            *slot -= g;
        }
    }

    fn layer_norm_backward(&mut self, _out: usize, x: NodeId, gain: NodeId, bias: NodeId, grad: &[f64]) {
        let (m, d) = self.nodes[x.0].value.mat_dims();
        let xs = self.nodes[x.0].value.data().to_vec();
        let g = self.nodes[gain.0].value.data().to_vec();
        let df = d as f64;
        for r in 0..m {
            let row = &xs[r * d..(r + 1) * d];
            let dy = &grad[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / df;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            // x_hat = (x - mean) * inv
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..d {
                let xhat = (row[j] - mean) * inv;
                let dxhat = dy[j] * g[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                self.nodes[gain.0].grad[j] += dy[j] * xhat;
                self.nodes[bias.0].grad[j] += dy[j];
            }
            for j in 0..d {
                let xhat = (row[j] - mean) * inv;
                let dxhat = dy[j] * g[j];
                self.nodes[x.0].grad[r * d + j] +=
                    inv * (dxhat - sum_dxhat / df - xhat * sum_dxhat_xhat / df);
            }
        }
    }
}
