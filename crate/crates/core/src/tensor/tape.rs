use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Abs,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
        broadcast: bool,
    },
    Unary {
        kind: UnaryKind,
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Softmax(Var),
    Reduce {
        kind: ReduceKind,
        input: Var,
        axis: Option<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
    },
    SumSquares(Var),
    SelectRows {
        input: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    PairwiseSum {
        src: Var,
        dst: Var,
    },
    Reshape(Var),
    BroadcastRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in execution order, which is a topological order of the
/// computation graph; [`Tape::backward`] walks it once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated adjoint of `v`; zeros when no gradient reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn has_grad(&self, v: Var) -> bool {
        matches!(self.grads.get(v.0), Some(Some(_)))
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Drops every node recorded after the first `len`. Gradients already
    /// accumulated in the surviving nodes are kept.
    pub fn rewind(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: BinaryKind, lhs: Var, rhs: Var, name: &'static str) -> Result<Var> {
        let (sl, sr) = (self.shape(lhs).to_vec(), self.shape(rhs).to_vec());
        let broadcast = if sl == sr {
            false
        } else if sl.len() == 2
            && ((sr.len() == 2 && sr[0] == 1 && sr[1] == sl[1])
                || (sr.len() == 1 && sr[0] == sl[1]))
        {
            true
        } else {
            return Err(Error::shape(name, &sl, &sr));
        };
        let l = self.value(lhs).data();
        let r = self.value(rhs).data();
        let width = r.len().max(1);
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<f64> = if broadcast {
            l.iter()
                .enumerate()
                .map(|(i, &x)| f(x, r[i % width]))
                .collect()
        } else {
            l.iter().zip(r).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(sl, out)?;
        let rg = self.rg(&[lhs, rhs]);
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                lhs,
                rhs,
                broadcast,
            },
            rg,
        ))
    }

    /// Elementwise sum; `rhs` may be a row vector broadcast over the rows of `lhs`.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, lhs, rhs, "add")
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, lhs, rhs, "sub")
    }

    /// Hadamard product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, lhs, rhs, "hadamard")
    }

    fn unary(&mut self, kind: UnaryKind, input: Var) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::LeakyRelu(s) => {
                    if v > 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                UnaryKind::Abs => v.abs(),
                UnaryKind::Scale(c) => c * v,
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("unary shape");
        let rg = self.rg(&[input]);
        self.push(value, Op::Unary { kind, input }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    /// Concatenates along `axis`. Rank-1 inputs only support axis 0; rank-2
    /// inputs stack rows (axis 0) or join columns (axis 1).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        let rank = s0.len();
        if axis >= rank.max(1) || rank == 0 {
            return Err(Error::Axis {
                op: "concat",
                axis,
                rank,
            });
        }
        for v in &inputs[1..] {
            let s = self.shape(*v);
            let ok = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == s0[d]);
            if !ok {
                return Err(Error::shape("concat", &s0, s));
            }
        }
        let total: usize = inputs.iter().map(|v| self.shape(*v)[axis]).sum();
        let mut shape = s0.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(shape.iter().product());
        if rank == 1 || axis == 0 {
            for v in inputs {
                data.extend_from_slice(self.value(*v).data());
            }
        } else {
            for r in 0..s0[0] {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row(r));
                }
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Masked
    /// entries come out exactly zero. Rank-1 inputs are a single row.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() || t.rank() > 2 {
            return Err(Error::shape("masked_softmax", t.shape(), &[mask.len()]));
        }
        let cols = t.cols();
        let mut out = vec![0.0; t.numel()];
        if cols > 0 {
            for (r, (row, mrow)) in t.data().chunks(cols).zip(mask.chunks(cols)).enumerate() {
                let max = row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::EmptyNeighborhood { row: r });
                }
                let orow = &mut out[r * cols..(r + 1) * cols];
                let mut z = 0.0;
                for ((o, &v), &m) in orow.iter_mut().zip(row).zip(mrow) {
                    if m {
                        *o = (v - max).exp();
                        z += *o;
                    }
                }
                for o in orow.iter_mut() {
                    *o /= z;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mask = vec![true; self.value(x).numel()];
        self.masked_softmax(x, &mask)
    }

    fn reduce(&mut self, kind: ReduceKind, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        let (value, count) = match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                let n = t.numel();
                let v = if kind == ReduceKind::Mean { s / n as f64 } else { s };
                (Tensor::scalar(v), n)
            }
            Some(a) if a >= t.rank() => {
                return Err(Error::Axis {
                    op: "reduce",
                    axis: a,
                    rank: t.rank(),
                })
            }
            Some(a) => {
                let (rows, cols) = (t.rows(), t.cols());
                let mut shape = t.shape().to_vec();
                shape[a] = 1;
                let (out, n) = if t.rank() == 1 || a == 1 {
                    let out: Vec<f64> = (0..rows).map(|r| t.row(r).iter().sum()).collect();
                    (out, cols)
                } else {
                    let mut out = vec![0.0; cols];
                    for r in 0..rows {
                        for (o, v) in out.iter_mut().zip(t.row(r)) {
                            *o += v;
                        }
                    }
                    (out, rows)
                };
                let out = if kind == ReduceKind::Mean {
                    out.into_iter().map(|v| v / n as f64).collect()
                } else {
                    out
                };
                (Tensor::new(shape, out)?, n)
            }
        };
        if count == 0 && kind == ReduceKind::Mean {
            return Err(Error::Contract("mean over an empty axis".into()));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                input: x,
                axis,
            },
            rg,
        ))
    }

    /// Sum over `axis` (kept with size 1), or over everything when `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, axis)
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout { input: x, mask }, rg))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != 1 || t.rank() > 2 {
            return Err(Error::shape("cross_entropy", t.shape(), &[1, t.cols()]));
        }
        if target >= t.numel() {
            return Err(Error::Contract(format!(
                "target class {target} out of range for {} classes",
                t.numel()
            )));
        }
        let v = log_sum_exp(t.data()) - t.data()[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(v), Op::CrossEntropy { logits, target }, rg))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_squares();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(v), Op::SumSquares(x), rg)
    }

    /// Cross-entropy plus `lambda` times the squared L2 norm of `weights`.
    pub fn cross_entropy_with_l2(
        &mut self,
        logits: Var,
        target: usize,
        weights: &[Var],
        lambda: f64,
    ) -> Result<Var> {
        if lambda < 0.0 {
            return Err(Error::Config(format!("negative L2 coefficient {lambda}")));
        }
        let mut loss = self.cross_entropy(logits, target)?;
        if lambda > 0.0 {
            for &w in weights {
                let sq = self.sum_squares(w);
                let term = self.scale(sq, lambda);
                loss = self.add(loss, term)?;
            }
        }
        Ok(loss)
    }

    /// Gathers rows (with repetition) from a rank-2 tensor.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::shape("select_rows", t.shape(), &[rows.len()]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::Contract(format!(
                "row {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![rows.len(), t.cols()], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::SelectRows {
                input: x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start + len > t.cols() {
            return Err(Error::shape("slice_cols", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![t.rows(), len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols { input: x, start }, rg))
    }

    /// Given column vectors `src` and `dst` of length n, returns the n×n
    /// matrix with entries `src[i] + dst[j]`.
    pub fn pairwise_sum(&mut self, src: Var, dst: Var) -> Result<Var> {
        let (s, d) = (self.value(src), self.value(dst));
        if s.cols() != 1 || d.cols() != 1 || s.rank() != 2 || d.rank() != 2 {
            return Err(Error::shape("pairwise_sum", s.shape(), d.shape()));
        }
        let (n, m) = (s.rows(), d.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let si = s.data()[i];
            data.extend(d.data().iter().map(|dj| si + dj));
        }
        let value = Tensor::new(vec![n, m], data)?;
        let rg = self.rg(&[src, dst]);
        Ok(self.push(value, Op::PairwiseSum { src, dst }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())
            .map_err(|_| Error::shape("reshape", t.shape(), shape))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 || t.rank() > 2 {
            return Err(Error::shape("broadcast_rows", t.shape(), &[1, t.cols()]));
        }
        let cols = t.cols();
        let data = t.data().repeat(n);
        let value = Tensor::new(vec![n, cols], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::BroadcastRows(x), rg))
    }

    /// Accumulates d`loss`/d`v` into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0].get_or_insert_with(|| vec![0.0])[0] += 1.0;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if let Some(ga) = acc(grads, nodes, *a) {
                // dA = dC · Bᵀ
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        ga[r * k + p] += dot(grow, &tb.data()[p * n..(p + 1) * n]);
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                // dB = Aᵀ · dC
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = ta.data()[r * k + p];
                        if av != 0.0 {
                            axpy(av, grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
        }
        Op::Binary {
            kind,
            lhs,
            rhs,
            broadcast,
        } => {
            let (l, r) = (nodes[lhs.0].value.data(), nodes[rhs.0].value.data());
            let width = r.len().max(1);
            let ri = |j: usize| if *broadcast { j % width } else { j };
            if let Some(gl) = acc(grads, nodes, *lhs) {
                for (j, gj) in g.iter().enumerate() {
                    gl[j] += match kind {
                        BinaryKind::Add | BinaryKind::Sub => *gj,
                        BinaryKind::Mul => gj * r[ri(j)],
                    };
                }
            }
            if let Some(gr) = acc(grads, nodes, *rhs) {
                for (j, gj) in g.iter().enumerate() {
                    gr[ri(j)] += match kind {
                        BinaryKind::Add => *gj,
                        BinaryKind::Sub => -gj,
                        BinaryKind::Mul => gj * l[j],
                    };
                }
            }
        }
        Op::Unary { kind, input } => {
            let x = nodes[input.0].value.data();
            if let Some(gi) = acc(grads, nodes, *input) {
                for j in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Sigmoid => out[j] * (1.0 - out[j]),
                        UnaryKind::Tanh => 1.0 - out[j] * out[j],
                        UnaryKind::Relu => {
                            if x[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::LeakyRelu(s) => {
                            if x[j] > 0.0 {
                                1.0
                            } else {
                                *s
                            }
                        }
                        UnaryKind::Abs => {
                            if x[j] > 0.0 {
                                1.0
                            } else if x[j] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Scale(c) => *c,
                    };
                    gi[j] += g[j] * d;
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let rank = node.value.rank();
            if rank == 1 || *axis == 0 {
                let mut offset = 0;
                for v in inputs {
                    let n = nodes[v.0].value.numel();
                    if let Some(gi) = acc(grads, nodes, *v) {
                        for (a, b) in gi.iter_mut().zip(&g[offset..offset + n]) {
                            *a += b;
                        }
                    }
                    offset += n;
                }
            } else {
                let total = node.value.cols();
                let mut col = 0;
                for v in inputs {
                    let w = nodes[v.0].value.cols();
                    if let Some(gi) = acc(grads, nodes, *v) {
                        for r in 0..node.value.rows() {
                            let src = &g[r * total + col..r * total + col + w];
                            for (a, b) in gi[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    col += w;
                }
            }
        }
        Op::Softmax(input) => {
            let cols = node.value.cols();
            if let Some(gi) = acc(grads, nodes, *input) {
                if cols > 0 {
                    for r in 0..node.value.rows() {
                        let y = &out[r * cols..(r + 1) * cols];
                        let gy = &g[r * cols..(r + 1) * cols];
                        let s = dot(y, gy);
                        for c in 0..cols {
                            gi[r * cols + c] += y[c] * (gy[c] - s);
                        }
                    }
                }
            }
        }
        Op::Reduce { kind, input, axis } => {
            let t = &nodes[input.0].value;
            let (rows, cols) = (t.rows(), t.cols());
            if let Some(gi) = acc(grads, nodes, *input) {
                match axis {
                    None => {
                        let d = if *kind == ReduceKind::Mean {
                            g[0] / t.numel() as f64
                        } else {
                            g[0]
                        };
                        gi.iter_mut().for_each(|v| *v += d);
                    }
                    Some(a) if t.rank() == 1 || *a == 1 => {
                        for r in 0..rows {
                            let d = if *kind == ReduceKind::Mean {
                                g[r] / cols as f64
                            } else {
                                g[r]
                            };
                            gi[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v += d);
                        }
                    }
                    Some(_) => {
                        let scale = if *kind == ReduceKind::Mean {
                            1.0 / rows as f64
                        } else {
                            1.0
                        };
                        for r in 0..rows {
                            axpy(scale, g, &mut gi[r * cols..(r + 1) * cols]);
                        }
                    }
                }
            }
        }
        Op::Dropout { input, mask } => {
            if let Some(gi) = acc(grads, nodes, *input) {
                for ((a, b), m) in gi.iter_mut().zip(g).zip(mask) {
                    *a += b * m;
                }
            }
        }
        Op::CrossEntropy { logits, target } => {
            let x = nodes[logits.0].value.data();
            if let Some(gi) = acc(grads, nodes, *logits) {
                let lse = log_sum_exp(x);
                for (j, v) in x.iter().enumerate() {
                    let p = (v - lse).exp();
                    let t = if j == *target { 1.0 } else { 0.0 };
                    gi[j] += g[0] * (p - t);
                }
            }
        }
        Op::SumSquares(input) => {
            let x = nodes[input.0].value.data();
            if let Some(gi) = acc(grads, nodes, *input) {
                axpy(2.0 * g[0], x, gi);
            }
        }
        Op::SelectRows { input, rows } => {
            let cols = node.value.cols();
            if let Some(gi) = acc(grads, nodes, *input) {
                for (k, &r) in rows.iter().enumerate() {
                    axpy(1.0, &g[k * cols..(k + 1) * cols], &mut gi[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::SliceCols { input, start } => {
            let w = node.value.cols();
            let full = nodes[input.0].value.cols();
            if let Some(gi) = acc(grads, nodes, *input) {
                for r in 0..node.value.rows() {
                    axpy(
                        1.0,
                        &g[r * w..(r + 1) * w],
                        &mut gi[r * full + start..r * full + start + w],
                    );
                }
            }
        }
        Op::PairwiseSum { src, dst } => {
            let m = node.value.cols();
            if let Some(gs) = acc(grads, nodes, *src) {
                for (i, v) in gs.iter_mut().enumerate() {
                    *v += g[i * m..(i + 1) * m].iter().sum::<f64>();
                }
            }
            if let Some(gd) = acc(grads, nodes, *dst) {
                for row in g.chunks(m.max(1)) {
                    axpy(1.0, row, gd);
                }
            }
        }
        Op::Reshape(input) => {
            if let Some(gi) = acc(grads, nodes, *input) {
                axpy(1.0, g, gi);
            }
        }
        Op::BroadcastRows(input) => {
            let cols = node.value.cols();
            if let Some(gi) = acc(grads, nodes, *input) {
                for row in g.chunks(cols.max(1)) {
                    axpy(1.0, row, gi);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let tail: f64 = xr.iter().zip(yr).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
