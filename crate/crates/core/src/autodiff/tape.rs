//! Tensor-level reverse-mode tape.
//!
//! Every node holds a real [`Tensor`]. Complex quantities are carried as a
//! pair of nodes (real and imaginary planes, or moduli and arguments), so
//! each complex operation is recorded as a composition of real operations.
//! Each op stores what its backward rule needs and nothing else.

use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    Cos(Var),
    Sin(Var),
    RowNorm(Var),
    DivRows { a: Var, s: Var, eps: f64 },
    RowKron(Var, Var),
    RowOuterSum(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Softmax(Var),
    Windows { lambda: Var, windows: Vec<(usize, usize)> },
    MaxPool { a: Var, argmax: Vec<usize> },
    MeanPool(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Gather { .. } => "gather",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Cos(_) => "cos",
            Op::Sin(_) => "sin",
            Op::RowNorm(_) => "row_norm",
            Op::DivRows { .. } => "div_rows",
            Op::RowKron(..) => "row_kron",
            Op::RowOuterSum(..) => "row_outer_sum",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Softmax(_) => "softmax",
            Op::Windows { .. } => "window_softmax",
            Op::MaxPool { .. } => "max_pool",
            Op::MeanPool(_) => "mean_pool",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation for a single backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Fails with the first op that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node { op, value });
        Var(idx)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    /// Row lookup into a parameter table (embedding-style).
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, ids: &[usize]) -> Var {
        let table = store.value(id);
        let mut data = Vec::with_capacity(ids.len() * table.cols);
        for &i in ids {
            data.extend_from_slice(table.row(i));
        }
        let value = Tensor::from_vec(ids.len(), table.cols, data);
        self.push(Op::Gather { param: id, ids: ids.to_vec() }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT(a, b), value)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(bias), (1, cols), "bias shape");
        let mut value = self.value(a).clone();
        let b = self.value(bias);
        for r in 0..rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(Op::AddBias(a, bias), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    /// Subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), value)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        self.push(Op::Sin(a), value)
    }

    /// L2 norm of each row, as an `m x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows)
            .map(|r| t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::from_vec(t.rows, 1, data);
        self.push(Op::RowNorm(a), value)
    }

    /// Divides row `i` of `a` by `s[i] + eps`.
    pub fn div_rows(&mut self, a: Var, s: Var, eps: f64) -> Var {
        let (rows, _) = self.shape(a);
        assert_eq!(self.shape(s), (rows, 1), "div_rows divisor shape");
        let mut value = self.value(a).clone();
        let sv = self.value(s);
        for r in 0..rows {
            let d = sv.data[r] + eps;
            value.row_mut(r).iter_mut().for_each(|x| *x /= d);
        }
        self.push(Op::DivRows { a, s, eps }, value)
    }

    /// Per-row Kronecker product: `out[i, j*q + k] = a[i, j] * b[i, k]`.
    pub fn row_kron(&mut self, a: Var, b: Var) -> Var {
        let value = row_pair(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::RowKron(a, b), value)
    }

    /// Per-row outer sum: `out[i, j*q + k] = a[i, j] + b[i, k]`.
    pub fn row_outer_sum(&mut self, a: Var, b: Var) -> Var {
        let value = row_pair(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::RowOuterSum(a, b), value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat_cols row mismatch");
                value.row_mut(r)[off..off + t.cols].copy_from_slice(t.row(r));
                off += t.cols;
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, data))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols, "slice_cols out of range");
        let mut value = Tensor::zeros(t.rows, len);
        for r in 0..t.rows {
            value.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { a, start }, value)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows, "slice_rows out of range");
        let value = Tensor::from_vec(len, t.cols, t.data[start * t.cols..(start + len) * t.cols].to_vec());
        self.push(Op::SliceRows { a, start }, value)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for r in 0..t.rows {
            softmax_in_place(value.row_mut(r));
        }
        self.push(Op::Softmax(a), value)
    }

    /// Mixture-weight matrix for sliding windows.
    ///
    /// `lambda` is an `L x 1` column of word weights. Column `c` of the
    /// `L x C` result holds the softmax of `lambda` over window `c`
    /// (`(start, len)`) and zero elsewhere.
    pub fn window_softmax(&mut self, lambda: Var, windows: &[(usize, usize)]) -> Var {
        let lam = self.value(lambda);
        assert_eq!(lam.cols, 1, "window weights expect a column");
        let mut value = Tensor::zeros(lam.rows, windows.len());
        for (c, &(start, len)) in windows.iter().enumerate() {
            assert!(len >= 1 && start + len <= lam.rows, "window out of range");
            let mut w: Vec<f64> = lam.data[start..start + len].to_vec();
            softmax_in_place(&mut w);
            for (i, wi) in w.into_iter().enumerate() {
                value.set(start + i, c, wi);
            }
        }
        self.push(Op::Windows { lambda, windows: windows.to_vec() }, value)
    }

    /// Row-wise max, returned as a `1 x rows` row. Ties go to the smallest
    /// column index, which also receives the whole gradient.
    pub fn max_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut argmax = Vec::with_capacity(t.rows);
        let mut data = Vec::with_capacity(t.rows);
        for r in 0..t.rows {
            let row = t.row(r);
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = c;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        self.push(Op::MaxPool { a, argmax }, Tensor::row_vector(data))
    }

    /// Row-wise mean, returned as a `1 x rows` row.
    pub fn mean_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows).map(|r| t.row(r).iter().sum::<f64>() / t.cols as f64).collect();
        self.push(Op::MeanPool(a), Tensor::row_vector(data))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(Op::Sum(a), value)
    }

    /// Smallest distance of any piecewise-linear op from its kink: ReLU and
    /// abs inputs from zero, and the top-two gap of every max-pool row.
    /// Finite differences are only trustworthy when this is not tiny.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    for &x in &self.nodes[a.0].value.data {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MaxPool { a, argmax } => {
                    let t = &self.nodes[a.0].value;
                    for (r, &best) in argmax.iter().enumerate() {
                        let top = t.get(r, best);
                        for (c, &x) in t.row(r).iter().enumerate() {
                            if c != best {
                                margin = margin.min(top - x);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from the scalar node `loss`. Gradients of parameters
    /// that did not take part in the computation stay zero.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Gradients {
        let mut param_grads = store.zero_grads();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let (r, c) = self.shape(loss);
        assert_eq!((r, c), (1, 1), "backward needs a scalar loss");
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => param_grads.get_mut(*id).add_assign(&g),
                Op::Gather { param, ids } => {
                    let pg = param_grads.get_mut(*param);
                    for (r, &i) in ids.iter().enumerate() {
                        for (x, y) in pg.row_mut(i).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(val(b));
                    let gb = val(a).matmul_tn(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.matmul(val(b));
                    let gb = g.matmul_tn(val(a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(a, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(b), |x, y| x * y);
                    let gb = g.zip_map(val(a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let ga = g.zip_map(val(a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(val(a), |x, y| {
                        if y > 0.0 {
                            x
                        } else if y < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))),
                Op::Cos(a) => accumulate(&mut grads, *a, g.zip_map(val(a), |x, y| -x * y.sin())),
                Op::Sin(a) => accumulate(&mut grads, *a, g.zip_map(val(a), |x, y| x * y.cos())),
                Op::RowNorm(a) => {
                    let av = val(a);
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        let n = out.data[r];
                        if n > 0.0 {
                            let k = g.data[r] / n;
                            for (x, y) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                                *x = k * y;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::DivRows { a, s, eps } => {
                    let (av, sv) = (val(a), val(s));
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    let mut gs = Tensor::zeros(av.rows, 1);
                    for r in 0..av.rows {
                        let d = sv.data[r] + eps;
                        let mut dot = 0.0;
                        for ((x, &gy), &ay) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *x = gy / d;
                            dot += gy * ay;
                        }
                        gs.data[r] = -dot / (d * d);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *s, gs);
                }
                Op::RowKron(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let (mut ga, mut gb) = (Tensor::zeros(av.rows, av.cols), Tensor::zeros(bv.rows, bv.cols));
                    let q = bv.cols;
                    for r in 0..av.rows {
                        let grow = g.row(r);
                        for j in 0..av.cols {
                            let a_rj = av.get(r, j);
                            let block = &grow[j * q..(j + 1) * q];
                            let mut acc = 0.0;
                            for (k, &gy) in block.iter().enumerate() {
                                acc += gy * bv.get(r, k);
                                gb.data[r * q + k] += gy * a_rj;
                            }
                            ga.data[r * av.cols + j] = acc;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::RowOuterSum(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let (mut ga, mut gb) = (Tensor::zeros(av.rows, av.cols), Tensor::zeros(bv.rows, bv.cols));
                    let q = bv.cols;
                    for r in 0..av.rows {
                        let grow = g.row(r);
                        for j in 0..av.cols {
                            let block = &grow[j * q..(j + 1) * q];
                            ga.data[r * av.cols + j] = block.iter().sum();
                            for (k, &gy) in block.iter().enumerate() {
                                gb.data[r * q + k] += gy;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        let mut gp = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        let gp = Tensor::from_vec(rows, g.cols, g.data[off * g.cols..(off + rows) * g.cols].to_vec());
                        off += rows;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SliceCols { a, start } => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows { a, start } => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.data[start * cols..(start + g.rows) * cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let mut ga = Tensor::zeros(out.rows, out.cols);
                    for r in 0..out.rows {
                        let (y, gy) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((x, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gy) {
                            *x = yi * (gi - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Windows { lambda, windows } => {
                    let mut gl = Tensor::zeros(out.rows, 1);
                    for (c, &(start, len)) in windows.iter().enumerate() {
                        let dot: f64 = (start..start + len).map(|i| out.get(i, c) * g.get(i, c)).sum();
                        for i in start..start + len {
                            gl.data[i] += out.get(i, c) * (g.get(i, c) - dot);
                        }
                    }
                    accumulate(&mut grads, *lambda, gl);
                }
                Op::MaxPool { a, argmax } => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for (r, &c) in argmax.iter().enumerate() {
                        ga.set(r, c, g.data[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanPool(a) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let v = g.data[r] / cols as f64;
                        ga.row_mut(r).iter_mut().for_each(|x| *x = v);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(rows, cols, g.data[0]));
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row_pair(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.rows, b.rows, "row-pair ops need equal row counts");
    let (p, q) = (a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, p * q);
    for r in 0..a.rows {
        let (ar, br) = (a.row(r), b.row(r));
        let orow = out.row_mut(r);
        for (j, &x) in ar.iter().enumerate() {
            for (k, &y) in br.iter().enumerate() {
                orow[j * q + k] = f(x, y);
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    xs.iter_mut().for_each(|x| *x /= total);
}
