//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive evaluates eagerly, appends a node holding its output and
//! input references to the [`Tape`], and returns a [`Var`] handle. Node
//! indices are assigned in creation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! A tape can be differentiated once. A second `backward` call is rejected
//! with [`TensorError::Contract`]; build a fresh tape per forward pass.

use rand::Rng;

use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Vec<f64>),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogClamped(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    BlendRows(Var, Var, Vec<bool>),
    Transpose(Var),
    Sum(Var),
    SumCols(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for a single forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    differentiated: bool,
}

/// Accumulated gradients, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// participate in the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn participated(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        as_matrix(&self.nodes[v.0].value)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(op, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `a[m×n] + row[n]`, broadcasting the row over all rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).numel() != n {
            return Err(self.shape_err("add_row", a, row));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    /// `a[m×n] ⊙ col[m]`, scaling each row of `a` by one coefficient.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(col).numel() != m {
            return Err(self.shape_err("mul_col", a, col));
        }
        let c = self.value(col).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for o in &mut out[i * n..(i + 1) * n] {
                *o *= c[i];
            }
        }
        let rg = self.rg(a) || self.rg(col);
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::MulCol(a, col), rg))
    }

    /// Elementwise product with a constant array of the same size.
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(a).numel() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: self.shape(a).to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = self.value(a).data().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::MulConst(a, factors), rg))
    }

    /// `alpha · a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let t = self.map(a, |x| alpha * x + beta);
        let rg = self.rg(a);
        self.push(t, Op::Affine(a, alpha), rg)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let t = self.map(a, |x| x.max(floor).ln());
        let rg = self.rg(a);
        self.push(t, Op::LogClamped(a, floor), rg)
    }

    /// Softmax over the last axis of a 1-D or 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax(a, None)
    }

    /// Row-wise softmax where positions with `mask[i] == false` get exactly
    /// zero weight, as if their logit were −∞. A row with no unmasked entry
    /// yields all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(TensorError::Shape {
                    op: "masked_softmax",
                    left: self.shape(a).to_vec(),
                    right: vec![mask.len()],
                });
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let keep = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if keep(j) {
                    o[j] = (row[j] - max).exp();
                    total += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Domain {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let m = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = Tensor::new(vec![m, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Domain {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let n = self.dims(first).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pn != n {
                return Err(self.shape_err("concat_rows", first, p));
            }
            out.extend_from_slice(self.value(p).data());
            m += pm;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start >= end || end > n {
            return Err(TensorError::Domain {
                op: "slice_cols",
                msg: format!("range {start}..{end} out of bounds for width {n}"),
            });
        }
        let w = end - start;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        let t = Tensor::new(vec![m, w], out)?;
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start >= end || end > m {
            return Err(TensorError::Domain {
                op: "slice_rows",
                msg: format!("range {start}..{end} out of bounds for {m} rows"),
            });
        }
        let out = self.value(a).data()[start * n..end * n].to_vec();
        let rg = self.rg(a);
        let t = Tensor::new(vec![end - start, n], out)?;
        Ok(self.push(t, Op::SliceRows(a, start), rg))
    }

    /// Row lookup: `out[i] = table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        if indices.is_empty() {
            return Err(TensorError::Domain {
                op: "gather_rows",
                msg: "no indices".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(TensorError::Domain {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {m} rows"),
            });
        }
        let x = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&x[i * n..(i + 1) * n]);
        }
        let rg = self.rg(table);
        let t = Tensor::new(vec![indices.len(), n], out)?;
        Ok(self.push(t, Op::GatherRows(table, indices.to_vec()), rg))
    }

    /// Row-wise select: row `i` comes from `new` where `take_new[i]`, else from `old`.
    pub fn blend_rows(&mut self, new: Var, old: Var, take_new: &[bool]) -> Result<Var> {
        if self.shape(new) != self.shape(old) {
            return Err(self.shape_err("blend_rows", new, old));
        }
        let (m, n) = self.dims(new);
        if take_new.len() != m {
            return Err(TensorError::Shape {
                op: "blend_rows",
                left: self.shape(new).to_vec(),
                right: vec![take_new.len()],
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for (i, &t) in take_new.iter().enumerate() {
            let src = if t { new } else { old };
            out.extend_from_slice(&self.value(src).data()[i * n..(i + 1) * n]);
        }
        let rg = self.rg(new) || self.rg(old);
        let t = Tensor::new(self.shape(new).to_vec(), out)?;
        Ok(self.push(t, Op::BlendRows(new, old, take_new.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.rg(a);
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    /// Sum of all entries as a `[1 × 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Per-row sums: `[m×n] -> [m×1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let out = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.rg(a);
        let t = Tensor::new(vec![m, 1], out).expect("positive rows");
        self.push(t, Op::SumCols(a), rg)
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `drop_rate` and survivors are scaled by `1/(1 − drop_rate)`.
    /// In inference mode, or at rate 0, the input handle is returned as is.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, drop_rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&drop_rate) {
            return Err(TensorError::Domain {
                op: "dropout",
                msg: format!("drop rate must lie in [0, 1), got {drop_rate}"),
            });
        }
        if !training || drop_rate == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - drop_rate);
        let factors = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < drop_rate { 0.0 } else { keep_scale })
            .collect();
        self.mul_const(a, factors)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.differentiated {
            return Err(TensorError::Contract(
                "backward already ran on this tape; record a new tape".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        // Each arm writes into the gradient buffers of inputs that need one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.rg(v) {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).numel()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_nt_acc(g, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn_acc(av, g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, r) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*r, &mut |gr| {
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::MulCol(a, c) => {
                let n = self.dims(*a).1;
                let (av, cv) = (self.value(*a).data(), self.value(*c).data());
                acc(*a, &mut |ga| {
                    for (i, (gr, row)) in ga.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        gr.iter_mut().zip(row).for_each(|(x, y)| *x += y * cv[i]);
                    }
                });
                acc(*c, &mut |gc| {
                    for (i, (grow, arow)) in g.chunks(n).zip(av.chunks(n)).enumerate() {
                        gc[i] += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::MulConst(a, f) => {
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * f[i];
                    }
                });
            }
            Op::Affine(a, alpha) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += alpha * y));
            }
            Op::Sigmoid(a) => {
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::LogClamped(a, floor) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] > *floor {
                            ga[i] += g[i] / av[i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |ga| {
                    for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = gy.iter().zip(y).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            gx[j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    acc(p, &mut |gp| {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |gp| {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, y)| *x += y);
                    });
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.dims(*a).1;
                let w = node.value.cols();
                acc(*a, &mut |ga| {
                    for (i, row) in g.chunks(w).enumerate() {
                        let dst = &mut ga[i * n + start..i * n + start + w];
                        dst.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |ga| {
                    let dst = &mut ga[start * n..start * n + g.len()];
                    dst.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
            }
            Op::GatherRows(t, indices) => {
                let n = self.dims(*t).1;
                acc(*t, &mut |gt| {
                    for (row, &i) in g.chunks(n).zip(indices) {
                        gt[i * n..(i + 1) * n].iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::BlendRows(new, old, take_new) => {
                let n = self.dims(*new).1;
                for (v, want) in [(*new, true), (*old, false)] {
                    acc(v, &mut |gv| {
                        for (i, &t) in take_new.iter().enumerate() {
                            if t == want {
                                gv[i * n..(i + 1) * n]
                                    .iter_mut()
                                    .zip(&g[i * n..(i + 1) * n])
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::SumCols(a) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |ga| {
                    for (i, row) in ga.chunks_mut(n).enumerate() {
                        row.iter_mut().for_each(|x| *x += g[i]);
                    }
                });
            }
        }
    }
}

/// Logistic function, stable for large negative inputs.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
