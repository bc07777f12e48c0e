use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds accepted by [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Sum,
    Mean,
    Concat,
    Softplus,
    Tanh,
    Cos,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    GatherCols(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
    Softplus(Var),
    Tanh(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and the backward sweep is a plain reverse iteration.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
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
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerics {
                step: None,
                detail: format!("{name} produced a non-finite value"),
            });
        }
        Ok(self.push(value, op))
    }

    /// Generic entry point for the fixed-arity primitives.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let want = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = want {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Sum => Ok(self.sum(inputs[0])),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Concat => self.concat_cols(inputs),
            OpKind::Softplus => Ok(self.softplus(inputs[0])),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Cos => Ok(self.cos(inputs[0])),
            OpKind::Exp => self.exp(inputs[0]),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Square => self.square(inputs[0]),
        }
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_checked("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_checked("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_checked("mul", v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], data)?;
        self.push_checked("matmul", v, Op::MatMul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        self.push_checked("scale", v, Op::Scale(a, c))
    }

    /// Adds the `[1, n]` row `b` to every row of the `[m, n]` matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let (one, n2) = self.value(b).dims2()?;
        if one != 1 || n != n2 {
            return Err(shape_err("add_row", self.shape(a), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            for (o, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let v = Tensor::new(vec![m, n], data)?;
        self.push_checked("add_row", v, Op::AddRow(a, b))
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let s: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(a)))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(shape_err("concat", self.shape(*first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        if start > end || end > cols {
            return Err(Error::Shape(format!(
                "slice {start}..{end} out of range for {cols} columns"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let v = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Selects the listed columns (in the listed order).
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for {cols} columns"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            data.extend(idx.iter().map(|&i| src[r * cols + i]));
        }
        let v = Tensor::new(vec![rows, idx.len()], data)?;
        Ok(self.push(v, Op::GatherCols(a, idx.to_vec())))
    }

    /// Places the columns of `a` at positions `idx` of a zero matrix with
    /// `width` columns. Indices must be distinct.
    pub fn scatter_cols(&mut self, a: Var, idx: &[usize], width: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        if cols != idx.len() {
            return Err(Error::Shape(format!(
                "scatter of {cols} columns with {} indices",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= width) {
            return Err(Error::Shape(format!(
                "scatter index {bad} out of range for width {width}"
            )));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; rows * width];
        for r in 0..rows {
            for (c, &i) in idx.iter().enumerate() {
                data[r * width + i] = src[r * cols + c];
            }
        }
        let v = Tensor::new(vec![rows, width], data)?;
        Ok(self.push(v, Op::ScatterCols(a, idx.to_vec())))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push_checked("exp", v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push_checked("square", v, Op::Square(a))
    }

    /// Summed negative log-likelihood of `labels` under `softmax(logits)`
    /// for `logits` of shape `[batch, classes]`, evaluated with a
    /// max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "cross_entropy: {b} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Domain(format!("label {bad} out of range for {c} classes")));
        }
        let z = self.value(logits).data();
        let mut nll = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &z[r * c..(r + 1) * c];
            nll += logsumexp(row) - row[y];
        }
        self.push_checked(
            "cross_entropy",
            Tensor::scalar(nll),
            Op::CrossEntropy(logits, labels.to_vec()),
        )
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    Self::accumulate(&mut grads, *a, g.clone());
                    Self::accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    Self::accumulate(&mut grads, *a, g.clone());
                    Self::accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    Self::accumulate(&mut grads, *a, ga);
                    Self::accumulate(&mut grads, *b, gb);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, n) = self.value(*b).dims2()?;
                    let ga = matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    let gb = matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    Self::accumulate(&mut grads, *a, Tensor::new(vec![m, k], ga)?);
                    Self::accumulate(&mut grads, *b, Tensor::new(vec![k, n], gb)?);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    Self::accumulate(&mut grads, *a, g.map(|x| c * x));
                }
                Op::AddRow(a, b) => {
                    let (m, n) = g.dims2()?;
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for (acc, &x) in gb.iter_mut().zip(g.row_slice(r)) {
                            *acc += x;
                        }
                    }
                    Self::accumulate(&mut grads, *b, Tensor::row(gb));
                    Self::accumulate(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    Self::accumulate(&mut grads, *a, Tensor::filled(self.shape(*a), s));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    let s = g.data()[0] / n;
                    Self::accumulate(&mut grads, *a, Tensor::filled(self.shape(*a), s));
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (_, w) = self.value(p).dims2()?;
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        Self::accumulate(&mut grads, p, Tensor::new(vec![rows, w], data)?);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).dims2()?;
                    let (_, w) = g.dims2()?;
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        data[r * cols + start..r * cols + start + w]
                            .copy_from_slice(g.row_slice(r));
                    }
                    Self::accumulate(&mut grads, *a, Tensor::new(vec![rows, cols], data)?);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    Self::accumulate(&mut grads, *a, g.reshaped(shape)?);
                }
                Op::GatherCols(a, idx) => {
                    let (rows, cols) = self.value(*a).dims2()?;
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for (c, &i) in idx.iter().enumerate() {
                            data[r * cols + i] += g.data()[r * idx.len() + c];
                        }
                    }
                    Self::accumulate(&mut grads, *a, Tensor::new(vec![rows, cols], data)?);
                }
                Op::ScatterCols(a, idx) => {
                    let (rows, width) = g.dims2()?;
                    let mut data = Vec::with_capacity(rows * idx.len());
                    for r in 0..rows {
                        data.extend(idx.iter().map(|&i| g.data()[r * width + i]));
                    }
                    Self::accumulate(&mut grads, *a, Tensor::new(vec![rows, idx.len()], data)?);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * sigmoid(y));
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Cos(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| -x * y.sin());
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x / y);
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| 2.0 * x * y);
                    Self::accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy(logits, labels) => {
                    let upstream = g.data()[0];
                    let z = self.value(*logits);
                    let (b, c) = z.dims2()?;
                    let mut data = Vec::with_capacity(b * c);
                    for (r, &y) in labels.iter().enumerate() {
                        let row = z.row_slice(r);
                        let lse = logsumexp(row);
                        for (j, &zj) in row.iter().enumerate() {
                            let p = (zj - lse).exp();
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            data.push(upstream * (p - onehot));
                        }
                    }
                    Self::accumulate(&mut grads, *logits, Tensor::new(vec![b, c], data)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Gradients of a scalar loss with respect to every recorded node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients> {
    tape.backward(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &mut Tape, x: f64) -> Var {
        tape.leaf(Tensor::row(vec![x]))
    }

    #[test]
    fn softplus_at_zero_is_ln2_with_half_gradient() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 0.0);
        let y = tape.softplus(x);
        assert!((tape.value(y).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!((g.get(x).unwrap().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = tape.leaf(Tensor::new(vec![2, 1], vec![3.0, -4.0]).unwrap());
        let out = tape.matmul(i2, v).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, -4.0]);
    }

    #[test]
    fn cos_of_drift_argument() {
        let mut tape = Tape::new();
        let t = scalar_leaf(&mut tape, 20.0 * 0.3);
        let c = tape.cos(t);
        assert!((tape.value(c).data()[0] - 0.960_170_286_650_366).abs() < 1e-12);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let ww = tape.mul(w, w).unwrap();
        let loss = tape.sum(ww);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(g.get(loss).unwrap().data(), &[1.0]);
    }

    #[test]
    fn shape_and_domain_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(tape.matmul(a, a), Err(Error::Shape(_))));
        let z = tape.leaf(Tensor::row(vec![1.0, 0.0]));
        assert!(matches!(tape.log(z), Err(Error::Domain(_))));
        assert!(matches!(
            tape.apply(OpKind::Add, &[a]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = tape.square(a).unwrap();
        assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_of_equal_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[1, 2]));
        let nll = tape.cross_entropy(z, &[1]).unwrap();
        assert!((tape.value(nll).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        let g = tape.backward(nll).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let g = tape.gather_cols(a, &[3, 1]).unwrap();
        assert_eq!(tape.value(g).data(), &[4.0, 2.0]);
        let s = tape.scatter_cols(g, &[3, 1], 4).unwrap();
        assert_eq!(tape.value(s).data(), &[0.0, 2.0, 0.0, 4.0]);
        let w = tape.leaf(Tensor::row(vec![10.0, 20.0, 30.0, 40.0]));
        let p = tape.mul(s, w).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 20.0, 0.0, 40.0]);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.1, -0.7, 1.3, 0.4, 2.2, -1.9]).unwrap());
            let w = tape.leaf(Tensor::new(vec![3, 2], vec![0.5, -0.2, 0.3, 0.9, -1.1, 0.05]).unwrap());
            let b = tape.leaf(Tensor::row(vec![0.01, -0.02]));
            let h = tape.matmul(x, w).unwrap();
            let h = tape.add_row(h, b).unwrap();
            let h = tape.softplus(h);
            let h = tape.tanh(h);
            let l = tape.sum(h);
            let g = tape.backward(l).unwrap();
            (
                tape.value(l).data().to_vec(),
                g.get(w).unwrap().data().to_vec(),
                g.get(x).unwrap().data().to_vec(),
            )
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
