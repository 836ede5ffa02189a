//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! walks the record in reverse and accumulates exact gradients for every leaf.
//! Node ids are plain indices, so the graph is acyclic by construction and
//! every node's inputs precede it.

use std::rc::Rc;

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Matmul(Var, Var),
    /// matrix + row vector, broadcast over rows
    AddRows(Var, Var),
    /// matrix * row vector, broadcast over rows
    MulRows(Var, Var),
    Concat(Vec<Var>, usize),
    /// (input, axis, start, end)
    Slice(Var, usize, usize, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    /// (input, row -> output row index, number of output rows)
    ScatterSumRows(Var, Rc<Vec<usize>>, usize),
    Sum(Var),
    Mean(Var),
    /// column sums of a matrix -> row vector
    SumAxis0(Var),
    /// softmax over the last axis (per row for matrices)
    Softmax(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Relu(Var),
    Abs(Var),
    Softplus(Var),
    Recip(Var),
    MaxElem(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients for every node of a tape, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `var`. Leaves not on a
    /// path to the root get a zero gradient.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a recorded node.
    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record an input (leaf) tensor. Gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Record a constant. Same as a leaf; the gradient is simply unused.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, Tensor::scalar(value))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.value(a).check_same_shape(self.value(b), op_name)?;
        let value = self.value(a).zip_map(self.value(b), f);
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn max_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("max_elem", a, b, f64::max, Op::MaxElem(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a, c), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.ndim() != 2 || vt.cols() != mt.cols() || vt.rows() != 1 {
            return Err(Error::Dimension {
                op: "add_rows",
                left: mt.shape().to_vec(),
                right: vt.shape().to_vec(),
            });
        }
        let cols = mt.cols();
        let mut value = mt.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (x, &b) in row.iter_mut().zip(&vt.data()[..cols]) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddRows(m, v), value))
    }

    /// Multiply every row of a matrix elementwise by a row vector.
    pub fn mul_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.ndim() != 2 || vt.cols() != mt.cols() || vt.rows() != 1 {
            return Err(Error::Dimension {
                op: "mul_rows",
                left: mt.shape().to_vec(),
                right: vt.shape().to_vec(),
            });
        }
        let cols = mt.cols();
        let mut value = mt.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (x, &b) in row.iter_mut().zip(&vt.data()[..cols]) {
                *x *= b;
            }
        }
        Ok(self.push(Op::MulRows(m, v), value))
    }

    /// Concatenate 2-D tensors along `axis` (0 = stack rows, 1 = widen rows).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Domain(format!(
                "concat needs parts along axis 0 or 1, got {} parts axis {axis}",
                parts.len()
            )));
        }
        let first = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            let s = self.value(p).shape();
            let ok = s.len() == 2 && first.len() == 2 && s[1 - axis] == first[1 - axis];
            if !ok {
                return Err(Error::Dimension {
                    op: "concat",
                    left: first,
                    right: s.to_vec(),
                });
            }
        }
        let value = if axis == 0 {
            let cols = first[1];
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(data.len() / cols, cols, data)
        } else {
            let rows = first[0];
            let total_cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(rows * total_cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::matrix(rows, total_cols, data)
        };
        Ok(self.push(Op::Concat(parts.to_vec(), axis), value))
    }

    /// Slice a 2-D tensor along `axis`, keeping `[start, end)`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let at = self.value(a);
        if at.ndim() != 2 || axis > 1 || start >= end || end > at.shape()[axis] {
            return Err(Error::Domain(format!(
                "slice axis {axis} range {start}..{end} invalid for shape {:?}",
                at.shape()
            )));
        }
        let value = if axis == 0 {
            let cols = at.cols();
            Tensor::matrix(
                end - start,
                cols,
                at.data()[start * cols..end * cols].to_vec(),
            )
        } else {
            let mut data = Vec::with_capacity((end - start) * at.rows());
            for r in 0..at.rows() {
                data.extend_from_slice(&at.row(r)[start..end]);
            }
            Tensor::matrix(at.rows(), end - start, data)
        };
        Ok(self.push(Op::Slice(a, axis, start, end), value))
    }

    /// Select rows of a matrix: `out[r] = a[indices[r]]`.
    pub fn gather_rows(&mut self, a: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let at = self.value(a);
        if at.ndim() != 2 || indices.iter().any(|&i| i >= at.rows()) {
            return Err(Error::Domain(format!(
                "gather_rows indices out of range for shape {:?}",
                at.shape()
            )));
        }
        let cols = at.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            data.extend_from_slice(at.row(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data);
        Ok(self.push(Op::GatherRows(a, indices), value))
    }

    /// Sum rows of a matrix into `out_rows` buckets: `out[indices[r]] += a[r]`.
    pub fn scatter_sum_rows(
        &mut self,
        a: Var,
        indices: Rc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<Var> {
        let at = self.value(a);
        if at.ndim() != 2 || indices.len() != at.rows() || indices.iter().any(|&i| i >= out_rows) {
            return Err(Error::Domain(format!(
                "scatter_sum_rows: {} indices invalid for shape {:?} -> {out_rows} rows",
                indices.len(),
                at.shape()
            )));
        }
        let cols = at.cols();
        let mut value = Tensor::zeros(vec![out_rows, cols]);
        for (r, &dst) in indices.iter().enumerate() {
            let src = at.row(r);
            let out = value.row_mut(dst);
            for (o, &s) in out.iter_mut().zip(src.iter()) {
                *o += s;
            }
        }
        Ok(self.push(Op::ScatterSumRows(a, indices, out_rows), value))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Column sums of a matrix, as a 1 x cols tensor.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let at = self.value(a);
        if at.ndim() != 2 {
            return Err(Error::Domain(format!(
                "sum_axis0 expects a matrix, got shape {:?}",
                at.shape()
            )));
        }
        let cols = at.cols();
        let mut acc = vec![0.0; cols];
        for r in 0..at.rows() {
            for (o, &x) in acc.iter_mut().zip(at.row(r).iter()) {
                *o += x;
            }
        }
        let value = Tensor::matrix(1, cols, acc);
        Ok(self.push(Op::SumAxis0(a), value))
    }

    /// Softmax over the last axis (per row for matrices).
    pub fn softmax(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let cols = at.cols();
        let mut value = at.clone();
        let rows = value.len() / cols;
        for r in 0..rows {
            let row = &mut value.data_mut()[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(Op::Softmax(a), value)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(op, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0) + (-x.abs()).exp().ln_1p(), Op::Softplus(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / x, Op::Recip(a))
    }

    /// Reverse pass from a scalar output. Returns gradients for every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(Error::Domain(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::new(
            self.value(output).shape().to_vec(),
            vec![1.0],
        ));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        match &mut grads[var.0] {
            Some(g) => g.add_scaled(&delta, 1.0),
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                Self::accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                Self::accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Neg(a) => Self::accumulate(grads, *a, g.map(|x| -x)),
            Op::Scale(a, c) => Self::accumulate(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a, _) => Self::accumulate(grads, *a, g.clone()),
            Op::Matmul(a, b) => {
                Self::accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                Self::accumulate(grads, *b, self.value(*a).matmul_tn(g));
            }
            Op::AddRows(m, v) => {
                Self::accumulate(grads, *m, g.clone());
                Self::accumulate(grads, *v, col_sums(g));
            }
            Op::MulRows(m, v) => {
                let vt = self.value(*v);
                let cols = vt.cols();
                let mut dm = g.clone();
                for r in 0..dm.rows() {
                    let row = dm.row_mut(r);
                    for (x, &b) in row.iter_mut().zip(&vt.data()[..cols]) {
                        *x *= b;
                    }
                }
                Self::accumulate(grads, *m, dm);
                let mt = self.value(*m);
                let mut dv = vec![0.0; cols];
                for r in 0..mt.rows() {
                    for ((o, &gg), &mm) in dv.iter_mut().zip(g.row(r)).zip(mt.row(r)) {
                        *o += gg * mm;
                    }
                }
                Self::accumulate(grads, *v, Tensor::matrix(1, cols, dv));
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let cols = self.value(p).cols();
                        let part = Tensor::matrix(
                            rows,
                            cols,
                            g.data()[start * cols..(start + rows) * cols].to_vec(),
                        );
                        Self::accumulate(grads, p, part);
                        start += rows;
                    }
                } else {
                    let rows = g.rows();
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[start..start + cols]);
                        }
                        Self::accumulate(grads, p, Tensor::matrix(rows, cols, data));
                        start += cols;
                    }
                }
            }
            Op::Slice(a, axis, start, end) => {
                let at = self.value(*a);
                let mut da = Tensor::zeros(at.shape().to_vec());
                if *axis == 0 {
                    let cols = at.cols();
                    da.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
                } else {
                    for r in 0..at.rows() {
                        da.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::GatherRows(a, indices) => {
                let at = self.value(*a);
                let mut da = Tensor::zeros(at.shape().to_vec());
                for (r, &src) in indices.iter().enumerate() {
                    let out = da.row_mut(src);
                    for (o, &x) in out.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::ScatterSumRows(a, indices, _) => {
                let at = self.value(*a);
                let cols = at.cols();
                let mut da = Tensor::zeros(at.shape().to_vec());
                for (r, &dst) in indices.iter().enumerate() {
                    da.row_mut(r)[..cols].copy_from_slice(g.row(dst));
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let s = g.item();
                Self::accumulate(grads, *a, self.value(*a).map(|_| s));
            }
            Op::Mean(a) => {
                let s = g.item() / self.value(*a).len() as f64;
                Self::accumulate(grads, *a, self.value(*a).map(|_| s));
            }
            Op::SumAxis0(a) => {
                let at = self.value(*a);
                let cols = at.cols();
                let mut da = Tensor::zeros(at.shape().to_vec());
                for r in 0..at.rows() {
                    da.row_mut(r)[..cols].copy_from_slice(&g.data()[..cols]);
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[id].value;
                let cols = y.cols();
                let rows = y.len() / cols;
                let mut da = Tensor::zeros(y.shape().to_vec());
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    let dr = &mut da.data_mut()[r * cols..(r + 1) * cols];
                    for ((d, &yy), &gg) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                        *d = yy * (gg - dot);
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                Self::accumulate(grads, *a, g.zip_map(y, |gg, yy| gg * (1.0 - yy * yy)));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                Self::accumulate(grads, *a, g.zip_map(y, |gg, yy| gg * yy * (1.0 - yy)));
            }
            Op::Exp(a) => {
                let y = &self.nodes[id].value;
                Self::accumulate(grads, *a, g.zip_map(y, |gg, yy| gg * yy));
            }
            Op::Log(a) => {
                Self::accumulate(grads, *a, g.zip_map(self.value(*a), |gg, x| gg / x));
            }
            Op::Square(a) => {
                Self::accumulate(grads, *a, g.zip_map(self.value(*a), |gg, x| gg * 2.0 * x));
            }
            Op::Relu(a) => {
                Self::accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }),
                );
            }
            Op::Abs(a) => {
                Self::accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gg, x| gg * sign(x)),
                );
            }
            Op::Softplus(a) => {
                Self::accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gg, x| gg / (1.0 + (-x).exp())),
                );
            }
            Op::Recip(a) => {
                let y = &self.nodes[id].value;
                Self::accumulate(grads, *a, g.zip_map(y, |gg, yy| -gg * yy * yy));
            }
            Op::MaxElem(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                Self::accumulate(
                    grads,
                    *a,
                    g.zip_map(&at.zip_map(bt, |x, y| if x >= y { 1.0 } else { 0.0 }), |gg, m| gg * m),
                );
                Self::accumulate(
                    grads,
                    *b,
                    g.zip_map(&at.zip_map(bt, |x, y| if x < y { 1.0 } else { 0.0 }), |gg, m| gg * m),
                );
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let cols = g.cols();
    let mut acc = vec![0.0; cols];
    for r in 0..g.rows() {
        for (o, &x) in acc.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    Tensor::matrix(1, cols, acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[0.0, 0.0, 0.0]));
        let y = t.softmax(x);
        for &v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[0.0]));
        let s = t.sigmoid(x);
        let h = t.tanh(x);
        assert_eq!(t.value(s).data()[0], 0.5);
        assert_eq!(t.value(h).data()[0], 0.0);
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut t = Tape::new();
        let i3 = t.constant(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = t.leaf(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let y = t.matmul(i3, a).unwrap();
        assert_eq!(t.value(y), t.value(a));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
        let sq = t.square(x);
        let y = t.sum(sq);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, 2.0]));
        let unused = t.leaf(Tensor::vector(&[5.0, 5.0, 5.0]));
        let y = t.sum(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused).data(), &[0.0, 0.0, 0.0]);
        assert!(g.get_ref(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&[1.0, 2.0]));
        let y = t.square(x);
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn gradient_through_softmax_log_sum_matches_jacobian() {
        // y = sum(w . log softmax(x)); analytic dy/dx = w - softmax(x) * sum(w)
        let xs = [0.3, -1.2, 0.7, 2.0];
        let ws = [1.0, 2.0, -0.5, 0.25];
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(&xs));
        let w = t.constant(Tensor::vector(&ws));
        let sm = t.softmax(x);
        let lg = t.log(sm);
        let prod = t.mul(w, lg).unwrap();
        let y = t.sum(prod);
        let g = t.backward(y).unwrap();

        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let wsum: f64 = ws.iter().sum();
        for i in 0..4 {
            let expected = ws[i] - exps[i] / z * wsum;
            assert!((g.get(x).data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_determinism() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(&[0.1, 0.2, 0.3]));
            let e = t.exp(x);
            let s = t.softmax(e);
            let l = t.log(s);
            let y = t.sum(l);
            let g = t.backward(y).unwrap();
            (t.value(y).item().to_bits(), g.get(x).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
