//! Wengert-list reverse-mode differentiation over small dense f64 arrays.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamSet`] and never copied; constants are owned by the
//! graph. [`Graph::backward`] walks the list once in reverse and returns the
//! parameter gradients. Nothing in the graph mutates its inputs.

use std::collections::HashMap;

use super::numeric;
use super::params::{ParamGrads, ParamId, ParamSet, Shape};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    /// `W (m x n) . x (n)`
    MatVec(Var, Var),
    /// `A (k x n) . B^T` where `B` is `m x n`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(Var, Var),
    /// Vector plus a 1-element broadcast scalar.
    AddScalar(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix times a row vector broadcast over rows, elementwise.
    MulRow(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Dot(Var, Var),
    Outer(Var, Var),
    /// `M^T . w`: weighted sum of the rows of `M`.
    WeightedRows(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    /// Mean of 1-element inputs.
    MeanScalars(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
    /// Empty for parameter nodes; their data lives in the borrowed `ParamSet`.
    value: Vec<f64>,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    /// Value of a 1-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == shape.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Shape) -> Result<Var> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "constant of {} elements cannot have shape {shape}",
                data.len()
            )));
        }
        Ok(self.push(Op::Const, shape, data, false))
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(Op::Const, Shape::vector(n), data, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    /// Graph node for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let value = self.params.get(id);
        let v = self.push(Op::Param(id), value.shape, Vec::new(), value.requires_grad);
        self.param_nodes.insert(id, v);
        v
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa} vs {sb}")));
        }
        Ok(sa.len())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a);
        let ng = self.needs(&[a]);
        self.push(op, shape, value, ng)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if xs.len() != ws.cols {
            return Err(Error::shape(format!("matvec: {ws} . {xs}")));
        }
        let (wd, xd) = (self.value(w), self.value(x));
        let value = wd
            .chunks_exact(ws.cols)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let ng = self.needs(&[w, x]);
        Ok(self.push(Op::MatVec(w, x), Shape::vector(ws.rows), value, ng))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.cols {
            return Err(Error::shape(format!("matmul_nt: {sa} . ({sb})^T")));
        }
        let (ad, bd) = (self.value(a), self.value(b));
        let mut value = Vec::with_capacity(sa.rows * sb.rows);
        for ar in ad.chunks_exact(sa.cols) {
            for br in bd.chunks_exact(sb.cols) {
                value.push(ar.iter().zip(br).map(|(x, y)| x * y).sum());
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(
            Op::MatMulNt(a, b),
            Shape::matrix(sa.rows, sb.rows),
            value,
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        let shape = self.shape(a);
        Ok(self.push(Op::Add(a, b), shape, value, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        let shape = self.shape(a);
        Ok(self.push(Op::Sub(a, b), shape, value, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        let shape = self.shape(a);
        Ok(self.push(Op::Mul(a, b), shape, value, ng))
    }

    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if vs.len() != ms.cols {
            return Err(Error::shape(format!("add_row: {ms} + {vs}")));
        }
        let vd = self.value(v);
        let value = self
            .value(m)
            .chunks_exact(ms.cols)
            .flat_map(|row| row.iter().zip(vd).map(|(a, b)| a + b))
            .collect();
        let ng = self.needs(&[m, v]);
        Ok(self.push(Op::AddRow(m, v), ms, value, ng))
    }

    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if vs.len() != ms.cols {
            return Err(Error::shape(format!("mul_row: {ms} * {vs}")));
        }
        let vd = self.value(v);
        let value = self
            .value(m)
            .chunks_exact(ms.cols)
            .flat_map(|row| row.iter().zip(vd).map(|(a, b)| a * b))
            .collect();
        let ng = self.needs(&[m, v]);
        Ok(self.push(Op::MulRow(m, v), ms, value, ng))
    }

    pub fn add_scalar(&mut self, v: Var, s: Var) -> Result<Var> {
        if self.shape(s).len() != 1 {
            return Err(Error::shape("add_scalar: scalar operand must have 1 element"));
        }
        let sv = self.scalar(s);
        let value = self.value(v).iter().map(|x| x + sv).collect();
        let ng = self.needs(&[v, s]);
        let shape = self.shape(v);
        Ok(self.push(Op::AddScalar(v, s), shape, value, ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), numeric::sigmoid)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let value: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        let ng = self.needs(parts);
        let n = value.len();
        Ok(self.push(Op::Concat(parts.to_vec()), Shape::vector(n), value, ng))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::shape("stack of nothing"));
        };
        let width = self.shape(first).len();
        if rows.iter().any(|&r| self.shape(r).len() != width) {
            return Err(Error::shape("stack: rows of unequal width"));
        }
        let value: Vec<f64> = rows
            .iter()
            .flat_map(|&r| self.value(r).iter().copied())
            .collect();
        let ng = self.needs(rows);
        Ok(self.push(
            Op::Stack(rows.to_vec()),
            Shape::matrix(rows.len(), width),
            value,
            ng,
        ))
    }

    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Result<Var> {
        let n = self.shape(a).len();
        if offset + len > n {
            return Err(Error::shape(format!("slice {offset}..{} of {n}", offset + len)));
        }
        let value = self.value(a)[offset..offset + len].to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Slice(a, offset), Shape::vector(len), value, ng))
    }

    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let ms = self.shape(m);
        if index >= ms.rows {
            return Err(Error::shape(format!("row {index} of {ms}")));
        }
        let value = self.value(m)[index * ms.cols..(index + 1) * ms.cols].to_vec();
        let ng = self.needs(&[m]);
        Ok(self.push(Op::Row(m, index), Shape::vector(ms.cols), value, ng))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len_flat(a, b, "dot")?;
        let d = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .sum();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Dot(a, b), Shape::vector(1), vec![d], ng))
    }

    fn same_len_flat(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(Error::shape(format!("{what}: {sa} vs {sb}")));
        }
        Ok(())
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (ad, bd) = (self.value(a), self.value(b));
        let value = ad
            .iter()
            .flat_map(|x| bd.iter().map(move |y| x * y))
            .collect();
        let shape = Shape::matrix(ad.len(), bd.len());
        let ng = self.needs(&[a, b]);
        self.push(Op::Outer(a, b), shape, value, ng)
    }

    pub fn weighted_rows(&mut self, m: Var, w: Var) -> Result<Var> {
        let (ms, ws) = (self.shape(m), self.shape(w));
        if ws.len() != ms.rows {
            return Err(Error::shape(format!("weighted_rows: {ms} with weights {ws}")));
        }
        let mut value = vec![0.0; ms.cols];
        for (row, &wk) in self.value(m).chunks_exact(ms.cols).zip(self.value(w)) {
            value.iter_mut().zip(row).for_each(|(o, x)| *o += wk * x);
        }
        let ng = self.needs(&[m, w]);
        Ok(self.push(Op::WeightedRows(m, w), Shape::vector(ms.cols), value, ng))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = numeric::softmax(self.value(a))?;
        let ng = self.needs(&[a]);
        let shape = Shape::vector(value.len());
        Ok(self.push(Op::Softmax(a), shape, value, ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = numeric::log_softmax(self.value(a))?;
        let ng = self.needs(&[a]);
        let shape = Shape::vector(value.len());
        Ok(self.push(Op::LogSoftmax(a), shape, value, ng))
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.shape(a).len();
        if index >= n {
            return Err(Error::shape(format!("pick {index} of {n}")));
        }
        let value = vec![self.value(a)[index]];
        let ng = self.needs(&[a]);
        Ok(self.push(Op::Pick(a, index), Shape::vector(1), value, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.needs(&[a]);
        self.push(Op::Sum(a), Shape::vector(1), vec![s], ng)
    }

    pub fn mean_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() || xs.iter().any(|&x| self.shape(x).len() != 1) {
            return Err(Error::shape("mean_scalars needs 1-element inputs"));
        }
        let m = xs.iter().map(|&x| self.scalar(x)).sum::<f64>() / xs.len() as f64;
        let ng = self.needs(xs);
        Ok(self.push(Op::MeanScalars(xs.to_vec()), Shape::vector(1), vec![m], ng))
    }

    /// Reverse sweep from a 1-element `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        if self.shape(loss).len() != 1 {
            return Err(Error::shape("backward needs a 1-element loss"));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = ParamGrads::empty(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                out.grads[id.0] = Some(g);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.shape.len()]);
            f(buf);
        };
        let y = &node.value;

        match &node.op {
            Op::Const | Op::Param(_) => {}
            Op::MatVec(w, x) => {
                let cols = self.shape(*w).cols;
                let (wd, xd) = (self.value(*w), self.value(*x));
                acc(*w, &mut |dw| {
                    for (row, gi) in dw.chunks_exact_mut(cols).zip(g) {
                        row.iter_mut().zip(xd).for_each(|(d, xj)| *d += gi * xj);
                    }
                });
                acc(*x, &mut |dx| {
                    for (row, gi) in wd.chunks_exact(cols).zip(g) {
                        dx.iter_mut().zip(row).for_each(|(d, wij)| *d += gi * wij);
                    }
                });
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let n = sa.cols;
                let (ad, bd) = (self.value(*a), self.value(*b));
                acc(*a, &mut |da| {
                    for p in 0..sa.rows {
                        for q in 0..sb.rows {
                            let gpq = g[p * sb.rows + q];
                            let brow = &bd[q * n..(q + 1) * n];
                            da[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(brow)
                                .for_each(|(d, x)| *d += gpq * x);
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for p in 0..sa.rows {
                        let arow = &ad[p * n..(p + 1) * n];
                        for q in 0..sb.rows {
                            let gpq = g[p * sb.rows + q];
                            db[q * n..(q + 1) * n]
                                .iter_mut()
                                .zip(arow)
                                .for_each(|(d, x)| *d += gpq * x);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(bd))
                        .for_each(|(d, (gi, bi))| *d += gi * bi)
                });
                acc(*b, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(ad))
                        .for_each(|(d, (gi, ai))| *d += gi * ai)
                });
            }
            Op::AddRow(m, v) => {
                let cols = self.shape(*m).cols;
                acc(*m, &mut |d| add_into(d, g));
                acc(*v, &mut |d| {
                    for row in g.chunks_exact(cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulRow(m, v) => {
                let cols = self.shape(*m).cols;
                let (md, vd) = (self.value(*m), self.value(*v));
                acc(*m, &mut |d| {
                    for (drow, grow) in d.chunks_exact_mut(cols).zip(g.chunks_exact(cols)) {
                        for j in 0..cols {
                            drow[j] += grow[j] * vd[j];
                        }
                    }
                });
                acc(*v, &mut |d| {
                    for (mrow, grow) in md.chunks_exact(cols).zip(g.chunks_exact(cols)) {
                        for j in 0..cols {
                            d[j] += grow[j] * mrow[j];
                        }
                    }
                });
            }
            Op::AddScalar(v, s) => {
                acc(*v, &mut |d| add_into(d, g));
                acc(*s, &mut |d| d[0] += g.iter().sum::<f64>());
            }
            Op::Scale(a, c) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi)
            }),
            Op::Neg(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi)),
            Op::Tanh(a) => acc(*a, &mut |d| {
                d.iter_mut()
                    .zip(g.iter().zip(y))
                    .for_each(|(d, (gi, yi))| *d += gi * (1.0 - yi * yi))
            }),
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                d.iter_mut()
                    .zip(g.iter().zip(y))
                    .for_each(|(d, (gi, yi))| *d += gi * yi * (1.0 - yi))
            }),
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p).len();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Slice(a, offset) => {
                let n = g.len();
                acc(*a, &mut |d| add_into(&mut d[*offset..offset + n], g));
            }
            Op::Row(m, index) => {
                let cols = self.shape(*m).cols;
                acc(*m, &mut |d| add_into(&mut d[index * cols..(index + 1) * cols], g));
            }
            Op::Dot(a, b) => {
                let (ad, bd) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    d.iter_mut().zip(bd).for_each(|(d, bi)| *d += g[0] * bi)
                });
                acc(*b, &mut |d| {
                    d.iter_mut().zip(ad).for_each(|(d, ai)| *d += g[0] * ai)
                });
            }
            Op::Outer(a, b) => {
                let (ad, bd) = (self.value(*a), self.value(*b));
                let m = bd.len();
                acc(*a, &mut |d| {
                    for (p, dp) in d.iter_mut().enumerate() {
                        *dp += g[p * m..(p + 1) * m]
                            .iter()
                            .zip(bd)
                            .map(|(gi, bi)| gi * bi)
                            .sum::<f64>();
                    }
                });
                acc(*b, &mut |d| {
                    for (p, ap) in ad.iter().enumerate() {
                        d.iter_mut()
                            .zip(&g[p * m..(p + 1) * m])
                            .for_each(|(d, gi)| *d += gi * ap);
                    }
                });
            }
            Op::WeightedRows(m, w) => {
                let cols = self.shape(*m).cols;
                let (md, wd) = (self.value(*m), self.value(*w));
                acc(*m, &mut |d| {
                    for (drow, wk) in d.chunks_exact_mut(cols).zip(wd) {
                        drow.iter_mut().zip(g).for_each(|(d, gj)| *d += wk * gj);
                    }
                });
                acc(*w, &mut |d| {
                    for (dk, mrow) in d.iter_mut().zip(md.chunks_exact(cols)) {
                        *dk += mrow.iter().zip(g).map(|(x, gj)| x * gj).sum::<f64>();
                    }
                });
            }
            Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (gi, yi))| *d += yi * (gi - gy))
                });
            }
            Op::LogSoftmax(a) => {
                let gs: f64 = g.iter().sum();
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (gi, yi))| *d += gi - yi.exp() * gs)
                });
            }
            Op::Pick(a, index) => acc(*a, &mut |d| d[*index] += g[0]),
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanScalars(xs) => {
                let share = g[0] / xs.len() as f64;
                for &x in xs {
                    acc(x, &mut |d| d[0] += share);
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::Value;

    fn one_param(data: Vec<f64>, shape: Shape) -> (ParamSet, ParamId) {
        let mut p = ParamSet::new();
        let id = p.add("x", Value::new(data, shape, true).unwrap()).unwrap();
        (p, id)
    }

    #[test]
    fn quadratic_gradient() {
        let (p, id) = one_param(vec![3.0], Shape::vector(1));
        let mut g = Graph::new(&p);
        let x = g.param(id);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let (p, id) = one_param(vec![1.0, 2.0], Shape::vector(2));
        let mut g = Graph::new(&p);
        let x = g.param(id);
        let x2 = g.param(id);
        assert_eq!(x, x2);
        let s = g.add(x, x2).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut p = ParamSet::new();
        let a = p
            .add("a", Value::new(vec![1.0], Shape::vector(1), false).unwrap())
            .unwrap();
        let b = p
            .add("b", Value::new(vec![2.0], Shape::vector(1), true).unwrap())
            .unwrap();
        let mut g = Graph::new(&p);
        let (va, vb) = (g.param(a), g.param(b));
        let l = g.mul(va, vb).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &[1.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let w = g.constant(vec![0.0; 6], Shape::matrix(2, 3)).unwrap();
        let x = g.vector(vec![1.0, 2.0]);
        assert!(matches!(g.matvec(w, x), Err(Error::Shape(_))));
        let y = g.vector(vec![1.0]);
        assert!(g.add(x, y).unwrap_err().to_string().starts_with("shape"));
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.vector(vec![f64::NAN]);
        assert!(matches!(g.backward(x), Err(Error::NonFiniteLoss)));
    }
}
