//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation applied during a forward pass as a node
//! holding its output value. Nodes are appended in evaluation order, so the
//! tape is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep. Parameters live outside the graph in a [`ParamStore`];
//! `backward` writes their gradients back into the store.

use std::collections::HashMap;

use crate::error::{NorError, Result};
use crate::numerics::ops;
use crate::numerics::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    ParamRow { id: ParamId, row: usize },
    MatVec(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Conv2d { input: Var, kernels: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    SumSq(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NorError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
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

    /// True when every recorded value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf node bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Row `row` of a rank-2 parameter, without copying the whole table.
    pub fn param_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> Result<Var> {
        let table = store.value(id);
        if table.rank() != 2 || row >= table.shape()[0] {
            return Err(NorError::shape(
                "param_row",
                format!("row {row} of {:?}", table.shape()),
            ));
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::ParamRow { id, row }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = ops::matvec(self.value(w), self.value(x))?;
        Ok(self.push(out, Op::MatVec(w, x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = ops::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds vector `r: [n]` to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        if av.rank() != 2 || rv.rank() != 1 || av.shape()[1] != rv.len() {
            return Err(NorError::shape(
                "add_row",
                format!("{:?} + {:?}", av.shape(), rv.shape()),
            ));
        }
        let n = rv.len();
        let mut out = av.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, v) in row.iter_mut().zip(rv.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddRow(a, r)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Concatenation along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NorError::shape("concat", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(NorError::shape(
                    "concat",
                    format!("trailing dims {:?} vs {:?}", &t.shape()[1..], tail),
                ));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernels), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
            },
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let (out, argmax) = ops::max_pool2d(self.value(input), window)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    /// Mean over rows: `[L, D] -> [D]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(a))?;
        Ok(self.push(out, Op::MeanRows(a)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(NorError::shape("softmax", format!("{:?}", t.shape())));
        }
        let out = Tensor::vector(ops::softmax(t.data()));
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(NorError::shape("log_softmax", format!("{:?}", t.shape())));
        }
        let out = Tensor::vector(ops::log_softmax(t.data()));
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Entry `i` of a vector as a scalar node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || i >= t.len() {
            return Err(NorError::shape("pick", format!("index {i} of {:?}", t.shape())));
        }
        let out = Tensor::scalar(t.data()[i]);
        Ok(self.push(out, Op::Pick(a, i)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().map(|v| v * v).sum());
        self.push(out, Op::SumSq(a))
    }

    /// Sum of scalar nodes; an empty slice yields a zero constant.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return Ok(self.constant(Tensor::scalar(0.0)));
        };
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Back-propagate from the scalar `loss`.
    ///
    /// Every parameter gradient in `store` is overwritten: parameters reachable
    /// from `loss` receive their partial derivative, all others are zeroed.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NorError::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::ParamRow { id, row } => {
                    let p = store.get_mut(*id);
                    let cols = p.grad.shape()[1];
                    let dst = &mut p.grad.data_mut()[row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(g.data()) {
                        *d += v;
                    }
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let cols = wv.shape()[1];
                    let mut gw = Tensor::zeros(wv.shape());
                    for (row, &gi) in gw.data_mut().chunks_exact_mut(cols).zip(g.data()) {
                        for (r, xj) in row.iter_mut().zip(xv.data()) {
                            *r = gi * xj;
                        }
                    }
                    let mut gx = Tensor::zeros(xv.shape());
                    for (wrow, &gi) in wv.data().chunks_exact(cols).zip(g.data()) {
                        for (o, wj) in gx.data_mut().iter_mut().zip(wrow) {
                            *o += gi * wj;
                        }
                    }
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = ops::matmul(&g, &ops::transpose(bv)?)?;
                    let gb = ops::matmul(&ops::transpose(av)?, &g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, ops::transpose(&g)?),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |gi, bi| gi * bi);
                    let gb = zip_map(&g, self.value(*a), |gi, ai| gi * ai);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let n = self.value(*r).len();
                    let mut gr = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (o, v) in gr.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *r, Tensor::vector(gr));
                    accumulate(&mut grads, *a, g);
                }
                Op::Affine(a, scale) => {
                    let s = *scale;
                    accumulate(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let n = self.value(p).len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        accumulate(&mut grads, p, Tensor::new(shape, slice)?);
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(shape)?);
                }
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                } => {
                    let (gi, gk, gb) =
                        ops::conv2d_backward(self.value(*input), self.value(*kernels), &g);
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *kernels, gk);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::MaxPool { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gi.data_mut()[src] += gv;
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::MeanRows(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    let inv = 1.0 / shape[0] as f64;
                    let mut ga = Tensor::zeros(&shape);
                    for row in ga.data_mut().chunks_exact_mut(shape[1]) {
                        for (o, v) in row.iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner = ops::dot(g.data(), y.data());
                    let ga = zip_map(&g, y, |gi, yi| yi * (gi - inner));
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.data().iter().sum();
                    let ga = zip_map(&g, &node.value, |gi, lp| gi - lp.exp() * total);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Pick(a, i) => {
                    let mut ga = Tensor::zeros(self.value(*a).shape());
                    ga.data_mut()[*i] = g.item();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::full(self.value(*a).shape(), g.item());
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumSq(a) => {
                    let s = 2.0 * g.item();
                    let ga = self.value(*a).map(|v| s * v);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_unit_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, -2.0, 3.0]), true).unwrap();
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let loss = g.sum(pv);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_at_three_gives_six() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(3.0), true).unwrap();
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let loss = g.sum_sq(pv);
        assert_eq!(g.value(loss).item(), 9.0);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[6.0]);
    }

    #[test]
    fn unreachable_parameters_get_zero_grad() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(3.0), true).unwrap();
        let q = store.add("q", Tensor::scalar(1.0), true).unwrap();
        store.get_mut(q).grad = Tensor::scalar(42.0);
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let loss = g.sum(pv);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(q).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let y = g.tanh(pv);
        assert!(g.backward(y, &mut store).is_err());
    }

    #[test]
    fn param_node_is_shared() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(2.0), true).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, p);
        let b = g.param(&store, p);
        assert_eq!(a, b);
        let prod = g.mul(a, b).unwrap();
        g.backward(prod, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[4.0]);
    }

    #[test]
    fn param_row_scatters_into_table() {
        let mut store = ParamStore::new();
        let t = store
            .add("t", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), true)
            .unwrap();
        let mut g = Graph::new();
        let r = g.param_row(&store, t, 1).unwrap();
        assert_eq!(g.value(r).data(), &[3.0, 4.0]);
        let loss = g.sum_sq(r);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(t).data(), &[0.0, 0.0, 6.0, 8.0, 0.0, 0.0]);
        assert!(g.param_row(&store, t, 3).is_err());
    }
}
