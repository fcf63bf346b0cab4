//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive as it is evaluated. Nodes are appended
//! in evaluation order, so walking the node list backwards is a valid reverse
//! topological order. Parameters enter the graph as named leaves; their
//! gradients are read back by name after [`Graph::backward`].

use std::collections::{BTreeMap, HashMap};

use super::tensor::{split_axis, MatmulPlan, ReducePlan, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sqrt(Var),
    Softmax(Var, usize),
    Mean(Var, Vec<usize>),
    Sum(Var),
    Reshape(Var),
    Gather(Var, usize, Vec<usize>),
    Concat(Vec<Var>, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Named trainable tensors, iterated in a stable (lexicographic) order.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    scope: String,
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

    /// Label attached to non-finite errors raised by subsequent ops.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: name,
                scope: self.scope.clone(),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf for a named parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{}`", name)))?
            .clone();
        let v = self.push(value, Op::Leaf, "param")?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).div(self.value(b))?;
        self.push(v, Op::Div(a, b), "div")
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_last_axis(self.value(bias))?;
        self.push(v, Op::AddBias(x, bias), "add_bias")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s), "scale")
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|e| e + c);
        self.push(v, Op::AddConst(x), "add_const")
    }

    fn expect_scalar(&self, s: Var, op: &'static str) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::shape(
                op,
                format!("expected a one-element tensor, got {:?}", t.shape()),
            ));
        }
        Ok(t.item())
    }

    /// `x * s` where `s` is a one-element node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar(s, "mul_scalar")?;
        let v = self.value(x).scale(sv);
        self.push(v, Op::MulScalar(x, s), "mul_scalar")
    }

    /// `x + s` where `s` is a one-element node.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar(s, "add_scalar")?;
        let v = self.value(x).map(|e| e + sv);
        self.push(v, Op::AddScalar(x, s), "add_scalar")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose_last2()?;
        self.push(v, Op::Transpose(x), "transpose")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|e| e.max(0.0));
        self.push(v, Op::Relu(x), "relu")
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::sqrt);
        self.push(v, Op::Sqrt(x), "sqrt")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).softmax(axis)?;
        self.push(v, Op::Softmax(x, axis), "softmax")
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(x).mean_axes(axes)?;
        self.push(v, Op::Mean(x, axes.to_vec()), "mean_pool")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), "sum")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x), "reshape")
    }

    pub fn gather(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let v = self.value(x).gather(axis, indices)?;
        self.push(v, Op::Gather(x, axis, indices.to_vec()), "gather")
    }

    /// One element of a vector as a one-element node.
    pub fn element(&mut self, x: Var, index: usize) -> Result<Var> {
        let g = self.gather(x, 0, &[index])?;
        self.reshape(g, &[])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor> = xs.iter().map(|&x| self.value(x)).collect();
        let v = Tensor::concat(&parts, axis)?;
        self.push(v, Op::Concat(xs.to_vec(), axis), "concat")
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().unwrap_or(&1);
        if self.value(gamma).len() != width || self.value(beta).len() != width {
            return Err(Error::shape(
                "layer_norm",
                format!("affine width does not match last axis of {:?}", xv.shape()),
            ));
        }
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.len() / width.max(1));
        for row in normalized.data_mut().chunks_mut(width) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = normalized.clone();
        for row in out.data_mut().chunks_mut(width) {
            for ((v, gi), bi) in row.iter_mut().zip(&g).zip(&b) {
                *v = *v * gi + bi;
            }
        }
        let out = out.cast(crate::numerics::DType::F64);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never recorded".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(self.value(*b))?)?;
                accumulate(grads, *b, g.mul(self.value(*a))?)?;
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                accumulate(grads, *a, g.div(bv)?)?;
                let av = self.value(*a);
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((&gi, &ai), &bi)| -gi * ai / (bi * bi))
                    .collect();
                accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?)?;
            }
            Op::AddBias(x, bias) => {
                accumulate(grads, *x, g.clone())?;
                let width = self.value(*bias).len();
                let mut gb = vec![0.0; width];
                for row in g.data().chunks(width) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *bias, Tensor::vector(gb))?;
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scale(*s))?,
            Op::AddConst(x) => accumulate(grads, *x, g.clone())?,
            Op::MulScalar(x, s) => {
                let sv = self.value(*s);
                accumulate(grads, *x, g.scale(sv.item()))?;
                let gs: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(a, b)| a * b)
                    .sum();
                accumulate(grads, *s, Tensor::filled(sv.shape(), gs))?;
            }
            Op::AddScalar(x, s) => {
                accumulate(grads, *x, g.clone())?;
                let sv = self.value(*s);
                accumulate(grads, *s, Tensor::filled(sv.shape(), g.sum()))?;
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let plan = MatmulPlan::new(av.shape(), bv.shape())?;
                accumulate(grads, *a, g.matmul(&bv.transpose_last2()?)?)?;
                let gb = if plan.shared_rhs {
                    let a2 = av.reshape(&[plan.batch * plan.m, plan.k])?;
                    let g2 = g.reshape(&[plan.batch * plan.m, plan.n])?;
                    a2.transpose_last2()?.matmul(&g2)?
                } else {
                    av.transpose_last2()?.matmul(g)?
                };
                accumulate(grads, *b, gb)?;
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose_last2()?)?,
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::Sqrt(x) => {
                let y = &node.value;
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gi, &yi)| gi * 0.5 / yi)
                    .collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx)?)?;
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, len, inner) = split_axis(y.shape(), *axis, "softmax")?;
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g.data()[at(a)] * y.data()[at(a)]).sum();
                        for a in 0..len {
                            gx[at(a)] = y.data()[at(a)] * (g.data()[at(a)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx)?)?;
            }
            Op::Mean(x, axes) => {
                let xv = self.value(*x);
                let plan = ReducePlan::new(xv.shape(), axes)?;
                let denom = plan.group as f64;
                let gx: Vec<f64> = (0..xv.len())
                    .map(|flat| g.data()[plan.out_index(flat)] / denom)
                    .collect();
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor::filled(xv.shape(), g.item()))?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.reshape(&shape)?)?;
            }
            Op::Gather(x, axis, indices) => {
                let xv = self.value(*x);
                let (outer, len, inner) = split_axis(xv.shape(), *axis, "gather")?;
                let mut gx = vec![0.0; xv.len()];
                let k = indices.len();
                for o in 0..outer {
                    for (pos, &a) in indices.iter().enumerate() {
                        let src = (o * k + pos) * inner;
                        let dst = (o * len + a) * inner;
                        for j in 0..inner {
                            gx[dst + j] += g.data()[src + j];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::Concat(xs, axis) => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let xv = self.value(x);
                    let ext = xv.shape()[*axis];
                    let mut gx = Vec::with_capacity(xv.len());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gx.extend_from_slice(&g.data()[start..start + ext * inner]);
                    }
                    accumulate(grads, x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                    offset += ext;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let width = gam.len();
                let n = width as f64;
                let mut gx = vec![0.0; normalized.len()];
                let mut gg = vec![0.0; width];
                let mut gbeta = vec![0.0; width];
                for (r, inv) in inv_std.iter().enumerate() {
                    let span = r * width..(r + 1) * width;
                    let xhat = &normalized.data()[span.clone()];
                    let grow = &g.data()[span.clone()];
                    let mut sum_gh = 0.0;
                    let mut sum_gh_xhat = 0.0;
                    for j in 0..width {
                        gg[j] += grow[j] * xhat[j];
                        gbeta[j] += grow[j];
                        let gh = grow[j] * gam[j];
                        sum_gh += gh;
                        sum_gh_xhat += gh * xhat[j];
                    }
                    for j in 0..width {
                        let gh = grow[j] * gam[j];
                        gx[span.start + j] = inv / n * (n * gh - sum_gh - xhat[j] * sum_gh_xhat);
                    }
                }
                accumulate(grads, *x, Tensor::new(normalized.shape().to_vec(), gx)?)?;
                accumulate(grads, *gamma, Tensor::vector(gg))?;
                accumulate(grads, *beta, Tensor::vector(gbeta))?;
            }
        }
        Ok(())
    }

    /// Parameter gradients keyed by name. Parameters that never reached the
    /// graph, or sit off every path to the loss, get exact zeros.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> ParamStore {
        store
            .iter()
            .map(|(name, value)| {
                let g = self
                    .params
                    .get(name)
                    .and_then(|v| grads.grads[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(value.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            if existing.shape() != g.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("gradient {:?} vs node {:?}", g.shape(), existing.shape()),
                ));
            }
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not reach it.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn store(entries: &[(&str, Tensor)]) -> ParamStore {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn linear_and_quadratic_losses() {
        let p = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let ps = store(&[("p", p.clone())]);

        let mut g = Graph::new();
        let v = g.param(&ps, "p").unwrap();
        let loss = g.sum(v).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, v).data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let v = g.param(&ps, "p").unwrap();
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq).unwrap();
        let loss = g.scale(s, 0.5).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, v).data(), p.data());
    }

    #[test]
    fn backward_rejects_foreign_or_vector_loss() {
        let g = Graph::new();
        let mut other = Graph::new();
        let v = other.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(v), Err(Error::Usage(_))));

        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let ps = store(&[
            ("a", Tensor::vector(vec![1.0, 2.0])),
            ("b", Tensor::vector(vec![3.0])),
        ]);
        let mut g = Graph::new();
        let a = g.param(&ps, "a").unwrap();
        let _b = g.param(&ps, "b").unwrap();
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap();
        let named = g.param_grads(&grads, &ps);
        assert_eq!(named["b"].data(), &[0.0]);
    }

    #[test]
    fn non_finite_is_reported_with_scope() {
        let mut g = Graph::new();
        g.set_scope("head");
        let x = g.constant(Tensor::vector(vec![-1.0])).unwrap();
        let err = g.sqrt(x).unwrap_err();
        match err {
            Error::NonFinite { op, scope } => {
                assert_eq!(op, "sqrt");
                assert_eq!(scope, "head");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Central-difference check of a composition touching every primitive.
    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let ps = store(&[
            ("x", rand_t(&[2, 3, 4])),
            ("w", rand_t(&[4, 4])),
            ("b", rand_t(&[4])),
            ("gamma", rand_t(&[4])),
            ("beta", rand_t(&[4])),
            ("s", rand_t(&[])),
        ]);

        let forward = |ps: &ParamStore, g: &mut Graph| -> Var {
            let x = g.param(ps, "x").unwrap();
            let w = g.param(ps, "w").unwrap();
            let b = g.param(ps, "b").unwrap();
            let gamma = g.param(ps, "gamma").unwrap();
            let beta = g.param(ps, "beta").unwrap();
            let s = g.param(ps, "s").unwrap();
            let h = g.matmul(x, w).unwrap();
            let h = g.add_bias(h, b).unwrap();
            let h = g.layer_norm(h, gamma, beta).unwrap();
            let t = g.transpose(h).unwrap();
            let att = g.matmul(h, t).unwrap();
            let att = g.softmax(att, 2).unwrap();
            let h = g.matmul(att, h).unwrap();
            let h = g.relu(h).unwrap();
            let h = g.mul_scalar(h, s).unwrap();
            let h = g.add_scalar(h, s).unwrap();
            let pooled = g.mean(h, &[0, 1]).unwrap();
            let picked = g.gather(pooled, 0, &[3, 0, 0]).unwrap();
            let other = g.gather(pooled, 0, &[1, 2, 1]).unwrap();
            let cat = g.concat(&[picked, other], 0).unwrap();
            let sq = g.mul(cat, cat).unwrap();
            let sq = g.add_const(sq, 1.0).unwrap();
            let r = g.sqrt(sq).unwrap();
            let q = g.div(cat, r).unwrap();
            let d = g.sub(q, cat).unwrap();
            let d = g.reshape(d, &[2, 3]).unwrap();
            let tot = g.sum(d).unwrap();
            g.scale(tot, 0.7).unwrap()
        };

        let mut g = Graph::new();
        let loss = forward(&ps, &mut g);
        let grads = g.backward(loss).unwrap();
        let analytic = g.param_grads(&grads, &ps);

        let h = 1e-6;
        for (name, value) in &ps {
            for i in 0..value.len() {
                let mut plus = ps.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = ps.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= h;
                let mut gp = Graph::new();
                let lp = forward(&plus, &mut gp);
                let mut gm = Graph::new();
                let lm = forward(&minus, &mut gm);
                let fd = (gp.scalar_value(lp) - gm.scalar_value(lm)) / (2.0 * h);
                let an = analytic[name].data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-5, "{name}[{i}]: fd {fd} vs tape {an}");
            }
        }
    }
}
