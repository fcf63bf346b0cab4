//! Dense row-major tensors.
//!
//! Values are always held as `f64`. The [`DType`] tag records the storage
//! precision: an `F32` tensor only ever holds values exactly representable in
//! `f32`, so writing it to disk at single precision is lossless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            dtype: DType::F64,
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::F64,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::F64,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            dtype: DType::F64,
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            dtype: DType::F64,
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Re-tag the storage precision, rounding through `f32` when narrowing.
    pub fn cast(mut self, dtype: DType) -> Self {
        if dtype == DType::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            dtype: DType::F64,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "div", |a, b| a / b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: DType::F64,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// `self + bias` with `bias` broadcast along every leading axis.
    pub fn add_last_axis(&self, bias: &Tensor) -> Result<Tensor> {
        let width = *self.shape.last().unwrap_or(&1);
        if bias.data.len() != width || bias.ndim() != 1 {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match last axis of {:?}", bias.shape, self.shape),
            ));
        }
        let mut out = self.clone();
        out.dtype = DType::F64;
        for row in out.data.chunks_mut(width) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Contraction over the last axis of `self` and the second-to-last of `other`.
    ///
    /// `other` is either 2-D (shared across all leading axes of `self`) or has
    /// exactly the same leading axes as `self`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = vec![0.0; plan.batch * plan.m * plan.n];
        for bi in 0..plan.batch {
            let a = &self.data[bi * plan.m * plan.k..(bi + 1) * plan.m * plan.k];
            let b_off = if plan.shared_rhs { 0 } else { bi * plan.k * plan.n };
            let b = &other.data[b_off..b_off + plan.k * plan.n];
            let o = &mut out[bi * plan.m * plan.n..(bi + 1) * plan.m * plan.n];
            for i in 0..plan.m {
                for p in 0..plan.k {
                    let av = a[i * plan.k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * plan.n..(p + 1) * plan.n];
                    let orow = &mut o[i * plan.n..(i + 1) * plan.n];
                    for (ov, &bv) in orow.iter_mut().zip(brow) {
                        *ov += av * bv;
                    }
                }
            }
        }
        Tensor::new(plan.out_shape, out)
    }

    /// Swap the two trailing axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::shape("transpose", format!("rank {} < 2", nd)));
        }
        let (r, c) = (self.shape[nd - 2], self.shape[nd - 1]);
        let batch = self.len() / (r * c).max(1);
        let mut out = vec![0.0; self.len()];
        for b in 0..batch {
            let base = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = self.data[base + i * c + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(nd - 2, nd - 1);
        Tensor::new(shape, out)
    }

    /// Softmax along `axis`, max-subtracted. The normalizer is summed in
    /// ascending order so the result does not depend on element order.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(&self.shape, axis, "softmax")?;
        let mut out = vec![0.0; self.len()];
        let mut exps = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len)
                    .map(|a| self.data[idx(a)])
                    .fold(f64::NEG_INFINITY, f64::max);
                for (a, e) in exps.iter_mut().enumerate() {
                    *e = (self.data[idx(a)] - max).exp();
                }
                let z = ordered_sum(&exps);
                for (a, e) in exps.iter().enumerate() {
                    out[idx(a)] = e / z;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Arithmetic mean over a set of axes; the remaining axes keep their order.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let plan = ReducePlan::new(&self.shape, axes)?;
        let mut buckets: Vec<Vec<f64>> = vec![Vec::with_capacity(plan.group); plan.out_len];
        for (flat, &v) in self.data.iter().enumerate() {
            buckets[plan.out_index(flat)].push(v);
        }
        let denom = plan.group as f64;
        let out = buckets.iter().map(|b| ordered_sum(b) / denom).collect();
        Tensor::new(plan.out_shape, out)
    }

    /// Select `indices` along `axis`.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(&self.shape, axis, "gather")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::shape(
                "gather",
                format!("index {} out of range for axis {} of {:?}", bad, axis, self.shape),
            ));
        }
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &a in indices {
                let base = (o * len + a) * inner;
                out.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Tensor::new(shape, out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::shape("concat", format!("axis {} >= rank {}", axis, nd)));
        }
        for p in parts {
            let compatible = p.ndim() == nd
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {}", p.shape, first.shape, axis),
                ));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Tensor::new(shape, out)
    }
}

/// Sum in ascending order, independent of the order the values arrive in.
pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

pub(crate) fn split_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {} out of range for {:?}", axis, shape),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape(
                "matmul",
                format!("operands must be at least 2-D, got {:?} and {:?}", a, b),
            ));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {:?} x {:?} ({} != {})", a, b, k, kb),
            ));
        }
        let lead = &a[..a.len() - 2];
        let shared_rhs = b.len() == 2;
        if !shared_rhs && &b[..b.len() - 2] != lead {
            return Err(Error::shape(
                "matmul",
                format!("batch axes differ: {:?} x {:?}", a, b),
            ));
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        Ok(MatmulPlan {
            batch: lead.iter().product(),
            m,
            k,
            n,
            shared_rhs,
            out_shape,
        })
    }
}

pub(crate) struct ReducePlan {
    pub out_shape: Vec<usize>,
    pub out_len: usize,
    pub group: usize,
    in_strides: Vec<usize>,
    shape: Vec<usize>,
    out_strides_for_in: Vec<usize>,
}

impl ReducePlan {
    pub fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let mut seen = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::shape(
                    "mean_pool",
                    format!("axis {} out of range for {:?}", a, shape),
                ));
            }
            if seen[a] {
                return Err(Error::shape("mean_pool", format!("axis {} repeated", a)));
            }
            seen[a] = true;
        }
        let group: usize = axes.iter().map(|&a| shape[a]).product();
        if group == 0 {
            return Err(Error::Degenerate(format!(
                "mean over empty extent: axes {:?} of {:?}",
                axes, shape
            )));
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| !seen[*d])
            .map(|(_, &e)| e)
            .collect();
        let mut in_strides = vec![1; shape.len()];
        for d in (0..shape.len().saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        // stride in the output for each input axis (0 for reduced axes)
        let mut out_strides_for_in = vec![0; shape.len()];
        let mut acc = 1;
        for d in (0..shape.len()).rev() {
            if !seen[d] {
                out_strides_for_in[d] = acc;
                acc *= shape[d];
            }
        }
        Ok(ReducePlan {
            out_len: out_shape.iter().product(),
            out_shape,
            group,
            in_strides,
            shape: shape.to_vec(),
            out_strides_for_in,
        })
    }

    pub fn out_index(&self, flat: usize) -> usize {
        let mut rem = flat;
        let mut out = 0;
        for d in 0..self.shape.len() {
            let coord = rem / self.in_strides[d];
            rem %= self.in_strides[d];
            out += coord * self.out_strides_for_in[d];
        }
        out
    }
}
