//! Structured 2D mixture-of-experts.
//!
//! A gating matrix couples two expert axes (spatial × temporal for the
//! perceptual path, token × expert for the alignment path). Row means, column
//! means and a joint TopK over the whole matrix give the per-axis and overall
//! routing weights, all drawing on the same shared expert pools.
//!
//! TopK keeps the `k` largest entries (ties go to the lower index) and
//! renormalizes the survivors to sum to one. The selection is treated as a
//! constant during backward; gradients flow through the kept values only.

mod expert;
mod routing;

pub use expert::{expert_forward, expert_param_shapes, mix_experts, vanilla_moe, ExpertPool};
pub use routing::{
    AlignmentRouter, AlignmentRoutes, PerceptualRouter, PerceptualRoutes, RouterRegistry,
    RoutingSpec, SingleExpert, Structured2d, Vanilla1d,
};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// A softmax-normalized `rows × cols` gating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GatingMatrix {
    /// Softmax over all `rows * cols` logits.
    pub fn from_logits(rows: usize, cols: usize, logits: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "gating matrix needs positive extents, got {rows}x{cols}"
            )));
        }
        if logits.len() != rows * cols {
            return Err(Error::shape(
                "gating",
                format!("{} logits for a {rows}x{cols} matrix", logits.len()),
            ));
        }
        let values = Tensor::vector(logits.to_vec()).softmax(0)?.into_data();
        Ok(GatingMatrix { rows, cols, values })
    }

    /// Wrap already-normalized values.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::shape(
                "gating",
                format!("{} values for a {rows}x{cols} matrix", values.len()),
            ));
        }
        Ok(GatingMatrix { rows, cols, values })
    }

    /// Linear layer from a context vector to `rows * cols` logits, then softmax.
    pub fn make(
        context: &[f64],
        weight: &Tensor,
        bias: &Tensor,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let ctx = Tensor::matrix(1, context.len(), context.to_vec())?;
        let logits = ctx.matmul(weight)?.add_last_axis(bias)?;
        Self::from_logits(rows, cols, logits.data())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c)).sum::<f64>() / self.cols as f64)
            .collect()
    }

    pub fn col_means(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c)).sum::<f64>() / self.rows as f64)
            .collect()
    }
}

/// Sparse convex expert weights: `weights[i]` belongs to expert `indices[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl ExpertWeights {
    pub fn weight_of(&self, expert: usize) -> f64 {
        self.indices
            .iter()
            .position(|&i| i == expert)
            .map_or(0.0, |p| self.weights[p])
    }

    /// Dense vector over `n` experts.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &w) in self.indices.iter().zip(&self.weights) {
            out[i] += w;
        }
        out
    }
}

/// Indices of the `k` largest scores, largest first; ties go to the lower index.
pub fn topk_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Config(format!(
            "top-k needs 1 <= k <= {}, got k = {}",
            scores.len(),
            k
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Keep the `k` largest scores and renormalize them to sum to one.
pub fn topk_renorm(scores: &[f64], k: usize) -> Result<ExpertWeights> {
    if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Data(format!("gate scores must be finite and >= 0, got {bad}")));
    }
    let indices = topk_select(scores, k)?;
    let total: f64 = indices.iter().map(|&i| scores[i]).sum();
    if total == 0.0 {
        log::warn!("all-zero gate scores; falling back to uniform weights over the first {k} experts");
        return Ok(ExpertWeights {
            indices: (0..k).collect(),
            weights: vec![1.0 / k as f64; k],
        });
    }
    let weights = indices.iter().map(|&i| scores[i] / total).collect();
    Ok(ExpertWeights { indices, weights })
}

/// The four routing vectors derived from one gating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredWeights {
    pub spatial: ExpertWeights,
    pub temporal: ExpertWeights,
    pub overall_spatial: ExpertWeights,
    pub overall_temporal: ExpertWeights,
}

/// Row marginals and column marginals of a set of selected joint entries.
///
/// `selected` holds flat indices in rank order. Returned weights are
/// renormalized by the selected mass; axis indices appear in order of first
/// selection.
pub fn joint_marginals(
    values: &[f64],
    cols: usize,
    selected: &[usize],
) -> (ExpertWeights, ExpertWeights) {
    let total: f64 = selected.iter().map(|&f| values[f]).sum();
    let marginal = |key: &dyn Fn(usize) -> usize| {
        let mut indices: Vec<usize> = Vec::new();
        let mut mass: Vec<f64> = Vec::new();
        for &f in selected {
            let axis = key(f);
            match indices.iter().position(|&i| i == axis) {
                Some(p) => mass[p] += values[f],
                None => {
                    indices.push(axis);
                    mass.push(values[f]);
                }
            }
        }
        ExpertWeights {
            indices,
            weights: mass.into_iter().map(|m| m / total).collect(),
        }
    };
    (marginal(&|f| f / cols), marginal(&|f| f % cols))
}

/// Row-mean TopK, column-mean TopK and the joint TopK with its marginals.
pub fn structured_weights(
    w: &GatingMatrix,
    k_rows: usize,
    k_cols: usize,
    k_joint: usize,
) -> Result<StructuredWeights> {
    let spatial = topk_renorm(&w.row_means(), k_rows)?;
    let temporal = topk_renorm(&w.col_means(), k_cols)?;
    let selected = topk_select(w.values(), k_joint)?;
    let (overall_spatial, overall_temporal) = joint_marginals(w.values(), w.cols(), &selected);
    Ok(StructuredWeights {
        spatial,
        temporal,
        overall_spatial,
        overall_temporal,
    })
}

/// Graph-side routing: selected expert ids (rank order) and a weight vector node.
#[derive(Debug, Clone)]
pub struct Routed {
    pub indices: Vec<usize>,
    pub weights: Var,
}

impl Routed {
    pub fn to_expert_weights(&self, g: &Graph) -> ExpertWeights {
        ExpertWeights {
            indices: self.indices.clone(),
            weights: g.value(self.weights).data().to_vec(),
        }
    }

    /// A single expert with constant weight one.
    pub fn single(g: &mut Graph, expert: usize) -> Result<Routed> {
        Ok(Routed {
            indices: vec![expert],
            weights: g.constant(Tensor::vector(vec![1.0]))?,
        })
    }
}

/// `v / sum(v)` on the graph.
pub(crate) fn normalize_sum(g: &mut Graph, v: Var) -> Result<Var> {
    let len = g.value(v).len();
    let total = g.sum(v)?;
    let ones = g.constant(Tensor::filled(&[len], 1.0))?;
    let denom = g.mul_scalar(ones, total)?;
    g.div(v, denom)
}

/// TopK with renormalization over a 1-D score node.
pub fn topk_renorm_var(g: &mut Graph, scores: Var, k: usize) -> Result<Routed> {
    let values = g.value(scores).data().to_vec();
    let indices = topk_select(&values, k)?;
    let kept = g.gather(scores, 0, &indices)?;
    if g.value(kept).sum() == 0.0 {
        log::warn!("all-zero gate scores; falling back to uniform weights over the first {k} experts");
        return Ok(Routed {
            indices: (0..k).collect(),
            weights: g.constant(Tensor::filled(&[k], 1.0 / k as f64))?,
        });
    }
    let weights = normalize_sum(g, kept)?;
    Ok(Routed { indices, weights })
}

/// Joint TopK over a flattened `rows × cols` gating node, returning the
/// renormalized row and column marginals.
pub fn joint_topk_var(
    g: &mut Graph,
    flat: Var,
    cols: usize,
    k_joint: usize,
) -> Result<(Routed, Routed)> {
    let values = g.value(flat).data().to_vec();
    let selected = topk_select(&values, k_joint)?;
    let kept = g.gather(flat, 0, &selected)?;
    let kept_row = g.reshape(kept, &[1, selected.len()])?;
    let mut axis_marginal = |key: fn(usize, usize) -> usize| -> Result<Routed> {
        let mut indices: Vec<usize> = Vec::new();
        for &f in &selected {
            let a = key(f, cols);
            if !indices.contains(&a) {
                indices.push(a);
            }
        }
        let mut assign = vec![0.0; selected.len() * indices.len()];
        for (p, &f) in selected.iter().enumerate() {
            let col = indices.iter().position(|&i| i == key(f, cols)).unwrap();
            assign[p * indices.len() + col] = 1.0;
        }
        let assign = g.constant(Tensor::matrix(selected.len(), indices.len(), assign)?)?;
        let mass = g.matmul(kept_row, assign)?;
        let mass = g.reshape(mass, &[indices.len()])?;
        let weights = normalize_sum(g, mass)?;
        Ok(Routed { indices, weights })
    };
    let rows = axis_marginal(|f, c| f / c)?;
    let columns = axis_marginal(|f, c| f % c)?;
    Ok((rows, columns))
}
