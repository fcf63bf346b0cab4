use super::{topk_renorm_var, Routed};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Parameter names and shapes of a two-layer ReLU MLP `width -> hidden -> width`.
pub fn expert_param_shapes(prefix: &str, width: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.w1"), vec![width, hidden]),
        (format!("{prefix}.b1"), vec![hidden]),
        (format!("{prefix}.w2"), vec![hidden, width]),
        (format!("{prefix}.b2"), vec![width]),
    ]
}

/// `relu(x W1 + b1) W2 + b2` applied row-wise to `x: [P, width]`.
pub fn expert_forward(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w1 = g.param(params, &format!("{prefix}.w1"))?;
    let b1 = g.param(params, &format!("{prefix}.b1"))?;
    let w2 = g.param(params, &format!("{prefix}.w2"))?;
    let b2 = g.param(params, &format!("{prefix}.b2"))?;
    let width = g.value(w1).shape()[0];
    let x_width = g.value(x).shape().last().copied().unwrap_or(0);
    if x_width != width {
        return Err(Error::shape(
            "expert",
            format!("input width {x_width} does not match expert width {width} ({prefix})"),
        ));
    }
    let h = g.matmul(x, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.relu(h)?;
    let y = g.matmul(h, w2)?;
    g.add_bias(y, b2)
}

/// A named pool of experts sharing one width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertPool {
    pub prefix: String,
    pub count: usize,
    pub width: usize,
    pub hidden: usize,
}

impl ExpertPool {
    pub fn new(prefix: impl Into<String>, count: usize, width: usize, hidden: usize) -> Self {
        ExpertPool {
            prefix: prefix.into(),
            count,
            width,
            hidden,
        }
    }

    pub fn expert_prefix(&self, j: usize) -> String {
        format!("{}.{}", self.prefix, j)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        (0..self.count)
            .flat_map(|j| expert_param_shapes(&self.expert_prefix(j), self.width, self.hidden))
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamStore, j: usize, x: Var) -> Result<Var> {
        if j >= self.count {
            return Err(Error::Config(format!(
                "expert {j} out of range for pool `{}` of {}",
                self.prefix, self.count
            )));
        }
        expert_forward(g, params, &self.expert_prefix(j), x)
    }
}

/// `Σ_j w_j E_j(x)` over the selected experts only, accumulated in rank order.
pub fn mix_experts(
    g: &mut Graph,
    params: &ParamStore,
    pool: &ExpertPool,
    routed: &Routed,
    x: Var,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (pos, &j) in routed.indices.iter().enumerate() {
        let y = pool.forward(g, params, j, x)?;
        let w = g.element(routed.weights, pos)?;
        let term = g.mul_scalar(y, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Degenerate("mixture with no selected experts".into()))
}

/// Conventional one-axis MoE: softmax over per-expert logits, TopK, mix.
pub fn vanilla_moe(
    g: &mut Graph,
    params: &ParamStore,
    logits: Var,
    pool: &ExpertPool,
    x: Var,
    k: usize,
) -> Result<Var> {
    let probs = g.softmax(logits, 0)?;
    let routed = topk_renorm_var(g, probs, k)?;
    mix_experts(g, params, pool, &routed, x)
}
