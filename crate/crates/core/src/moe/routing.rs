//! Routing strategies, selectable by name at runtime.
//!
//! | name      | perceptual path                         | alignment path                         |
//! |-----------|-----------------------------------------|----------------------------------------|
//! | `s2d`     | one M×N gating matrix, row/col/joint TopK | one token×Z matrix, row TopK + row mean |
//! | `vanilla` | four independent 1-D gates              | per-token gate + separate sentence gate |
//! | `single`  | one spatial and one temporal expert     | one alignment expert                   |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{joint_topk_var, topk_renorm_var, Routed};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Expert counts and selection sizes requested by the model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingSpec {
    pub width: usize,
    pub spatial_experts: usize,
    pub temporal_experts: usize,
    pub alignment_experts: usize,
    pub k: usize,
    pub k_joint: usize,
}

#[derive(Debug, Clone)]
pub struct PerceptualRoutes {
    pub spatial: Routed,
    pub temporal: Routed,
    pub overall_spatial: Routed,
    pub overall_temporal: Routed,
    /// The `M × N` gating matrix, when the strategy builds one.
    pub gating: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct AlignmentRoutes {
    pub words: Vec<Routed>,
    pub sentence: Routed,
    /// The `words × Z` gating matrix, when the strategy builds one.
    pub gating: Option<Var>,
}

pub trait PerceptualRouter: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Effective (spatial, temporal) pool sizes.
    fn expert_counts(&self, spec: &RoutingSpec) -> (usize, usize);

    fn validate(&self, spec: &RoutingSpec) -> Result<()>;

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)>;

    /// Route from the globally pooled path feature `context: [C]`.
    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        context: Var,
        spec: &RoutingSpec,
    ) -> Result<PerceptualRoutes>;
}

pub trait AlignmentRouter: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn expert_count(&self, spec: &RoutingSpec) -> usize;

    fn validate(&self, spec: &RoutingSpec) -> Result<()>;

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)>;

    /// Route each word token (`words: [Dw, C]`) and the sentence feature
    /// (`sentence: [C]`). `valid` marks the word rows that count toward the
    /// sentence-level weights.
    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        words: Var,
        sentence: Var,
        valid: &[bool],
        spec: &RoutingSpec,
    ) -> Result<AlignmentRoutes>;
}

fn linear_shapes(name: &str, input: usize, output: usize) -> [(String, Vec<usize>); 2] {
    [
        (format!("{name}.w"), vec![input, output]),
        (format!("{name}.b"), vec![output]),
    ]
}

/// `x W + b` for `x: [P, C]`.
fn linear(g: &mut Graph, params: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn as_row(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    g.reshape(v, &[1, n])
}

fn softmax_1d(g: &mut Graph, row_logits: Var) -> Result<Var> {
    let n = g.value(row_logits).len();
    let flat = g.reshape(row_logits, &[n])?;
    g.softmax(flat, 0)
}

fn check_k(k: usize, limit: usize, what: &str) -> Result<()> {
    if k == 0 || k > limit {
        return Err(Error::Config(format!(
            "{what}: top-k must satisfy 1 <= k <= {limit}, got {k}"
        )));
    }
    Ok(())
}

/// The structured 2D strategy.
#[derive(Debug, Default, Clone, Copy)]
pub struct Structured2d;

impl PerceptualRouter for Structured2d {
    fn name(&self) -> &'static str {
        "s2d"
    }

    fn expert_counts(&self, spec: &RoutingSpec) -> (usize, usize) {
        (spec.spatial_experts, spec.temporal_experts)
    }

    fn validate(&self, spec: &RoutingSpec) -> Result<()> {
        check_k(spec.k, spec.spatial_experts.min(spec.temporal_experts), "perceptual routing")?;
        check_k(
            spec.k_joint,
            spec.spatial_experts * spec.temporal_experts,
            "joint perceptual routing",
        )
    }

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        linear_shapes(
            &format!("{prefix}.gate"),
            spec.width,
            spec.spatial_experts * spec.temporal_experts,
        )
        .into()
    }

    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        context: Var,
        spec: &RoutingSpec,
    ) -> Result<PerceptualRoutes> {
        let (m, n) = (spec.spatial_experts, spec.temporal_experts);
        let ctx = as_row(g, context)?;
        let logits = linear(g, params, &format!("{prefix}.gate"), ctx)?;
        let flat = softmax_1d(g, logits)?;
        let matrix = g.reshape(flat, &[m, n])?;
        let row_means = g.mean(matrix, &[1])?;
        let col_means = g.mean(matrix, &[0])?;
        let spatial = topk_renorm_var(g, row_means, spec.k)?;
        let temporal = topk_renorm_var(g, col_means, spec.k)?;
        let (overall_spatial, overall_temporal) = joint_topk_var(g, flat, n, spec.k_joint)?;
        Ok(PerceptualRoutes {
            spatial,
            temporal,
            overall_spatial,
            overall_temporal,
            gating: Some(matrix),
        })
    }
}

impl AlignmentRouter for Structured2d {
    fn name(&self) -> &'static str {
        "s2d"
    }

    fn expert_count(&self, spec: &RoutingSpec) -> usize {
        spec.alignment_experts
    }

    fn validate(&self, spec: &RoutingSpec) -> Result<()> {
        check_k(spec.k, spec.alignment_experts, "alignment routing")
    }

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        linear_shapes(&format!("{prefix}.gate"), spec.width, spec.alignment_experts).into()
    }

    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        words: Var,
        _sentence: Var,
        valid: &[bool],
        spec: &RoutingSpec,
    ) -> Result<AlignmentRoutes> {
        let z = spec.alignment_experts;
        let dw = g.value(words).shape()[0];
        let logits = linear(g, params, &format!("{prefix}.gate"), words)?;
        let flat = softmax_1d(g, logits)?;
        let matrix = g.reshape(flat, &[dw, z])?;
        let mut routed_words = Vec::with_capacity(dw);
        for i in 0..dw {
            let row = g.gather(matrix, 0, &[i])?;
            let row = g.reshape(row, &[z])?;
            routed_words.push(topk_renorm_var(g, row, spec.k)?);
        }
        let valid_rows: Vec<usize> = (0..dw).filter(|&i| valid[i]).collect();
        if valid_rows.is_empty() {
            return Err(Error::Degenerate("token mask selects no word tokens".into()));
        }
        let kept = g.gather(matrix, 0, &valid_rows)?;
        let averaged = g.mean(kept, &[0])?;
        let sentence = topk_renorm_var(g, averaged, spec.k)?;
        Ok(AlignmentRoutes {
            words: routed_words,
            sentence,
            gating: Some(matrix),
        })
    }
}

/// Conventional per-task 1-D gating with no shared matrix.
#[derive(Debug, Default, Clone, Copy)]
pub struct Vanilla1d;

impl Vanilla1d {
    fn gate(
        g: &mut Graph,
        params: &ParamStore,
        name: &str,
        ctx: Var,
        k: usize,
    ) -> Result<Routed> {
        let logits = linear(g, params, name, ctx)?;
        let probs = softmax_1d(g, logits)?;
        topk_renorm_var(g, probs, k)
    }
}

impl PerceptualRouter for Vanilla1d {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn expert_counts(&self, spec: &RoutingSpec) -> (usize, usize) {
        (spec.spatial_experts, spec.temporal_experts)
    }

    fn validate(&self, spec: &RoutingSpec) -> Result<()> {
        check_k(spec.k, spec.spatial_experts.min(spec.temporal_experts), "perceptual routing")
    }

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        let (m, n) = (spec.spatial_experts, spec.temporal_experts);
        [("gate_s", m), ("gate_t", n), ("gate_os", m), ("gate_ot", n)]
            .into_iter()
            .flat_map(|(name, out)| linear_shapes(&format!("{prefix}.{name}"), spec.width, out))
            .collect()
    }

    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        context: Var,
        spec: &RoutingSpec,
    ) -> Result<PerceptualRoutes> {
        let ctx = as_row(g, context)?;
        let k = spec.k;
        Ok(PerceptualRoutes {
            spatial: Self::gate(g, params, &format!("{prefix}.gate_s"), ctx, k)?,
            temporal: Self::gate(g, params, &format!("{prefix}.gate_t"), ctx, k)?,
            overall_spatial: Self::gate(g, params, &format!("{prefix}.gate_os"), ctx, k)?,
            overall_temporal: Self::gate(g, params, &format!("{prefix}.gate_ot"), ctx, k)?,
            gating: None,
        })
    }
}

impl AlignmentRouter for Vanilla1d {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn expert_count(&self, spec: &RoutingSpec) -> usize {
        spec.alignment_experts
    }

    fn validate(&self, spec: &RoutingSpec) -> Result<()> {
        check_k(spec.k, spec.alignment_experts, "alignment routing")
    }

    fn param_shapes(&self, prefix: &str, spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        let z = spec.alignment_experts;
        ["gate_d", "gate_s"]
            .into_iter()
            .flat_map(|name| linear_shapes(&format!("{prefix}.{name}"), spec.width, z))
            .collect()
    }

    fn route(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        prefix: &str,
        words: Var,
        sentence: Var,
        valid: &[bool],
        spec: &RoutingSpec,
    ) -> Result<AlignmentRoutes> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::Degenerate("token mask selects no word tokens".into()));
        }
        let dw = g.value(words).shape()[0];
        let logits = linear(g, params, &format!("{prefix}.gate_d"), words)?;
        let probs = g.softmax(logits, 1)?;
        let mut routed_words = Vec::with_capacity(dw);
        for i in 0..dw {
            let row = g.gather(probs, 0, &[i])?;
            let row = g.reshape(row, &[spec.alignment_experts])?;
            routed_words.push(topk_renorm_var(g, row, spec.k)?);
        }
        let ctx = as_row(g, sentence)?;
        let sentence = Self::gate(g, params, &format!("{prefix}.gate_s"), ctx, spec.k)?;
        Ok(AlignmentRoutes {
            words: routed_words,
            sentence,
            gating: None,
        })
    }
}

/// No routing: every head uses the single expert of its pool.
#[derive(Debug, Default, Clone, Copy)]
pub struct SingleExpert;

impl PerceptualRouter for SingleExpert {
    fn name(&self) -> &'static str {
        "single"
    }

    fn expert_counts(&self, _spec: &RoutingSpec) -> (usize, usize) {
        (1, 1)
    }

    fn validate(&self, _spec: &RoutingSpec) -> Result<()> {
        Ok(())
    }

    fn param_shapes(&self, _prefix: &str, _spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        Vec::new()
    }

    fn route(
        &self,
        g: &mut Graph,
        _params: &ParamStore,
        _prefix: &str,
        _context: Var,
        _spec: &RoutingSpec,
    ) -> Result<PerceptualRoutes> {
        Ok(PerceptualRoutes {
            spatial: Routed::single(g, 0)?,
            temporal: Routed::single(g, 0)?,
            overall_spatial: Routed::single(g, 0)?,
            overall_temporal: Routed::single(g, 0)?,
            gating: None,
        })
    }
}

impl AlignmentRouter for SingleExpert {
    fn name(&self) -> &'static str {
        "single"
    }

    fn expert_count(&self, _spec: &RoutingSpec) -> usize {
        1
    }

    fn validate(&self, _spec: &RoutingSpec) -> Result<()> {
        Ok(())
    }

    fn param_shapes(&self, _prefix: &str, _spec: &RoutingSpec) -> Vec<(String, Vec<usize>)> {
        Vec::new()
    }

    fn route(
        &self,
        g: &mut Graph,
        _params: &ParamStore,
        _prefix: &str,
        words: Var,
        _sentence: Var,
        valid: &[bool],
        _spec: &RoutingSpec,
    ) -> Result<AlignmentRoutes> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::Degenerate("token mask selects no word tokens".into()));
        }
        let dw = g.value(words).shape()[0];
        let words = (0..dw)
            .map(|_| Routed::single(g, 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(AlignmentRoutes {
            words,
            sentence: Routed::single(g, 0)?,
            gating: None,
        })
    }
}

/// Name → strategy lookup for both paths.
#[derive(Debug, Clone)]
pub struct RouterRegistry {
    perceptual: BTreeMap<&'static str, Arc<dyn PerceptualRouter>>,
    alignment: BTreeMap<&'static str, Arc<dyn AlignmentRouter>>,
}

impl RouterRegistry {
    pub fn empty() -> Self {
        RouterRegistry {
            perceptual: BTreeMap::new(),
            alignment: BTreeMap::new(),
        }
    }

    /// `s2d`, `vanilla` and `single` for both paths.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_perceptual(Arc::new(Structured2d));
        r.register_perceptual(Arc::new(Vanilla1d));
        r.register_perceptual(Arc::new(SingleExpert));
        r.register_alignment(Arc::new(Structured2d));
        r.register_alignment(Arc::new(Vanilla1d));
        r.register_alignment(Arc::new(SingleExpert));
        r
    }

    pub fn register_perceptual(&mut self, router: Arc<dyn PerceptualRouter>) {
        self.perceptual.insert(router.name(), router);
    }

    pub fn register_alignment(&mut self, router: Arc<dyn AlignmentRouter>) {
        self.alignment.insert(router.name(), router);
    }

    pub fn perceptual(&self, name: &str) -> Result<Arc<dyn PerceptualRouter>> {
        self.perceptual.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown perceptual router `{name}` (known: {})",
                self.perceptual.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn alignment(&self, name: &str) -> Result<Arc<dyn AlignmentRouter>> {
        self.alignment.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown alignment router `{name}` (known: {})",
                self.alignment.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn perceptual_names(&self) -> Vec<&'static str> {
        self.perceptual.keys().copied().collect()
    }

    pub fn alignment_names(&self) -> Vec<&'static str> {
        self.alignment.keys().copied().collect()
    }
}

impl Default for RouterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
