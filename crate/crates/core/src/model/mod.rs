//! The dual-path quality network.
//!
//! Video features `[T, H, W, C]` and text features `[T, D, C]` are fused by
//! two frame-synchronized cross-attention blocks (skipped when `fusion` is
//! off). The perceptual path predicts spatial, temporal and overall scores;
//! the alignment path predicts one score per word token and one for the
//! sentence. Each path routes through its own shared expert pools.

mod attention;
mod config;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use attention::{cross_attention, cross_attention_param_shapes};
pub use config::{AblationRow, ModelConfig, ABLATION_ROWS};

use crate::error::{Error, Result};
use crate::moe::{
    mix_experts, AlignmentRouter, AlignmentRoutes, ExpertPool, PerceptualRouter, PerceptualRoutes,
    RouterRegistry,
};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

pub const PERCEPTUAL_PREFIX: &str = "per";
pub const ALIGNMENT_PREFIX: &str = "aln";
pub const FUSION_PERCEPTUAL: &str = "fuse.p";
pub const FUSION_ALIGNMENT: &str = "fuse.a";

/// Precomputed features of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    /// `[T, H, W, C]`
    pub video: Tensor,
    /// `[T, D, C]`; position 0 is the sentence token.
    pub text: Tensor,
    /// One flag per word position `1..D`.
    pub token_mask: Vec<bool>,
}

/// Scores predicted for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub q_spatial: Option<f64>,
    pub q_temporal: Option<f64>,
    pub q_overall_percept: f64,
    /// One score per word position; empty when the word head is disabled.
    pub q_word: Vec<f64>,
    pub q_sentence: f64,
}

/// Graph nodes of the five heads for one sample.
#[derive(Debug, Clone)]
pub struct BundleVars {
    pub spatial: Option<Var>,
    pub temporal: Option<Var>,
    pub overall: Var,
    pub words: Vec<Var>,
    pub sentence: Var,
}

impl BundleVars {
    pub fn values(&self, g: &Graph) -> PredictionBundle {
        PredictionBundle {
            q_spatial: self.spatial.map(|v| g.scalar_value(v)),
            q_temporal: self.temporal.map(|v| g.scalar_value(v)),
            q_overall_percept: g.scalar_value(self.overall),
            q_word: self.words.iter().map(|&v| g.scalar_value(v)).collect(),
            q_sentence: g.scalar_value(self.sentence),
        }
    }
}

/// Intermediate routing decisions, exposed for inspection and tests.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub bundle: BundleVars,
    pub perceptual_routes: PerceptualRoutes,
    pub alignment_routes: AlignmentRoutes,
}

#[derive(Debug, Clone)]
pub struct EduVqa {
    config: ModelConfig,
    perceptual: Arc<dyn PerceptualRouter>,
    alignment: Arc<dyn AlignmentRouter>,
    spatial_pool: ExpertPool,
    temporal_pool: ExpertPool,
    alignment_pool: ExpertPool,
}

fn linear_shapes(name: &str, input: usize, output: usize) -> [(String, Vec<usize>); 2] {
    [
        (format!("{name}.w"), vec![input, output]),
        (format!("{name}.b"), vec![output]),
    ]
}

fn linear(g: &mut Graph, params: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// `[P, C]` -> mean over positions -> scalar regression head.
fn pooled_head(g: &mut Graph, params: &ParamStore, name: &str, rows: Var) -> Result<Var> {
    let pooled = g.mean(rows, &[0])?;
    let c = g.value(pooled).len();
    let row = g.reshape(pooled, &[1, c])?;
    let y = linear(g, params, name, row)?;
    g.reshape(y, &[])
}

impl EduVqa {
    pub fn new(config: ModelConfig, registry: &RouterRegistry) -> Result<Self> {
        config.validate()?;
        let perceptual = registry.perceptual(&config.perceptual_router)?;
        let alignment = registry.alignment(&config.alignment_router)?;
        let spec = config.routing_spec();
        perceptual.validate(&spec)?;
        alignment.validate(&spec)?;
        let (m, n) = perceptual.expert_counts(&spec);
        let z = alignment.expert_count(&spec);
        let (c, h) = (config.channels, config.hidden());
        Ok(EduVqa {
            spatial_pool: ExpertPool::new(format!("{PERCEPTUAL_PREFIX}.spatial"), m, c, h),
            temporal_pool: ExpertPool::new(format!("{PERCEPTUAL_PREFIX}.temporal"), n, c, h),
            alignment_pool: ExpertPool::new(format!("{ALIGNMENT_PREFIX}.expert"), z, c, h),
            config,
            perceptual,
            alignment,
        })
    }

    pub fn with_builtin_routers(config: ModelConfig) -> Result<Self> {
        Self::new(config, &RouterRegistry::builtin())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spatial_pool(&self) -> &ExpertPool {
        &self.spatial_pool
    }

    pub fn temporal_pool(&self) -> &ExpertPool {
        &self.temporal_pool
    }

    pub fn alignment_pool(&self) -> &ExpertPool {
        &self.alignment_pool
    }

    pub fn perceptual_router(&self) -> &dyn PerceptualRouter {
        self.perceptual.as_ref()
    }

    pub fn alignment_router(&self) -> &dyn AlignmentRouter {
        self.alignment.as_ref()
    }

    /// Every trainable tensor with its shape, in name order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.config.channels;
        let spec = self.config.routing_spec();
        let mut out = Vec::new();
        if self.config.fusion {
            out.extend(cross_attention_param_shapes(FUSION_PERCEPTUAL, c));
            out.extend(cross_attention_param_shapes(FUSION_ALIGNMENT, c));
        }
        out.extend(self.perceptual.param_shapes(PERCEPTUAL_PREFIX, &spec));
        out.extend(self.alignment.param_shapes(ALIGNMENT_PREFIX, &spec));
        out.extend(self.spatial_pool.param_shapes());
        out.extend(self.temporal_pool.param_shapes());
        out.extend(self.alignment_pool.param_shapes());
        if self.config.st_heads {
            out.extend(linear_shapes(&format!("{PERCEPTUAL_PREFIX}.fc_s"), c, 1));
            out.extend(linear_shapes(&format!("{PERCEPTUAL_PREFIX}.fc_t"), c, 1));
        }
        out.extend(linear_shapes(&format!("{PERCEPTUAL_PREFIX}.fc_o"), 2 * c, 1));
        if self.config.wl_heads {
            out.extend(linear_shapes(&format!("{ALIGNMENT_PREFIX}.fc_d"), c, 1));
        }
        out.extend(linear_shapes(&format!("{ALIGNMENT_PREFIX}.fc_s"), c, 1));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Seeded initialization: matrices ~ N(0, 1/fan_in), biases 0, layer-norm
    /// gain 1 and shift 0.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("ln_gamma") {
                    vec![1.0; n]
                } else if shape.len() == 2 {
                    let std = 1.0 / (shape[0] as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                } else {
                    vec![0.0; n]
                };
                let t = Tensor::new(shape, data).expect("shape matches data");
                (name, t)
            })
            .collect()
    }

    /// Reject parameter stores that do not match this architecture.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in shapes {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("missing parameter `{name}`"))),
            }
        }
        Ok(())
    }

    pub fn check_features(&self, sample: &SampleFeatures) -> Result<()> {
        let c = &self.config;
        let vs = sample.video.shape();
        let ts = sample.text.shape();
        if vs.len() != 4 || vs[0] != c.frames || vs[3] != c.channels {
            return Err(Error::shape(
                "features",
                format!(
                    "video features {vs:?} do not match [T={}, H, W, C={}]",
                    c.frames, c.channels
                ),
            ));
        }
        if ts.len() != 3 || ts[0] != vs[0] || ts[2] != c.channels || ts[1] < 2 {
            return Err(Error::shape(
                "features",
                format!("text features {ts:?} do not match video features {vs:?}"),
            ));
        }
        if sample.token_mask.len() != ts[1] - 1 {
            return Err(Error::shape(
                "features",
                format!(
                    "token mask has {} entries for {} word positions",
                    sample.token_mask.len(),
                    ts[1] - 1
                ),
            ));
        }
        Ok(())
    }

    /// Record the full forward pass of one sample on `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        sample: &SampleFeatures,
    ) -> Result<ForwardTrace> {
        self.check_features(sample)?;
        let video = g.constant(sample.video.clone())?;
        let text = g.constant(sample.text.clone())?;
        let (f_p, f_a) = self.fuse(g, params, video, text)?;
        let (perceptual, perceptual_routes) = self.perceptual_forward(g, params, f_p)?;
        let (words, sentence, alignment_routes) =
            self.alignment_forward(g, params, f_a, &sample.token_mask)?;
        Ok(ForwardTrace {
            bundle: BundleVars {
                spatial: perceptual.0,
                temporal: perceptual.1,
                overall: perceptual.2,
                words,
                sentence,
            },
            perceptual_routes,
            alignment_routes,
        })
    }

    /// Cross-modal fusion; with fusion off the inputs pass through unchanged.
    pub fn fuse(&self, g: &mut Graph, params: &ParamStore, video: Var, text: Var) -> Result<(Var, Var)> {
        if !self.config.fusion {
            return Ok((video, text));
        }
        let vs = g.value(video).shape().to_vec();
        let (t, hw, c) = (vs[0], vs[1] * vs[2], vs[3]);
        g.set_scope("fusion");
        let video_seq = g.reshape(video, &[t, hw, c])?;
        let f_p = cross_attention(g, params, FUSION_PERCEPTUAL, video_seq, text)?;
        let f_p = g.reshape(f_p, &vs)?;
        let f_a = cross_attention(g, params, FUSION_ALIGNMENT, text, video_seq)?;
        Ok((f_p, f_a))
    }

    /// Spatial, temporal and overall perceptual scores from `f_p: [T, H, W, C]`.
    #[allow(clippy::type_complexity)]
    pub fn perceptual_forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        f_p: Var,
    ) -> Result<((Option<Var>, Option<Var>, Var), PerceptualRoutes)> {
        let shape = g.value(f_p).shape().to_vec();
        let (h, w, c) = (shape[1], shape[2], shape[3]);
        g.set_scope("perceptual.pool");
        let f_s = g.mean(f_p, &[0])?;
        let f_s = g.reshape(f_s, &[h * w, c])?;
        let f_t = g.mean(f_p, &[1, 2])?;
        let f_o = g.mean(f_p, &[0, 1, 2])?;

        g.set_scope("perceptual.gating");
        let spec = self.config.routing_spec();
        let routes = self.perceptual.route(g, params, PERCEPTUAL_PREFIX, f_o, &spec)?;

        let (spatial, temporal) = if self.config.st_heads {
            g.set_scope("perceptual.spatial");
            let r_ss = mix_experts(g, params, &self.spatial_pool, &routes.spatial, f_s)?;
            let q_s = pooled_head(g, params, &format!("{PERCEPTUAL_PREFIX}.fc_s"), r_ss)?;
            g.set_scope("perceptual.temporal");
            let r_tt = mix_experts(g, params, &self.temporal_pool, &routes.temporal, f_t)?;
            let q_t = pooled_head(g, params, &format!("{PERCEPTUAL_PREFIX}.fc_t"), r_tt)?;
            (Some(q_s), Some(q_t))
        } else {
            (None, None)
        };

        g.set_scope("perceptual.overall");
        let f_o_row = g.reshape(f_o, &[1, c])?;
        let r_os = mix_experts(g, params, &self.spatial_pool, &routes.overall_spatial, f_o_row)?;
        let r_ot = mix_experts(g, params, &self.temporal_pool, &routes.overall_temporal, f_o_row)?;
        let joined = g.concat(&[r_os, r_ot], 1)?;
        let q_o = linear(g, params, &format!("{PERCEPTUAL_PREFIX}.fc_o"), joined)?;
        let q_o = g.reshape(q_o, &[])?;
        Ok(((spatial, temporal, q_o), routes))
    }

    /// Word and sentence scores from `f_a: [T, D, C]`.
    pub fn alignment_forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        f_a: Var,
        token_mask: &[bool],
    ) -> Result<(Vec<Var>, Var, AlignmentRoutes)> {
        let shape = g.value(f_a).shape().to_vec();
        let (d, c) = (shape[1], shape[2]);
        if !token_mask.iter().any(|&m| m) {
            return Err(Error::Degenerate("token mask selects no word tokens".into()));
        }
        g.set_scope("alignment.pool");
        let pooled = g.mean(f_a, &[0])?;
        let word_rows: Vec<usize> = (1..d).collect();
        let words = g.gather(pooled, 0, &word_rows)?;
        let sentence = g.gather(pooled, 0, &[0])?;
        let sentence_vec = g.reshape(sentence, &[c])?;

        g.set_scope("alignment.gating");
        let spec = self.config.routing_spec();
        let routes = self.alignment.route(
            g,
            params,
            ALIGNMENT_PREFIX,
            words,
            sentence_vec,
            token_mask,
            &spec,
        )?;

        let mut word_scores = Vec::new();
        if self.config.wl_heads {
            g.set_scope("alignment.word");
            for (i, routed) in routes.words.iter().enumerate() {
                let x = g.gather(words, 0, &[i])?;
                let r = mix_experts(g, params, &self.alignment_pool, routed, x)?;
                let q = linear(g, params, &format!("{ALIGNMENT_PREFIX}.fc_d"), r)?;
                word_scores.push(g.reshape(q, &[])?);
            }
        }

        g.set_scope("alignment.sentence");
        let r = mix_experts(g, params, &self.alignment_pool, &routes.sentence, sentence)?;
        let q = linear(g, params, &format!("{ALIGNMENT_PREFIX}.fc_s"), r)?;
        let q = g.reshape(q, &[])?;
        Ok((word_scores, q, routes))
    }

    /// Forward one sample without keeping the graph.
    pub fn predict(&self, params: &ParamStore, sample: &SampleFeatures) -> Result<PredictionBundle> {
        let mut g = Graph::new();
        let trace = self.forward(&mut g, params, sample)?;
        Ok(trace.bundle.values(&g))
    }
}
