//! Flat run configuration: defaults, then the `--config` file, then flags.

use std::path::Path;

use anyhow::{Context, Result};
use eduvqa::model::ModelConfig;
use eduvqa::numerics::DType;
use eduvqa::training::{LossWeights, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::error::usage;

/// Every key the config file may set. Unknown keys are an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub tokens: Option<usize>,
    pub channels: Option<usize>,
    pub spatial_experts: Option<usize>,
    pub temporal_experts: Option<usize>,
    pub alignment_experts: Option<usize>,
    pub top_k: Option<usize>,
    pub joint_top_k: Option<usize>,
    pub expert_hidden: Option<usize>,
    pub attention_heads: Option<usize>,
    pub fusion: Option<bool>,
    pub st_heads: Option<bool>,
    pub wl_heads: Option<bool>,
    pub perceptual_router: Option<String>,
    pub alignment_router: Option<String>,
    pub ablation: Option<u8>,
    pub dtype: Option<DType>,

    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub accumulation: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub lambda_spatial: Option<f64>,
    pub lambda_temporal: Option<f64>,
    pub lambda_overall: Option<f64>,
    pub lambda_word: Option<f64>,
    pub lambda_sentence: Option<f64>,

    pub videos: Option<usize>,
    pub sigma: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// `self` with every key set in `over` replaced.
    pub fn overlay(mut self, over: &FileConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            frames, height, width, tokens, channels, spatial_experts, temporal_experts, alignment_experts, top_k,
            joint_top_k, expert_hidden, attention_heads, fusion, st_heads, wl_heads, perceptual_router,
            alignment_router, ablation, dtype, lr, epochs, batch_size, accumulation, beta1, beta2, eps, seed,
            lambda_spatial, lambda_temporal, lambda_overall, lambda_word, lambda_sentence, videos, sigma
        );
        self
    }

    /// Model configuration. Feature shapes fall back to `shapes`
    /// (`frames, height, width, tokens, channels`) when not set.
    pub fn model(&self, shapes: Option<[usize; 5]>) -> Result<ModelConfig> {
        let base = ModelConfig::default();
        let pick = |v: Option<usize>, i: usize, d: usize| v.or(shapes.map(|s| s[i])).unwrap_or(d);
        let mut cfg = ModelConfig {
            frames: pick(self.frames, 0, base.frames),
            height: pick(self.height, 1, base.height),
            width: pick(self.width, 2, base.width),
            tokens: pick(self.tokens, 3, base.tokens),
            channels: pick(self.channels, 4, base.channels),
            spatial_experts: self.spatial_experts.unwrap_or(base.spatial_experts),
            temporal_experts: self.temporal_experts.unwrap_or(base.temporal_experts),
            alignment_experts: self.alignment_experts.unwrap_or(base.alignment_experts),
            top_k: self.top_k.unwrap_or(base.top_k),
            joint_top_k: self.joint_top_k.or(self.top_k).unwrap_or(base.joint_top_k),
            expert_hidden: self.expert_hidden.or(base.expert_hidden),
            attention_heads: self.attention_heads.unwrap_or(base.attention_heads),
            fusion: self.fusion.unwrap_or(base.fusion),
            st_heads: self.st_heads.unwrap_or(base.st_heads),
            wl_heads: self.wl_heads.unwrap_or(base.wl_heads),
            perceptual_router: self.perceptual_router.clone().unwrap_or(base.perceptual_router),
            alignment_router: self.alignment_router.clone().unwrap_or(base.alignment_router),
            dtype: self.dtype.unwrap_or(base.dtype),
        };
        if let Some(id) = self.ablation {
            cfg = cfg.with_ablation(id)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<TrainSchedule> {
        let base = TrainSchedule::default();
        let w = LossWeights::default();
        let s = TrainSchedule {
            lr: self.lr.unwrap_or(base.lr),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            accumulation: self.accumulation.unwrap_or(base.accumulation),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.eps.unwrap_or(base.eps),
            seed: self.seed.unwrap_or(base.seed),
            weights: LossWeights {
                spatial: self.lambda_spatial.unwrap_or(w.spatial),
                temporal: self.lambda_temporal.unwrap_or(w.temporal),
                overall: self.lambda_overall.unwrap_or(w.overall),
                word: self.lambda_word.unwrap_or(w.word),
                sentence: self.lambda_sentence.unwrap_or(w.sentence),
            },
        };
        s.validate()?;
        Ok(s)
    }
}
