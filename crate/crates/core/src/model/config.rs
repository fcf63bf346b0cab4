use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::RoutingSpec;
use crate::numerics::DType;

/// Architecture hyperparameters. Serialized verbatim into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames `T` of both feature tensors.
    pub frames: usize,
    /// Spatial grid `H × W` of the video features.
    pub height: usize,
    pub width: usize,
    /// Token positions `D` of the text features, including the sentence slot at 0.
    pub tokens: usize,
    /// Channel width `C` shared by both feature tensors.
    pub channels: usize,
    pub spatial_experts: usize,
    pub temporal_experts: usize,
    pub alignment_experts: usize,
    pub top_k: usize,
    /// Selection size of the joint TopK over the full perceptual gating matrix.
    pub joint_top_k: usize,
    /// Expert MLP hidden width; `None` means `2 * channels`.
    #[serde(default)]
    pub expert_hidden: Option<usize>,
    pub attention_heads: usize,
    pub fusion: bool,
    /// Spatial and temporal sub-dimension heads.
    pub st_heads: bool,
    /// Word-level alignment head.
    pub wl_heads: bool,
    pub perceptual_router: String,
    pub alignment_router: String,
    #[serde(default)]
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 4,
            height: 4,
            width: 4,
            tokens: 6,
            channels: 16,
            spatial_experts: 8,
            temporal_experts: 8,
            alignment_experts: 8,
            top_k: 2,
            joint_top_k: 2,
            expert_hidden: None,
            attention_heads: 1,
            fusion: true,
            st_heads: true,
            wl_heads: true,
            perceptual_router: "s2d".into(),
            alignment_router: "s2d".into(),
            dtype: DType::F32,
        }
    }
}

/// One row of the component ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub id: u8,
    pub fusion: bool,
    pub vanilla: bool,
    pub perceptual_moe: bool,
    pub alignment_moe: bool,
    pub st: bool,
    pub wl: bool,
}

pub const ABLATION_ROWS: [AblationRow; 7] = [
    AblationRow { id: 1, fusion: false, vanilla: false, perceptual_moe: false, alignment_moe: false, st: false, wl: false },
    AblationRow { id: 2, fusion: true, vanilla: false, perceptual_moe: false, alignment_moe: false, st: false, wl: false },
    AblationRow { id: 3, fusion: true, vanilla: false, perceptual_moe: false, alignment_moe: false, st: true, wl: true },
    AblationRow { id: 4, fusion: true, vanilla: false, perceptual_moe: false, alignment_moe: true, st: false, wl: true },
    AblationRow { id: 5, fusion: true, vanilla: false, perceptual_moe: true, alignment_moe: false, st: true, wl: false },
    AblationRow { id: 6, fusion: true, vanilla: true, perceptual_moe: true, alignment_moe: true, st: true, wl: true },
    AblationRow { id: 7, fusion: true, vanilla: false, perceptual_moe: true, alignment_moe: true, st: true, wl: true },
];

impl ModelConfig {
    /// Default routing setup on top of the given feature shapes.
    pub fn full(frames: usize, height: usize, width: usize, tokens: usize, channels: usize) -> Self {
        ModelConfig {
            frames,
            height,
            width,
            tokens,
            channels,
            ..Default::default()
        }
    }

    /// Apply the toggles of ablation row `id` (1..=7).
    pub fn with_ablation(mut self, id: u8) -> Result<Self> {
        let row = ABLATION_ROWS
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("ablation id must be 1..=7, got {id}")))?;
        let router = |moe: bool| {
            if !moe {
                "single"
            } else if row.vanilla {
                "vanilla"
            } else {
                "s2d"
            }
        };
        self.fusion = row.fusion;
        self.st_heads = row.st;
        self.wl_heads = row.wl;
        self.perceptual_router = router(row.perceptual_moe).into();
        self.alignment_router = router(row.alignment_moe).into();
        Ok(self)
    }

    pub fn hidden(&self) -> usize {
        self.expert_hidden.unwrap_or(2 * self.channels)
    }

    pub fn word_tokens(&self) -> usize {
        self.tokens.saturating_sub(1)
    }

    pub fn routing_spec(&self) -> RoutingSpec {
        RoutingSpec {
            width: self.channels,
            spatial_experts: self.spatial_experts,
            temporal_experts: self.temporal_experts,
            alignment_experts: self.alignment_experts,
            k: self.top_k,
            k_joint: self.joint_top_k,
        }
    }

    /// Shape and routing consistency; router-specific checks happen at build time.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("spatial_experts", self.spatial_experts),
            ("temporal_experts", self.temporal_experts),
            ("alignment_experts", self.alignment_experts),
            ("top_k", self.top_k),
            ("joint_top_k", self.joint_top_k),
            ("expert_hidden", self.hidden()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.tokens < 2 {
            return Err(Error::Config(format!(
                "`tokens` must include the sentence slot and at least one word, got {}",
                self.tokens
            )));
        }
        if self.attention_heads != 1 {
            return Err(Error::Config(format!(
                "only single-head cross-attention is supported, got {}",
                self.attention_heads
            )));
        }
        Ok(())
    }
}
