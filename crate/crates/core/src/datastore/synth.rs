//! Planted-structure synthetic corpus.
//!
//! Latent scores are drawn uniformly from `[1, 5]`. Video features carry them
//! in fixed channel blocks as `(q - 3) / 2 + σ·ε`; text features carry the
//! word scores at their token positions and the sentence score at position 0.
//! All other channels are standard normal noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::edut::write_tensor;
use super::manifest::{write_manifest, Category, GeneratorModel, Labels, VideoRecord};
use crate::error::{Error, Result};
use crate::model::SampleFeatures;
use crate::numerics::{DType, Tensor};

/// Channels per planted block.
pub const BLOCK: usize = 4;
/// Video channel blocks: `[0, 4)` spatial, `[4, 8)` temporal, `[8, 12)` overall.
pub const SPATIAL_BLOCK: std::ops::Range<usize> = 0..BLOCK;
pub const TEMPORAL_BLOCK: std::ops::Range<usize> = BLOCK..2 * BLOCK;
pub const OVERALL_BLOCK: std::ops::Range<usize> = 2 * BLOCK..3 * BLOCK;
/// Text channel block carrying the per-token score.
pub const TOKEN_BLOCK: std::ops::Range<usize> = 0..BLOCK;

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const RECIPE_NAME: &str = "recipe.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub channels: usize,
    pub videos: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub dtype: DType,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 4,
            height: 4,
            width: 4,
            tokens: 6,
            channels: 16,
            videos: 400,
            sigma: 0.1,
            seed: 0,
            dtype: DType::F32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be a finite value >= 0, got {}", self.sigma)));
        }
        if self.channels < 3 * BLOCK {
            return Err(Error::Config(format!(
                "synthetic features need at least {} channels, got {}",
                3 * BLOCK,
                self.channels
            )));
        }
        if self.tokens < 2 {
            return Err(Error::Config(format!("tokens must be at least 2, got {}", self.tokens)));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("frames, height and width must be positive".into()));
        }
        Ok(())
    }

    /// Recipe text stored next to the manifest.
    pub fn recipe(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self,
            "latents": "uniform [1, 5] per dimension and per word position",
            "planting": "channel value = (q - 3) / 2 + sigma * N(0, 1)",
            "video_blocks": {
                "spatial": [SPATIAL_BLOCK.start, SPATIAL_BLOCK.end],
                "temporal": [TEMPORAL_BLOCK.start, TEMPORAL_BLOCK.end],
                "overall_percept": [OVERALL_BLOCK.start, OVERALL_BLOCK.end],
            },
            "text_block": [TOKEN_BLOCK.start, TOKEN_BLOCK.end],
            "text_positions": "0 carries the sentence score, i >= 1 carries word score i",
            "other_channels": "N(0, 1)",
            "strata": "video i uses generator model i mod 10 and category (i div 10) mod 4",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub record: VideoRecord,
    pub features: SampleFeatures,
}

fn planted(q: f64) -> f64 {
    (q - 3.0) / 2.0
}

/// Build the corpus in memory. Feature paths point at the names used by
/// [`write_synthetic`].
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SyntheticVideo>> {
    cfg.validate()?;
    let mut labels_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (t, h, w, c, d) = (cfg.frames, cfg.height, cfg.width, cfg.channels, cfg.tokens);
    let mut out = Vec::with_capacity(cfg.videos);
    for i in 0..cfg.videos {
        let mut draw = || labels_rng.gen_range(1.0..=5.0);
        let labels = Labels {
            spatial: draw(),
            temporal: draw(),
            overall_percept: draw(),
            word: (1..d).map(|_| draw()).collect(),
            sentence: draw(),
        };
        let mut noise = || noise_rng.sample::<f64, _>(StandardNormal);

        let mut video = Vec::with_capacity(t * h * w * c);
        for _ in 0..t * h * w {
            for ch in 0..c {
                let eps = noise();
                let v = if SPATIAL_BLOCK.contains(&ch) {
                    planted(labels.spatial) + cfg.sigma * eps
                } else if TEMPORAL_BLOCK.contains(&ch) {
                    planted(labels.temporal) + cfg.sigma * eps
                } else if OVERALL_BLOCK.contains(&ch) {
                    planted(labels.overall_percept) + cfg.sigma * eps
                } else {
                    eps
                };
                video.push(v);
            }
        }
        let mut text = Vec::with_capacity(t * d * c);
        for _ in 0..t {
            for pos in 0..d {
                let q = if pos == 0 { labels.sentence } else { labels.word[pos - 1] };
                for ch in 0..c {
                    let eps = noise();
                    text.push(if TOKEN_BLOCK.contains(&ch) {
                        planted(q) + cfg.sigma * eps
                    } else {
                        eps
                    });
                }
            }
        }

        let video_id = format!("syn{i:05}");
        let model = GeneratorModel::ALL[i % GeneratorModel::ALL.len()];
        let category = Category::ALL[(i / GeneratorModel::ALL.len()) % Category::ALL.len()];
        let record = VideoRecord {
            prompt: format!("synthetic {category:?} prompt {i}"),
            tokens: d,
            generator_model: model,
            category,
            vst_path: PathBuf::from(format!("features/{video_id}.vst.edut")),
            blip_path: PathBuf::from(format!("features/{video_id}.blip.edut")),
            labels,
            token_mask: vec![true; d - 1],
            video_id,
        };
        let features = SampleFeatures {
            video: Tensor::new(vec![t, h, w, c], video)?.cast(cfg.dtype),
            text: Tensor::new(vec![t, d, c], text)?.cast(cfg.dtype),
            token_mask: record.token_mask.clone(),
        };
        out.push(SyntheticVideo { record, features });
    }
    Ok(out)
}

/// Generate and write features, `manifest.jsonl` and `recipe.json` under `dir`.
pub fn write_synthetic(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<VideoRecord>> {
    let dir = dir.as_ref();
    let videos = generate(cfg)?;
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir)
        .map_err(|e| Error::io(format!("creating {}", features_dir.display()), e))?;
    for v in &videos {
        write_tensor(dir.join(&v.record.vst_path), &v.features.video)?;
        write_tensor(dir.join(&v.record.blip_path), &v.features.text)?;
    }
    let records: Vec<VideoRecord> = videos.into_iter().map(|v| v.record).collect();
    write_manifest(dir.join(MANIFEST_NAME), &records)?;
    let recipe = serde_json::to_vec_pretty(&cfg.recipe())?;
    let recipe_path = dir.join(RECIPE_NAME);
    fs::write(&recipe_path, recipe).map_err(|e| Error::io(format!("writing {}", recipe_path.display()), e))?;
    Ok(records)
}
