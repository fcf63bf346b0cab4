//! Dataset manifests: one JSON `VideoRecord` per line.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::edut::read_tensor;
use crate::error::{Error, Result};
use crate::model::SampleFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GeneratorModel {
    CogVideo,
    #[serde(rename = "Gen-3")]
    Gen3,
    #[serde(rename = "Hotshot-XL")]
    HotshotXl,
    Dreamina,
    Kling,
    LaVie,
    #[serde(rename = "LVDM")]
    Lvdm,
    #[serde(rename = "Show-1")]
    Show1,
    #[serde(rename = "Text2Video-Zero")]
    Text2VideoZero,
    VideoCrafter,
}

impl GeneratorModel {
    pub const ALL: [GeneratorModel; 10] = [
        GeneratorModel::CogVideo,
        GeneratorModel::Gen3,
        GeneratorModel::HotshotXl,
        GeneratorModel::Dreamina,
        GeneratorModel::Kling,
        GeneratorModel::LaVie,
        GeneratorModel::Lvdm,
        GeneratorModel::Show1,
        GeneratorModel::Text2VideoZero,
        GeneratorModel::VideoCrafter,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Numbers,
    Geometry,
    Measurement,
    Probability,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Numbers,
        Category::Geometry,
        Category::Measurement,
        Category::Probability,
    ];
}

/// A rated quality dimension. Word positions count from 1 (position 0 is the
/// sentence slot of the text features).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Spatial,
    Temporal,
    OverallPercept,
    Word(usize),
    Sentence,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Spatial => f.write_str("spatial"),
            Dimension::Temporal => f.write_str("temporal"),
            Dimension::OverallPercept => f.write_str("overall_percept"),
            Dimension::Word(i) => write!(f, "word[{i}]"),
            Dimension::Sentence => f.write_str("sentence"),
        }
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "spatial" => Ok(Dimension::Spatial),
            "temporal" => Ok(Dimension::Temporal),
            "overall_percept" | "overall" => Ok(Dimension::OverallPercept),
            "sentence" => Ok(Dimension::Sentence),
            other => other
                .strip_prefix("word[")
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|&i| i >= 1)
                .map(Dimension::Word)
                .ok_or_else(|| Error::Data(format!("unknown dimension `{other}`"))),
        }
    }
}

impl Serialize for Dimension {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub spatial: f64,
    pub temporal: f64,
    pub overall_percept: f64,
    /// One score per word position `1..D`.
    pub word: Vec<f64>,
    pub sentence: f64,
}

impl Labels {
    pub fn get(&self, dim: Dimension) -> Option<f64> {
        match dim {
            Dimension::Spatial => Some(self.spatial),
            Dimension::Temporal => Some(self.temporal),
            Dimension::OverallPercept => Some(self.overall_percept),
            Dimension::Word(i) => self.word.get(i.checked_sub(1)?).copied(),
            Dimension::Sentence => Some(self.sentence),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub prompt: String,
    /// Token positions `D` including the sentence slot.
    pub tokens: usize,
    pub generator_model: GeneratorModel,
    pub category: Category,
    /// `[T, H, W, C]` video features, relative to the manifest directory unless absolute.
    pub vst_path: PathBuf,
    /// `[T, D, C]` text features.
    pub blip_path: PathBuf,
    pub labels: Labels,
    /// One flag per word position `1..D`.
    pub token_mask: Vec<bool>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Data(format!("record `{}`: {detail}", self.video_id)));
        if self.video_id.is_empty() {
            return Err(Error::Data("record with empty video_id".into()));
        }
        if self.tokens < 2 {
            return bad(format!("tokens must be at least 2, got {}", self.tokens));
        }
        let words = self.tokens - 1;
        if self.labels.word.len() != words {
            return bad(format!("{} word labels for {words} word positions", self.labels.word.len()));
        }
        if self.token_mask.len() != words {
            return bad(format!("{} mask entries for {words} word positions", self.token_mask.len()));
        }
        let l = &self.labels;
        let scalars = [l.spatial, l.temporal, l.overall_percept, l.sentence];
        if let Some(v) = scalars.iter().chain(&l.word).find(|v| !(1.0..=5.0).contains(*v)) {
            return bad(format!("label {v} outside [1, 5]"));
        }
        Ok(())
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Read both feature tensors, resolving relative paths against `base`.
    pub fn load_features(&self, base: &Path) -> Result<SampleFeatures> {
        let video = read_tensor(Self::resolve(base, &self.vst_path))?;
        let text = read_tensor(Self::resolve(base, &self.blip_path))?;
        if text.ndim() != 3 || text.shape()[1] != self.tokens {
            return Err(Error::Data(format!(
                "record `{}`: text features {:?} do not carry {} tokens",
                self.video_id,
                text.shape(),
                self.tokens
            )));
        }
        Ok(SampleFeatures {
            video,
            text,
            token_mask: self.token_mask.clone(),
        })
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        rec.validate()?;
        if !seen.insert(rec.video_id.clone()) {
            return Err(Error::Data(format!("duplicate video_id `{}`", rec.video_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
