//! CSV and JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eduvqa::datastore::{Dimension, SplitSpec, VideoRecord};
use eduvqa::evaluation::ScoreMap;
use eduvqa::model::PredictionBundle;
use eduvqa::subjective::RatingRecord;
use serde::{Deserialize, Serialize};

use crate::error::data;

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    video_id: String,
    dimension: String,
    score: f64,
}

#[derive(Debug, Deserialize)]
struct RatingRow {
    annotator_id: String,
    video_id: String,
    dimension: String,
    score: f64,
}

fn parse_dimension(s: &str, path: &Path, line: usize) -> Result<Dimension> {
    s.parse()
        .map_err(|e| data(format!("{}:{line}: bad dimension `{s}`: {e}", path.display())))
}

/// `video_id,dimension,score` rows into a score map. Duplicate keys are an error.
pub fn read_scores(path: &Path) -> Result<ScoreMap> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = ScoreMap::new();
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| data(format!("{}:{line}: {e}", path.display())))?;
        let dim = parse_dimension(&row.dimension, path, line)?;
        if out.insert((row.video_id.clone(), dim), row.score).is_some() {
            return Err(data(format!("{}:{line}: duplicate score for {}/{dim}", path.display(), row.video_id)));
        }
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &ScoreMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for ((video_id, dim), &score) in scores {
        w.serialize(ScoreRow { video_id: video_id.clone(), dimension: dim.to_string(), score })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RatingRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| data(format!("{}:{line}: {e}", path.display())))?;
        out.push(RatingRecord {
            dimension: parse_dimension(&row.dimension, path, line)?,
            annotator_id: row.annotator_id,
            video_id: row.video_id,
            score: row.score,
        });
    }
    Ok(out)
}

/// Flatten model outputs into `(video_id, dimension) -> score`.
pub fn bundle_scores(ids: &[String], bundles: &[PredictionBundle]) -> ScoreMap {
    let mut out = ScoreMap::new();
    for (id, b) in ids.iter().zip(bundles) {
        let mut put = |d: Dimension, v: f64| {
            out.insert((id.clone(), d), v);
        };
        if let Some(v) = b.q_spatial {
            put(Dimension::Spatial, v);
        }
        if let Some(v) = b.q_temporal {
            put(Dimension::Temporal, v);
        }
        put(Dimension::OverallPercept, b.q_overall_percept);
        for (i, &v) in b.q_word.iter().enumerate() {
            put(Dimension::Word(i + 1), v);
        }
        put(Dimension::Sentence, b.q_sentence);
    }
    out
}

/// Manifest labels as a score map; masked word positions are left out.
pub fn manifest_labels(records: &[VideoRecord]) -> ScoreMap {
    let mut out = ScoreMap::new();
    for r in records {
        let l = &r.labels;
        for (d, v) in [
            (Dimension::Spatial, l.spatial),
            (Dimension::Temporal, l.temporal),
            (Dimension::OverallPercept, l.overall_percept),
            (Dimension::Sentence, l.sentence),
        ] {
            out.insert((r.video_id.clone(), d), v);
        }
        for (i, &v) in l.word.iter().enumerate() {
            if r.token_mask.get(i).copied().unwrap_or(false) {
                out.insert((r.video_id.clone(), Dimension::Word(i + 1)), v);
            }
        }
    }
    out
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// Per-video map of one dimension's scores.
pub fn dimension_column(scores: &ScoreMap, dim: Dimension) -> BTreeMap<String, f64> {
    scores
        .iter()
        .filter(|((_, d), _)| *d == dim)
        .map(|((v, _), s)| (v.clone(), *s))
        .collect()
}
