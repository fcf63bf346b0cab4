use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{plcc, srcc};
use crate::datastore::Dimension;
use crate::error::Result;
use crate::subjective::RatingRecord;

pub const CONSISTENCY_THRESHOLD: f64 = 0.8;

/// Dimensions grouped for consistency analysis; word positions are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionGroup {
    Spatial,
    Temporal,
    OverallPercept,
    Word,
    Sentence,
}

impl From<Dimension> for DimensionGroup {
    fn from(d: Dimension) -> Self {
        match d {
            Dimension::Spatial => DimensionGroup::Spatial,
            Dimension::Temporal => DimensionGroup::Temporal,
            Dimension::OverallPercept => DimensionGroup::OverallPercept,
            Dimension::Word(_) => DimensionGroup::Word,
            Dimension::Sentence => DimensionGroup::Sentence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConsistency {
    pub annotator_id: String,
    pub group: DimensionGroup,
    pub n: usize,
    pub srcc: f64,
    pub plcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub annotators: usize,
    pub mean_srcc: f64,
    pub mean_plcc: f64,
    pub above_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_annotator: Vec<AnnotatorConsistency>,
    pub summary: BTreeMap<DimensionGroup, GroupSummary>,
    pub notes: Vec<String>,
}

/// Agreement of each annotator with the consolidated MOS, per dimension group.
pub fn annotator_consistency(
    ratings: &[RatingRecord],
    mos: &BTreeMap<(String, Dimension), f64>,
) -> Result<ConsistencyReport> {
    let mut pairs: BTreeMap<(&str, DimensionGroup), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut notes = Vec::new();
    for r in ratings {
        match mos.get(&(r.video_id.clone(), r.dimension)) {
            Some(&m) => {
                let e = pairs.entry((r.annotator_id.as_str(), r.dimension.into())).or_default();
                e.0.push(r.score);
                e.1.push(m);
            }
            None => notes.push(format!(
                "no MOS for `{}`/{} rated by `{}`",
                r.video_id, r.dimension, r.annotator_id
            )),
        }
    }
    let mut per_annotator = Vec::new();
    for ((annotator, group), (scores, m)) in pairs {
        if scores.len() < 2 {
            notes.push(format!(
                "annotator `{annotator}` skipped for {group:?}: {} rating(s)",
                scores.len()
            ));
            continue;
        }
        let s = srcc(&scores, &m)?;
        let p = plcc(&scores, &m)?;
        if s.degenerate || p.degenerate {
            notes.push(format!("annotator `{annotator}` has constant scores or MOS for {group:?}"));
        }
        per_annotator.push(AnnotatorConsistency {
            annotator_id: annotator.to_string(),
            group,
            n: scores.len(),
            srcc: s.value,
            plcc: p.value,
        });
    }
    let mut summary: BTreeMap<DimensionGroup, GroupSummary> = BTreeMap::new();
    for a in &per_annotator {
        let e = summary.entry(a.group).or_insert(GroupSummary {
            annotators: 0,
            mean_srcc: 0.0,
            mean_plcc: 0.0,
            above_threshold: 0,
        });
        e.annotators += 1;
        e.mean_srcc += a.srcc;
        e.mean_plcc += a.plcc;
        if a.srcc > CONSISTENCY_THRESHOLD {
            e.above_threshold += 1;
        }
    }
    for s in summary.values_mut() {
        s.mean_srcc /= s.annotators as f64;
        s.mean_plcc /= s.annotators as f64;
    }
    Ok(ConsistencyReport {
        per_annotator,
        summary,
        notes,
    })
}
