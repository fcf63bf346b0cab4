//! Subjective-study consolidation.
//!
//! Each (video, dimension) cell is screened with `|x - μ| <= λ·σ`, where σ is
//! the sample standard deviation and λ is 2 when the cell's kurtosis β2 lies
//! in `[2, 4]` and `√20` otherwise. Annotators with more than 5% of their
//! ratings screened out are rejected, and every cell is screened again
//! without them. The MOS of a cell is the mean of its second-pass inliers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datastore::{Dimension, Labels};
use crate::error::{Error, Result};

pub const GAUSSIAN_LAMBDA: f64 = 2.0;
/// `√20`
pub fn heavy_tail_lambda() -> f64 {
    20f64.sqrt()
}
pub const KURTOSIS_WINDOW: (f64, f64) = (2.0, 4.0);
pub const REJECTION_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub annotator_id: String,
    pub video_id: String,
    pub dimension: Dimension,
    pub score: f64,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=5.0).contains(&self.score) || self.score.fract() != 0.0 {
            return Err(Error::Data(format!(
                "rating by `{}` for `{}`/{} is {}; scores are integers in 1..=5",
                self.annotator_id, self.video_id, self.dimension, self.score
            )));
        }
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `m4 / m2²` with population moments; `None` for zero variance.
pub fn kurtosis(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mu = mean(scores);
    let m2 = scores.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / scores.len() as f64;
    let m4 = scores.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / scores.len() as f64;
    if m2 == 0.0 {
        None
    } else {
        Some(m4 / (m2 * m2))
    }
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(scores: &[f64]) -> f64 {
    if scores.len() < 2 {
        return 0.0;
    }
    let mu = mean(scores);
    (scores.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (scores.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub beta2: Option<f64>,
    /// Zero variance: λ defaults to 2 and nothing can be excluded.
    pub degenerate: bool,
}

pub fn select_lambda(scores: &[f64]) -> LambdaChoice {
    match kurtosis(scores) {
        None => LambdaChoice {
            lambda: GAUSSIAN_LAMBDA,
            beta2: None,
            degenerate: true,
        },
        Some(b) => LambdaChoice {
            lambda: if (KURTOSIS_WINDOW.0..=KURTOSIS_WINDOW.1).contains(&b) {
                GAUSSIAN_LAMBDA
            } else {
                heavy_tail_lambda()
            },
            beta2: Some(b),
            degenerate: false,
        },
    }
}

/// Indices `i` with `|x_i - μ| <= λ·σ`.
pub fn inlier_set(scores: &[f64], lambda: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mu = mean(scores);
    let sigma = sample_std(scores);
    if sigma == 0.0 {
        return (0..scores.len()).collect();
    }
    let bound = lambda * sigma;
    (0..scores.len())
        .filter(|&i| (scores[i] - mu).abs() <= bound)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub video_id: String,
    pub dimension: Dimension,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub lambda: f64,
    pub beta2: Option<f64>,
    /// Positions of excluded ratings in the input list.
    pub excluded: Vec<usize>,
    pub mos: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorReport {
    pub annotator_id: String,
    pub ratings: usize,
    pub outliers: usize,
    pub outlier_fraction: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub first_pass: Vec<CellReport>,
    pub annotators: Vec<AnnotatorReport>,
    pub cells: Vec<CellReport>,
}

impl ConsolidationReport {
    pub fn rejected(&self) -> Vec<&str> {
        self.annotators
            .iter()
            .filter(|a| a.rejected)
            .map(|a| a.annotator_id.as_str())
            .collect()
    }

    pub fn mos(&self) -> BTreeMap<(String, Dimension), f64> {
        self.cells
            .iter()
            .map(|c| ((c.video_id.clone(), c.dimension), c.mos))
            .collect()
    }
}

/// Screen one cell given the positions (into `ratings`) of its ratings.
fn screen_cell(video_id: &str, dimension: Dimension, ratings: &[RatingRecord], ids: &[usize]) -> CellReport {
    let scores: Vec<f64> = ids.iter().map(|&i| ratings[i].score).collect();
    let mut flags = Vec::new();
    let choice = select_lambda(&scores);
    if choice.degenerate {
        flags.push("zero variance".to_string());
    }
    let keep: Vec<usize> = if scores.len() < 2 {
        flags.push(format!("{} rating(s): screening skipped", scores.len()));
        (0..scores.len()).collect()
    } else {
        if scores.len() < 4 {
            flags.push(format!("{} ratings: normality test unreliable", scores.len()));
        }
        inlier_set(&scores, choice.lambda)
    };
    let keep_set: BTreeSet<usize> = keep.iter().copied().collect();
    let excluded: Vec<usize> = (0..ids.len()).filter(|p| !keep_set.contains(p)).map(|p| ids[p]).collect();
    let mos = if keep.is_empty() {
        flags.push("no inliers: unscreened mean used".to_string());
        mean(&scores)
    } else {
        keep.iter().map(|&p| scores[p]).sum::<f64>() / keep.len() as f64
    };
    CellReport {
        video_id: video_id.to_string(),
        dimension,
        n: scores.len(),
        mean: mean(&scores),
        std: sample_std(&scores),
        lambda: choice.lambda,
        beta2: choice.beta2,
        excluded,
        mos,
        flags,
    }
}

fn cells_of(ratings: &[RatingRecord], keep: impl Fn(&RatingRecord) -> bool) -> BTreeMap<(String, Dimension), Vec<usize>> {
    let mut cells: BTreeMap<(String, Dimension), Vec<usize>> = BTreeMap::new();
    for (i, r) in ratings.iter().enumerate() {
        if keep(r) {
            cells.entry((r.video_id.clone(), r.dimension)).or_default().push(i);
        }
    }
    cells
}

pub fn consolidate(ratings: &[RatingRecord]) -> Result<ConsolidationReport> {
    if ratings.is_empty() {
        return Err(Error::Data("no ratings to consolidate".into()));
    }
    for r in ratings {
        r.validate()?;
    }
    let first: Vec<CellReport> = cells_of(ratings, |_| true)
        .iter()
        .map(|((v, d), ids)| screen_cell(v, *d, ratings, ids))
        .collect();

    let excluded: BTreeSet<usize> = first.iter().flat_map(|c| c.excluded.iter().copied()).collect();
    let mut per_annotator: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, r) in ratings.iter().enumerate() {
        let e = per_annotator.entry(r.annotator_id.as_str()).or_default();
        e.0 += 1;
        if excluded.contains(&i) {
            e.1 += 1;
        }
    }
    let annotators: Vec<AnnotatorReport> = per_annotator
        .into_iter()
        .map(|(id, (n, out))| {
            let fraction = out as f64 / n as f64;
            AnnotatorReport {
                annotator_id: id.to_string(),
                ratings: n,
                outliers: out,
                outlier_fraction: fraction,
                rejected: fraction > REJECTION_FRACTION,
            }
        })
        .collect();
    let rejected: BTreeSet<&str> = annotators
        .iter()
        .filter(|a| a.rejected)
        .map(|a| a.annotator_id.as_str())
        .collect();

    let kept = cells_of(ratings, |r| !rejected.contains(r.annotator_id.as_str()));
    let cells = cells_of(ratings, |_| true)
        .iter()
        .map(|((v, d), all_ids)| match kept.get(&(v.clone(), *d)) {
            Some(ids) => screen_cell(v, *d, ratings, ids),
            None => {
                let mut c = screen_cell(v, *d, ratings, all_ids);
                let scores: Vec<f64> = all_ids.iter().map(|&i| ratings[i].score).collect();
                c.excluded.clear();
                c.mos = mean(&scores);
                c.flags
                    .push("every rater of this cell was rejected: unscreened mean used".to_string());
                c
            }
        })
        .collect();
    Ok(ConsolidationReport {
        first_pass: first,
        annotators,
        cells,
    })
}

/// Consolidated scores of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub video_id: String,
    pub scores: BTreeMap<Dimension, f64>,
    /// Present when every dimension, including contiguous word positions, was rated.
    pub labels: Option<Labels>,
}

pub fn mos_records(report: &ConsolidationReport) -> Vec<MosRecord> {
    let mut by_video: BTreeMap<&str, BTreeMap<Dimension, f64>> = BTreeMap::new();
    for c in &report.cells {
        by_video.entry(c.video_id.as_str()).or_default().insert(c.dimension, c.mos);
    }
    by_video
        .into_iter()
        .map(|(video_id, scores)| {
            let words: Vec<usize> = scores
                .keys()
                .filter_map(|d| match d {
                    Dimension::Word(i) => Some(*i),
                    _ => None,
                })
                .collect();
            let contiguous = !words.is_empty() && words.iter().enumerate().all(|(k, &i)| i == k + 1);
            let labels = match (
                scores.get(&Dimension::Spatial),
                scores.get(&Dimension::Temporal),
                scores.get(&Dimension::OverallPercept),
                scores.get(&Dimension::Sentence),
            ) {
                (Some(&s), Some(&t), Some(&o), Some(&q)) if contiguous => Some(Labels {
                    spatial: s,
                    temporal: t,
                    overall_percept: o,
                    word: words.iter().map(|&i| scores[&Dimension::Word(i)]).collect(),
                    sentence: q,
                }),
                _ => None,
            };
            MosRecord {
                video_id: video_id.to_string(),
                scores,
                labels,
            }
        })
        .collect()
}
