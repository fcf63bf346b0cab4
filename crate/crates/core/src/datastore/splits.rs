//! Stratified train/val/test splits over (generator model × category).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Category, GeneratorModel, VideoRecord};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitSpec {
    /// Video ids of one partition, in id order.
    pub fn members(&self, part: Partition) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &p)| p == part)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn partition_of(&self, video_id: &str) -> Option<Partition> {
        self.assignment.get(video_id).copied()
    }
}

/// Split `n` items by largest-remainder rounding of `n * ratios`. Ties in the
/// fractional part go to the earlier partition.
pub fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

pub type Stratum = (GeneratorModel, Category);

pub fn strata(records: &[VideoRecord]) -> BTreeMap<Stratum, Vec<&VideoRecord>> {
    let mut out: BTreeMap<Stratum, Vec<&VideoRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.generator_model, r.category)).or_default().push(r);
    }
    out
}

pub fn make_split(records: &[VideoRecord], seed: u64, ratios: [f64; 3]) -> Result<SplitSpec> {
    if records.is_empty() {
        return Err(Error::Data("cannot split an empty corpus".into()));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let total: f64 = ratios.iter().sum();
    // Running corpus-level quota and assignment; small strata hand their
    // leftover units to whichever partition lags furthest behind.
    let mut expected = [0.0f64; 3];
    let mut assigned = [0usize; 3];
    let mut small = 0;
    for (stratum, members) in strata(records) {
        if members.len() < 3 {
            log::debug!("stratum {stratum:?} has {} videos", members.len());
            small += 1;
        }
        let mut ids: Vec<&str> = members.iter().map(|r| r.video_id.as_str()).collect();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
        let mut counts = [0usize; 3];
        for (c, q) in counts.iter_mut().zip(&quotas) {
            *c = q.floor() as usize;
        }
        let mut order = [0usize, 1, 2];
        let lag = |i: usize, counts: &[usize; 3]| expected[i] + quotas[i] - (assigned[i] + counts[i]) as f64;
        order.sort_by(|&a, &b| {
            lag(b, &counts).partial_cmp(&lag(a, &counts)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        for i in 0..3 {
            expected[i] += quotas[i];
            assigned[i] += counts[i];
        }
        let mut it = ids.into_iter();
        for (part, count) in Partition::ALL.iter().zip(counts) {
            for id in it.by_ref().take(count) {
                if assignment.insert(id.to_string(), *part).is_some() {
                    return Err(Error::Data(format!("duplicate video_id `{id}`")));
                }
            }
        }
    }
    if small > 0 {
        log::warn!("{small} strata have fewer than 3 videos; their leftovers were balanced across partitions");
    }
    Ok(SplitSpec {
        seed,
        ratios,
        assignment,
    })
}

/// `count` splits with seeds `base_seed, base_seed + 1, ...`.
pub fn make_splits(records: &[VideoRecord], count: usize, base_seed: u64) -> Result<Vec<SplitSpec>> {
    (0..count as u64)
        .map(|i| make_split(records, base_seed + i, DEFAULT_RATIOS))
        .collect()
}
