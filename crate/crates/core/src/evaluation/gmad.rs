//! Group maximum differentiation pair search.
//!
//! For a defender and an attacker model scoring the same videos, find pairs
//! the defender scores within `eps` of each other while the attacker scores
//! them as far apart as possible.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// The first model defends.
    FirstDefends,
    /// The second model defends.
    SecondDefends,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmadPair {
    pub defender: String,
    pub attacker: String,
    /// `video_a < video_b` lexicographically.
    pub video_a: String,
    pub video_b: String,
    pub defender_delta: f64,
    pub attacker_delta: f64,
    pub orientation: Orientation,
}

/// Ranking key: larger attacker gap first, then lexicographic ids.
#[derive(Debug, PartialEq)]
struct Candidate<'a> {
    attacker_delta: f64,
    a: &'a str,
    b: &'a str,
    defender_delta: f64,
}

impl Eq for Candidate<'_> {}

impl Ord for Candidate<'_> {
    /// `Less` means "ranks earlier".
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .attacker_delta
            .total_cmp(&self.attacker_delta)
            .then_with(|| self.a.cmp(other.a))
            .then_with(|| self.b.cmp(other.b))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Default defender tolerance: 5% of the MOS range.
pub fn default_eps(mos_range: f64) -> f64 {
    0.05 * mos_range
}

fn paired_scores<'a>(
    first: &'a BTreeMap<String, f64>,
    second: &'a BTreeMap<String, f64>,
) -> Result<Vec<(&'a str, f64, f64)>> {
    if first.len() != second.len() || first.keys().any(|k| !second.contains_key(k)) {
        return Err(Error::Data("gMAD score maps must cover the same videos".into()));
    }
    let rows: Vec<(&str, f64, f64)> = first.iter().map(|(k, &v)| (k.as_str(), v, second[k])).collect();
    if rows.iter().any(|r| !r.1.is_finite() || !r.2.is_finite()) {
        return Err(Error::Data("gMAD scores must be finite".into()));
    }
    Ok(rows)
}

/// The `top_n` pairs with defender gap `<= eps`, by attacker gap descending.
pub fn gmad_pairs(
    first: (&str, &BTreeMap<String, f64>),
    second: (&str, &BTreeMap<String, f64>),
    eps: f64,
    top_n: usize,
    orientation: Orientation,
) -> Result<Vec<GmadPair>> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("gMAD eps must be >= 0, got {eps}")));
    }
    let ((def_name, def), (att_name, att)) = match orientation {
        Orientation::FirstDefends => (first, second),
        Orientation::SecondDefends => (second, first),
    };
    let mut rows = paired_scores(def, att)?;
    if top_n == 0 || rows.len() < 2 {
        return Ok(Vec::new());
    }
    rows.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(y.0)));

    // Max-heap on rank order keeps the worst retained candidate on top.
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(top_n + 1);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let defender_delta = (rows[j].1 - rows[i].1).abs();
            if defender_delta > eps {
                break;
            }
            let (a, b) = if rows[i].0 < rows[j].0 { (rows[i].0, rows[j].0) } else { (rows[j].0, rows[i].0) };
            let cand = Candidate {
                attacker_delta: (rows[i].2 - rows[j].2).abs(),
                a,
                b,
                defender_delta,
            };
            if heap.len() < top_n {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| GmadPair {
            defender: def_name.to_string(),
            attacker: att_name.to_string(),
            video_a: c.a.to_string(),
            video_b: c.b.to_string(),
            defender_delta: c.defender_delta,
            attacker_delta: c.attacker_delta,
            orientation,
        })
        .collect())
}
