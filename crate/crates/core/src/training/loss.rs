use serde::{Deserialize, Serialize};

use crate::datastore::Labels;
use crate::error::{Error, Result};
use crate::model::BundleVars;
use crate::numerics::{Graph, Tensor, Var};

/// Centered sums of squares at or below this count as a constant vector.
const DEGENERATE_SS: f64 = 1e-24;
const DENOM_EPS: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub spatial: f64,
    pub temporal: f64,
    pub overall: f64,
    pub word: f64,
    pub sentence: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            spatial: 0.125,
            temporal: 0.125,
            overall: 0.25,
            word: 0.25,
            sentence: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.spatial, self.temporal, self.overall, self.word, self.sentence];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// A PLCC loss node and whether the batch was degenerate.
#[derive(Debug, Clone, Copy)]
pub struct PlccTerm {
    pub loss: Var,
    pub degenerate: bool,
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn check_lengths(pred: usize, target: usize) -> Result<()> {
    if pred != target {
        return Err(Error::shape("plcc_loss", format!("prediction length {pred} vs target length {target}")));
    }
    if pred < 2 {
        return Err(Error::Degenerate(format!("plcc_loss needs at least 2 samples, got {pred}")));
    }
    Ok(())
}

/// `(1 - r) / 2` between a 1-D prediction node and fixed targets. A constant
/// vector on either side gives `r = 0`, a loss of 0.5 and no gradient.
pub fn plcc_loss(g: &mut Graph, pred: Var, target: &[f64]) -> Result<PlccTerm> {
    let n = g.value(pred).len();
    check_lengths(n, target.len())?;
    let p = g.reshape(pred, &[n])?;
    let tc = centered(target);
    let t_ss: f64 = tc.iter().map(|v| v * v).sum();
    let p_ss: f64 = centered(g.value(p).data()).iter().map(|v| v * v).sum();
    if t_ss <= DEGENERATE_SS || p_ss <= DEGENERATE_SS {
        let loss = g.constant(Tensor::scalar(0.5))?;
        return Ok(PlccTerm { loss, degenerate: true });
    }
    let mean = g.mean(p, &[0])?;
    let neg_mean = g.scale(mean, -1.0)?;
    let pc = g.add_scalar(p, neg_mean)?;
    let tc = g.constant(Tensor::vector(tc))?;
    let cross = g.mul(pc, tc)?;
    let cov = g.sum(cross)?;
    let sq = g.mul(pc, pc)?;
    let p_ss = g.sum(sq)?;
    let denom = g.scale(p_ss, t_ss)?;
    let denom = g.add_const(denom, DENOM_EPS)?;
    let denom = g.sqrt(denom)?;
    let r = g.div(cov, denom)?;
    let half = g.scale(r, -0.5)?;
    let loss = g.add_const(half, 0.5)?;
    Ok(PlccTerm { loss, degenerate: false })
}

/// Plain-value PLCC loss: `(loss, degenerate)`.
pub fn plcc_loss_value(pred: &[f64], target: &[f64]) -> Result<(f64, bool)> {
    check_lengths(pred.len(), target.len())?;
    let (pc, tc) = (centered(pred), centered(target));
    let p_ss: f64 = pc.iter().map(|v| v * v).sum();
    let t_ss: f64 = tc.iter().map(|v| v * v).sum();
    if t_ss <= DEGENERATE_SS || p_ss <= DEGENERATE_SS {
        return Ok((0.5, true));
    }
    let cov: f64 = pc.iter().zip(&tc).map(|(a, b)| a * b).sum();
    let r = cov / (p_ss * t_ss + DENOM_EPS).sqrt();
    Ok(((1.0 - r) / 2.0, false))
}

/// Closed-form gradient of the PLCC loss with respect to `pred`.
///
/// `dr/dp_i = (tc_i - r · pc_i · |tc| / |pc|) / (|pc| |tc|)`
pub fn plcc_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pred.len(), target.len())?;
    let (pc, tc) = (centered(pred), centered(target));
    let p_norm = pc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t_norm = tc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm * t_norm <= DEGENERATE_SS || p_norm * p_norm <= DEGENERATE_SS {
        return Ok(vec![0.0; pred.len()]);
    }
    let r = pc.iter().zip(&tc).map(|(a, b)| a * b).sum::<f64>() / (p_norm * t_norm);
    Ok(pc
        .iter()
        .zip(&tc)
        .map(|(p, t)| -0.5 * (t - r * p * t_norm / p_norm) / (p_norm * t_norm))
        .collect())
}

/// Values of the individual terms; `None` for skipped terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTermValues {
    pub spatial: Option<f64>,
    pub temporal: Option<f64>,
    pub overall: Option<f64>,
    pub word: Option<f64>,
    pub sentence: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub loss: Var,
    pub terms: LossTermValues,
    /// Names of terms whose batch was degenerate.
    pub degenerate: Vec<String>,
}

fn stack(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let rows = vars
        .iter()
        .map(|&v| g.reshape(v, &[1]))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&rows, 0)
}

/// The λ-weighted sum of the five PLCC terms over one batch.
///
/// Word terms are computed per token position across the batch using the
/// samples whose mask marks that position, then averaged over positions with
/// at least two such samples. Terms with zero weight or a disabled head are
/// left out of the graph entirely.
pub fn total_loss(
    g: &mut Graph,
    bundles: &[BundleVars],
    labels: &[&Labels],
    masks: &[&[bool]],
    weights: &LossWeights,
) -> Result<TotalLoss> {
    if bundles.len() != labels.len() || bundles.len() != masks.len() {
        return Err(Error::shape(
            "total_loss",
            format!("{} predictions, {} labels, {} masks", bundles.len(), labels.len(), masks.len()),
        ));
    }
    if bundles.len() < 2 {
        return Err(Error::Degenerate(format!("batch of {} cannot form a correlation", bundles.len())));
    }
    let mut terms = LossTermValues::default();
    let mut degenerate = Vec::new();
    let mut parts: Vec<Var> = Vec::new();

    let mut scalar_term = |g: &mut Graph,
                           name: &str,
                           weight: f64,
                           preds: Option<Vec<Var>>,
                           target: Vec<f64>|
     -> Result<Option<f64>> {
        let Some(preds) = preds else { return Ok(None) };
        if weight == 0.0 {
            return Ok(None);
        }
        let p = stack(g, &preds)?;
        let term = plcc_loss(g, p, &target)?;
        if term.degenerate {
            degenerate.push(name.to_string());
        }
        parts.push(g.scale(term.loss, weight)?);
        Ok(Some(g.scalar_value(term.loss)))
    };

    let spatial: Option<Vec<Var>> = bundles.iter().map(|b| b.spatial).collect();
    let temporal: Option<Vec<Var>> = bundles.iter().map(|b| b.temporal).collect();
    terms.spatial = scalar_term(g, "spatial", weights.spatial, spatial, labels.iter().map(|l| l.spatial).collect())?;
    terms.temporal = scalar_term(g, "temporal", weights.temporal, temporal, labels.iter().map(|l| l.temporal).collect())?;
    terms.overall = scalar_term(
        g,
        "overall",
        weights.overall,
        Some(bundles.iter().map(|b| b.overall).collect()),
        labels.iter().map(|l| l.overall_percept).collect(),
    )?;
    terms.sentence = scalar_term(
        g,
        "sentence",
        weights.sentence,
        Some(bundles.iter().map(|b| b.sentence).collect()),
        labels.iter().map(|l| l.sentence).collect(),
    )?;

    let words = bundles.iter().map(|b| b.words.len()).max().unwrap_or(0);
    if weights.word != 0.0 && words > 0 {
        let mut position_losses = Vec::new();
        for i in 0..words {
            let mut preds = Vec::new();
            let mut target = Vec::new();
            for ((b, l), m) in bundles.iter().zip(labels).zip(masks) {
                if let (Some(&p), Some(&t), Some(true)) = (b.words.get(i), l.word.get(i), m.get(i)) {
                    preds.push(p);
                    target.push(t);
                }
            }
            if preds.len() < 2 {
                continue;
            }
            let p = stack(g, &preds)?;
            let term = plcc_loss(g, p, &target)?;
            if term.degenerate {
                degenerate.push(format!("word[{}]", i + 1));
            }
            position_losses.push(term.loss);
        }
        if position_losses.is_empty() {
            log::warn!("no word position has two unmasked samples in this batch; word term skipped");
        } else {
            let stacked = stack(g, &position_losses)?;
            let mean = g.mean(stacked, &[0])?;
            terms.word = Some(g.scalar_value(mean));
            parts.push(g.scale(mean, weights.word)?);
        }
    }

    let loss = match parts.len() {
        0 => g.constant(Tensor::scalar(0.0))?,
        _ => {
            let stacked = stack(g, &parts)?;
            g.sum(stacked)?
        }
    };
    Ok(TotalLoss { loss, terms, degenerate })
}
