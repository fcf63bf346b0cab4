//! Four-parameter logistic mapping of predictions onto the MOS scale.
//!
//! `f(x) = b2 + (b1 - b2) / (1 + exp(-(x - b3) / b4))`, fitted by
//! Levenberg-Marquardt. An affine least-squares fit (the logistic's
//! large-`b4` limit) is also computed and whichever has the lower residual
//! is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Logistic,
    Affine,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticMap {
    pub kind: MapKind,
    /// `[b1, b2, b3, b4]` for the logistic, `[slope, intercept, 0, 0]` for the affine map.
    pub params: [f64; 4],
    pub rmse: f64,
}

impl LogisticMap {
    pub fn apply(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            MapKind::Logistic => logistic(p, x),
            MapKind::Affine => p[0] * x + p[1],
            MapKind::Identity => x,
        }
    }
}

fn logistic(p: &[f64; 4], x: f64) -> f64 {
    p[1] + (p[0] - p[1]) / (1.0 + (-(x - p[2]) / p[3]).exp())
}

fn sse(pred: &[f64], mos: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    pred.iter().zip(mos).map(|(&x, &y)| (f(x) - y).powi(2)).sum()
}

fn affine_fit(pred: &[f64], mos: &[f64]) -> Option<[f64; 2]> {
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = mos.iter().sum::<f64>() / n;
    let sxx: f64 = pred.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pred.iter().zip(mos).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some([slope, my - slope * mx])
}

/// Solve the 4×4 system `a x = b` by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn levenberg_marquardt(pred: &[f64], mos: &[f64], init: [f64; 4]) -> Option<[f64; 4]> {
    let mut p = init;
    let mut cost = sse(pred, mos, |x| logistic(&p, x));
    let mut mu = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in pred.iter().zip(mos) {
            let s = 1.0 / (1.0 + (-(x - p[2]) / p[3]).exp());
            let ds = (p[0] - p[1]) * s * (1.0 - s);
            let j = [s, 1.0 - s, -ds / p[3], -ds * (x - p[2]) / (p[3] * p[3])];
            let r = y - logistic(&p, x);
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut damped = jtj;
            for (d, row) in damped.iter_mut().enumerate() {
                row[d] += mu * jtj[d][d].max(1e-12);
            }
            if let Some(step) = solve4(damped, jtr) {
                let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
                let c = sse(pred, mos, |x| logistic(&cand, x));
                if c.is_finite() && cand[3] != 0.0 && c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    p = cand;
                    cost = c;
                    mu = (mu / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-14 {
                        return Some(p);
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Fit the mapping. Divergence or a constant input falls back to identity.
pub fn fit_logistic(pred: &[f64], mos: &[f64]) -> Result<LogisticMap> {
    if pred.len() != mos.len() {
        return Err(Error::shape("logistic_map", format!("{} predictions vs {} scores", pred.len(), mos.len())));
    }
    if pred.len() < 5 {
        return Err(Error::Degenerate(format!("logistic mapping needs at least 5 samples, got {}", pred.len())));
    }
    let rmse = |s: f64| (s / pred.len() as f64).sqrt();
    let identity = LogisticMap {
        kind: MapKind::Identity,
        params: [0.0; 4],
        rmse: rmse(sse(pred, mos, |x| x)),
    };
    let Some([slope, intercept]) = affine_fit(pred, mos) else {
        log::warn!("constant predictions: logistic mapping falls back to identity");
        return Ok(identity);
    };
    let affine = LogisticMap {
        kind: MapKind::Affine,
        params: [slope, intercept, 0.0, 0.0],
        rmse: rmse(sse(pred, mos, |x| slope * x + intercept)),
    };
    let lo = mos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let std = (pred.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (b1, b2) = if slope >= 0.0 { (hi, lo) } else { (lo, hi) };
    let logistic = levenberg_marquardt(pred, mos, [b1, b2, mean, std]).map(|p| LogisticMap {
        kind: MapKind::Logistic,
        params: p,
        rmse: rmse(sse(pred, mos, |x| logistic(&p, x))),
    });
    Ok(match logistic {
        Some(l) if l.rmse.is_finite() && l.rmse < affine.rmse => l,
        Some(_) => affine,
        None => {
            log::warn!("logistic fit diverged; using the affine limit");
            affine
        }
    })
}

/// Fit and apply in one step.
pub fn logistic_map(pred: &[f64], mos: &[f64]) -> Result<Vec<f64>> {
    let fit = fit_logistic(pred, mos)?;
    Ok(pred.iter().map(|&x| fit.apply(x)).collect())
}
