use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric value; `degenerate` marks an undefined correlation reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub degenerate: bool,
}

impl Stat {
    fn ok(value: f64) -> Self {
        Stat { value, degenerate: false }
    }

    fn undefined() -> Self {
        Stat {
            value: 0.0,
            degenerate: true,
        }
    }
}

fn check(pred: &[f64], mos: &[f64]) -> Result<()> {
    if pred.len() != mos.len() {
        return Err(Error::shape("metric", format!("{} predictions vs {} scores", pred.len(), mos.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Degenerate(format!("metrics need at least 2 samples, got {}", pred.len())));
    }
    if pred.iter().chain(mos).any(|v| !v.is_finite()) {
        return Err(Error::Data("metric inputs contain non-finite values".into()));
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Stat {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Stat::undefined();
    }
    Stat::ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn plcc(pred: &[f64], mos: &[f64]) -> Result<Stat> {
    check(pred, mos)?;
    Ok(pearson_unchecked(pred, mos))
}

/// Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], mos: &[f64]) -> Result<Stat> {
    check(pred, mos)?;
    Ok(pearson_unchecked(&average_ranks(pred), &average_ranks(mos)))
}

/// Kendall's tau-b.
pub fn krcc(pred: &[f64], mos: &[f64]) -> Result<Stat> {
    check(pred, mos)?;
    let n = pred.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = pred[i].total_cmp(&pred[j]) as i64;
            let dy = mos[i].total_cmp(&mos[j]) as i64;
            if dx == 0 {
                tied_x += 1;
            }
            if dy == 0 {
                tied_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = ((pairs - tied_x) as f64 * (pairs - tied_y) as f64).sqrt();
    if denom == 0.0 {
        return Ok(Stat::undefined());
    }
    Ok(Stat::ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0)))
}

pub fn rmse(pred: &[f64], mos: &[f64]) -> Result<Stat> {
    check(pred, mos)?;
    let mse = pred.iter().zip(mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(Stat::ok(mse.sqrt()))
}

pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn higher_is_better(&self) -> bool;
    fn compute(&self, pred: &[f64], mos: &[f64]) -> Result<Stat>;
}

macro_rules! fn_metric {
    ($ty:ident, $name:literal, $f:ident, $higher:literal) => {
        pub struct $ty;

        impl Metric for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn higher_is_better(&self) -> bool {
                $higher
            }

            fn compute(&self, pred: &[f64], mos: &[f64]) -> Result<Stat> {
                $f(pred, mos)
            }
        }
    };
}

fn_metric!(Srcc, "srcc", srcc, true);
fn_metric!(Plcc, "plcc", plcc, true);
fn_metric!(Krcc, "krcc", krcc, true);
fn_metric!(Rmse, "rmse", rmse, false);

/// Ordered set of metrics evaluated per dimension.
#[derive(Clone)]
pub struct MetricRegistry {
    metrics: Vec<Arc<dyn Metric>>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        MetricRegistry { metrics: Vec::new() }
    }

    /// SRCC, PLCC, KRCC and RMSE, in that order.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Srcc));
        r.register(Arc::new(Plcc));
        r.register(Arc::new(Krcc));
        r.register(Arc::new(Rmse));
        r
    }

    /// Adding a metric under an existing name replaces it in place.
    pub fn register(&mut self, metric: Arc<dyn Metric>) {
        match self.metrics.iter().position(|m| m.name() == metric.name()) {
            Some(i) => self.metrics[i] = metric,
            None => self.metrics.push(metric),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn Metric> {
        self.metrics.iter().find(|m| m.name() == name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.metrics.iter().map(|m| m.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Metric> {
        self.metrics.iter().map(|m| m.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 45.0];
        assert_eq!(srcc(&a, &b).unwrap().value, 1.0);
        assert_eq!(krcc(&a, &b).unwrap().value, 1.0);
        let r: Vec<f64> = b.iter().rev().copied().collect();
        assert_eq!(srcc(&a, &r).unwrap().value, -1.0);
        assert_eq!(krcc(&a, &r).unwrap().value, -1.0);
    }

    #[test]
    fn three_point_kendall() {
        let k = krcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((k.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn constant_vector_is_flagged() {
        let s = plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(s.degenerate && s.value == 0.0);
        assert!(krcc(&[1.0, 1.0], &[1.0, 2.0]).unwrap().degenerate);
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap().value, 12.5f64.sqrt());
    }

    #[test]
    fn registry_order_and_replace() {
        let mut r = MetricRegistry::standard();
        assert_eq!(r.names(), vec!["srcc", "plcc", "krcc", "rmse"]);
        r.register(Arc::new(Srcc));
        assert_eq!(r.names().len(), 4);
        assert!(!r.get("rmse").unwrap().higher_is_better());
    }
}
