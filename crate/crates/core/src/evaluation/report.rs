use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::consistency::DimensionGroup;
use super::logistic::{fit_logistic, MapKind};
use super::metrics::MetricRegistry;
use crate::datastore::Dimension;
use crate::error::{Error, Result};

pub type ScoreMap = BTreeMap<(String, Dimension), f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub n: usize,
    /// Metric name to value, in registry order when rendered.
    pub values: BTreeMap<String, f64>,
    /// Metrics whose value was undefined and reported as 0.
    pub degenerate: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MapKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Option<u64>,
    pub dimensions: BTreeMap<DimensionGroup, DimensionMetrics>,
}

/// Evaluate predictions against labels for every dimension group that has
/// predictions. Within a group every labelled key needs a prediction.
pub fn evaluate(
    preds: &ScoreMap,
    labels: &ScoreMap,
    registry: &MetricRegistry,
    logistic: bool,
    split: Option<u64>,
) -> Result<MetricReport> {
    let mut grouped: BTreeMap<DimensionGroup, (Vec<f64>, Vec<f64>, Vec<&(String, Dimension)>)> = BTreeMap::new();
    for (key, &label) in labels {
        let e = grouped.entry(key.1.into()).or_default();
        match preds.get(key) {
            Some(&p) => {
                e.0.push(p);
                e.1.push(label);
            }
            None => e.2.push(key),
        }
    }
    let mut dimensions = BTreeMap::new();
    for (group, (p, m, missing)) in grouped {
        if p.is_empty() {
            continue;
        }
        if let Some((video, dim)) = missing.first() {
            return Err(Error::Data(format!(
                "{} labelled {group:?} entries lack predictions (first: `{video}`/{dim})",
                missing.len()
            )));
        }
        let (p, mapping) = if logistic {
            let fit = fit_logistic(&p, &m)?;
            (p.iter().map(|&x| fit.apply(x)).collect::<Vec<_>>(), Some(fit.kind))
        } else {
            (p, None)
        };
        let mut values = BTreeMap::new();
        let mut degenerate = Vec::new();
        for metric in registry.iter() {
            let s = metric.compute(&p, &m)?;
            if s.degenerate {
                degenerate.push(metric.name().to_string());
            }
            values.insert(metric.name().to_string(), s.value);
        }
        dimensions.insert(
            group,
            DimensionMetrics {
                n: p.len(),
                values,
                degenerate,
                mapping,
            },
        );
    }
    Ok(MetricReport { split, dimensions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub splits: Vec<MetricReport>,
    pub mean: BTreeMap<DimensionGroup, BTreeMap<String, f64>>,
    /// Population standard deviation across splits.
    pub std: BTreeMap<DimensionGroup, BTreeMap<String, f64>>,
}

pub fn aggregate(splits: Vec<MetricReport>) -> Result<AggregateReport> {
    if splits.is_empty() {
        return Err(Error::Data("no split reports to aggregate".into()));
    }
    let mut samples: BTreeMap<DimensionGroup, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in &splits {
        for (g, d) in &r.dimensions {
            for (name, &v) in &d.values {
                samples.entry(*g).or_default().entry(name.clone()).or_default().push(v);
            }
        }
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for (g, metrics) in samples {
        let (mut mg, mut sg) = (BTreeMap::new(), BTreeMap::new());
        for (name, v) in metrics {
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
            mg.insert(name.clone(), mu);
            sg.insert(name, var.sqrt());
        }
        mean.insert(g, mg);
        std.insert(g, sg);
    }
    Ok(AggregateReport { splits, mean, std })
}

const GROUP_LABELS: [(DimensionGroup, &str); 5] = [
    (DimensionGroup::Spatial, "spatial"),
    (DimensionGroup::Temporal, "temporal"),
    (DimensionGroup::OverallPercept, "overall_percept"),
    (DimensionGroup::Word, "word"),
    (DimensionGroup::Sentence, "sentence"),
];

fn cell(values: Option<&BTreeMap<String, f64>>, std: Option<&BTreeMap<String, f64>>, metric: &str) -> String {
    match (values.and_then(|v| v.get(metric)), std.and_then(|s| s.get(metric))) {
        (Some(v), Some(s)) => format!("{v:.3}±{s:.3}"),
        (Some(v), None) => format!("{v:.3}"),
        _ => "-".to_string(),
    }
}

/// Plain-text table: one row for `method` with the perceptual (overall) and
/// alignment (sentence) blocks side by side, then a per-dimension breakdown.
pub fn render_table(
    method: &str,
    registry: &MetricRegistry,
    values: &BTreeMap<DimensionGroup, BTreeMap<String, f64>>,
    std: Option<&BTreeMap<DimensionGroup, BTreeMap<String, f64>>>,
) -> String {
    let names: Vec<&str> = registry.names();
    let width = if std.is_some() { 13 } else { 7 };
    let label_width = method.len().max("dimension".len()).max(15);
    let mut out = String::new();
    let block = names.len() * (width + 1);
    let _ = writeln!(
        out,
        "{:<label_width$} | {:^block$}| {:^block$}",
        "",
        "Perceptual Quality",
        "Prompt Alignment"
    );
    let header: String = names.iter().map(|n| format!("{:>width$} ", n.to_uppercase())).collect();
    let _ = writeln!(out, "{:<label_width$} | {header}| {header}", "Method");
    let _ = writeln!(out, "{}", "-".repeat(label_width + 2 * block + 5));
    let row = |g: DimensionGroup| -> String {
        names
            .iter()
            .map(|n| format!("{:>width$} ", cell(values.get(&g), std.and_then(|s| s.get(&g)), n)))
            .collect()
    };
    let _ = writeln!(
        out,
        "{method:<label_width$} | {}| {}",
        row(DimensionGroup::OverallPercept),
        row(DimensionGroup::Sentence)
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<label_width$} | {header}", "dimension");
    for (g, label) in GROUP_LABELS {
        if values.contains_key(&g) {
            let _ = writeln!(out, "{label:<label_width$} | {}", row(g));
        }
    }
    out
}

pub fn report_values(report: &MetricReport) -> BTreeMap<DimensionGroup, BTreeMap<String, f64>> {
    report
        .dimensions
        .iter()
        .map(|(g, d)| (*g, d.values.clone()))
        .collect()
}
