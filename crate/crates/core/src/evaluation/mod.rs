//! Correlation metrics, logistic mapping, annotator consistency, gMAD and reports.

pub mod consistency;
pub mod gmad;
pub mod logistic;
pub mod metrics;
pub mod report;

pub use consistency::{annotator_consistency, ConsistencyReport, DimensionGroup};
pub use gmad::{default_eps, gmad_pairs, GmadPair, Orientation};
pub use logistic::{fit_logistic, logistic_map, LogisticMap, MapKind};
pub use metrics::{average_ranks, krcc, plcc, rmse, srcc, Metric, MetricRegistry, Stat};
pub use report::{aggregate, evaluate, render_table, report_values, AggregateReport, DimensionMetrics, MetricReport, ScoreMap};
