//! Task metrics from session logs and the nonparametric tests used to compare
//! them.

pub mod metrics;
pub mod stats;

pub use metrics::{compute_metrics, log_mode, Breakdown, MetricsReport, Rate, Times, TrialRow};
pub use stats::{
    bonferroni, box_summary, friedman, kolmogorov_q, ks_normality, ks_normality_mc, wilcoxon_signed_rank,
    BoxSummary, StatsError, TestResult,
};
