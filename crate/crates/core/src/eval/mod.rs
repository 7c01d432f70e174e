//! Top-N ranking metrics over sampled candidates, sparsity breakdowns and
//! graph-level attention summaries.

mod attention;
mod metrics;
mod report;

pub use attention::{attention_stats, AttentionStats, LayerGammaStats};
pub use metrics::{hr_at_n, ndcg_at_n, rank_candidates};
pub use report::{evaluate, evaluate_scores, EvalConfig, GroupReport, Metric, MetricSummary, RankingReport, Scorer};
