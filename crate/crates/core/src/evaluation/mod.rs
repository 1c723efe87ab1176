//! Ranking evaluation: recall@k, nDCG@k, Kendall's τ-b, Spearman's ρ,
//! repetition averaging, and genre-distribution analysis of top-ranked
//! songs.
//!
//! All four metrics depend only on score order, so they are invariant under
//! strictly increasing transforms of either score vector. Ties in top-k
//! formation break by song id; correlations that lose their denominator
//! (constant score vectors) surface as explicit undefined values rather
//! than numbers.

mod genre;
mod metrics;
mod report;

pub use genre::{genre_distribution, GenreDistribution};
pub use metrics::{kendall_tau, ndcg_at_k, recall_at_k, spearman_rho, MetricValue};
pub use report::{average_reports, evaluate_ranking, MeanMetric, MeanReport, RankingReport, ScoredSong};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing tag vector for song '{0}'")]
    MissingTags(String),
}
