//! Per-run ranking reports and repetition averaging.

use serde::{Deserialize, Serialize};

use super::metrics::{kendall_tau, ndcg_at_k, recall_at_k, spearman_rho, MetricValue};
use super::EvalError;

/// One test song with its ground-truth and predicted hit scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSong {
    pub song_id: String,
    pub true_score: f64,
    pub pred_score: f64,
}

/// The four metric values for one evaluation run, plus the per-song scores
/// they were computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub kendall_tau: MetricValue,
    pub spearman_rho: MetricValue,
    pub k: usize,
    pub n: usize,
    pub per_song: Vec<ScoredSong>,
}

/// Evaluate one run. Songs are sorted by id internally so that all tie
/// handling is deterministic and independent of input order.
pub fn evaluate_ranking(songs: &[ScoredSong], k: usize) -> Result<RankingReport, EvalError> {
    if songs.is_empty() {
        return Err(EvalError::InvalidArgument("no songs to evaluate".into()));
    }
    let mut sorted = songs.to_vec();
    sorted.sort_by(|a, b| a.song_id.cmp(&b.song_id));
    for w in sorted.windows(2) {
        if w[0].song_id == w[1].song_id {
            return Err(EvalError::InvalidArgument(format!(
                "duplicate song_id '{}'",
                w[0].song_id
            )));
        }
    }
    let truth: Vec<f64> = sorted.iter().map(|s| s.true_score).collect();
    let pred: Vec<f64> = sorted.iter().map(|s| s.pred_score).collect();
    Ok(RankingReport {
        recall_at_k: recall_at_k(&truth, &pred, k)?,
        ndcg_at_k: ndcg_at_k(&truth, &pred, k)?,
        kendall_tau: kendall_tau(&truth, &pred)?,
        spearman_rho: spearman_rho(&truth, &pred)?,
        k,
        n: sorted.len(),
        per_song: sorted,
    })
}

/// Mean of one metric across repetitions. Undefined inputs propagate: the
/// mean is undefined whenever any contributing value was, and the count
/// says how many.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetric {
    pub mean: MetricValue,
    pub undefined_count: usize,
}

impl MeanMetric {
    fn of(values: &[MetricValue]) -> MeanMetric {
        let undefined_count = values.iter().filter(|v| !v.is_defined()).count();
        if undefined_count > 0 {
            return MeanMetric {
                mean: MetricValue::Undefined,
                undefined_count,
            };
        }
        let sum: f64 = values.iter().filter_map(|v| v.value()).sum();
        MeanMetric {
            mean: MetricValue::Value(sum / values.len() as f64),
            undefined_count: 0,
        }
    }
}

/// Averaged metrics over repetitions of one (subset, method) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanReport {
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub kendall_tau: MeanMetric,
    pub spearman_rho: MeanMetric,
    pub k: usize,
    pub n: usize,
    pub repetitions: usize,
}

/// Arithmetic mean per metric over repetitions sharing k and n.
pub fn average_reports(reports: &[RankingReport]) -> Result<MeanReport, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::InvalidArgument("no reports to average".into()))?;
    if reports.iter().any(|r| r.k != first.k || r.n != first.n) {
        return Err(EvalError::InvalidArgument(
            "reports mix different k or n values".into(),
        ));
    }
    let recall = reports.iter().map(|r| r.recall_at_k).sum::<f64>() / reports.len() as f64;
    let ndcg = reports.iter().map(|r| r.ndcg_at_k).sum::<f64>() / reports.len() as f64;
    let taus: Vec<MetricValue> = reports.iter().map(|r| r.kendall_tau).collect();
    let rhos: Vec<MetricValue> = reports.iter().map(|r| r.spearman_rho).collect();
    Ok(MeanReport {
        recall_at_k: recall,
        ndcg_at_k: ndcg,
        kendall_tau: MeanMetric::of(&taus),
        spearman_rho: MeanMetric::of(&rhos),
        k: first.k,
        n: first.n,
        repetitions: reports.len(),
    })
}
