//! The four ranking metrics.
//!
//! `recall_at_k` and `ndcg_at_k` take parallel true/predicted score slices
//! whose index order is the tie-break order (callers that need id-based
//! tie-breaking pass songs sorted by id, as [`super::evaluate_ranking`]
//! does). Kendall's τ is the tie-aware τ-b computed in O(n log n) via
//! merge-sort inversion counting; Spearman's ρ is the Pearson correlation
//! of average ranks.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// A metric value that may be undefined (zero-variance denominators).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum MetricValue {
    Value(f64),
    Undefined,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, MetricValue::Value(_))
    }
}

impl From<Option<f64>> for MetricValue {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(x) => MetricValue::Value(x),
            None => MetricValue::Undefined,
        }
    }
}

impl From<MetricValue> for Option<f64> {
    fn from(v: MetricValue) -> Self {
        v.value()
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v:.4}"),
            MetricValue::Undefined => write!(f, "undefined"),
        }
    }
}

fn check_scores(truth: &[f64], pred: &[f64]) -> Result<(), EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::InvalidArgument(format!(
            "score lists differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidArgument("scores must be finite".into()));
    }
    Ok(())
}

/// Indices ranked best-first: descending score, ascending index on ties.
pub(crate) fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    idx
}

/// Fraction of the true top-k recovered in the predicted top-k.
pub fn recall_at_k(truth: &[f64], pred: &[f64], k: usize) -> Result<f64, EvalError> {
    check_scores(truth, pred)?;
    let n = truth.len();
    if k == 0 || k > n {
        return Err(EvalError::InvalidArgument(format!("k={k} outside 1..={n}")));
    }
    let true_top = ranking_order(truth);
    let mut is_hit = vec![false; n];
    for &i in &true_top[..k] {
        is_hit[i] = true;
    }
    let pred_top = ranking_order(pred);
    let recovered = pred_top[..k].iter().filter(|&&i| is_hit[i]).count();
    Ok(recovered as f64 / k as f64)
}

/// Binary-relevance nDCG truncated at k: items in the true top-k have gain
/// 1, the predicted ranking is discounted by log2(rank+1) over its first k
/// positions, and the ideal (all hits up front) normalizes.
pub fn ndcg_at_k(truth: &[f64], pred: &[f64], k: usize) -> Result<f64, EvalError> {
    check_scores(truth, pred)?;
    let n = truth.len();
    if k == 0 || k > n {
        return Err(EvalError::InvalidArgument(format!("k={k} outside 1..={n}")));
    }
    let true_top = ranking_order(truth);
    let mut is_hit = vec![false; n];
    for &i in &true_top[..k] {
        is_hit[i] = true;
    }
    let pred_order = ranking_order(pred);
    let mut dcg = 0.0;
    let mut ideal = 0.0;
    for rank in 1..=k {
        let discount = 1.0 / ((rank + 1) as f64).log2();
        ideal += discount;
        if is_hit[pred_order[rank - 1]] {
            dcg += discount;
        }
    }
    Ok(dcg / ideal)
}

/// Count strict inversions in `values` (pairs i<j with values[i] > values[j])
/// by merge sort.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inv = count_inversions(left) + count_inversions(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            inv += (left.len() - i) as u64;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    values.copy_from_slice(&merged);
    inv
}

fn tie_pair_count<F: Fn(usize, usize) -> bool>(sorted: &[usize], same: F) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if same(w[0], w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Tie-aware Kendall rank correlation (τ-b) in O(n log n).
///
/// Returns [`MetricValue::Undefined`] when either score list is constant
/// (the τ-b denominator vanishes).
pub fn kendall_tau(truth: &[f64], pred: &[f64]) -> Result<MetricValue, EvalError> {
    check_scores(truth, pred)?;
    let n = truth.len();
    if n < 2 {
        return Err(EvalError::InvalidArgument("need at least 2 songs".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        truth[a]
            .partial_cmp(&truth[b])
            .unwrap()
            .then(pred[a].partial_cmp(&pred[b]).unwrap())
    });

    let pairs = (n as u64) * (n as u64 - 1) / 2;
    let ties_x = tie_pair_count(&order, |a, b| truth[a] == truth[b]);
    let ties_xy = tie_pair_count(&order, |a, b| truth[a] == truth[b] && pred[a] == pred[b]);

    let mut y_by_x: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
    let discordant = count_inversions(&mut y_by_x);

    let mut y_order: Vec<usize> = (0..n).collect();
    y_order.sort_by(|&a, &b| pred[a].partial_cmp(&pred[b]).unwrap());
    let ties_y = tie_pair_count(&y_order, |a, b| pred[a] == pred[b]);

    let denom_x = pairs - ties_x;
    let denom_y = pairs - ties_y;
    if denom_x == 0 || denom_y == 0 {
        return Ok(MetricValue::Undefined);
    }
    // Sorting by (x asc, y asc) makes tied-x pairs contribute no inversions,
    // so inversions count exactly the discordant pairs. Signed arithmetic:
    // ties_x + ties_y can exceed `pairs` before ties_xy is added back.
    let concordant =
        pairs as i64 + ties_xy as i64 - ties_x as i64 - ties_y as i64 - discordant as i64;
    let num = concordant as f64 - discordant as f64;
    let denom = (denom_x as f64 * denom_y as f64).sqrt();
    Ok(MetricValue::Value(num / denom))
}

/// Average ranks (1-based, ties share the mean of their positions).
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
///
/// Returns [`MetricValue::Undefined`] when either rank vector has zero
/// variance.
pub fn spearman_rho(truth: &[f64], pred: &[f64]) -> Result<MetricValue, EvalError> {
    check_scores(truth, pred)?;
    let n = truth.len();
    if n < 2 {
        return Err(EvalError::InvalidArgument("need at least 2 songs".into()));
    }
    let rx = average_ranks(truth);
    let ry = average_ranks(pred);
    let nf = n as f64;
    let mx = rx.iter().sum::<f64>() / nf;
    let my = ry.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(MetricValue::Undefined);
    }
    Ok(MetricValue::Value(sxy / (sxx * syy).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_identity_and_reverse() {
        let truth: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(recall_at_k(&truth, &truth, 100).unwrap(), 1.0);
        let reversed: Vec<f64> = truth.iter().rev().cloned().collect();
        assert_eq!(recall_at_k(&truth, &reversed, 100).unwrap(), 0.0);
    }

    #[test]
    fn recall_matches_set_intersection_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = 10;
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let k = 3;
            // Oracle: exhaustive max-extraction into sets, then intersection.
            let top = |s: &[f64]| {
                let mut remaining: Vec<usize> = (0..s.len()).collect();
                let mut set = Vec::new();
                for _ in 0..k {
                    let best = *remaining
                        .iter()
                        .max_by(|&&a, &&b| {
                            s[a].partial_cmp(&s[b]).unwrap().then(b.cmp(&a))
                        })
                        .unwrap();
                    remaining.retain(|&x| x != best);
                    set.push(best);
                }
                set
            };
            let ts = top(&truth);
            let ps = top(&pred);
            let inter = ps.iter().filter(|i| ts.contains(i)).count();
            let expected = inter as f64 / k as f64;
            assert_eq!(recall_at_k(&truth, &pred, k).unwrap(), expected);
        }
    }

    #[test]
    fn ndcg_perfect_and_empty_topk() {
        let truth = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((ndcg_at_k(&truth, &truth, 2).unwrap() - 1.0).abs() < 1e-15);
        // Prediction puts the true bottom-2 on top: no hits in top 2.
        let pred = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(ndcg_at_k(&truth, &pred, 2).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_truncates_at_k() {
        // n=3, k=2; true hits {A,B}; prediction ranks A first, B third.
        // Truncated DCG@2 counts only the rank-1 hit:
        // (1/log2(2)) / (1/log2(2) + 1/log2(3)) = 0.61315.
        let truth = [10.0, 9.0, 1.0];
        let pred = [3.0, 1.0, 2.0];
        let got = ndcg_at_k(&truth, &pred, 2).unwrap();
        let expected = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.6131).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ignores_order_below_k() {
        let truth = [9.0, 8.0, 7.0, 1.0, 2.0, 3.0];
        let pred_a = [9.0, 8.0, 7.0, 3.0, 2.0, 1.0];
        let pred_b = [9.0, 8.0, 7.0, 1.0, 3.0, 2.0];
        let a = ndcg_at_k(&truth, &pred_a, 3).unwrap();
        let b = ndcg_at_k(&truth, &pred_b, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            recall_at_k(&truth, &pred_a, 3).unwrap(),
            recall_at_k(&truth, &pred_b, 3).unwrap()
        );
    }

    #[test]
    fn kendall_hand_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&a, &a).unwrap().value().unwrap(), 1.0);
        let rev = [3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&a, &rev).unwrap().value().unwrap(), -1.0);
        let b = [1.0, 3.0, 2.0];
        let tau = kendall_tau(&a, &b).unwrap().value().unwrap();
        assert!((tau - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_matches_quadratic_oracle_with_ties() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let n = rng.random_range(2..30);
            // Coarse integer scores force plenty of ties.
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let fast = kendall_tau(&x, &y).unwrap();
            let oracle = quadratic_tau_b(&x, &y);
            match (fast, oracle) {
                (MetricValue::Value(f), Some(o)) => {
                    assert!((f - o).abs() < 1e-12, "trial {trial}: {f} vs {o}")
                }
                (MetricValue::Undefined, None) => {}
                other => panic!("trial {trial}: disagreement {other:?}"),
            }
        }
    }

    /// O(n²) definitional τ-b.
    fn quadratic_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut nc, mut nd, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 {
                    tx += 1;
                }
                if dy == 0.0 {
                    ty += 1;
                }
                if dx != 0.0 && dy != 0.0 {
                    if (dx > 0.0) == (dy > 0.0) {
                        nc += 1;
                    } else {
                        nd += 1;
                    }
                }
            }
        }
        let pairs = (n * (n - 1) / 2) as i64;
        let dx = pairs - tx;
        let dy = pairs - ty;
        if dx == 0 || dy == 0 {
            return None;
        }
        Some((nc - nd) as f64 / (dx as f64 * dy as f64).sqrt())
    }

    #[test]
    fn kendall_undefined_on_constant_input() {
        let x = [1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(kendall_tau(&x, &y).unwrap(), MetricValue::Undefined);
        assert_eq!(kendall_tau(&y, &x).unwrap(), MetricValue::Undefined);
    }

    #[test]
    fn kendall_symmetry() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(2..40);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            assert_eq!(kendall_tau(&x, &y).unwrap(), kendall_tau(&y, &x).unwrap());
            assert_eq!(spearman_rho(&x, &y).unwrap(), spearman_rho(&y, &x).unwrap());
        }
    }

    #[test]
    fn spearman_hand_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(spearman_rho(&a, &a).unwrap().value().unwrap(), 1.0);
        let rev = [3.0, 2.0, 1.0];
        assert_eq!(spearman_rho(&a, &rev).unwrap().value().unwrap(), -1.0);
        // 1 − 6·Σd²/(n(n²−1)) with d = (0,1,1) → 1 − 12/24 = 0.5
        let b = [1.0, 3.0, 2.0];
        assert!((spearman_rho(&a, &b).unwrap().value().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spearman_undefined_on_constant_input() {
        let x = [2.0, 2.0];
        let y = [1.0, 3.0];
        assert_eq!(spearman_rho(&x, &y).unwrap(), MetricValue::Undefined);
    }

    #[test]
    fn spearman_average_ranks_for_ties() {
        // x = [1, 1, 2]: ranks (1.5, 1.5, 3)
        let ranks = average_ranks(&[1.0, 1.0, 2.0]);
        assert_eq!(ranks, vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn k_out_of_range_rejected() {
        let s = [1.0, 2.0];
        assert!(recall_at_k(&s, &s, 3).is_err());
        assert!(recall_at_k(&s, &s, 0).is_err());
        assert!(ndcg_at_k(&s, &s, 3).is_err());
    }
}
