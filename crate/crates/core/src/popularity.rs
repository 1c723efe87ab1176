//! Regression targets and dataset partitioning from listening-log catalogs:
//! hit scores, top-K sampling by playcount, seeded train/val/test splits,
//! per-quarter time-bias tables, and hit-score histograms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PopularityError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One catalog entry. `release_period` is a quarter index relative to the
/// start of the log window (0 = first quarter inside, -1 = the quarter
/// before, ...). `hit_score` is derived via [`hit_score`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Song {
    pub song_id: String,
    pub subset: String,
    pub playcount: u64,
    pub listeners: u64,
    pub release_period: i32,
    pub hit_score: f64,
}

impl Song {
    pub fn new(
        song_id: impl Into<String>,
        subset: impl Into<String>,
        playcount: u64,
        listeners: u64,
        release_period: i32,
    ) -> Self {
        Song {
            song_id: song_id.into(),
            subset: subset.into(),
            playcount,
            listeners,
            release_period,
            hit_score: hit_score(playcount, listeners),
        }
    }
}

/// Hit score: log-scaled playcount times log-scaled listener count,
/// `ln(1+playcount) · ln(1+listeners)`. The +1 offsets make zero counts
/// valid; the metrics downstream are rank-based, so the log base is free.
pub fn hit_score(playcount: u64, listeners: u64) -> f64 {
    (1.0 + playcount as f64).ln() * (1.0 + listeners as f64).ln()
}

/// The `k` songs with the highest playcounts; ties broken by lexicographic
/// song_id so repeated runs agree.
pub fn sample_top_k(catalog: &[Song], k: usize) -> Result<Vec<Song>, PopularityError> {
    if catalog.len() < k {
        return Err(PopularityError::InvalidArgument(format!(
            "cannot sample top {} from a catalog of {}",
            k,
            catalog.len()
        )));
    }
    let mut sorted: Vec<&Song> = catalog.iter().collect();
    sorted.sort_by(|a, b| {
        b.playcount
            .cmp(&a.playcount)
            .then_with(|| a.song_id.cmp(&b.song_id))
    });
    Ok(sorted.into_iter().take(k).cloned().collect())
}

/// Disjoint train/validation/test partition of song ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Uniformly random partition in the given proportions (8:1:1 at reference),
/// reproducible from `seed`. Rounding remainders go to the training part;
/// validation and test always receive at least one song each.
pub fn split_dataset(
    songs: &[Song],
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<DatasetSplit, PopularityError> {
    let n = songs.len();
    if n < 3 {
        return Err(PopularityError::InvalidArgument(format!(
            "need at least 3 songs to split, got {n}"
        )));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 || ratios.0 == 0 {
        return Err(PopularityError::InvalidArgument("ratios must be positive".into()));
    }
    let n_val = (n * ratios.1 as usize / total).max(1);
    let n_test = (n * ratios.2 as usize / total).max(1);
    if n_val + n_test >= n {
        return Err(PopularityError::InvalidArgument(format!(
            "split {ratios:?} leaves no training songs for n={n}"
        )));
    }

    let mut ids: Vec<String> = songs.iter().map(|s| s.song_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let test = ids.split_off(ids.len() - n_test);
    let val = ids.split_off(ids.len() - n_val);
    let train = ids;
    Ok(DatasetSplit { train, val, test, seed })
}

/// One row of the time-bias table: a quarter index, the mean `ln(1+playcount)`
/// over songs released in it, and how many songs that is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBiasRow {
    pub quarter: i32,
    pub mean_log_playcount: f64,
    pub count: usize,
}

/// Per-quarter mean log playcounts, one row per quarter present (quarters
/// with no songs are absent, not zero-filled), sorted by quarter.
pub fn time_bias_report(songs: &[Song]) -> Vec<TimeBiasRow> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for s in songs {
        let e = acc.entry(s.release_period).or_insert((0.0, 0));
        e.0 += (1.0 + s.playcount as f64).ln();
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(quarter, (sum, count))| TimeBiasRow {
            quarter,
            mean_log_playcount: sum / count as f64,
            count,
        })
        .collect()
}

/// Equal-width histogram over `[min, max]` of the hit scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `n_bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn hit_score_histogram(songs: &[Song], n_bins: usize) -> Result<Histogram, PopularityError> {
    if n_bins == 0 {
        return Err(PopularityError::InvalidArgument("n_bins must be at least 1".into()));
    }
    if songs.is_empty() {
        return Ok(Histogram {
            edges: vec![0.0; n_bins + 1],
            counts: vec![0; n_bins],
        });
    }
    let min = songs.iter().map(|s| s.hit_score).fold(f64::INFINITY, f64::min);
    let max = songs.iter().map(|s| s.hit_score).fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for s in songs {
        let bin = if width > 0.0 {
            (((s.hit_score - min) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn song(id: &str, playcount: u64) -> Song {
        Song::new(id, "test", playcount, playcount / 2, 0)
    }

    #[test]
    fn hit_score_examples() {
        assert_eq!(hit_score(0, 0), 0.0);
        let two = 2f64.ln();
        assert!((hit_score(1, 1) - two * two).abs() < 1e-12);
        assert!((hit_score(1, 1) - 0.480453).abs() < 1e-6);
        assert!(hit_score(1000, 10) < hit_score(1000, 100));
    }

    #[test]
    fn hit_score_symmetric_and_monotone() {
        assert_eq!(hit_score(7, 23), hit_score(23, 7));
        assert!(hit_score(10, 5) < hit_score(11, 5));
        assert!(hit_score(10, 5) < hit_score(10, 6));
    }

    #[test]
    fn top_k_whole_catalog() {
        let cat: Vec<Song> = (0..5).map(|i| song(&format!("s{i}"), i)).collect();
        let top = sample_top_k(&cat, 5).unwrap();
        assert_eq!(top.len(), 5);
    }

    #[test]
    fn top_k_sorting_and_ties() {
        let cat = vec![
            song("a", 5),
            song("b", 3),
            song("c", 9),
            song("d", 9),
            song("e", 1),
        ];
        let top = sample_top_k(&cat, 3).unwrap();
        let ids: Vec<&str> = top.iter().map(|s| s.song_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "d", "a"]);
        // Excluded songs never outrank included ones.
        let cut = top.iter().map(|s| s.playcount).min().unwrap();
        for s in &cat {
            if !ids.contains(&s.song_id.as_str()) {
                assert!(s.playcount <= cut);
            }
        }
    }

    #[test]
    fn tie_at_boundary_prefers_smaller_id() {
        let cat = vec![song("zz", 4), song("aa", 4), song("mm", 9)];
        let top = sample_top_k(&cat, 2).unwrap();
        assert_eq!(top[1].song_id, "aa");
    }

    #[test]
    fn top_k_larger_than_catalog_is_an_error() {
        let cat = vec![song("a", 1)];
        assert!(sample_top_k(&cat, 2).is_err());
    }

    #[test]
    fn split_sizes_at_reference_scale() {
        let songs: Vec<Song> = (0..10_000).map(|i| song(&format!("s{i:05}"), i)).collect();
        let s = split_dataset(&songs, (8, 1, 1), 7).unwrap();
        assert_eq!(s.train.len(), 8000);
        assert_eq!(s.val.len(), 1000);
        assert_eq!(s.test.len(), 1000);
    }

    #[test]
    fn split_is_a_partition() {
        let songs: Vec<Song> = (0..600).map(|i| song(&format!("s{i:04}"), i)).collect();
        let s = split_dataset(&songs, (8, 1, 1), 3).unwrap();
        let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 600);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 600, "parts overlap or drop songs");
    }

    #[test]
    fn split_deterministic_and_seed_sensitive() {
        let songs: Vec<Song> = (0..10_000).map(|i| song(&format!("s{i:05}"), i)).collect();
        let a = split_dataset(&songs, (8, 1, 1), 42).unwrap();
        let b = split_dataset(&songs, (8, 1, 1), 42).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&songs, (8, 1, 1), 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_tiny_catalogs() {
        let songs: Vec<Song> = (0..2).map(|i| song(&format!("s{i}"), i)).collect();
        assert!(split_dataset(&songs, (8, 1, 1), 0).is_err());
    }

    #[test]
    fn time_bias_single_quarter() {
        let songs = vec![song("a", 10), song("b", 20)];
        let rows = time_bias_report(&songs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 2);
        let expected = (11f64.ln() + 21f64.ln()) / 2.0;
        assert!((rows[0].mean_log_playcount - expected).abs() < 1e-12);
    }

    #[test]
    fn time_bias_log_arithmetic() {
        // Means are of ln(1+playcount): counts 7 and 63 give exactly ln 8 and
        // ln 64 for their quarters (ln 64 = 2·ln 8, the doubling the chart
        // axis is meant to show).
        let mut s1 = song("a", 7);
        s1.release_period = 0;
        let mut s2 = song("b", 63);
        s2.release_period = 1;
        let rows = time_bias_report(&[s1, s2]);
        assert!((rows[0].mean_log_playcount - 8f64.ln()).abs() < 1e-12);
        assert!((rows[1].mean_log_playcount - 64f64.ln()).abs() < 1e-12);
        assert!((rows[1].mean_log_playcount / rows[0].mean_log_playcount - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_quarters_absent() {
        let mut a = song("a", 5);
        a.release_period = -2;
        let mut b = song("b", 5);
        b.release_period = 3;
        let rows = time_bias_report(&[a, b]);
        let quarters: Vec<i32> = rows.iter().map(|r| r.quarter).collect();
        assert_eq!(quarters, vec![-2, 3]);
    }

    #[test]
    fn histogram_all_equal_scores() {
        let songs = vec![song("a", 9), song("b", 9), song("c", 9)];
        let h = hit_score_histogram(&songs, 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn histogram_uniform_scores() {
        // Scores 0..=99 with 10 bins → exactly 10 per bin. Craft hit scores
        // directly rather than through counts.
        let songs: Vec<Song> = (0..100)
            .map(|i| {
                let mut s = song(&format!("s{i:03}"), 1);
                s.hit_score = i as f64;
                s
            })
            .collect();
        let h = hit_score_histogram(&songs, 10).unwrap();
        assert_eq!(h.counts, vec![10; 10]);
    }

    #[test]
    fn histogram_counts_conserved() {
        let songs: Vec<Song> = (0..57).map(|i| song(&format!("s{i}"), i * i)).collect();
        let h = hit_score_histogram(&songs, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 57);
    }
}
