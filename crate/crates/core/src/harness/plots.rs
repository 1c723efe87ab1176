//! Plot-data emission: CSV series ready for any plotting tool.
//!
//! - time bias: per-quarter mean log playcounts, full catalog vs the
//!   top-K sample (dash vs solid lines of the dataset analysis)
//! - hit-score distributions: whole set vs the test split
//! - genre bars: dominant-tag counts per method and for the ground truth,
//!   re-emitted from an experiment result bundle

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::cache::write_atomic;
use crate::popularity::{
    hit_score_histogram, sample_top_k, split_dataset, time_bias_report, Song,
};

use super::experiment::ExperimentResult;
use super::{derive_seed, HarnessError};

#[derive(Debug, Clone)]
pub struct PlotFiles {
    pub time_bias: PathBuf,
    pub hit_scores: PathBuf,
    pub genres: Option<PathBuf>,
}

/// Emit plot-data files under `out_dir`.
///
/// `top_k_sample` adds the sampled line to the time-bias series; `seed`
/// reproduces the experiment's first-repetition split for the test-set
/// histogram; `result` adds the genre-bar series.
pub fn emit_plots(
    catalog: &[Song],
    subsets: &[String],
    top_k_sample: Option<usize>,
    seed: u64,
    n_bins: usize,
    result: Option<&ExperimentResult>,
    out_dir: &Path,
) -> Result<PlotFiles, HarnessError> {
    std::fs::create_dir_all(out_dir)?;

    let mut time_bias = String::from("subset,line,quarter,mean_log_playcount,count\n");
    let mut hist = String::from("subset,set,bin_lo,bin_hi,count\n");

    for subset in subsets {
        let songs: Vec<Song> = catalog.iter().filter(|s| &s.subset == subset).cloned().collect();
        if songs.is_empty() {
            return Err(HarnessError::Validation(format!(
                "subset '{subset}' has no songs in the catalog"
            )));
        }
        for row in time_bias_report(&songs) {
            writeln!(
                time_bias,
                "{subset},full,{},{:.6},{}",
                row.quarter, row.mean_log_playcount, row.count
            )
            .unwrap();
        }
        let sampled = match top_k_sample {
            Some(k) => {
                let top = sample_top_k(&songs, k)?;
                for row in time_bias_report(&top) {
                    writeln!(
                        time_bias,
                        "{subset},sampled,{},{:.6},{}",
                        row.quarter, row.mean_log_playcount, row.count
                    )
                    .unwrap();
                }
                top
            }
            None => songs.clone(),
        };

        let whole = hit_score_histogram(&sampled, n_bins)?;
        for (i, count) in whole.counts.iter().enumerate() {
            writeln!(
                hist,
                "{subset},whole,{:.6},{:.6},{count}",
                whole.edges[i],
                whole.edges[i + 1]
            )
            .unwrap();
        }
        let split_seed = derive_seed(seed, &format!("{subset}/rep0/split"));
        let split = split_dataset(&sampled, (8, 1, 1), split_seed)?;
        let test_songs: Vec<Song> = sampled
            .iter()
            .filter(|s| split.test.contains(&s.song_id))
            .cloned()
            .collect();
        let test = hit_score_histogram(&test_songs, n_bins)?;
        for (i, count) in test.counts.iter().enumerate() {
            writeln!(
                hist,
                "{subset},test,{:.6},{:.6},{count}",
                test.edges[i],
                test.edges[i + 1]
            )
            .unwrap();
        }
    }

    let time_bias_path = out_dir.join("time_bias.csv");
    write_atomic(&time_bias_path, time_bias.as_bytes())?;
    let hist_path = out_dir.join("hit_score_distribution.csv");
    write_atomic(&hist_path, hist.as_bytes())?;

    let genres = match result {
        Some(r) if !r.genre.is_empty() => {
            let path = out_dir.join("genre_bars.csv");
            write_atomic(&path, super::experiment::genre_csv(r).as_bytes())?;
            Some(path)
        }
        _ => None,
    };

    Ok(PlotFiles {
        time_bias: time_bias_path,
        hit_scores: hist_path,
        genres,
    })
}
