//! Experiment harness: catalog ingestion, feature caching, synthetic
//! corpus generation, the subset × method × repetition experiment grid,
//! and plot-data emission.

pub mod cache;
pub mod config;
pub mod experiment;
pub mod ingest;
pub mod plots;
pub mod synth;

pub use cache::{build_feature_cache, CacheBuildStats, CacheEntry, CacheManifest};
pub use config::ExperimentConfig;
pub use experiment::{
    evaluate_model, load_result, run_experiment, train_single, CellMeta, CellOutcome, CellResult,
    ExperimentResult, SingleRun,
};
pub use ingest::{ingest_catalog, read_catalog_csv, write_catalog_csv, IngestReport, RowIssue};
pub use plots::emit_plots;
pub use synth::{generate_synthetic, PlantedModel, SongTruth, SyntheticCorpus, SyntheticSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data validation failed: {0}")]
    Validation(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("all {0} experiment cells failed to train")]
    AllCellsFailed(usize),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Popularity(#[from] crate::popularity::PopularityError),
    #[error(transparent)]
    Tags(#[from] crate::tags::TagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Stable seed derivation for named sub-streams (splits, cells, songs).
/// FNV-1a over the tag bytes folded into the base seed, then finalized
/// with a splitmix64 round so nearby inputs decorrelate.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
