//! Audio-based hit-song prediction at desk scale.
//!
//! The pipeline: raw audio → 128-bin log-mel spectrograms → one of six
//! regression models of increasing depth (linear regression over summary
//! statistics, fully convolutional and inception CNNs, tag-based linear
//! regression, and joint audio+tag blends) → hit-score predictions ranked
//! and scored with recall@k, nDCG@k, Kendall's τ-b, and Spearman's ρ.
//!
//! Crate layout mirrors the pipeline: [`audio`] (feature extraction),
//! [`nn`] (differentiable graph engine), [`models`] (the six builders),
//! [`popularity`] (hit scores, sampling, splits), [`evaluation`] (ranking
//! metrics), [`tags`] (tag-vector plumbing), and [`harness`] (datasets,
//! caching, experiments, plot data).

pub mod audio;
pub mod evaluation;
pub mod harness;
pub mod models;
pub mod nn;
pub mod popularity;
pub mod tags;
