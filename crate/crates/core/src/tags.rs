//! Tag-vector plumbing: the 50-dim activation vectors an external
//! auto-tagger produces, their CSV interchange format, and a deterministic
//! stub tagger for tests and synthetic corpora.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{summarize_mean_std, MelSpectrogram};

/// Number of tag activations per song.
pub const TAG_DIM: usize = 50;

/// How many of the leading tags are treated as genre tags in the
/// genre-distribution analysis.
pub const GENRE_TAG_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("invalid tag vector: {0}")]
    Invalid(String),
    #[error("tag file error: {0}")]
    File(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 50 activation scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TagVector {
    values: Vec<f64>,
}

impl TagVector {
    /// Build from raw scores, clamping to [0, 1]. Returns whether any value
    /// needed clamping so callers can warn.
    pub fn from_scores(scores: Vec<f64>) -> Result<(Self, bool), TagError> {
        if scores.len() != TAG_DIM {
            return Err(TagError::Invalid(format!(
                "expected {} scores, got {}",
                TAG_DIM,
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(TagError::Invalid("non-finite activation".into()));
        }
        let clamped = scores.iter().any(|&v| !(0.0..=1.0).contains(&v));
        let values = scores.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok((TagVector { values }, clamped))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the strongest activation among `eligible`; ties go to the
    /// lowest index.
    pub fn argmax_among(&self, eligible: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &i in eligible {
            let v = *self.values.get(i)?;
            match best {
                Some((_, bv)) if v <= bv => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Default tag vocabulary for synthetic corpora: `tag00`..`tag49`, with the
/// first [`GENRE_TAG_COUNT`] designated as genre tags.
pub fn default_tag_names() -> Vec<String> {
    (0..TAG_DIM).map(|i| format!("tag{i:02}")).collect()
}

/// Read a tag-vector CSV (`song_id,t0,...,t49`). Out-of-range values are
/// clamped to [0, 1] with a warning.
pub fn read_tag_file(path: &Path) -> Result<BTreeMap<String, TagVector>, TagError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| TagError::File(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| TagError::File(e.to_string()))?;
        if headers.len() != TAG_DIM + 1 || headers.get(0) != Some("song_id") {
            return Err(TagError::File(format!(
                "expected header song_id,t0,...,t{}, got {} columns",
                TAG_DIM - 1,
                headers.len()
            )));
        }
    }
    let mut out = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TagError::File(e.to_string()))?;
        if record.len() != TAG_DIM + 1 {
            return Err(TagError::File(format!(
                "row {}: expected {} fields, got {}",
                line + 2,
                TAG_DIM + 1,
                record.len()
            )));
        }
        let song_id = record[0].to_string();
        let mut scores = Vec::with_capacity(TAG_DIM);
        for i in 0..TAG_DIM {
            let v: f64 = record[i + 1].parse().map_err(|_| {
                TagError::File(format!("row {}: bad float '{}'", line + 2, &record[i + 1]))
            })?;
            scores.push(v);
        }
        let (vector, clamped) = TagVector::from_scores(scores)?;
        if clamped {
            log::warn!("tag vector for '{song_id}' had values outside [0,1]; clamped");
        }
        if out.insert(song_id.clone(), vector).is_some() {
            return Err(TagError::File(format!("duplicate song_id '{song_id}'")));
        }
    }
    Ok(out)
}

/// Write tag vectors in the interchange format, rows sorted by song_id.
pub fn write_tag_file(path: &Path, tags: &BTreeMap<String, TagVector>) -> Result<(), TagError> {
    let mut out = Vec::new();
    write!(out, "song_id")?;
    for i in 0..TAG_DIM {
        write!(out, ",t{i}")?;
    }
    writeln!(out)?;
    for (id, v) in tags {
        write!(out, "{id}")?;
        for x in v.values() {
            write!(out, ",{x:.6}")?;
        }
        writeln!(out)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic stand-in for an external auto-tagger: a fixed seeded linear
/// projection of the spectrogram's mean+std summary, squashed through a
/// softmax. Real deployments plug in a tag file instead.
#[derive(Debug, Clone)]
pub struct StubTagger {
    projection: Vec<f64>, // TAG_DIM × input_dim, row-major
    input_dim: usize,
}

impl StubTagger {
    pub fn new(seed: u64, input_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..TAG_DIM * input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        StubTagger { projection, input_dim }
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn tag_features(&self, features: &[f64]) -> Result<TagVector, TagError> {
        if features.len() != self.input_dim {
            return Err(TagError::Invalid(format!(
                "tagger expects {} features, got {}",
                self.input_dim,
                features.len()
            )));
        }
        let mut logits = vec![0.0; TAG_DIM];
        for (t, logit) in logits.iter_mut().enumerate() {
            let row = &self.projection[t * self.input_dim..(t + 1) * self.input_dim];
            *logit = row.iter().zip(features).map(|(a, b)| a * b).sum();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let (v, _) = TagVector::from_scores(exps.into_iter().map(|e| e / sum).collect())?;
        Ok(v)
    }

    pub fn tag(&self, mel: &MelSpectrogram) -> Result<TagVector, TagError> {
        let summary = summarize_mean_std(mel)
            .map_err(|e| TagError::Invalid(format!("summary failed: {e}")))?;
        self.tag_features(&summary.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_scores_clamps_and_reports() {
        let mut raw = vec![0.5; TAG_DIM];
        raw[3] = 1.5;
        raw[7] = -0.2;
        let (v, clamped) = TagVector::from_scores(raw).unwrap();
        assert!(clamped);
        assert_eq!(v.values()[3], 1.0);
        assert_eq!(v.values()[7], 0.0);
    }

    #[test]
    fn wrong_dim_rejected() {
        assert!(TagVector::from_scores(vec![0.1; 49]).is_err());
    }

    #[test]
    fn argmax_tie_takes_lowest_index() {
        let mut raw = vec![0.0; TAG_DIM];
        raw[4] = 0.9;
        raw[2] = 0.9;
        let (v, _) = TagVector::from_scores(raw).unwrap();
        let all: Vec<usize> = (0..TAG_DIM).collect();
        assert_eq!(v.argmax_among(&all), Some(2));
        assert_eq!(v.argmax_among(&[4, 5]), Some(4));
    }

    #[test]
    fn tag_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.csv");
        let mut tags = BTreeMap::new();
        let (v, _) = TagVector::from_scores((0..TAG_DIM).map(|i| i as f64 / 49.0).collect()).unwrap();
        tags.insert("s01".to_string(), v);
        write_tag_file(&path, &tags).unwrap();
        let back = read_tag_file(&path).unwrap();
        assert_eq!(back.len(), 1);
        for (a, b) in back["s01"].values().iter().zip(tags["s01"].values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stub_tagger_is_deterministic_softmax() {
        let tagger = StubTagger::new(9, 8);
        let features = vec![0.3, -0.2, 1.0, 0.0, 0.5, -1.0, 0.1, 0.9];
        let a = tagger.tag_features(&features).unwrap();
        let b = tagger.tag_features(&features).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(a.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
