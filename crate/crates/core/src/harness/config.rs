//! Experiment configuration: a flat `key = value` text format plus
//! validation. Unknown keys are rejected so typos surface instead of being
//! silently ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::audio::ExtractionParams;
use crate::models::{FeatureMaps, Method};
use crate::nn::train::TrainConfig;

use super::HarnessError;

/// Everything one experiment run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub subsets: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub catalog: PathBuf,
    pub audio_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub tags: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    /// Evaluation cutoff (100 in the reference protocol).
    pub k: usize,
    /// Worker threads for caching and grid cells; 0 = available parallelism.
    pub jobs: usize,
    pub extraction: ExtractionParams,
    pub feature_maps: FeatureMaps,
    pub w_init: f64,
    /// When set, per subset only the top-K songs by playcount enter the
    /// experiment (10K in the reference protocol).
    pub top_k_sample: Option<usize>,
    /// Ranking depth of the genre-distribution analysis (50 at reference).
    pub genre_top_m: usize,
    /// Train joint branches from scratch instead of from the repetition's
    /// already-trained m2/m3/m4 models.
    pub cold_start_joint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            subsets: vec![],
            repetitions: 10,
            seed: 42,
            catalog: PathBuf::new(),
            audio_dir: PathBuf::new(),
            cache_dir: PathBuf::new(),
            tags: None,
            out_dir: PathBuf::from("results"),
            train: TrainConfig::default(),
            k: 100,
            jobs: 0,
            extraction: ExtractionParams::default(),
            feature_maps: FeatureMaps::default(),
            w_init: 0.5,
            top_k_sample: None,
            genre_top_m: 50,
            cold_start_joint: false,
        }
    }
}

impl ExperimentConfig {
    /// Parse the flat key-value format. Later assignments win, `#` starts a
    /// comment, blank lines are skipped.
    pub fn from_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            seen.insert(key.to_string());
            cfg.assign(key, value)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    fn assign(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for {key}"))
        }
        match key {
            "methods" => {
                let mut methods = Vec::new();
                for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                    methods.push(part.parse::<Method>().map_err(|e| e.to_string())?);
                }
                methods.sort();
                methods.dedup();
                if methods.is_empty() {
                    return Err("methods list is empty".into());
                }
                self.methods = methods;
            }
            "subsets" => {
                self.subsets = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            "repetitions" => self.repetitions = num(value, key)?,
            "seed" => self.seed = num(value, key)?,
            "catalog" => self.catalog = PathBuf::from(value),
            "audio_dir" => self.audio_dir = PathBuf::from(value),
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "tags" => {
                self.tags = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            "out" => self.out_dir = PathBuf::from(value),
            "k" => self.k = num(value, key)?,
            "jobs" => self.jobs = num(value, key)?,
            "learning_rate" => self.train.learning_rate = num(value, key)?,
            "lr_decay" => self.train.lr_decay = num(value, key)?,
            "epochs" => self.train.epochs = num(value, key)?,
            "batch_size" => self.train.batch_size = num(value, key)?,
            "dropout_rate" => self.train.dropout_rate = num(value, key)?,
            "patience" => self.train.early_stop_patience = num(value, key)?,
            "window_size" => self.extraction.window_size = num(value, key)?,
            "hop" => self.extraction.hop = num(value, key)?,
            "n_mels" => self.extraction.n_mels = num(value, key)?,
            "sample_rate" => self.extraction.sample_rate = num(value, key)?,
            "segment_seconds" => self.extraction.segment_seconds = num(value, key)?,
            "log_offset" => self.extraction.log_offset = num(value, key)?,
            "early_maps" => self.feature_maps.early = num(value, key)?,
            "late_maps" => {
                let mut maps = Vec::new();
                for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                    maps.push(num::<usize>(part.trim(), key)?);
                }
                if maps.is_empty() {
                    return Err("late_maps list is empty".into());
                }
                self.feature_maps.late_hidden = maps;
            }
            "w_init" => self.w_init = num(value, key)?,
            "top_k_sample" => {
                self.top_k_sample = if value.is_empty() { None } else { Some(num(value, key)?) }
            }
            "genre_top_m" => self.genre_top_m = num(value, key)?,
            "cold_start_joint" => {
                self.cold_start_joint = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    other => return Err(format!("bad boolean '{other}' for {key}")),
                }
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Do the methods in play need tag vectors?
    pub fn needs_tags(&self) -> bool {
        self.methods
            .iter()
            .any(|m| m.required_inputs().contains(&crate::models::INPUT_TAGS))
    }

    /// Structural checks plus existence of referenced input paths.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("no methods selected".into()));
        }
        if self.subsets.is_empty() {
            return Err(HarnessError::Config("no subsets selected".into()));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(HarnessError::Config("k must be at least 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.extraction.validate().map_err(HarnessError::Audio)?;
        if !self.catalog.is_file() {
            return Err(HarnessError::Config(format!(
                "catalog file {} does not exist",
                self.catalog.display()
            )));
        }
        if !self.audio_dir.is_dir() {
            return Err(HarnessError::Config(format!(
                "audio directory {} does not exist",
                self.audio_dir.display()
            )));
        }
        if self.needs_tags() {
            match &self.tags {
                Some(path) if path.is_file() => {}
                Some(path) => {
                    return Err(HarnessError::Config(format!(
                        "tag file {} does not exist",
                        path.display()
                    )))
                }
                None => {
                    return Err(HarnessError::Config(
                        "selected methods need tag vectors but no tag file is configured".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn effective_jobs(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}
