//! The subset × method × repetition experiment grid.
//!
//! Within a repetition every method sees the same split (paired
//! comparisons); weight initialization, shuffling, and dropout are
//! re-seeded per cell. Inputs and targets are z-normalized with
//! training-split statistics (predictions are de-normalized before
//! evaluation; the rank metrics are unaffected by the monotone transform,
//! optimization is just better conditioned). Joint cells reuse the same
//! repetition's trained m2/m3/m4 models as pre-trained branches unless
//! `cold_start_joint` asks for fresh ones.
//!
//! Grid cells run in a worker pool; each cell owns its model exclusively
//! and failures are isolated per cell. Everything written to the output
//! directory is a deterministic function of (config, seed, inputs).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::audio::{cache as melcache, summarize_mean_std, MelSpectrogram};
use crate::evaluation::{
    average_reports, evaluate_ranking, genre_distribution, MeanReport, MetricValue, RankingReport,
    ScoredSong,
};
use crate::models::{
    build, build_joint, HitModel, Method, ModelSpec, INPUT_MEL, INPUT_SUMMARY, INPUT_TAGS,
};
use crate::nn::train::{train, DataSet, Example, TrainConfig, TrainHistory};
use crate::nn::{Batch, Mode, Tensor};
use crate::popularity::{sample_top_k, split_dataset, DatasetSplit, Song};
use crate::tags::{default_tag_names, read_tag_file, GENRE_TAG_COUNT};

use super::cache::build_feature_cache;
use super::config::ExperimentConfig;
use super::ingest::ingest_catalog;
use super::{derive_seed, HarnessError};

/// Per-dimension z-normalization fitted on training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit over rows of equal dimension.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Standardizer
    where
        I: Iterator<Item = &'a [f64]> + Clone,
    {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(1e-9))
            .collect();
        Standardizer { mean, std }
    }

    /// Fit per mel bin over all frames of all given spectrograms.
    pub fn fit_mel<'a, I>(mels: I, n_mels: usize) -> Standardizer
    where
        I: Iterator<Item = &'a MelSpectrogram> + Clone,
    {
        let mut mean = vec![0.0; n_mels];
        let mut count = vec![0usize; n_mels];
        for mel in mels.clone() {
            for bin in 0..n_mels {
                let row = mel.row(bin);
                mean[bin] += row.iter().sum::<f64>();
                count[bin] += row.len();
            }
        }
        for (m, c) in mean.iter_mut().zip(&count) {
            *m /= (*c).max(1) as f64;
        }
        let mut var = vec![0.0; n_mels];
        for mel in mels {
            for bin in 0..n_mels {
                let m = mean[bin];
                var[bin] += mel.row(bin).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        let std = var
            .iter()
            .zip(&count)
            .map(|(s, c)| (s / (*c).max(1) as f64).sqrt().max(1e-9))
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, values: &mut [f64]) {
        for (v, (m, s)) in values.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = (*v - m) / s;
        }
    }

    /// Standardize a spectrogram per bin, broadcasting over frames.
    pub fn apply_mel(&self, mel: &MelSpectrogram) -> Tensor {
        let (n_mels, n_frames) = (mel.n_mels(), mel.n_frames());
        let mut data = Vec::with_capacity(n_mels * n_frames);
        for bin in 0..n_mels {
            let m = self.mean[bin];
            let s = self.std[bin];
            data.extend(mel.row(bin).iter().map(|v| (v - m) / s));
        }
        Tensor::from_vec(&[1, n_mels, n_frames], data).expect("shape matches data")
    }
}

/// Scalar z-normalization of the regression target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> TargetScaler {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        TargetScaler {
            mean,
            std: var.sqrt().max(1e-9),
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Raw per-song features for one subset, loaded once and shared across
/// repetitions.
pub struct FeatureStore {
    pub ids: Vec<String>,
    pub mels: BTreeMap<String, MelSpectrogram>,
    pub summaries: BTreeMap<String, Vec<f64>>,
    pub tags: BTreeMap<String, Vec<f64>>,
    pub hit_scores: BTreeMap<String, f64>,
    pub n_frames: usize,
}

/// Fitted scalers for one (subset, repetition) split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepScalers {
    pub target: TargetScaler,
    pub summary: Standardizer,
    pub mel: Standardizer,
    pub tags: Option<Standardizer>,
}

impl RepScalers {
    pub fn fit(store: &FeatureStore, train_ids: &[String], n_mels: usize) -> RepScalers {
        let train_scores: Vec<f64> = train_ids.iter().map(|id| store.hit_scores[id]).collect();
        let summary_dim = store.summaries[&train_ids[0]].len();
        let summary = Standardizer::fit(
            train_ids.iter().map(|id| store.summaries[id].as_slice()),
            summary_dim,
        );
        let mel = Standardizer::fit_mel(train_ids.iter().map(|id| &store.mels[id]), n_mels);
        let tags = if store.tags.is_empty() {
            None
        } else {
            Some(Standardizer::fit(
                train_ids.iter().map(|id| store.tags[id].as_slice()),
                crate::tags::TAG_DIM,
            ))
        };
        RepScalers {
            target: TargetScaler::fit(&train_scores),
            summary,
            mel,
            tags,
        }
    }

    /// Standardized named input tensors for one song, restricted to `required`.
    pub fn example_inputs(
        &self,
        store: &FeatureStore,
        song_id: &str,
        required: &[&'static str],
    ) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(required.len());
        for &name in required {
            let tensor = match name {
                INPUT_SUMMARY => {
                    let mut v = store.summaries[song_id].clone();
                    self.summary.apply(&mut v);
                    Tensor::vector(&v)
                }
                INPUT_MEL => self.mel.apply_mel(&store.mels[song_id]),
                INPUT_TAGS => {
                    let mut v = store.tags[song_id].clone();
                    if let Some(s) = &self.tags {
                        s.apply(&mut v);
                    }
                    Tensor::vector(&v)
                }
                other => unreachable!("unknown input kind {other}"),
            };
            out.push((name.to_string(), tensor));
        }
        out
    }

    pub fn dataset(&self, store: &FeatureStore, ids: &[String], method: Method) -> DataSet {
        let required = method.required_inputs();
        let examples = ids
            .iter()
            .map(|id| Example {
                inputs: self.example_inputs(store, id, required),
                target: self.target.normalize(store.hit_scores[id]),
            })
            .collect();
        DataSet::new(examples)
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Success {
        recall_at_k: f64,
        ndcg_at_k: f64,
        kendall_tau: MetricValue,
        spearman_rho: MetricValue,
        /// Learned blend weight, joint methods only.
        #[serde(skip_serializing_if = "Option::is_none")]
        w: Option<f64>,
        best_val_mse: f64,
        best_epoch: usize,
        epochs_run: usize,
        /// Per-song scores, kept for the first repetition only.
        #[serde(skip_serializing_if = "Option::is_none")]
        per_song: Option<Vec<ScoredSong>>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub subset: String,
    pub method: Method,
    pub repetition: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub subset: String,
    pub method: Method,
    pub mean: MeanReport,
    /// Mean learned w over successful repetitions, joint methods only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_w: Option<f64>,
    pub failed_repetitions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenreTable {
    pub subset: String,
    /// Method name or "ground_truth".
    pub source: String,
    pub m: usize,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub k: usize,
    pub repetitions: usize,
    pub cells: Vec<CellResult>,
    pub table: Vec<TableRow>,
    pub genre: Vec<GenreTable>,
}

struct TrainedCell {
    model: HitModel,
    history: TrainHistory,
    report: RankingReport,
}

fn predict_dataset(model: &HitModel, data: &DataSet) -> Result<Vec<f64>, HarnessError> {
    let (batch, _): (Batch, Vec<f64>) = data.full_batch()?;
    let pass = model.graph.forward(&batch, Mode::Eval, None)?;
    Ok(pass.predictions().to_vec())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    store: &FeatureStore,
    scalers: &RepScalers,
    split: &DatasetSplit,
    subset: &str,
    method: Method,
    rep: usize,
    base_models: &BTreeMap<Method, HitModel>,
) -> Result<TrainedCell, HarnessError> {
    let init_seed = derive_seed(cfg.seed, &format!("{subset}/rep{rep}/{method}/init"));
    let train_seed = derive_seed(cfg.seed, &format!("{subset}/rep{rep}/{method}/train"));
    let spec = ModelSpec {
        method,
        feature_maps: cfg.feature_maps.clone(),
        w_init: cfg.w_init,
        dropout_rate: cfg.train.dropout_rate,
        n_mels: cfg.extraction.n_mels,
        n_frames: store.n_frames,
    };

    let model = if method.is_joint() {
        let audio_method = if method == Method::M5 { Method::M2 } else { Method::M3 };
        let branch = |m: Method, tag: &str| -> Result<HitModel, HarnessError> {
            if !cfg.cold_start_joint {
                if let Some(trained) = base_models.get(&m) {
                    return Ok(trained.clone());
                }
            }
            let seed = derive_seed(cfg.seed, &format!("{subset}/rep{rep}/{method}/{tag}"));
            let fresh = build(&ModelSpec { method: m, ..spec.clone() }, seed)?;
            let (graph, _) = train(
                fresh.graph,
                &scalers.dataset(store, &split.train, m),
                &scalers.dataset(store, &split.val, m),
                &TrainConfig { seed: seed ^ 1, ..cfg.train.clone() },
            )?;
            Ok(HitModel { spec: ModelSpec { method: m, ..spec.clone() }, graph })
        };
        let audio = branch(audio_method, "audio_branch")?;
        let tag_lr = branch(Method::M4, "tag_branch")?;
        let mut joint = build_joint(&audio, &tag_lr, cfg.w_init)?;
        joint.spec = spec.clone();
        joint
    } else {
        build(&spec, init_seed)?
    };

    let train_set = scalers.dataset(store, &split.train, method);
    let val_set = scalers.dataset(store, &split.val, method);
    let (graph, history) = train(
        model.graph,
        &train_set,
        &val_set,
        &TrainConfig { seed: train_seed, ..cfg.train.clone() },
    )?;
    let model = HitModel { spec, graph };

    let test_set = scalers.dataset(store, &split.test, method);
    let preds = predict_dataset(&model, &test_set)?;
    let scored: Vec<ScoredSong> = split
        .test
        .iter()
        .zip(&preds)
        .map(|(id, p)| ScoredSong {
            song_id: id.clone(),
            true_score: store.hit_scores[id],
            pred_score: scalers.target.denormalize(*p),
        })
        .collect();
    let report = evaluate_ranking(&scored, cfg.k)?;
    Ok(TrainedCell { model, history, report })
}

/// One (subset, repetition) unit: all methods in canonical order over a
/// shared split.
fn run_unit(
    cfg: &ExperimentConfig,
    subset: &str,
    store: &FeatureStore,
    rep: usize,
) -> Vec<CellResult> {
    let split_seed = derive_seed(cfg.seed, &format!("{subset}/rep{rep}/split"));
    let subset_songs: Vec<Song> = store
        .ids
        .iter()
        .map(|id| Song::new(id.clone(), subset, 0, 0, 0))
        .collect();
    let split = match split_dataset(&subset_songs, (8, 1, 1), split_seed) {
        Ok(s) => s,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&method| CellResult {
                    subset: subset.to_string(),
                    method,
                    repetition: rep,
                    split_seed,
                    init_seed: 0,
                    outcome: CellOutcome::Failed { error: e.to_string() },
                })
                .collect()
        }
    };
    let scalers = RepScalers::fit(store, &split.train, cfg.extraction.n_mels);

    let mut base_models: BTreeMap<Method, HitModel> = BTreeMap::new();
    let mut results = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let init_seed = derive_seed(cfg.seed, &format!("{subset}/rep{rep}/{method}/init"));
        let outcome = match run_cell(cfg, store, &scalers, &split, subset, method, rep, &base_models)
        {
            Ok(cell) => {
                let per_song = (rep == 0).then(|| cell.report.per_song.clone());
                let outcome = CellOutcome::Success {
                    recall_at_k: cell.report.recall_at_k,
                    ndcg_at_k: cell.report.ndcg_at_k,
                    kendall_tau: cell.report.kendall_tau,
                    spearman_rho: cell.report.spearman_rho,
                    w: cell.model.joint_weight(),
                    best_val_mse: cell.history.best_val_mse,
                    best_epoch: cell.history.best_epoch,
                    epochs_run: cell.history.epochs.len(),
                    per_song,
                };
                if matches!(method, Method::M2 | Method::M3 | Method::M4) {
                    base_models.insert(method, cell.model);
                }
                outcome
            }
            Err(e) => {
                log::warn!("cell {subset}/{method}/rep{rep} failed: {e}");
                CellOutcome::Failed { error: e.to_string() }
            }
        };
        results.push(CellResult {
            subset: subset.to_string(),
            method,
            repetition: rep,
            split_seed,
            init_seed,
            outcome,
        });
    }
    results
}

fn load_subset_store(
    cfg: &ExperimentConfig,
    subset: &str,
    songs: &[Song],
    tags: &BTreeMap<String, crate::tags::TagVector>,
) -> Result<FeatureStore, HarnessError> {
    let expected_frames = cfg.extraction.segment_frames();
    let mut ids: Vec<String> = songs.iter().map(|s| s.song_id.clone()).collect();
    ids.sort();
    let mut mels = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    let mut tag_map = BTreeMap::new();
    let mut hit_scores = BTreeMap::new();
    for song in songs {
        let mel = melcache::read_entry(&cfg.cache_dir, &song.song_id).map_err(|e| {
            HarnessError::Validation(format!(
                "no cached features for '{}' in subset '{subset}': {e}",
                song.song_id
            ))
        })?;
        if mel.n_frames() != expected_frames {
            return Err(HarnessError::Validation(format!(
                "'{}' cached with {} frames, pipeline expects {}",
                song.song_id,
                mel.n_frames(),
                expected_frames
            )));
        }
        let summary = summarize_mean_std(&mel)?;
        if cfg.needs_tags() {
            let v = tags.get(&song.song_id).ok_or_else(|| {
                HarnessError::Validation(format!("no tag vector for song '{}'", song.song_id))
            })?;
            tag_map.insert(song.song_id.clone(), v.values().to_vec());
        }
        mels.insert(song.song_id.clone(), mel);
        summaries.insert(song.song_id.clone(), summary.values);
        hit_scores.insert(song.song_id.clone(), song.hit_score);
    }
    Ok(FeatureStore {
        ids,
        mels,
        summaries,
        tags: tag_map,
        hit_scores,
        n_frames: expected_frames,
    })
}

/// Run the full grid and write the result bundle (`table.csv`, `raw.json`,
/// `genre_distribution.csv`) under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let report = ingest_catalog(&cfg.catalog)?;
    let mut catalog = report.songs;
    catalog.sort_by(|a, b| a.song_id.cmp(&b.song_id));

    let tags = match &cfg.tags {
        Some(path) if cfg.needs_tags() => read_tag_file(path)?,
        _ => BTreeMap::new(),
    };

    // Per-subset song lists, optionally top-K sampled by playcount.
    let mut subset_songs: Vec<(String, Vec<Song>)> = Vec::new();
    for subset in &cfg.subsets {
        let mut songs: Vec<Song> = catalog.iter().filter(|s| &s.subset == subset).cloned().collect();
        if songs.is_empty() {
            return Err(HarnessError::Validation(format!(
                "subset '{subset}' has no songs in the catalog"
            )));
        }
        if let Some(k) = cfg.top_k_sample {
            songs = sample_top_k(&songs, k)?;
        }
        let n_test = (songs.len() / 10).max(1);
        if cfg.k > n_test {
            return Err(HarnessError::Validation(format!(
                "k={} exceeds the {}-song test split of subset '{subset}'",
                cfg.k, n_test
            )));
        }
        subset_songs.push((subset.clone(), songs));
    }

    // Feature cache for every song in play.
    let needed: Vec<Song> = subset_songs.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    build_feature_cache(
        &needed,
        &cfg.audio_dir,
        &cfg.cache_dir,
        &cfg.extraction,
        cfg.effective_jobs(),
    )?;

    let mut stores: Vec<(String, FeatureStore)> = Vec::new();
    for (subset, songs) in &subset_songs {
        stores.push((subset.clone(), load_subset_store(cfg, subset, songs, &tags)?));
    }

    // Units (subset × repetition) through a worker pool; indexes keep the
    // output order independent of scheduling.
    let units: Vec<(usize, usize)> = (0..stores.len())
        .flat_map(|s| (0..cfg.repetitions).map(move |r| (s, r)))
        .collect();
    let results: Mutex<Vec<Option<Vec<CellResult>>>> = Mutex::new(vec![None; units.len()]);
    let next = AtomicUsize::new(0);
    let workers = cfg.effective_jobs().min(units.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let u = next.fetch_add(1, Ordering::Relaxed);
                if u >= units.len() {
                    break;
                }
                let (s_idx, rep) = units[u];
                let (subset, store) = &stores[s_idx];
                let cells = run_unit(cfg, subset, store, rep);
                results.lock().unwrap()[u] = Some(cells);
            });
        }
    });
    let mut cells: Vec<CellResult> = Vec::new();
    for unit in results.into_inner().unwrap() {
        cells.extend(unit.expect("every unit ran"));
    }
    cells.sort_by(|a, b| {
        let sa = cfg.subsets.iter().position(|s| s == &a.subset).unwrap();
        let sb = cfg.subsets.iter().position(|s| s == &b.subset).unwrap();
        sa.cmp(&sb)
            .then(a.method.cmp(&b.method))
            .then(a.repetition.cmp(&b.repetition))
    });

    if cells.iter().all(|c| matches!(c.outcome, CellOutcome::Failed { .. })) {
        return Err(HarnessError::AllCellsFailed(cells.len()));
    }

    // Aggregate the Table-1-shaped grid.
    let mut table = Vec::new();
    for subset in &cfg.subsets {
        for &method in &cfg.methods {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| &c.subset == subset && c.method == method)
                .collect();
            let mut reports = Vec::new();
            let mut ws = Vec::new();
            let mut failed = 0usize;
            for c in &group {
                match &c.outcome {
                    CellOutcome::Success {
                        recall_at_k,
                        ndcg_at_k,
                        kendall_tau,
                        spearman_rho,
                        w,
                        ..
                    } => {
                        reports.push(RankingReport {
                            recall_at_k: *recall_at_k,
                            ndcg_at_k: *ndcg_at_k,
                            kendall_tau: *kendall_tau,
                            spearman_rho: *spearman_rho,
                            k: cfg.k,
                            n: 0,
                            per_song: vec![],
                        });
                        if let Some(w) = w {
                            ws.push(*w);
                        }
                    }
                    CellOutcome::Failed { .. } => failed += 1,
                }
            }
            if reports.is_empty() {
                continue;
            }
            let mean = average_reports(&reports)?;
            let mean_w =
                (!ws.is_empty()).then(|| ws.iter().sum::<f64>() / ws.len() as f64);
            table.push(TableRow {
                subset: subset.clone(),
                method,
                mean,
                mean_w,
                failed_repetitions: failed,
            });
        }
    }

    // Genre distributions from the first repetition's rankings (needs tags).
    let mut genre = Vec::new();
    if !tags.is_empty() {
        let names = default_tag_names();
        let eligible: Vec<usize> = (0..GENRE_TAG_COUNT).collect();
        for subset in &cfg.subsets {
            let mut emitted_truth = false;
            for cell in cells.iter().filter(|c| {
                &c.subset == subset && c.repetition == 0
            }) {
                let CellOutcome::Success { per_song: Some(per_song), .. } = &cell.outcome else {
                    continue;
                };
                let m = cfg.genre_top_m.min(per_song.len());
                let mut by_pred = per_song.clone();
                by_pred.sort_by(|a, b| {
                    b.pred_score
                        .partial_cmp(&a.pred_score)
                        .unwrap()
                        .then(a.song_id.cmp(&b.song_id))
                });
                let ranking: Vec<String> = by_pred.into_iter().map(|s| s.song_id).collect();
                genre.push(GenreTable {
                    subset: subset.clone(),
                    source: cell.method.to_string(),
                    m,
                    counts: genre_distribution(&ranking, &tags, &names, &eligible, m)?.counts,
                });
                if !emitted_truth {
                    let mut by_true = per_song.clone();
                    by_true.sort_by(|a, b| {
                        b.true_score
                            .partial_cmp(&a.true_score)
                            .unwrap()
                            .then(a.song_id.cmp(&b.song_id))
                    });
                    let ranking: Vec<String> = by_true.into_iter().map(|s| s.song_id).collect();
                    genre.push(GenreTable {
                        subset: subset.clone(),
                        source: "ground_truth".to_string(),
                        m,
                        counts: genre_distribution(&ranking, &tags, &names, &eligible, m)?.counts,
                    });
                    emitted_truth = true;
                }
            }
        }
    }

    let result = ExperimentResult {
        seed: cfg.seed,
        k: cfg.k,
        repetitions: cfg.repetitions,
        cells,
        table,
        genre,
    };
    write_bundle(cfg, &result)?;
    Ok(result)
}

fn write_bundle(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<(), HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    melcache::write_atomic(
        &cfg.out_dir.join("raw.json"),
        &serde_json::to_vec_pretty(result)?,
    )?;
    melcache::write_atomic(&cfg.out_dir.join("table.csv"), table_csv(result).as_bytes())?;
    melcache::write_atomic(
        &cfg.out_dir.join("genre_distribution.csv"),
        genre_csv(result).as_bytes(),
    )?;
    Ok(())
}

fn fmt_metric(v: &MetricValue) -> String {
    match v {
        MetricValue::Value(x) => format!("{x:.4}"),
        MetricValue::Undefined => "undefined".to_string(),
    }
}

/// The Table-1-shaped grid: one row per (subset, method).
pub fn table_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("subset,method,recall,ndcg,kendall,spearman,mean_w,failed\n");
    for row in &result.table {
        let w = row.mean_w.map(|w| format!("{w:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{},{},{},{}\n",
            row.subset,
            row.method,
            row.mean.recall_at_k,
            row.mean.ndcg_at_k,
            fmt_metric(&row.mean.kendall_tau.mean),
            fmt_metric(&row.mean.spearman_rho.mean),
            w,
            row.failed_repetitions
        ));
    }
    out
}

pub fn genre_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("subset,source,m,tag,count\n");
    for table in &result.genre {
        for (tag, count) in &table.counts {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                table.subset, table.source, table.m, tag, count
            ));
        }
    }
    out
}

/// Load a previously written result bundle.
pub fn load_result(dir: &Path) -> Result<ExperimentResult, HarnessError> {
    let bytes = std::fs::read(dir.join("raw.json"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Checkpoint metadata the harness stores next to the model parameters so a
/// later `evaluate` reproduces the exact split and normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMeta {
    pub subset: String,
    pub split_seed: u64,
    pub scalers: RepScalers,
}

/// A single trained model with everything needed to evaluate or persist it.
pub struct SingleRun {
    pub model: HitModel,
    pub history: TrainHistory,
    pub report: RankingReport,
    pub meta: CellMeta,
}

/// Prepare the (subset → songs → features) context shared by the single-model
/// verbs.
fn load_single_context(
    cfg: &ExperimentConfig,
    subset: &str,
) -> Result<FeatureStore, HarnessError> {
    let report = ingest_catalog(&cfg.catalog)?;
    let mut songs: Vec<Song> = report
        .songs
        .into_iter()
        .filter(|s| s.subset == subset)
        .collect();
    if songs.is_empty() {
        return Err(HarnessError::Validation(format!(
            "subset '{subset}' has no songs in the catalog"
        )));
    }
    songs.sort_by(|a, b| a.song_id.cmp(&b.song_id));
    if let Some(k) = cfg.top_k_sample {
        songs = sample_top_k(&songs, k)?;
    }
    build_feature_cache(
        &songs,
        &cfg.audio_dir,
        &cfg.cache_dir,
        &cfg.extraction,
        cfg.effective_jobs(),
    )?;
    let tags = match &cfg.tags {
        Some(path) if cfg.needs_tags() => read_tag_file(path)?,
        _ => BTreeMap::new(),
    };
    load_subset_store(cfg, subset, &songs, &tags)
}

/// Train one model on the first repetition's split of `subset`.
pub fn train_single(
    cfg: &ExperimentConfig,
    method: Method,
    subset: &str,
) -> Result<SingleRun, HarnessError> {
    cfg.validate()?;
    let store = load_single_context(cfg, subset)?;
    let split_seed = derive_seed(cfg.seed, &format!("{subset}/rep0/split"));
    let subset_songs: Vec<Song> = store
        .ids
        .iter()
        .map(|id| Song::new(id.clone(), subset, 0, 0, 0))
        .collect();
    let split = split_dataset(&subset_songs, (8, 1, 1), split_seed)?;
    let scalers = RepScalers::fit(&store, &split.train, cfg.extraction.n_mels);
    let cell = run_cell(cfg, &store, &scalers, &split, subset, method, 0, &BTreeMap::new())?;
    Ok(SingleRun {
        model: cell.model,
        history: cell.history,
        report: cell.report,
        meta: CellMeta {
            subset: subset.to_string(),
            split_seed,
            scalers,
        },
    })
}

/// Evaluate a checkpointed model on the test split recorded in its metadata,
/// against the catalog and cache named in `cfg`.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &HitModel,
    meta: &CellMeta,
) -> Result<RankingReport, HarnessError> {
    let store = load_single_context(cfg, &meta.subset)?;
    let subset_songs: Vec<Song> = store
        .ids
        .iter()
        .map(|id| Song::new(id.clone(), &meta.subset, 0, 0, 0))
        .collect();
    let split = split_dataset(&subset_songs, (8, 1, 1), meta.split_seed)?;
    let test_set = meta.scalers.dataset(&store, &split.test, model.method());
    let preds = predict_dataset(model, &test_set)?;
    let scored: Vec<ScoredSong> = split
        .test
        .iter()
        .zip(&preds)
        .map(|(id, p)| ScoredSong {
            song_id: id.clone(),
            true_score: store.hit_scores[id],
            pred_score: meta.scalers.target.denormalize(*p),
        })
        .collect();
    Ok(evaluate_ranking(&scored, cfg.k)?)
}
