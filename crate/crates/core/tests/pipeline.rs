//! End-to-end pipeline checks: synthetic corpus → feature cache →
//! experiment grid → result bundle.

use std::path::Path;

use hitsong_core::audio::ExtractionParams;
use hitsong_core::harness::{
    generate_synthetic, run_experiment, CellOutcome, ExperimentConfig, PlantedModel,
    SyntheticSpec,
};
use hitsong_core::models::Method;
use hitsong_core::nn::train::TrainConfig;

fn tiny_corpus(dir: &Path, seed: u64) -> hitsong_core::harness::SyntheticCorpus {
    let spec = SyntheticSpec {
        n_songs: 40,
        seed,
        planted_model: PlantedModel::LinearBandEnergy,
        noise_sigma: 0.0,
        clip_seconds: 0.8,
        sample_rate: 22050,
        subset_name: "synthetic".into(),
    };
    generate_synthetic(&spec, dir).unwrap()
}

fn tiny_config(dir: &Path, corpus: &hitsong_core::harness::SyntheticCorpus) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        methods: vec![Method::M1, Method::M4, Method::M5],
        subsets: vec!["synthetic".into()],
        repetitions: 2,
        seed: 11,
        catalog: corpus.catalog_path.clone(),
        audio_dir: corpus.audio_dir.clone(),
        cache_dir: dir.join("cache"),
        tags: Some(corpus.tags_path.clone()),
        out_dir: dir.join("results"),
        train: TrainConfig {
            learning_rate: 0.05,
            lr_decay: 0.95,
            epochs: 6,
            batch_size: 8,
            dropout_rate: 0.1,
            seed: 0,
            early_stop_patience: 6,
        },
        k: 4,
        jobs: 2,
        extraction: ExtractionParams {
            segment_seconds: 0.8,
            ..ExtractionParams::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.feature_maps.early = 4;
    cfg.feature_maps.late_hidden = vec![4, 4];
    cfg
}

#[test]
fn tiny_grid_runs_and_emits_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 3);
    let cfg = tiny_config(dir.path(), &corpus);
    let result = run_experiment(&cfg).unwrap();

    // 3 methods × 2 repetitions, all successful.
    assert_eq!(result.cells.len(), 6);
    for cell in &result.cells {
        match &cell.outcome {
            CellOutcome::Success { recall_at_k, .. } => {
                assert!((0.0..=1.0).contains(recall_at_k));
            }
            CellOutcome::Failed { error } => panic!("cell failed: {error}"),
        }
    }
    // m5 carries a learned blend weight.
    let m5 = result
        .cells
        .iter()
        .find(|c| c.method == Method::M5)
        .unwrap();
    match &m5.outcome {
        CellOutcome::Success { w, .. } => assert!(w.is_some()),
        _ => unreachable!(),
    }
    assert_eq!(result.table.len(), 3);
    assert!(cfg.out_dir.join("table.csv").is_file());
    assert!(cfg.out_dir.join("raw.json").is_file());
    assert!(cfg.out_dir.join("genre_distribution.csv").is_file());

    // Genre tables cover each method plus the ground truth, counts sum to m.
    assert_eq!(result.genre.len(), 4);
    for g in &result.genre {
        assert_eq!(g.counts.values().sum::<usize>(), g.m);
    }
}

#[test]
fn identical_config_and_seed_give_byte_identical_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 3);

    let mut cfg_a = tiny_config(dir.path(), &corpus);
    cfg_a.out_dir = dir.path().join("run_a");
    cfg_a.cache_dir = dir.path().join("cache_a");
    cfg_a.jobs = 2;
    let mut cfg_b = tiny_config(dir.path(), &corpus);
    cfg_b.out_dir = dir.path().join("run_b");
    cfg_b.cache_dir = dir.path().join("cache_b");
    cfg_b.jobs = 1; // thread count must not affect output bytes

    run_experiment(&cfg_a).unwrap();
    run_experiment(&cfg_b).unwrap();

    for file in ["table.csv", "raw.json", "genre_distribution.csv"] {
        let a = std::fs::read(cfg_a.out_dir.join(file)).unwrap();
        let b = std::fs::read(cfg_b.out_dir.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}
