//! `hitsong` — batch CLI for the hit-song prediction pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation failure,
//! 3 training failed in every grid cell.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hitsong_core::harness::{
    build_feature_cache, emit_plots, evaluate_model, generate_synthetic, ingest_catalog,
    load_result, run_experiment, train_single, CellMeta, ExperimentConfig, HarnessError,
    PlantedModel, SyntheticSpec,
};
use hitsong_core::models::checkpoint::{load_checkpoint, save_checkpoint};
use hitsong_core::models::Method;

#[derive(Parser)]
#[command(
    name = "hitsong",
    version,
    about = "Audio-based hit-song prediction: features, models, ranking evaluation",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Experiment config file (flat key = value format).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override worker thread count (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a listening-log catalog CSV.
    Ingest {
        /// Catalog path (defaults to the config's catalog).
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Extract and cache log-mel spectrograms for every catalog song.
    CacheFeatures {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Generate a synthetic corpus (clips, catalog, tag vectors).
    Synth {
        #[arg(long, default_value_t = 100)]
        n_songs: usize,
        /// Planted score model: linear_band_energy | nonlinear_band_interaction.
        #[arg(long, default_value = "linear_band_energy")]
        planted: String,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 2.0)]
        clip_seconds: f64,
        #[arg(long, default_value = "synthetic")]
        subset_name: String,
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
    },
    /// Train one method on the first repetition's split and checkpoint it.
    Train {
        #[arg(long)]
        method: String,
        /// Subset to train on (defaults to the config's first subset).
        #[arg(long)]
        subset: Option<String>,
    },
    /// Evaluate a checkpointed model on its recorded test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full subset × method × repetition grid.
    Experiment,
    /// Emit plot-data CSV series (time bias, hit-score distributions,
    /// genre bars when results exist).
    Plots {
        /// Experiment output directory holding raw.json (for genre bars).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are succesful exits; everything else
            // is a usage error.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Map error classes onto the documented exit codes.
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(h) = err.downcast_ref::<HarnessError>() {
        return match h {
            HarnessError::Config(_) => 1,
            HarnessError::AllCellsFailed(_) => 3,
            _ => 2,
        };
    }
    2
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            return Err(HarnessError::Config(
                "this command needs --config <path>".into(),
            )
            .into())
        }
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { catalog } => {
            let path = match (catalog, &cli.global.config) {
                (Some(p), _) => p,
                (None, Some(_)) => load_config(&cli.global)?.catalog,
                (None, None) => {
                    return Err(HarnessError::Config("ingest needs --catalog or --config".into()).into())
                }
            };
            let report = ingest_catalog(&path)?;
            println!(
                "ingested {} songs ({} rejected rows, {} warnings)",
                report.songs.len(),
                report.rejected.len(),
                report.warnings.len()
            );
            for issue in report.rejected.iter().chain(&report.warnings) {
                println!("  line {}: {}", issue.line, issue.message);
            }
            let mut subsets: Vec<(&str, usize)> = Vec::new();
            for song in &report.songs {
                match subsets.iter_mut().find(|(name, _)| *name == song.subset) {
                    Some((_, n)) => *n += 1,
                    None => subsets.push((&song.subset, 1)),
                }
            }
            for (name, n) in subsets {
                println!("  subset {name}: {n} songs");
            }
            Ok(())
        }
        Command::CacheFeatures { catalog, audio_dir, cache_dir } => {
            let mut cfg = load_config(&cli.global)?;
            if let Some(p) = catalog {
                cfg.catalog = p;
            }
            if let Some(p) = audio_dir {
                cfg.audio_dir = p;
            }
            if let Some(p) = cache_dir {
                cfg.cache_dir = p;
            }
            let report = ingest_catalog(&cfg.catalog)?;
            let (manifest, stats) = build_feature_cache(
                &report.songs,
                &cfg.audio_dir,
                &cfg.cache_dir,
                &cfg.extraction,
                cfg.effective_jobs(),
            )?;
            println!(
                "cache: {} computed, {} reused, {} skipped ({} entries total)",
                stats.computed,
                stats.reused,
                stats.skipped,
                manifest.entries.len()
            );
            for skip in &manifest.skipped {
                println!("  skipped {}: {}", skip.song_id, skip.reason);
            }
            Ok(())
        }
        Command::Synth {
            n_songs,
            planted,
            noise_sigma,
            clip_seconds,
            subset_name,
            sample_rate,
        } => {
            let out = cli
                .global
                .out
                .clone()
                .ok_or_else(|| HarnessError::Config("synth needs --out <dir>".into()))?;
            let spec = SyntheticSpec {
                n_songs,
                seed: cli.global.seed.unwrap_or(42),
                planted_model: planted.parse::<PlantedModel>()?,
                noise_sigma,
                clip_seconds,
                sample_rate,
                subset_name,
            };
            let corpus = generate_synthetic(&spec, &out)?;
            println!(
                "generated {} songs under {} (catalog {}, tags {})",
                corpus.songs.len(),
                out.display(),
                corpus.catalog_path.display(),
                corpus.tags_path.display()
            );
            Ok(())
        }
        Command::Train { method, subset } => {
            let cfg = load_config(&cli.global)?;
            let method: Method = method.parse()?;
            let subset = subset
                .or_else(|| cfg.subsets.first().cloned())
                .ok_or_else(|| HarnessError::Config("no subset configured".into()))?;
            let run = train_single(&cfg, method, &subset)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let ckpt_path = cfg.out_dir.join(format!("{subset}-{method}.ckpt"));
            save_checkpoint(
                &ckpt_path,
                &run.model,
                Some(&cfg.train),
                cfg.seed,
                serde_json::to_value(&run.meta)?,
            )?;
            let history_path = cfg.out_dir.join(format!("{subset}-{method}-history.json"));
            std::fs::write(&history_path, serde_json::to_vec_pretty(&run.history)?)?;
            println!(
                "trained {method} on '{subset}': best val MSE {:.6} at epoch {} ({} epochs run)",
                run.history.best_val_mse,
                run.history.best_epoch,
                run.history.epochs.len()
            );
            println!("checkpoint: {}", ckpt_path.display());
            println!(
                "test metrics: recall@{} {:.4}, nDCG@{} {:.4}, Kendall {}, Spearman {}",
                run.report.k,
                run.report.recall_at_k,
                run.report.k,
                run.report.ndcg_at_k,
                run.report.kendall_tau,
                run.report.spearman_rho
            );
            Ok(())
        }
        Command::Evaluate { checkpoint } => {
            let cfg = load_config(&cli.global)?;
            let (model, header) = load_checkpoint(&checkpoint)?;
            let meta: CellMeta = serde_json::from_value(header.extra.clone()).map_err(|e| {
                HarnessError::Validation(format!(
                    "checkpoint lacks harness metadata (was it written by `train`?): {e}"
                ))
            })?;
            let report = evaluate_model(&cfg, &model, &meta)?;
            println!(
                "{} on '{}' over {} test songs:",
                model.spec.method, meta.subset, report.n
            );
            println!("  recall@{}   {:.4}", report.k, report.recall_at_k);
            println!("  nDCG@{}     {:.4}", report.k, report.ndcg_at_k);
            println!("  Kendall    {}", report.kendall_tau);
            println!("  Spearman   {}", report.spearman_rho);
            std::fs::create_dir_all(&cfg.out_dir)?;
            let out = cfg.out_dir.join("evaluation.json");
            std::fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            println!("full report: {}", out.display());
            Ok(())
        }
        Command::Experiment => {
            let cfg = load_config(&cli.global)?;
            let result = run_experiment(&cfg)?;
            println!("{}", hitsong_core::harness::experiment::table_csv(&result));
            let failed = result
                .cells
                .iter()
                .filter(|c| matches!(c.outcome, hitsong_core::harness::CellOutcome::Failed { .. }))
                .count();
            println!(
                "{} cells ({} failed); bundle written to {}",
                result.cells.len(),
                failed,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Plots { results, bins } => {
            let cfg = load_config(&cli.global)?;
            let report = ingest_catalog(&cfg.catalog)?;
            let result = match &results {
                Some(dir) => Some(load_result(dir)?),
                None => None,
            };
            let files = emit_plots(
                &report.songs,
                &cfg.subsets,
                cfg.top_k_sample,
                cfg.seed,
                bins,
                result.as_ref(),
                &cfg.out_dir,
            )?;
            println!("time bias series: {}", files.time_bias.display());
            println!("hit-score histograms: {}", files.hit_scores.display());
            if let Some(g) = files.genres {
                println!("genre bars: {}", g.display());
            }
            Ok(())
        }
    }
}
