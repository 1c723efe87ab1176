//! Synthetic corpus generation: audio clips whose octave-band energy
//! profiles carry a planted hit-score signal, plus the matching catalog
//! and tag-vector files. Everything derives from the spec seed, so two
//! runs with the same spec produce byte-identical outputs.
//!
//! Each clip is a sum over 8 octave bands of one center tone plus several
//! random-frequency, random-phase sinusoids; the summed squared amplitude
//! in band `b` is exactly proportional to the song's energy profile
//! `e_b ∈ [0.15, 1]`. Hit scores are planted on the profile — linear
//! (`a·e`) or nonlinear (`a·e + β·e₂e₅ + γ·max(e)`) — noised, affinely
//! mapped to a positive range, then encoded into integer playcounts and
//! listener counts such that `ln(1+playcount)·ln(1+listeners)` recovers
//! the planted score up to rounding. Tag vectors are a softmax of a fixed
//! random projection of the profile, giving the tag branch genuine signal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_f32, Waveform};
use crate::popularity::Song;
use crate::tags::{TagVector, TAG_DIM};

use super::ingest::write_catalog_csv;
use super::{derive_seed, HarnessError};

pub const N_BANDS: usize = 8;
const SINES_PER_BAND: usize = 6;
/// Global amplitude so clips stay nominally within [-1, 1].
const GAIN: f64 = 0.06;
/// Planted scores are mapped into this range before count encoding.
const SCORE_RANGE: (f64, f64) = (16.0, 120.0);
/// Asymmetry between playcount and listener log-scales.
const COUNT_SKEW: f64 = 1.15;
/// Softmax temperature for tag activations.
const TAG_TEMPERATURE: f64 = 3.0;

/// Which hit-score signal is planted on the band-energy profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedModel {
    LinearBandEnergy,
    NonlinearBandInteraction,
}

impl std::str::FromStr for PlantedModel {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "linear" | "linear_band_energy" => Ok(PlantedModel::LinearBandEnergy),
            "nonlinear" | "nonlinear_band_interaction" => Ok(PlantedModel::NonlinearBandInteraction),
            other => Err(HarnessError::Config(format!("unknown planted model '{other}'"))),
        }
    }
}

impl std::fmt::Display for PlantedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlantedModel::LinearBandEnergy => write!(f, "linear_band_energy"),
            PlantedModel::NonlinearBandInteraction => write!(f, "nonlinear_band_interaction"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_songs: usize,
    pub seed: u64,
    pub planted_model: PlantedModel,
    pub noise_sigma: f64,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub subset_name: String,
}

impl SyntheticSpec {
    pub fn new(n_songs: usize, seed: u64, planted_model: PlantedModel) -> Self {
        SyntheticSpec {
            n_songs,
            seed,
            planted_model,
            noise_sigma: 0.0,
            clip_seconds: 2.0,
            sample_rate: 22050,
            subset_name: "synthetic".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_songs < 3 {
            return Err(HarnessError::Config("need at least 3 songs".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(HarnessError::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.clip_seconds > 0.0) || self.sample_rate == 0 {
            return Err(HarnessError::Config("clip_seconds and sample_rate must be positive".into()));
        }
        if self.subset_name.is_empty() || self.subset_name.contains(',') {
            return Err(HarnessError::Config("subset_name must be a non-empty CSV-safe string".into()));
        }
        Ok(())
    }
}

/// Per-song ground truth the generator knows but the pipeline must infer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SongTruth {
    pub song_id: String,
    pub band_energies: Vec<f64>,
    pub planted_score: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub catalog_path: PathBuf,
    pub tags_path: PathBuf,
    pub audio_dir: PathBuf,
    pub truth_path: PathBuf,
    pub songs: Vec<Song>,
    pub truths: Vec<SongTruth>,
}

/// Octave band edges `(lo, hi)` in Hz, lowest band first.
pub fn band_edges(sample_rate: u32) -> [(f64, f64); N_BANDS] {
    let top = 0.45 * sample_rate as f64;
    let mut edges = [(0.0, 0.0); N_BANDS];
    for (b, e) in edges.iter_mut().enumerate() {
        let hi = top / 2f64.powi((N_BANDS - 1 - b) as i32);
        *e = (hi / 2.0, hi);
    }
    edges
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 is kept away from zero.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Sum of phasor-driven sinusoids: one center tone plus random in-band
/// partials per band, with band power exactly `e_b · GAIN²`.
fn synthesize_clip(
    energies: &[f64],
    edges: &[(f64, f64); N_BANDS],
    n_samples: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    struct Osc {
        re: f64,
        im: f64,
        rot_re: f64,
        rot_im: f64,
        amp: f64,
    }
    let mut oscs = Vec::with_capacity(N_BANDS * (SINES_PER_BAND + 1));
    for (b, &(lo, hi)) in edges.iter().enumerate() {
        // 20% of band energy in the center tone, the rest split over partials.
        let tone_amp = (0.2 * energies[b]).sqrt() * GAIN * std::f64::consts::SQRT_2;
        let part_amp =
            (0.8 * energies[b] / SINES_PER_BAND as f64).sqrt() * GAIN * std::f64::consts::SQRT_2;
        let center = (lo * hi).sqrt();
        let mut freqs = vec![center];
        for _ in 0..SINES_PER_BAND {
            let t: f64 = rng.random_range(0.0..1.0);
            freqs.push(lo * (hi / lo).powf(t));
        }
        for (i, f) in freqs.into_iter().enumerate() {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let step = std::f64::consts::TAU * f / sample_rate as f64;
            oscs.push(Osc {
                re: phase.cos(),
                im: phase.sin(),
                rot_re: step.cos(),
                rot_im: step.sin(),
                amp: if i == 0 { tone_amp } else { part_amp },
            });
        }
    }
    let mut out = vec![0.0; n_samples];
    for o in &mut oscs {
        for s in out.iter_mut() {
            *s += o.amp * o.im;
            let re = o.re * o.rot_re - o.im * o.rot_im;
            o.im = o.re * o.rot_im + o.im * o.rot_re;
            o.re = re;
        }
    }
    out
}

fn planted_raw_score(model: PlantedModel, weights: &[f64], e: &[f64]) -> f64 {
    let linear: f64 = weights.iter().zip(e).map(|(a, x)| a * x).sum();
    match model {
        PlantedModel::LinearBandEnergy => linear,
        PlantedModel::NonlinearBandInteraction => {
            let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            linear + 4.0 * (e[1] * e[4]) + 3.0 * max
        }
    }
}

/// Invert the hit-score formula into integer counts: with `s = √h`,
/// `playcount = round(e^{1.15·s} − 1)` and `listeners = round(e^{s/1.15} − 1)`,
/// so `ln(1+p)·ln(1+l) ≈ s² = h` and listeners never exceed playcount.
fn counts_from_score(h: f64) -> (u64, u64) {
    let s = h.max(0.0).sqrt();
    let playcount = ((COUNT_SKEW * s).exp() - 1.0).round() as u64;
    let listeners = ((s / COUNT_SKEW).exp() - 1.0).round() as u64;
    (playcount, listeners)
}

/// Generate the corpus under `out_dir`: `audio/<id>.wav` clips,
/// `catalog.csv`, `tags.csv`, and `truth.json` (the planted ground truth,
/// for oracle tests and debugging).
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    out_dir: &Path,
) -> Result<SyntheticCorpus, HarnessError> {
    spec.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;

    let mut corpus_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth/corpus"));
    let weights: Vec<f64> = (0..N_BANDS).map(|_| corpus_rng.random_range(0.5..1.5)).collect();
    let projection: Vec<f64> = (0..TAG_DIM * N_BANDS)
        .map(|_| corpus_rng.random_range(-1.0..1.0))
        .collect();
    let edges = band_edges(spec.sample_rate);
    let n_samples = (spec.clip_seconds * spec.sample_rate as f64).round() as usize;

    // First pass: profiles and raw scores (needs corpus-wide min/max).
    let mut profiles = Vec::with_capacity(spec.n_songs);
    let mut raw_scores = Vec::with_capacity(spec.n_songs);
    for i in 0..spec.n_songs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synth/song{i}")));
        let e: Vec<f64> = (0..N_BANDS).map(|_| rng.random_range(0.15..1.0)).collect();
        let raw = planted_raw_score(spec.planted_model, &weights, &e)
            + spec.noise_sigma * standard_normal(&mut rng);
        profiles.push(e);
        raw_scores.push(raw);
    }
    let raw_min = raw_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw_max = raw_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (raw_max - raw_min).max(1e-12);

    let mut songs = Vec::with_capacity(spec.n_songs);
    let mut truths = Vec::with_capacity(spec.n_songs);
    let mut tags = BTreeMap::new();
    for i in 0..spec.n_songs {
        let song_id = format!("syn{i:05}");
        let e = &profiles[i];
        let planted =
            SCORE_RANGE.0 + (raw_scores[i] - raw_min) / span * (SCORE_RANGE.1 - SCORE_RANGE.0);
        let (playcount, listeners) = counts_from_score(planted);

        // Clip synthesis re-derives the song stream, offset so the audio
        // draws are independent of how many profile draws happened above.
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synth/audio{i}")));
        let clip = synthesize_clip(e, &edges, n_samples, spec.sample_rate, &mut rng);
        let wav = Waveform::new(clip, spec.sample_rate).map_err(HarnessError::Audio)?;
        write_wav_f32(&audio_dir.join(format!("{song_id}.wav")), &wav)?;

        let mut quarter_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synth/meta{i}")));
        let release_period = quarter_rng.random_range(-2..=3);

        let logits: Vec<f64> = (0..TAG_DIM)
            .map(|t| {
                let row = &projection[t * N_BANDS..(t + 1) * N_BANDS];
                TAG_TEMPERATURE * row.iter().zip(e).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let (vector, _) = TagVector::from_scores(exps.into_iter().map(|x| x / sum).collect())?;
        tags.insert(song_id.clone(), vector);

        songs.push(Song::new(&song_id, &spec.subset_name, playcount, listeners, release_period));
        truths.push(SongTruth {
            song_id,
            band_energies: e.clone(),
            planted_score: planted,
        });
    }

    let catalog_path = out_dir.join("catalog.csv");
    write_catalog_csv(&catalog_path, &songs)?;
    let tags_path = out_dir.join("tags.csv");
    crate::tags::write_tag_file(&tags_path, &tags)?;
    let truth_path = out_dir.join("truth.json");
    crate::audio::cache::write_atomic(&truth_path, &serde_json::to_vec_pretty(&truths)?)?;

    Ok(SyntheticCorpus {
        catalog_path,
        tags_path,
        audio_dir,
        truth_path,
        songs,
        truths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_wav;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_songs: 8,
            seed: 5,
            planted_model: PlantedModel::LinearBandEnergy,
            noise_sigma: 0.0,
            clip_seconds: 0.3,
            sample_rate: 22050,
            subset_name: "synthetic".into(),
        }
    }

    #[test]
    fn conservation_of_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_synthetic(&tiny_spec(), dir.path()).unwrap();
        assert_eq!(corpus.songs.len(), 8);
        assert_eq!(corpus.truths.len(), 8);
        let wavs = std::fs::read_dir(&corpus.audio_dir).unwrap().count();
        assert_eq!(wavs, 8);
        let tags = crate::tags::read_tag_file(&corpus.tags_path).unwrap();
        assert_eq!(tags.len(), 8);
        let catalog = super::super::ingest::read_catalog_csv(&corpus.catalog_path).unwrap();
        assert_eq!(catalog.len(), 8);
    }

    #[test]
    fn same_spec_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c1 = generate_synthetic(&tiny_spec(), d1.path()).unwrap();
        let c2 = generate_synthetic(&tiny_spec(), d2.path()).unwrap();
        for (a, b) in [
            (&c1.catalog_path, &c2.catalog_path),
            (&c1.tags_path, &c2.tags_path),
            (&c1.truth_path, &c2.truth_path),
        ] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        for s in &c1.songs {
            let f1 = std::fs::read(c1.audio_dir.join(format!("{}.wav", s.song_id))).unwrap();
            let f2 = std::fs::read(c2.audio_dir.join(format!("{}.wav", s.song_id))).unwrap();
            assert_eq!(f1, f2, "{} differs", s.song_id);
        }
    }

    #[test]
    fn realized_hit_scores_track_planted_scores() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec();
        spec.n_songs = 40;
        let corpus = generate_synthetic(&spec, dir.path()).unwrap();
        for (song, truth) in corpus.songs.iter().zip(&corpus.truths) {
            let realized = song.hit_score;
            let rel = (realized - truth.planted_score).abs() / truth.planted_score;
            assert!(
                rel < 0.02,
                "{}: realized {} vs planted {}",
                song.song_id,
                realized,
                truth.planted_score
            );
            assert!(song.listeners <= song.playcount);
        }
    }

    #[test]
    fn clip_band_energy_reflects_profile() {
        // The loudest and quietest bands of the planted profile should
        // order the measured in-band power the same way.
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec();
        spec.clip_seconds = 1.0;
        let corpus = generate_synthetic(&spec, dir.path()).unwrap();
        let edges = band_edges(spec.sample_rate);
        let truth = &corpus.truths[0];
        let wav = read_wav(&corpus.audio_dir.join(format!("{}.wav", truth.song_id))).unwrap();

        // Goertzel-free power proxy: restrict a DFT to each band.
        let n = wav.len();
        let mut band_power = vec![0.0; N_BANDS];
        for (b, &(lo, hi)) in edges.iter().enumerate() {
            let k_lo = (lo * n as f64 / wav.sample_rate as f64).ceil() as usize;
            let k_hi = (hi * n as f64 / wav.sample_rate as f64).floor() as usize;
            let mut acc = 0.0;
            for k in (k_lo..=k_hi).step_by(1.max((k_hi - k_lo) / 200)) {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, &s) in wav.samples.iter().enumerate() {
                    let ang = -std::f64::consts::TAU * (k as f64) * (i as f64) / n as f64;
                    re += s * ang.cos();
                    im += s * ang.sin();
                }
                acc += re * re + im * im;
            }
            band_power[b] = acc;
        }
        let e_max = truth
            .band_energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let e_min = truth
            .band_energies
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            band_power[e_max] > band_power[e_min],
            "band powers {band_power:?} do not reflect profile {:?}",
            truth.band_energies
        );
    }

    #[test]
    fn least_squares_recovers_noiseless_linear_scores() {
        // With zero noise the planted score is affine in the band profile;
        // normal-equation least squares on (e, h) must fit to numerical
        // precision.
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec();
        spec.n_songs = 60;
        let corpus = generate_synthetic(&spec, dir.path()).unwrap();
        let n = corpus.truths.len();
        let d = N_BANDS + 1;
        // Design matrix with intercept.
        let x: Vec<Vec<f64>> = corpus
            .truths
            .iter()
            .map(|t| {
                let mut row = vec![1.0];
                row.extend(&t.band_energies);
                row
            })
            .collect();
        let y: Vec<f64> = corpus.truths.iter().map(|t| t.planted_score).collect();
        // Solve (XᵀX)β = Xᵀy by Gaussian elimination.
        let mut ata = vec![vec![0.0; d + 1]; d];
        for r in 0..d {
            for c in 0..d {
                ata[r][c] = (0..n).map(|i| x[i][r] * x[i][c]).sum();
            }
            ata[r][d] = (0..n).map(|i| x[i][r] * y[i]).sum();
        }
        for col in 0..d {
            let pivot = (col..d).max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap()).unwrap();
            ata.swap(col, pivot);
            let p = ata[col][col];
            for r in 0..d {
                if r != col {
                    let f = ata[r][col] / p;
                    for c in col..=d {
                        ata[r][c] -= f * ata[col][c];
                    }
                }
            }
        }
        let beta: Vec<f64> = (0..d).map(|r| ata[r][d] / ata[r][r]).collect();
        let mut sse = 0.0;
        for i in 0..n {
            let pred: f64 = (0..d).map(|j| beta[j] * x[i][j]).sum();
            sse += (pred - y[i]) * (pred - y[i]);
        }
        assert!(sse < 1e-8, "least-squares residual {sse} too large");
    }
}
