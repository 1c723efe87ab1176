//! Log-mel spectrogram extraction.
//!
//! Conventions (fixed so tests are deterministic): centered STFT with
//! zero padding of `window_size/2` on each side and frame count
//! `ceil(len/hop)`; periodic Hanning window; power spectrum; HTK mel scale
//! `2595·log10(1 + f/700)` with area-unnormalized triangular filters from
//! 0 Hz to Nyquist; entrywise `ln(log_offset + x)`.
//!
//! At the reference parameters (22050 Hz, window 4096, hop 2048, 60 s) a
//! song becomes a 128 × 646 matrix.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use super::AudioError;

/// STFT / filterbank settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub window_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub log_offset: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            window_size: 4096,
            hop: 2048,
            n_mels: 128,
            sample_rate: 22050,
            segment_seconds: 60.0,
            log_offset: 1e-6,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<(), AudioError> {
        if self.window_size == 0 || self.hop == 0 || self.n_mels == 0 || self.sample_rate == 0 {
            return Err(AudioError::InvalidArgument(
                "window_size, hop, n_mels and sample_rate must be positive".into(),
            ));
        }
        if !(self.log_offset > 0.0) {
            return Err(AudioError::InvalidArgument("log_offset must be positive".into()));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(AudioError::InvalidArgument("segment_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Number of STFT frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Frames for the reference segment length at this sample rate.
    pub fn segment_frames(&self) -> usize {
        let n = (self.segment_seconds * self.sample_rate as f64).round() as usize;
        self.frame_count(n)
    }
}

/// A matrix of (log-)mel energies, `n_mels` rows by `n_frames` columns,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    bins: Vec<f64>,
    n_mels: usize,
    n_frames: usize,
    params: ExtractionParams,
}

impl MelSpectrogram {
    pub fn from_rows(bins: Vec<f64>, n_mels: usize, n_frames: usize, params: ExtractionParams) -> Result<Self, AudioError> {
        if bins.len() != n_mels * n_frames {
            return Err(AudioError::InvalidArgument(format!(
                "{} values cannot form a {}x{} matrix",
                bins.len(),
                n_mels,
                n_frames
            )));
        }
        Ok(MelSpectrogram { bins, n_mels, n_frames, params })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn params(&self) -> &ExtractionParams {
        &self.params
    }

    /// Row-major backing data (mel-bin major).
    pub fn data(&self) -> &[f64] {
        &self.bins
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.bins[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.bins[mel * self.n_frames + frame]
    }

    pub fn is_finite(&self) -> bool {
        self.bins.iter().all(|x| x.is_finite())
    }
}

/// A flat feature vector (the 2·n_mels mean+std summary, or 50 tag scores).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Triangular mel filterbank on FFT bin centers.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: index of the first FFT bin with nonzero weight, plus the
    /// contiguous weights from there.
    filters: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    /// Filters span 0 Hz to Nyquist on the HTK mel scale, triangular with
    /// peak 1 (no area normalization).
    pub fn new(window_size: usize, sample_rate: u32, n_mels: usize) -> Self {
        let n_bins = window_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|j| mel_to_hz(mel_max * j as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / window_size as f64;

        let mut filters = Vec::with_capacity(n_mels);
        for m in 1..=n_mels {
            let (lo, center, hi) = (edges[m - 1], edges[m], edges[m + 1]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let up = (f - lo) / (center - lo);
                let down = (hi - f) / (hi - center);
                let wgt = up.min(down).max(0.0);
                if wgt > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(wgt);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push((start.unwrap_or(0), weights));
        }
        MelFilterbank { filters, n_bins }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Weight of filter `m` at FFT bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, ref w) = self.filters[m];
        if k >= start && k < start + w.len() {
            w[k - start]
        } else {
            0.0
        }
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, (start, weights)) in self.filters.iter().enumerate() {
            let mut acc = 0.0;
            for (w, p) in weights.iter().zip(&power[*start..*start + weights.len()]) {
                acc += w * p;
            }
            out[m] = acc;
        }
    }
}

/// Periodic Hanning window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn stft_mel(w: &Waveform, p: &ExtractionParams, log: bool) -> Result<MelSpectrogram, AudioError> {
    p.validate()?;
    if w.is_empty() {
        return Err(AudioError::EmptyWaveform);
    }
    let ws = p.window_size;
    let pad = ws / 2;
    let padded_len = w.len() + 2 * pad;
    if ws > padded_len {
        return Err(AudioError::InvalidArgument(format!(
            "window of {ws} samples exceeds padded signal of {padded_len}"
        )));
    }

    let n_frames = p.frame_count(w.len());
    let window = hann(ws);
    let filterbank = MelFilterbank::new(ws, p.sample_rate, p.n_mels);
    let n_bins = ws / 2 + 1;

    let mut padded = vec![0.0; padded_len];
    padded[pad..pad + w.len()].copy_from_slice(&w.samples);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(ws);
    let mut buf = vec![Complex::new(0.0, 0.0); ws];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; n_bins];
    let mut mel_col = vec![0.0; p.n_mels];
    let mut bins = vec![0.0; p.n_mels * n_frames];

    for frame in 0..n_frames {
        let start = frame * p.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, pw) in power.iter_mut().enumerate() {
            *pw = buf[k].norm_sqr();
        }
        filterbank.apply(&power, &mut mel_col);
        for (m, &v) in mel_col.iter().enumerate() {
            bins[m * n_frames + frame] = if log { (p.log_offset + v).ln() } else { v };
        }
    }
    MelSpectrogram::from_rows(bins, p.n_mels, n_frames, p.clone())
}

/// Full pipeline: centered STFT → power spectrum → mel filterbank →
/// `ln(log_offset + x)`.
pub fn compute_log_mel(w: &Waveform, p: &ExtractionParams) -> Result<MelSpectrogram, AudioError> {
    stft_mel(w, p, true)
}

/// The same pipeline without the final logarithm, for energy-linearity
/// checks and tests.
pub fn compute_mel_power(w: &Waveform, p: &ExtractionParams) -> Result<MelSpectrogram, AudioError> {
    stft_mel(w, p, false)
}

/// Per-bin mean followed by per-bin population standard deviation over
/// frames: a `2·n_mels`-dim summary (256 at reference settings).
pub fn summarize_mean_std(m: &MelSpectrogram) -> Result<FeatureVector, AudioError> {
    if m.n_frames() == 0 {
        return Err(AudioError::InvalidArgument("spectrogram has no frames".into()));
    }
    let n = m.n_frames() as f64;
    let mut values = vec![0.0; 2 * m.n_mels()];
    for mel in 0..m.n_mels() {
        let row = m.row(mel);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        values[mel] = mean;
        values[m.n_mels() + mel] = var.sqrt();
    }
    Ok(FeatureVector { values })
}
