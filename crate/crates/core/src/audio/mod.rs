//! Audio frontend: middle-segment extraction, 128-bin log-mel spectrograms
//! over half-overlapping Hanning windows, and the mean+std summary vector.

mod mel;
mod wav;
mod waveform;
pub mod cache;

pub use mel::{
    compute_log_mel, compute_mel_power, summarize_mean_std, ExtractionParams, FeatureVector,
    MelFilterbank, MelSpectrogram,
};
pub use wav::{read_wav, write_wav_f32, write_wav_i16};
pub use waveform::{extract_middle_segment, Waveform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("sample rate mismatch: file has {found} Hz, expected {expected} Hz (resampling is unsupported)")]
    SampleRateMismatch { found: u32, expected: u32 },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),
    #[error("corrupt WAV: {0}")]
    CorruptWav(String),
    #[error("corrupt spectrogram cache entry: {0}")]
    CorruptCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
