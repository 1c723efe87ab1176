//! On-disk spectrogram cache entries: one flat little-endian f32 file per
//! song (row-major, mel-bin major) plus a JSON sidecar describing it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mel::{ExtractionParams, MelSpectrogram};
use super::AudioError;

/// Self-description written next to each binary spectrogram file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub song_id: String,
    pub n_mels: usize,
    pub n_frames: usize,
    pub params: ExtractionParams,
}

pub fn spectrogram_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join(format!("{song_id}.mel"))
}

pub fn sidecar_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join(format!("{song_id}.json"))
}

/// Write `mel` for `song_id` under `dir` as `<id>.mel` + `<id>.json`.
pub fn write_entry(dir: &Path, song_id: &str, mel: &MelSpectrogram) -> Result<(), AudioError> {
    let mut bytes = Vec::with_capacity(mel.data().len() * 4);
    for &v in mel.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(&spectrogram_path(dir, song_id), &bytes)?;
    let sidecar = Sidecar {
        song_id: song_id.to_string(),
        n_mels: mel.n_mels(),
        n_frames: mel.n_frames(),
        params: mel.params().clone(),
    };
    let json = serde_json::to_vec_pretty(&sidecar)
        .map_err(|e| AudioError::CorruptCache(e.to_string()))?;
    write_atomic(&sidecar_path(dir, song_id), &json)?;
    Ok(())
}

/// Load a cache entry, validating the sidecar against the binary payload.
pub fn read_entry(dir: &Path, song_id: &str) -> Result<MelSpectrogram, AudioError> {
    let sidecar = read_sidecar(dir, song_id)?;
    if sidecar.song_id != song_id {
        return Err(AudioError::CorruptCache(format!(
            "sidecar for '{}' claims song_id '{}'",
            song_id, sidecar.song_id
        )));
    }
    let bytes = fs::read(spectrogram_path(dir, song_id))?;
    let expected = sidecar.n_mels * sidecar.n_frames * 4;
    if bytes.len() != expected {
        return Err(AudioError::CorruptCache(format!(
            "'{}': {} bytes on disk, sidecar implies {}",
            song_id,
            bytes.len(),
            expected
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    MelSpectrogram::from_rows(data, sidecar.n_mels, sidecar.n_frames, sidecar.params)
}

pub fn read_sidecar(dir: &Path, song_id: &str) -> Result<Sidecar, AudioError> {
    let raw = fs::read(sidecar_path(dir, song_id))?;
    serde_json::from_slice(&raw).map_err(|e| AudioError::CorruptCache(format!("{song_id}: {e}")))
}

/// Write-temp-then-rename so readers never observe partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AudioError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
