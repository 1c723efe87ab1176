//! Feature-cache building: one spectrogram file + sidecar per song, a
//! manifest with content digests, and incremental recomputation (a song is
//! re-extracted only when its audio changed or its cache entry is missing
//! or corrupt).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{
    cache as melcache, compute_log_mel, extract_middle_segment, read_wav, ExtractionParams,
};
use crate::popularity::Song;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub file: String,
    pub wav_sha256: String,
    pub mel_sha256: String,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub song_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub params: Option<ExtractionParams>,
    pub entries: BTreeMap<String, CacheEntry>,
    pub skipped: Vec<SkipRecord>,
}

impl CacheManifest {
    pub fn path(cache_dir: &Path) -> PathBuf {
        cache_dir.join("manifest.json")
    }

    pub fn load(cache_dir: &Path) -> CacheManifest {
        std::fs::read(Self::path(cache_dir))
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, cache_dir: &Path) -> Result<(), HarnessError> {
        let bytes = serde_json::to_vec_pretty(self)?;
        melcache::write_atomic(&Self::path(cache_dir), &bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheBuildStats {
    pub computed: usize,
    pub reused: usize,
    pub skipped: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

enum SongOutcome {
    Computed(CacheEntry),
    Reused(CacheEntry),
    Skipped(String),
}

fn process_song(
    song_id: &str,
    audio_dir: &Path,
    cache_dir: &Path,
    params: &ExtractionParams,
    previous: Option<&CacheEntry>,
) -> SongOutcome {
    let wav_path = audio_dir.join(format!("{song_id}.wav"));
    let wav_bytes = match std::fs::read(&wav_path) {
        Ok(b) => b,
        Err(_) => return SongOutcome::Skipped(format!("missing audio {}", wav_path.display())),
    };
    let wav_digest = sha256_hex(&wav_bytes);

    if let Some(prev) = previous {
        if prev.wav_sha256 == wav_digest {
            if let Ok(mel_bytes) = std::fs::read(melcache::spectrogram_path(cache_dir, song_id)) {
                if sha256_hex(&mel_bytes) == prev.mel_sha256 {
                    return SongOutcome::Reused(prev.clone());
                }
            }
        }
    }

    let wave = match read_wav(&wav_path) {
        Ok(w) => w,
        Err(e) => return SongOutcome::Skipped(format!("corrupt WAV: {e}")),
    };
    if wave.sample_rate != params.sample_rate {
        return SongOutcome::Skipped(format!(
            "sample rate mismatch: file has {} Hz, pipeline expects {} Hz",
            wave.sample_rate, params.sample_rate
        ));
    }
    let segment = match extract_middle_segment(&wave, params.segment_seconds) {
        Ok(s) => s,
        Err(e) => return SongOutcome::Skipped(format!("segment extraction failed: {e}")),
    };
    let mel = match compute_log_mel(&segment, params) {
        Ok(m) => m,
        Err(e) => return SongOutcome::Skipped(format!("mel extraction failed: {e}")),
    };
    if let Err(e) = melcache::write_entry(cache_dir, song_id, &mel) {
        return SongOutcome::Skipped(format!("cache write failed: {e}"));
    }
    let mel_bytes = match std::fs::read(melcache::spectrogram_path(cache_dir, song_id)) {
        Ok(b) => b,
        Err(e) => return SongOutcome::Skipped(format!("cache readback failed: {e}")),
    };
    SongOutcome::Computed(CacheEntry {
        file: format!("{song_id}.mel"),
        wav_sha256: wav_digest,
        mel_sha256: sha256_hex(&mel_bytes),
        n_frames: mel.n_frames(),
    })
}

/// Ensure every catalog song has a current cache entry. Returns the new
/// manifest (also written to `cache_dir/manifest.json`) and what was done.
pub fn build_feature_cache(
    catalog: &[Song],
    audio_dir: &Path,
    cache_dir: &Path,
    params: &ExtractionParams,
    jobs: usize,
) -> Result<(CacheManifest, CacheBuildStats), HarnessError> {
    params.validate()?;
    std::fs::create_dir_all(cache_dir)?;
    let mut previous = CacheManifest::load(cache_dir);
    // A parameter change invalidates every previous entry.
    if previous.params.as_ref() != Some(params) {
        previous.entries.clear();
    }

    let ids: Vec<&str> = catalog.iter().map(|s| s.song_id.as_str()).collect();
    let results: Mutex<BTreeMap<String, SongOutcome>> = Mutex::new(BTreeMap::new());
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(ids.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ids.len() {
                    break;
                }
                let id = ids[i];
                let outcome =
                    process_song(id, audio_dir, cache_dir, params, previous.entries.get(id));
                results.lock().unwrap().insert(id.to_string(), outcome);
            });
        }
    });

    let mut manifest = CacheManifest {
        params: Some(params.clone()),
        entries: BTreeMap::new(),
        skipped: Vec::new(),
    };
    let mut stats = CacheBuildStats::default();
    for (id, outcome) in results.into_inner().unwrap() {
        match outcome {
            SongOutcome::Computed(e) => {
                stats.computed += 1;
                manifest.entries.insert(id, e);
            }
            SongOutcome::Reused(e) => {
                stats.reused += 1;
                manifest.entries.insert(id, e);
            }
            SongOutcome::Skipped(reason) => {
                stats.skipped += 1;
                manifest.skipped.push(SkipRecord { song_id: id, reason });
            }
        }
    }
    manifest.save(cache_dir)?;
    Ok((manifest, stats))
}
