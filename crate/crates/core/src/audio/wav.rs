//! Minimal RIFF/WAVE reader and writer covering the formats the pipeline
//! ingests: 16-bit PCM and 32-bit IEEE float, mono or stereo (stereo is
//! averaged to mono on load).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::waveform::Waveform;
use super::AudioError;

fn le_u16(b: &[u8], at: usize) -> Result<u16, AudioError> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| AudioError::CorruptWav("truncated header".into()))
}

fn le_u32(b: &[u8], at: usize) -> Result<u32, AudioError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| AudioError::CorruptWav("truncated header".into()))
}

/// Read a WAV file into a mono waveform.
pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::CorruptWav("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        match (id, body_end) {
            (b"fmt ", Some(_)) => {
                if size < 16 {
                    return Err(AudioError::CorruptWav("fmt chunk too small".into()));
                }
                fmt = Some((
                    le_u16(&bytes, body_start)?,
                    le_u16(&bytes, body_start + 2)?,
                    le_u32(&bytes, body_start + 4)?,
                    le_u16(&bytes, body_start + 14)?,
                ));
            }
            (b"data", Some(end)) => {
                data = Some(&bytes[body_start..end]);
            }
            (_, Some(_)) => {}
            (_, None) => return Err(AudioError::CorruptWav("chunk overruns file".into())),
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::CorruptWav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::CorruptWav("missing data chunk".into()))?;
    if channels == 0 {
        return Err(AudioError::CorruptWav("zero channels".into()));
    }

    let samples: Vec<f64> = match (format, bits) {
        (1, 16) => {
            if data.len() % 2 != 0 {
                return Err(AudioError::CorruptWav("odd PCM16 data length".into()));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        (3, 32) => {
            if data.len() % 4 != 0 {
                return Err(AudioError::CorruptWav("float32 data length not a multiple of 4".into()));
            }
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        (f, b) => {
            return Err(AudioError::UnsupportedWav(format!(
                "format tag {f} with {b} bits; only 16-bit PCM and 32-bit float are supported"
            )))
        }
    };

    let ch = channels as usize;
    let mono = if ch == 1 {
        samples
    } else {
        if samples.len() % ch != 0 {
            return Err(AudioError::CorruptWav("frame count not divisible by channels".into()));
        }
        samples
            .chunks_exact(ch)
            .map(|frame| frame.iter().sum::<f64>() / ch as f64)
            .collect()
    };
    Waveform::new(mono, rate)
}

fn wav_header(format: u16, bits: u16, rate: u32, n_samples: usize, bytes_per: usize) -> Vec<u8> {
    let data_len = (n_samples * bytes_per) as u32;
    let mut h = Vec::with_capacity(44);
    h.extend_from_slice(b"RIFF");
    h.extend_from_slice(&(36 + data_len).to_le_bytes());
    h.extend_from_slice(b"WAVEfmt ");
    h.extend_from_slice(&16u32.to_le_bytes());
    h.extend_from_slice(&format.to_le_bytes());
    h.extend_from_slice(&1u16.to_le_bytes()); // mono
    h.extend_from_slice(&rate.to_le_bytes());
    h.extend_from_slice(&(rate * bytes_per as u32).to_le_bytes());
    h.extend_from_slice(&(bytes_per as u16).to_le_bytes());
    h.extend_from_slice(&bits.to_le_bytes());
    h.extend_from_slice(b"data");
    h.extend_from_slice(&data_len.to_le_bytes());
    h
}

/// Write a mono 32-bit float WAV.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<(), AudioError> {
    let mut out = wav_header(3, 32, w.sample_rate, w.len(), 4);
    out.reserve(w.len() * 4);
    for &s in &w.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Write a mono 16-bit PCM WAV (samples clipped to [-1, 1]).
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<(), AudioError> {
    let mut out = wav_header(1, 16, w.sample_rate, w.len(), 2);
    out.reserve(w.len() * 2);
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.0, 0.25, -0.5, 1.0], 22050).unwrap();
        write_wav_f32(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 22050);
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn i16_round_trip_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5], 8000).unwrap();
        write_wav_i16(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 8000);
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn stereo_averaged_to_mono() {
        // Hand-build a stereo PCM16 file: frames (L,R) = (1000, 3000), (-2000, 2000).
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 8).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&(44100u32 * 4).to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        for v in [1000i16, 3000, -2000, 2000] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r.samples[0] - 2000.0 / 32768.0).abs() < 1e-9);
        assert!((r.samples[1] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"definitely not a wav").unwrap();
        assert!(matches!(read_wav(&path), Err(AudioError::CorruptWav(_))));
    }

    #[test]
    fn rejects_unsupported_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&(44100u32 * 3).to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes());
        bytes.extend_from_slice(&24u16.to_le_bytes()); // 24-bit unsupported
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(AudioError::UnsupportedWav(_))));
    }
}
