use super::AudioError;

/// A mono audio signal with unit-less amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidArgument("sample_rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Take the centered `seconds`-long slice of `w`. Shorter signals are
/// zero-padded symmetrically to the requested length instead of rejected,
/// so short synthetic clips stay usable.
pub fn extract_middle_segment(w: &Waveform, seconds: f64) -> Result<Waveform, AudioError> {
    if !(seconds > 0.0) {
        return Err(AudioError::InvalidArgument(format!(
            "segment length must be positive, got {seconds}"
        )));
    }
    if w.is_empty() {
        return Err(AudioError::EmptyWaveform);
    }
    let target = (seconds * w.sample_rate as f64).round() as usize;
    if target == 0 {
        return Err(AudioError::InvalidArgument(format!(
            "segment of {seconds}s at {} Hz rounds to zero samples",
            w.sample_rate
        )));
    }
    let n = w.len();
    let samples = if n >= target {
        let start = (n - target) / 2;
        w.samples[start..start + target].to_vec()
    } else {
        let pad = target - n;
        let left = pad / 2;
        let mut out = vec![0.0; target];
        out[left..left + n].copy_from_slice(&w.samples);
        out
    };
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seconds: f64, rate: u32) -> Waveform {
        let n = (seconds * rate as f64).round() as usize;
        Waveform::new((0..n).map(|i| i as f64).collect(), rate).unwrap()
    }

    #[test]
    fn middle_of_long_signal() {
        // 180 s at 22050 Hz, 60 s slice: samples [60 s, 120 s), length 1,323,000.
        let w = ramp(180.0, 22050);
        let seg = extract_middle_segment(&w, 60.0).unwrap();
        assert_eq!(seg.len(), 1_323_000);
        assert_eq!(seg.samples[0], (60 * 22050) as f64);
        assert_eq!(*seg.samples.last().unwrap(), (120 * 22050 - 1) as f64);
    }

    #[test]
    fn exact_length_is_identity() {
        let w = ramp(60.0, 22050);
        let seg = extract_middle_segment(&w, 60.0).unwrap();
        assert_eq!(seg, w);
    }

    #[test]
    fn short_signal_padded_symmetrically() {
        let w = ramp(30.0, 22050);
        let seg = extract_middle_segment(&w, 60.0).unwrap();
        assert_eq!(seg.len(), 1_323_000);
        let quarter = 15 * 22050;
        assert!(seg.samples[..quarter].iter().all(|&s| s == 0.0));
        assert!(seg.samples[seg.len() - quarter..].iter().all(|&s| s == 0.0));
        assert_eq!(seg.samples[quarter], 0.0); // ramp starts at zero anyway
        assert_eq!(seg.samples[quarter + 1], 1.0);
    }

    #[test]
    fn non_positive_seconds_rejected() {
        let w = ramp(1.0, 22050);
        assert!(matches!(
            extract_middle_segment(&w, 0.0),
            Err(AudioError::InvalidArgument(_))
        ));
        assert!(matches!(
            extract_middle_segment(&w, -3.0),
            Err(AudioError::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_waveform_rejected() {
        let w = Waveform::new(vec![], 22050).unwrap();
        assert!(matches!(
            extract_middle_segment(&w, 1.0),
            Err(AudioError::EmptyWaveform)
        ));
    }
}
