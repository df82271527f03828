//! Mono WAV reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::AudioError;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Signal { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads 16/24/32-bit PCM or 32-bit float mono WAV into `[-1, 1]` samples.
pub fn read_wav(path: &Path) -> Result<Signal, AudioError> {
    let reader = WavReader::open(path).map_err(|e| AudioError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::NotMono(spec.channels));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
        }
    }
    .map_err(|e| AudioError::Wav(e.to_string()))?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::NonFinite);
    }
    Ok(Signal::new(samples, spec.sample_rate))
}

/// Writes 32-bit float mono WAV.
pub fn write_wav(path: &Path, signal: &Signal) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| AudioError::Wav(e.to_string()))?;
    for &s in &signal.samples {
        w.write_sample(s as f32).map_err(|e| AudioError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| AudioError::Wav(e.to_string()))
}

/// Writes 16-bit PCM mono WAV, clamping to full scale.
pub fn write_wav_pcm16(path: &Path, signal: &Signal) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| AudioError::Wav(e.to_string()))?;
    for &s in &signal.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| AudioError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| AudioError::Wav(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let s = Signal::new(vec![0.0, 0.5, -0.25, 1.0], 16000);
        write_wav(&p, &s).unwrap();
        assert_eq!(read_wav(&p).unwrap(), s);
    }

    #[test]
    fn pcm16_roundtrip_within_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let s = Signal::new(vec![0.0, 0.5, -0.25, 0.999], 8000);
        write_wav_pcm16(&p, &s).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 8000);
        for (a, b) in s.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 2.0 / 32767.0);
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(AudioError::NotMono(2))));
    }
}
