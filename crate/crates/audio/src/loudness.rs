//! ITU-R BS.1770-4 integrated loudness and loudness normalization.

use std::f64::consts::PI;

use crate::dsp::{peak, Biquad};
use crate::AudioError;

const BLOCK_S: f64 = 0.4;
const STEP_S: f64 = 0.1;
const ABSOLUTE_GATE: f64 = -70.0;
const RELATIVE_GATE: f64 = -10.0;

/// K-weighting: high shelf followed by the RLB high-pass, designed for `sr`.
pub fn k_weighting(sr: f64) -> [Biquad; 2] {
    let f0 = 1681.974_450_955_533;
    let g = 3.999_843_853_973_347;
    let q = 0.707_175_236_955_419_6;
    let k = (PI * f0 / sr).tan();
    let vh = 10f64.powf(g / 20.0);
    let vb = vh.powf(0.499_666_774_154_541_6);
    let a0 = 1.0 + k / q + k * k;
    let shelf = Biquad {
        b: [(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0, (vh - vb * k / q + k * k) / a0],
        a: [1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    };
    let f0 = 38.135_470_876_024_44;
    let q = 0.500_327_037_323_877_3;
    let k = (PI * f0 / sr).tan();
    let a0 = 1.0 + k / q + k * k;
    let hp = Biquad {
        b: [1.0, -2.0, 1.0],
        a: [1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    };
    [shelf, hp]
}

fn block_loudness(ms: f64) -> f64 {
    -0.691 + 10.0 * ms.log10()
}

/// Gated integrated loudness in LUFS of a mono signal.
pub fn integrated_loudness(x: &[f64], sample_rate: u32) -> Result<f64, AudioError> {
    let sr = sample_rate as f64;
    let [shelf, hp] = k_weighting(sr);
    let y = hp.process(&shelf.process(x));
    let block = (BLOCK_S * sr).round() as usize;
    let step = (STEP_S * sr).round() as usize;
    if y.len() < block || block == 0 {
        return Err(AudioError::SilentInput);
    }
    let n_blocks = (y.len() - block) / step + 1;
    let powers: Vec<f64> = (0..n_blocks)
        .map(|b| {
            let s = &y[b * step..b * step + block];
            s.iter().map(|v| v * v).sum::<f64>() / block as f64
        })
        .collect();
    let above_abs: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&p| p > 0.0 && block_loudness(p) > ABSOLUTE_GATE)
        .collect();
    if above_abs.is_empty() {
        return Err(AudioError::SilentInput);
    }
    let rel = block_loudness(above_abs.iter().sum::<f64>() / above_abs.len() as f64) + RELATIVE_GATE;
    let gated: Vec<f64> = above_abs.into_iter().filter(|&p| block_loudness(p) > rel).collect();
    if gated.is_empty() {
        return Err(AudioError::SilentInput);
    }
    Ok(block_loudness(gated.iter().sum::<f64>() / gated.len() as f64))
}

/// Result of [`normalize_loudness`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub samples: Vec<f64>,
    /// Linear gain applied.
    pub gain: f64,
    /// Gain was reduced to keep the peak at full scale.
    pub peak_limited: bool,
}

/// Scales `x` to `target_lufs`, reducing the gain if the peak would exceed 1.
pub fn normalize_loudness(x: &[f64], sample_rate: u32, target_lufs: f64) -> Result<Normalized, AudioError> {
    if !target_lufs.is_finite() {
        return Err(AudioError::InvalidParams(format!("target loudness {target_lufs}")));
    }
    let current = integrated_loudness(x, sample_rate)?;
    let mut gain = 10f64.powf((target_lufs - current) / 20.0);
    let pk = peak(x);
    let mut peak_limited = false;
    if pk * gain > 1.0 {
        gain = 1.0 / pk;
        peak_limited = true;
    }
    Ok(Normalized {
        samples: x.iter().map(|v| v * gain).collect(),
        gain,
        peak_limited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, sr: u32, secs: f64) -> Vec<f64> {
        let n = (sr as f64 * secs) as usize;
        (0..n).map(|k| amp * (2.0 * PI * freq * k as f64 / sr as f64).sin()).collect()
    }

    fn reference_meter(x: &[f64], sr: u32) -> f64 {
        let mut m = ebur128::EbuR128::new(1, sr, ebur128::Mode::I).unwrap();
        m.add_frames_f64(x).unwrap();
        m.loudness_global().unwrap()
    }

    #[test]
    fn matches_reference_meter() {
        for &sr in &[16000u32, 44100, 48000] {
            for &amp in &[0.05, 0.3, 0.9] {
                let x = sine(1000.0, amp, sr, 3.0);
                let ours = integrated_loudness(&x, sr).unwrap();
                let theirs = reference_meter(&x, sr);
                assert!((ours - theirs).abs() < 0.05, "sr {sr} amp {amp}: {ours} vs {theirs}");
            }
        }
    }

    #[test]
    fn gated_signal_matches_reference_meter() {
        let sr = 16000;
        let mut x = sine(440.0, 0.4, sr, 2.0);
        x.extend(vec![0.0; sr as usize]);
        x.extend(sine(3000.0, 0.01, sr, 2.0));
        let ours = integrated_loudness(&x, sr).unwrap();
        let theirs = reference_meter(&x, sr);
        assert!((ours - theirs).abs() < 0.05, "{ours} vs {theirs}");
    }

    #[test]
    fn full_scale_1k_sine_reads_minus_3() {
        let x = sine(997.0, 1.0, 48000, 5.0);
        assert!((integrated_loudness(&x, 48000).unwrap() + 3.01).abs() < 0.05);
    }

    #[test]
    fn normalizes_to_target() {
        let x = sine(1000.0, 0.02, 16000, 3.0);
        let n = normalize_loudness(&x, 16000, -23.0).unwrap();
        assert!(!n.peak_limited);
        assert!((integrated_loudness(&n.samples, 16000).unwrap() + 23.0).abs() < 0.1);
        let again = normalize_loudness(&n.samples, 16000, -23.0).unwrap();
        assert!((20.0 * again.gain.log10()).abs() < 0.1);
    }

    #[test]
    fn silence_is_an_error() {
        assert_eq!(integrated_loudness(&vec![0.0; 16000], 16000), Err(AudioError::SilentInput));
        assert!(normalize_loudness(&vec![0.0; 16000], 16000, -23.0).is_err());
    }

    #[test]
    fn square_wave_peak_limited() {
        let sr = 16000;
        let x: Vec<f64> = (0..3 * sr as usize)
            .map(|k| if (k / 8) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let n = normalize_loudness(&x, sr, 3.0).unwrap();
        assert!(n.peak_limited);
        assert!((peak(&n.samples) - 1.0).abs() < 1e-12);
        let l = integrated_loudness(&n.samples, sr).unwrap();
        assert!(l < 3.0);
        assert!((l - reference_meter(&n.samples, sr)).abs() < 0.05);
    }
}
