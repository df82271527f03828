//! Hand-crafted perceptual distortions and the PS/PM banks built from them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    abs_percentile, cascade, convolve_same_len, ola_stretch, power_spectrum, resample_linear, rms,
    sample_at, Biquad, BUTTERWORTH4_Q,
};
use crate::loudness::normalize_loudness;
use crate::AudioError;

/// Shortest input accepted by [`apply_distortion`], in samples.
pub const MIN_LEN: usize = 64;

/// Which measure a bank feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Ps,
    Pm,
}

impl std::str::FromStr for Variant {
    type Err = AudioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PS" => Ok(Variant::Ps),
            "PM" => Ok(Variant::Pm),
            _ => Err(AudioError::InvalidParams(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Notch,
    Comb,
    Tremolo,
    AdditiveNoise,
    HarmonicTone,
    Reverberation,
    NoiseGate,
    PitchShift,
    LowPass,
    HighPass,
    Echo,
    HardClip,
    Vibrato,
}

/// Amplitude given directly or relative to a statistic of the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Absolute(f64),
    /// Multiple of the input RMS amplitude.
    RmsFactor(f64),
    /// Multiple of the 95th-percentile absolute amplitude.
    P95Factor(f64),
}

impl Level {
    pub fn resolve(&self, stats: &InputStats) -> f64 {
        match *self {
            Level::Absolute(v) => v,
            Level::RmsFactor(f) => f * stats.rms,
            Level::P95Factor(f) => f * stats.p95,
        }
    }
}

/// Filter cutoff given in Hz or as a cumulative spectral-energy fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Hz(f64),
    /// Frequency below which this fraction of the energy lies, rounded to 100 Hz.
    EnergyQuantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VibratoDepth {
    /// Peak fractional playback-rate deviation.
    Fixed(f64),
    /// `clip(0.05 · A_RMS / A_95, 0.01, 0.05)`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

/// One distortion with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distortion {
    Notch { center_hz: f64, half_width_hz: f64 },
    Comb { delay_ms: f64, feedback: f64 },
    Tremolo { rate_hz: f64, depth: f64 },
    AdditiveNoise { snr_db: f64, color: NoiseColor },
    HarmonicTone { freq_hz: f64, amplitude: Level },
    /// Direct path plus a noise tail decaying by 60 dB in `rt60_s`, starting after `early_ms`.
    Reverberation { rt60_s: f64, early_ms: f64 },
    /// Direct path plus an exponential noise tail of `tail_ms` scaled by `decay`.
    ExponentialTail { tail_ms: f64, decay: f64 },
    NoiseGate { threshold: Level },
    PitchShift { semitones: f64 },
    LowPass { cutoff: Cutoff },
    HighPass { cutoff: Cutoff },
    Echo { delay_ms: f64, gain: f64 },
    HardClip { threshold: Level },
    Vibrato { rate_hz: f64, depth: VibratoDepth },
}

impl Distortion {
    pub fn family(&self) -> Family {
        match self {
            Distortion::Notch { .. } => Family::Notch,
            Distortion::Comb { .. } => Family::Comb,
            Distortion::Tremolo { .. } => Family::Tremolo,
            Distortion::AdditiveNoise { .. } => Family::AdditiveNoise,
            Distortion::HarmonicTone { .. } => Family::HarmonicTone,
            Distortion::Reverberation { .. } | Distortion::ExponentialTail { .. } => Family::Reverberation,
            Distortion::NoiseGate { .. } => Family::NoiseGate,
            Distortion::PitchShift { .. } => Family::PitchShift,
            Distortion::LowPass { .. } => Family::LowPass,
            Distortion::HighPass { .. } => Family::HighPass,
            Distortion::Echo { .. } => Family::Echo,
            Distortion::HardClip { .. } => Family::HardClip,
            Distortion::Vibrato { .. } => Family::Vibrato,
        }
    }

    /// Checks parameters against the sample rate and their admissible ranges.
    pub fn validate(&self, sr: u32) -> Result<(), AudioError> {
        let nyq = sr as f64 / 2.0;
        let bad = |what: &str| Err(AudioError::InvalidParams(format!("{what} in {self:?}")));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Distortion::Notch { center_hz, half_width_hz } => {
                if !pos(center_hz) || center_hz >= nyq || !pos(half_width_hz) {
                    return bad("notch frequency");
                }
            }
            Distortion::Comb { delay_ms, feedback } => {
                if !pos(delay_ms) || !(0.0..1.0).contains(&feedback.abs()) {
                    return bad("comb delay/feedback");
                }
            }
            Distortion::Tremolo { rate_hz, depth } => {
                if !pos(rate_hz) || !(0.0..=1.0).contains(&depth) {
                    return bad("tremolo rate/depth");
                }
            }
            Distortion::AdditiveNoise { snr_db, .. } => {
                if !snr_db.is_finite() {
                    return bad("snr");
                }
            }
            Distortion::HarmonicTone { freq_hz, amplitude } => {
                if !pos(freq_hz) || freq_hz >= nyq || !level_ok(amplitude) {
                    return bad("tone");
                }
            }
            Distortion::Reverberation { rt60_s, early_ms } => {
                if !pos(rt60_s) || !(early_ms >= 0.0) {
                    return bad("reverberation");
                }
            }
            Distortion::ExponentialTail { tail_ms, decay } => {
                if !pos(tail_ms) || !(0.0..=1.0).contains(&decay) {
                    return bad("exponential tail");
                }
            }
            Distortion::NoiseGate { threshold } | Distortion::HardClip { threshold } => {
                if !level_ok(threshold) {
                    return bad("threshold");
                }
            }
            Distortion::PitchShift { semitones } => {
                if !semitones.is_finite() || semitones.abs() > 24.0 {
                    return bad("pitch offset");
                }
            }
            Distortion::LowPass { cutoff } | Distortion::HighPass { cutoff } => match cutoff {
                Cutoff::Hz(f) if !pos(f) || f >= nyq => return bad("cutoff"),
                Cutoff::EnergyQuantile(q) if !(q > 0.0 && q < 1.0) => return bad("energy quantile"),
                _ => {}
            },
            Distortion::Echo { delay_ms, gain } => {
                if !pos(delay_ms) || !gain.is_finite() {
                    return bad("echo");
                }
            }
            Distortion::Vibrato { rate_hz, depth } => {
                let ok = match depth {
                    VibratoDepth::Fixed(d) => d.is_finite() && (0.0..1.0).contains(&d),
                    VibratoDepth::Adaptive => true,
                };
                if !pos(rate_hz) || !ok {
                    return bad("vibrato");
                }
            }
        }
        Ok(())
    }
}

fn level_ok(l: Level) -> bool {
    let v = match l {
        Level::Absolute(v) | Level::RmsFactor(v) | Level::P95Factor(v) => v,
    };
    v.is_finite() && v >= 0.0
}

/// Amplitude statistics of the input that relative parameters refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputStats {
    pub rms: f64,
    pub p95: f64,
}

impl InputStats {
    pub fn of(x: &[f64]) -> Self {
        InputStats { rms: rms(x), p95: abs_percentile(x, 0.95) }
    }
}

fn ms_to_samples(ms: f64, sr: u32) -> usize {
    (ms * sr as f64 / 1000.0).round() as usize
}

/// Applies `spec` to `x`. The output has the input's length; stochastic
/// families draw from `rng`.
pub fn apply_distortion<R: Rng>(x: &[f64], sr: u32, spec: &Distortion, rng: &mut R) -> Result<Vec<f64>, AudioError> {
    if x.len() < MIN_LEN {
        return Err(AudioError::TooShort { len: x.len(), min: MIN_LEN });
    }
    spec.validate(sr)?;
    let fs = sr as f64;
    let stats = InputStats::of(x);
    let out = match *spec {
        Distortion::Notch { center_hz, half_width_hz } => {
            Biquad::notch(center_hz, center_hz / (2.0 * half_width_hz), fs).process(x)
        }
        Distortion::Comb { delay_ms, feedback } => {
            let d = ms_to_samples(delay_ms, sr).max(1);
            let mut y = x.to_vec();
            for n in d..y.len() {
                y[n] += feedback * y[n - d];
            }
            y
        }
        Distortion::Tremolo { rate_hz, depth } => x
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let lfo = 0.5 * (1.0 + (2.0 * PI * rate_hz * n as f64 / fs).sin());
                v * (1.0 - depth + depth * lfo)
            })
            .collect(),
        Distortion::AdditiveNoise { snr_db, color } => {
            let noise = colored_noise(x.len(), color, rng);
            let nr = rms(&noise);
            let target = stats.rms / 10f64.powf(snr_db / 20.0);
            let g = if nr > 0.0 { target / nr } else { 0.0 };
            x.iter().zip(&noise).map(|(a, b)| a + g * b).collect()
        }
        Distortion::HarmonicTone { freq_hz, amplitude } => {
            let a = amplitude.resolve(&stats);
            x.iter()
                .enumerate()
                .map(|(n, v)| v + a * (2.0 * PI * freq_hz * n as f64 / fs).sin())
                .collect()
        }
        Distortion::Reverberation { rt60_s, early_ms } => {
            let start = ms_to_samples(early_ms, sr).max(1);
            let len = (rt60_s.min(2.0) * fs).round() as usize;
            let mut ir = vec![0.0; start + len];
            ir[0] = 1.0;
            let rate = 3.0 * 10f64.ln() / (rt60_s * fs);
            for k in 0..len {
                let z: f64 = StandardNormal.sample(rng);
                ir[start + k] = z * (-rate * k as f64).exp();
            }
            unit_tail(&mut ir[start..], 1.0);
            convolve_same_len(x, &ir)
        }
        Distortion::ExponentialTail { tail_ms, decay } => {
            let len = ms_to_samples(tail_ms, sr).max(1);
            let mut ir = vec![0.0; len + 1];
            ir[0] = 1.0;
            for k in 0..len {
                let z: f64 = StandardNormal.sample(rng);
                ir[1 + k] = z * (-5.0 * k as f64 / len as f64).exp();
            }
            unit_tail(&mut ir[1..], decay);
            convolve_same_len(x, &ir)
        }
        Distortion::NoiseGate { threshold } => {
            let t = threshold.resolve(&stats);
            let env = moving_rms(x, ms_to_samples(10.0, sr).max(1));
            x.iter().zip(&env).map(|(v, e)| if *e < t { 0.0 } else { *v }).collect()
        }
        Distortion::PitchShift { semitones } => {
            let ratio = 2f64.powf(semitones / 12.0);
            let squeezed = ((x.len() as f64 / ratio).round() as usize).max(2);
            let resampled = resample_linear(x, squeezed);
            ola_stretch(&resampled, x.len(), ms_to_samples(40.0, sr).max(8))
        }
        Distortion::LowPass { cutoff } => {
            let f = resolve_cutoff(x, sr, cutoff);
            let secs: Vec<Biquad> = BUTTERWORTH4_Q.iter().map(|&q| Biquad::low_pass(f, q, fs)).collect();
            cascade(&secs, x)
        }
        Distortion::HighPass { cutoff } => {
            let f = resolve_cutoff(x, sr, cutoff);
            let secs: Vec<Biquad> = BUTTERWORTH4_Q.iter().map(|&q| Biquad::high_pass(f, q, fs)).collect();
            cascade(&secs, x)
        }
        Distortion::Echo { delay_ms, gain } => {
            let d = ms_to_samples(delay_ms, sr).max(1);
            let mut y = x.to_vec();
            for n in d..y.len() {
                y[n] += gain * x[n - d];
            }
            y
        }
        Distortion::HardClip { threshold } => {
            let t = threshold.resolve(&stats);
            x.iter().map(|v| v.clamp(-t, t)).collect()
        }
        Distortion::Vibrato { rate_hz, depth } => {
            let d = match depth {
                VibratoDepth::Fixed(d) => d,
                VibratoDepth::Adaptive => adaptive_vibrato_depth(&stats),
            };
            // rate deviation d·cos(·) integrates to a delay swing of d / (2π r) seconds
            let swing = d / (2.0 * PI * rate_hz) * fs;
            (0..x.len())
                .map(|n| {
                    let p = n as f64 + swing * (2.0 * PI * rate_hz * n as f64 / fs).sin();
                    sample_at(x, p)
                })
                .collect()
        }
    };
    debug_assert_eq!(out.len(), x.len());
    Ok(out)
}

/// Adaptive vibrato depth used by the PM bank.
pub fn adaptive_vibrato_depth(stats: &InputStats) -> f64 {
    if stats.p95 <= 0.0 {
        return 0.01;
    }
    (0.05 * stats.rms / stats.p95).clamp(0.01, 0.05)
}

fn unit_tail(tail: &mut [f64], scale: f64) {
    let e = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
    if e > 0.0 {
        for v in tail.iter_mut() {
            *v *= scale / e;
        }
    }
}

fn moving_rms(x: &[f64], win: usize) -> Vec<f64> {
    let half = win / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    (0..x.len())
        .map(|n| {
            let lo = n.saturating_sub(half);
            let hi = (n + half + 1).min(x.len());
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt()
        })
        .collect()
}

/// Gaussian noise with power spectral density proportional to `f^0`, `f^-1`
/// or `f^-2`, zero mean.
pub fn colored_noise<R: Rng>(n: usize, color: NoiseColor, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let exponent = match color {
        NoiseColor::White => return white,
        NoiseColor::Pink => 0.5,
        NoiseColor::Brown => 1.0,
    };
    let m = n.next_power_of_two().max(2);
    let mut buf: Vec<Complex<f64>> =
        (0..m).map(|k| Complex::new(white.get(k).copied().unwrap_or(0.0), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..m {
        let bin = k.min(m - k) as f64;
        buf[k] /= bin.powf(exponent);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let mut y: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    let mean = y.iter().sum::<f64>() / n.max(1) as f64;
    for v in &mut y {
        *v -= mean;
    }
    y
}

/// Cutoff in Hz; energy quantiles are rounded to 100 Hz and kept inside
/// `[100 Hz, 0.45 fs]`.
pub fn resolve_cutoff(x: &[f64], sr: u32, cutoff: Cutoff) -> f64 {
    match cutoff {
        Cutoff::Hz(f) => f,
        Cutoff::EnergyQuantile(q) => {
            let n = x.len().next_power_of_two();
            let p = power_spectrum(x, n);
            let total: f64 = p.iter().sum();
            let fs = sr as f64;
            let hi = ((0.45 * fs) / 100.0).floor() * 100.0;
            if total <= 0.0 {
                return hi.max(100.0);
            }
            let mut acc = 0.0;
            let mut f = fs / 2.0;
            for (k, e) in p.iter().enumerate() {
                acc += e;
                if acc >= q * total {
                    f = k as f64 * fs / n as f64;
                    break;
                }
            }
            ((f / 100.0).round() * 100.0).clamp(100.0, hi.max(100.0))
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

const NOISE_SNRS: [f64; 7] = [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0];
const NOISE_COLORS: [NoiseColor; 3] = [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown];
const TONE_FREQS: [f64; 4] = [100.0, 500.0, 1000.0, 4000.0];
const PITCH_OFFSETS: [f64; 4] = [-4.0, -2.0, 2.0, 4.0];
const TREMOLO_RATES: [f64; 4] = [1.0, 2.0, 4.0, 6.0];
const VIBRATO_RATES: [f64; 3] = [3.0, 5.0, 7.0];
const NOTCH_HALF_WIDTH: f64 = 60.0;

/// Centers of the PM notch family: at most 20, at least 300 Hz apart, with
/// each ±60 Hz band inside 80 Hz to 0.45 fs.
pub fn pm_notch_centers(sr: u32) -> Vec<f64> {
    let lo = 80.0 + NOTCH_HALF_WIDTH;
    let hi = 0.45 * sr as f64 - NOTCH_HALF_WIDTH;
    if hi < lo {
        return Vec::new();
    }
    let n = (((hi - lo) / 300.0).floor() as usize + 1).min(20);
    grid(lo, hi, n)
}

/// Enumerated bank for `variant` at sample rate `sr`. Continuous ranges are
/// covered by four evenly spaced values; entries that cannot be realized at
/// `sr` (frequencies at or above Nyquist) are left out.
pub fn default_bank(variant: Variant, sr: u32) -> Vec<Distortion> {
    let nyq = sr as f64 / 2.0;
    let mut v = Vec::new();
    match variant {
        Variant::Ps => {
            for c in [500.0, 1000.0, 2000.0, 4000.0, 8000.0] {
                if c + NOTCH_HALF_WIDTH < nyq {
                    v.push(Distortion::Notch { center_hz: c, half_width_hz: NOTCH_HALF_WIDTH });
                }
            }
            for delay_ms in grid(2.5, 15.0, 4) {
                for feedback in grid(0.4, 0.9, 4) {
                    v.push(Distortion::Comb { delay_ms, feedback });
                }
            }
            for rate_hz in TREMOLO_RATES {
                for depth in grid(0.3, 1.0, 4) {
                    v.push(Distortion::Tremolo { rate_hz, depth });
                }
            }
        }
        Variant::Pm => {
            for c in pm_notch_centers(sr) {
                v.push(Distortion::Notch { center_hz: c, half_width_hz: NOTCH_HALF_WIDTH });
            }
            for (delay_ms, feedback) in [(2.5, 0.4), (5.0, 0.5), (7.5, 0.6), (10.0, 0.7), (12.5, 0.9)] {
                v.push(Distortion::Comb { delay_ms, feedback });
            }
            for rate_hz in TREMOLO_RATES {
                v.push(Distortion::Tremolo { rate_hz, depth: 1.0 });
            }
        }
    }
    for snr_db in NOISE_SNRS {
        for color in NOISE_COLORS {
            v.push(Distortion::AdditiveNoise { snr_db, color });
        }
    }
    for freq_hz in TONE_FREQS.into_iter().filter(|f| *f < nyq) {
        let amps: Vec<Level> = match variant {
            Variant::Ps => grid(0.02, 0.08, 4).into_iter().map(Level::Absolute).collect(),
            Variant::Pm => [0.4, 0.6, 0.8, 1.0].into_iter().map(Level::RmsFactor).collect(),
        };
        for amplitude in amps {
            v.push(Distortion::HarmonicTone { freq_hz, amplitude });
        }
    }
    match variant {
        Variant::Ps => {
            for rt60_s in grid(0.3, 1.1, 4) {
                for early_ms in [5.0, 10.0, 15.0, 20.0] {
                    v.push(Distortion::Reverberation { rt60_s, early_ms });
                }
            }
            for t in [0.005, 0.01, 0.02, 0.04] {
                v.push(Distortion::NoiseGate { threshold: Level::Absolute(t) });
            }
        }
        Variant::Pm => {
            for tail_ms in [50.0, 100.0, 200.0, 400.0] {
                for decay in [0.3, 0.5, 0.7, 0.9] {
                    v.push(Distortion::ExponentialTail { tail_ms, decay });
                }
            }
            for t in [0.05, 0.1, 0.2, 0.4] {
                v.push(Distortion::NoiseGate { threshold: Level::P95Factor(t) });
            }
        }
    }
    for semitones in PITCH_OFFSETS {
        v.push(Distortion::PitchShift { semitones });
    }
    match variant {
        Variant::Ps => {
            for f in [2000.0, 3000.0, 4000.0, 6000.0].into_iter().filter(|f| *f < 0.45 * sr as f64) {
                v.push(Distortion::LowPass { cutoff: Cutoff::Hz(f) });
            }
            for f in [100.0, 300.0, 500.0, 800.0].into_iter().filter(|f| *f < 0.45 * sr as f64) {
                v.push(Distortion::HighPass { cutoff: Cutoff::Hz(f) });
            }
            for delay_ms in grid(5.0, 20.0, 4) {
                for gain in grid(0.3, 0.7, 4) {
                    v.push(Distortion::Echo { delay_ms, gain });
                }
            }
            for t in [0.3, 0.5, 0.7] {
                v.push(Distortion::HardClip { threshold: Level::Absolute(t) });
            }
            for rate_hz in VIBRATO_RATES {
                for d in grid(0.001, 0.003, 4) {
                    v.push(Distortion::Vibrato { rate_hz, depth: VibratoDepth::Fixed(d) });
                }
            }
        }
        Variant::Pm => {
            for q in [0.50, 0.70, 0.85, 0.95] {
                v.push(Distortion::LowPass { cutoff: Cutoff::EnergyQuantile(q) });
            }
            for q in [0.05, 0.15, 0.30, 0.50] {
                v.push(Distortion::HighPass { cutoff: Cutoff::EnergyQuantile(q) });
            }
            for delay_ms in [50.0, 100.0, 150.0] {
                for gain in [0.4, 0.5, 0.7] {
                    v.push(Distortion::Echo { delay_ms, gain });
                }
            }
            for t in [0.3, 0.5, 0.7] {
                v.push(Distortion::HardClip { threshold: Level::P95Factor(t) });
            }
            for rate_hz in VIBRATO_RATES {
                v.push(Distortion::Vibrato { rate_hz, depth: VibratoDepth::Adaptive });
            }
        }
    }
    v
}

/// Keeps `n` entries spread evenly over `specs`, preserving order.
pub fn subsample(specs: &[Distortion], n: usize) -> Vec<Distortion> {
    if n >= specs.len() {
        return specs.to_vec();
    }
    (0..n).map(|k| specs[k * specs.len() / n]).collect()
}

/// Declarative bank: an explicit ordered spec list, or the default
/// enumeration for a variant, optionally thinned to `size` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub variant: Variant,
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default)]
    pub families: Option<Vec<Family>>,
    #[serde(default, rename = "spec")]
    pub specs: Vec<Distortion>,
}

impl BankConfig {
    pub fn new(variant: Variant) -> Self {
        BankConfig { variant, size: None, families: None, specs: Vec::new() }
    }

    /// Ordered specs realized at `sr`.
    pub fn specs(&self, sr: u32) -> Result<Vec<Distortion>, AudioError> {
        let mut specs = if self.specs.is_empty() { default_bank(self.variant, sr) } else { self.specs.clone() };
        if let Some(fams) = &self.families {
            specs.retain(|s| fams.contains(&s.family()));
        }
        if let Some(n) = self.size {
            specs = subsample(&specs, n);
        }
        if specs.is_empty() {
            return Err(AudioError::InvalidParams("empty distortion bank".into()));
        }
        for s in &specs {
            s.validate(sr)?;
        }
        Ok(specs)
    }
}

/// Random generator for entry `index` of a bank seeded with `seed`.
pub fn spec_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Applies every spec to `y`; entry `p` draws from stream `p` of `seed`.
/// With `target_lufs`, each output is loudness-normalized (peak-limited);
/// outputs too quiet to measure are kept as they are.
pub fn generate_bank(
    y: &[f64],
    sr: u32,
    specs: &[Distortion],
    seed: u64,
    target_lufs: Option<f64>,
) -> Result<Vec<Vec<f64>>, AudioError> {
    specs
        .iter()
        .enumerate()
        .map(|(p, spec)| {
            let out = apply_distortion(y, sr, spec, &mut spec_rng(seed, p))?;
            match target_lufs {
                Some(t) => match normalize_loudness(&out, sr, t) {
                    Ok(n) => Ok(n.samples),
                    Err(AudioError::SilentInput) => Ok(out),
                    Err(e) => Err(e),
                },
                None => Ok(out),
            }
        })
        .collect()
}
