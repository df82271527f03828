//! Filters, spectra and resampling shared by the meter and the distortions.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Direct-form-I biquad with normalized coefficients (`a0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        let a0 = a[0];
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [1.0, a[1] / a0, a[2] / a0],
        }
    }

    /// Notch at `f0` with quality `q` (bilinear transform, prewarped).
    pub fn notch(f0: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * f0 / sr;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        Self::normalized([1.0, -2.0 * c, 1.0], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    pub fn low_pass(f0: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * f0 / sr;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        Self::normalized(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn high_pass(f0: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * f0 / sr;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        Self::normalized(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[1] * y1 - self.a[2] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }

    /// Magnitude response at `f` Hz.
    pub fn magnitude(&self, f: f64, sr: f64) -> f64 {
        let w = 2.0 * PI * f / sr;
        let z1 = Complex::new(w.cos(), -w.sin());
        let z2 = z1 * z1;
        let num = Complex::new(self.b[0], 0.0) + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex::new(1.0, 0.0) + z1 * self.a[1] + z2 * self.a[2];
        (num / den).norm()
    }
}

/// Q values of the two sections of a 4th-order Butterworth filter.
pub const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_8];

pub fn cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    sections.iter().fold(x.to_vec(), |acc, s| s.process(&acc))
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `q`-quantile (0..=1) of absolute amplitudes, linear interpolation.
pub fn abs_percentile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (a.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    a[lo] + (a[hi] - a[lo]) * (pos - lo as f64)
}

/// One-sided power spectrum (`n/2 + 1` bins) of `x` zero-padded to `n`.
pub fn power_spectrum(x: &[f64], n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|k| Complex::new(x.get(k).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Linear convolution truncated to `x.len()`, via FFT.
pub fn convolve_same_len(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| -> Vec<Complex<f64>> {
        (0..n).map(|k| Complex::new(v.get(k).copied().unwrap_or(0.0), 0.0)).collect()
    };
    let mut xf = pad(x);
    let mut hf = pad(h);
    fwd.process(&mut xf);
    fwd.process(&mut hf);
    for (a, b) in xf.iter_mut().zip(&hf) {
        *a *= b;
    }
    inv.process(&mut xf);
    xf[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Linear-interpolated sample at fractional position `p`; zero outside.
pub fn sample_at(x: &[f64], p: f64) -> f64 {
    if p < 0.0 || x.is_empty() {
        return 0.0;
    }
    let i = p.floor() as usize;
    if i >= x.len() {
        return 0.0;
    }
    let frac = p - i as f64;
    let a = x[i];
    let b = x.get(i + 1).copied().unwrap_or(0.0);
    a + (b - a) * frac
}

/// Resamples `x` to `len` samples by linear interpolation over the same span.
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    if len == 0 || x.is_empty() {
        return vec![0.0; len];
    }
    if x.len() == 1 {
        return vec![x[0]; len];
    }
    let step = (x.len() - 1) as f64 / (len.max(2) - 1) as f64;
    (0..len)
        .map(|k| {
            let p = k as f64 * step;
            let i = (p.floor() as usize).min(x.len() - 2);
            let f = p - i as f64;
            x[i] + (x[i + 1] - x[i]) * f
        })
        .collect()
}

/// Overlap-add time stretch to exactly `out_len` samples with Hann windows.
pub fn ola_stretch(x: &[f64], out_len: usize, win: usize) -> Vec<f64> {
    let win = win.max(4) & !1;
    let syn_hop = win / 2;
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    if x.is_empty() || out_len == 0 {
        return out;
    }
    let ratio = x.len() as f64 / out_len as f64;
    let window: Vec<f64> = (0..win)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / win as f64).cos())
        .collect();
    let mut start = 0usize;
    loop {
        let src = (start as f64 * ratio).round() as usize;
        for k in 0..win {
            let o = start + k;
            if o >= out_len {
                break;
            }
            let s = x.get(src + k).copied().unwrap_or(0.0);
            out[o] += window[k] * s;
            norm[o] += window[k];
        }
        if start >= out_len {
            break;
        }
        start += syn_hop;
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-8 {
            *o /= n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notch_kills_center_and_passes_far() {
        let f = Biquad::notch(1000.0, 1000.0 / 120.0, 16000.0);
        assert!(f.magnitude(1000.0, 16000.0) < 1e-9);
        assert!((f.magnitude(4000.0, 16000.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn butterworth4_octave_attenuation() {
        let sr = 16000.0;
        let secs: Vec<Biquad> = BUTTERWORTH4_Q.iter().map(|&q| Biquad::low_pass(2000.0, q, sr)).collect();
        let mag: f64 = secs.iter().map(|s| s.magnitude(4000.0, sr)).product();
        assert!(20.0 * mag.log10() < -20.0);
        let pass: f64 = secs.iter().map(|s| s.magnitude(100.0, sr)).product();
        assert!((pass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let x = [1.0, 2.0, 3.0, -1.0];
        let y = convolve_same_len(&x, &[1.0]);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = convolve_same_len(&x, &[0.0, 1.0]);
        assert!((y[1] - 1.0).abs() < 1e-12 && y[0].abs() < 1e-12);
    }

    #[test]
    fn percentile_and_rms() {
        let x: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        assert!((abs_percentile(&x, 0.95) - 0.95).abs() < 1e-12);
        assert!((rms(&[1.0, -1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stretch_and_resample_lengths() {
        let x: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.05).sin()).collect();
        assert_eq!(ola_stretch(&x, 1300, 256).len(), 1300);
        assert_eq!(resample_linear(&x, 777).len(), 777);
    }
}
