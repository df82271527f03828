use std::f64::consts::PI;

use mapss_audio::distortions::{
    apply_distortion, default_bank, generate_bank, spec_rng, BankConfig, Cutoff, Distortion, NoiseColor, Variant,
};
use mapss_audio::dsp::{power_spectrum, rms};
use proptest::prelude::*;

const SR: u32 = 16000;

fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| amp * (2.0 * PI * freq * k as f64 / SR as f64).sin()).collect()
}

fn speechlike(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..n)
        .map(|k| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let noise = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            let t = k as f64 / SR as f64;
            let env = 0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin();
            env * (0.3 * (2.0 * PI * 220.0 * t).sin() + 0.1 * (2.0 * PI * 660.0 * t).sin() + 0.05 * noise)
        })
        .collect()
}

/// Energy within ±`half` bins of `freq`.
fn band_energy(x: &[f64], freq: f64, half: usize) -> f64 {
    let n = x.len().next_power_of_two();
    let p = power_spectrum(x, n);
    let c = (freq * n as f64 / SR as f64).round() as usize;
    p[c.saturating_sub(half)..=(c + half).min(p.len() - 1)].iter().sum()
}

#[test]
fn additive_noise_hits_requested_snr() {
    let x = sine(440.0, 2f64.sqrt(), 32000);
    assert!((rms(&x) - 1.0).abs() < 1e-3);
    for color in [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown] {
        for snr in [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0] {
            let spec = Distortion::AdditiveNoise { snr_db: snr, color };
            let y = apply_distortion(&x, SR, &spec, &mut spec_rng(11, 0)).unwrap();
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let realized = 20.0 * (rms(&x) / rms(&diff)).log10();
            assert!((realized - snr).abs() <= 0.5, "{color:?} {snr}: {realized}");
        }
    }
}

#[test]
fn notch_attenuates_its_center() {
    for center in [500.0, 1000.0, 2000.0, 4000.0] {
        let x = sine(center, 0.5, SR as usize * 2);
        let y = apply_distortion(&x, SR, &Distortion::Notch { center_hz: center, half_width_hz: 60.0 }, &mut spec_rng(0, 0))
            .unwrap();
        let att = 10.0 * (band_energy(&x, center, 2) / band_energy(&y, center, 2)).log10();
        assert!(att >= 25.0, "{center} Hz: {att} dB");
    }
}

#[test]
fn notch_on_matching_sine_removes_its_energy() {
    let x = sine(1000.0, 0.5, SR as usize * 2);
    let y = apply_distortion(&x, SR, &Distortion::Notch { center_hz: 1000.0, half_width_hz: 60.0 }, &mut spec_rng(0, 0))
        .unwrap();
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let ey: f64 = y.iter().map(|v| v * v).sum();
    assert!(10.0 * (ey / ex).log10() <= -30.0);
}

#[test]
fn low_pass_octave_attenuation() {
    for fc in [2000.0, 3000.0] {
        let x = sine(2.0 * fc, 0.5, SR as usize);
        let y = apply_distortion(&x, SR, &Distortion::LowPass { cutoff: Cutoff::Hz(fc) }, &mut spec_rng(0, 0)).unwrap();
        // skip the filter's start-up transient
        let att = 20.0 * (rms(&x[1600..]) / rms(&y[1600..])).log10();
        assert!(att >= 20.0, "{fc}: {att}");
        let pass = sine(fc / 8.0, 0.5, SR as usize);
        let yp = apply_distortion(&pass, SR, &Distortion::LowPass { cutoff: Cutoff::Hz(fc) }, &mut spec_rng(0, 0)).unwrap();
        assert!((rms(&yp[1600..]) / rms(&pass[1600..]) - 1.0).abs() < 0.02);
    }
}

#[test]
fn high_pass_octave_attenuation() {
    let x = sine(400.0, 0.5, SR as usize);
    let y = apply_distortion(&x, SR, &Distortion::HighPass { cutoff: Cutoff::Hz(800.0) }, &mut spec_rng(0, 0)).unwrap();
    assert!(20.0 * (rms(&x[3200..]) / rms(&y[3200..])).log10() >= 20.0);
}

#[test]
fn every_family_preserves_length() {
    let x = speechlike(SR as usize, 5);
    for variant in [Variant::Ps, Variant::Pm] {
        let specs = default_bank(variant, SR);
        let bank = generate_bank(&x, SR, &specs, 42, Some(-26.0)).unwrap();
        assert_eq!(bank.len(), specs.len());
        for (spec, y) in specs.iter().zip(&bank) {
            assert_eq!(y.len(), x.len(), "{spec:?}");
            assert!(y.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12), "{spec:?}");
        }
    }
}

#[test]
fn banks_are_deterministic_per_seed() {
    let x = speechlike(8000, 1);
    let specs = default_bank(Variant::Pm, SR);
    let a = generate_bank(&x, SR, &specs, 9, None).unwrap();
    let b = generate_bank(&x, SR, &specs, 9, None).unwrap();
    assert_eq!(a, b);
    let c = generate_bank(&x, SR, &specs, 10, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn pitch_shift_moves_a_tone() {
    let x = sine(500.0, 0.5, SR as usize);
    let y = apply_distortion(&x, SR, &Distortion::PitchShift { semitones: 12.0 }, &mut spec_rng(0, 0)).unwrap();
    let n = y.len().next_power_of_two();
    let p = power_spectrum(&y, n);
    let peak = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let f = peak as f64 * SR as f64 / n as f64;
    assert!((f - 1000.0).abs() < 20.0, "{f}");
}

#[test]
fn bank_config_filters_and_thins() {
    let mut cfg = BankConfig::new(Variant::Pm);
    cfg.size = Some(12);
    assert_eq!(cfg.specs(SR).unwrap().len(), 12);
    cfg.size = None;
    cfg.families = Some(vec![mapss_audio::Family::Echo]);
    assert_eq!(cfg.specs(SR).unwrap().len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_specs_preserve_length(len in 64usize..4000, idx in 0usize..113, seed in 0u64..1000) {
        let x = speechlike(len, seed);
        let specs = default_bank(Variant::Pm, SR);
        let spec = specs[idx % specs.len()];
        let y = apply_distortion(&x, SR, &spec, &mut spec_rng(seed, idx)).unwrap();
        prop_assert_eq!(y.len(), len);
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}
