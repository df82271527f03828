//! Synthetic two-talker corpus with systems of graded quality.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mapss_audio::distortions::{apply_distortion, spec_rng, Cutoff, Distortion, NoiseColor};
use mapss_audio::{write_wav, Signal};
use mapss_core::rng::stream_rng;
use rand::Rng;

use crate::report::{write_mos, MosTable};

pub const SAMPLE_RATE: u32 = 16000;
pub const DURATION_S: f64 = 5.0;
pub const CONFIG_FILE: &str = "config.toml";
pub const MOS_FILE: &str = "mos.csv";
pub const TRIAL_ID: &str = "demo";

/// Systems and the listener score each one is centred on.
pub const SYSTEMS: [(&str, f64); 5] = [
    ("clean", 4.6),
    ("leak20", 3.9),
    ("muffled", 3.4),
    ("noisy", 2.6),
    ("leak50", 2.1),
];

struct Voice {
    f0: f64,
    formants: [(f64, f64); 3],
    syllable_hz: f64,
    phase: f64,
}

const VOICES: [Voice; 2] = [
    Voice { f0: 110.0, formants: [(700.0, 130.0), (1220.0, 170.0), (2600.0, 250.0)], syllable_hz: 3.1, phase: 0.0 },
    Voice { f0: 210.0, formants: [(400.0, 100.0), (2000.0, 200.0), (3000.0, 300.0)], syllable_hz: 4.3, phase: 1.3 },
];

fn formant_gain(f: f64, formants: &[(f64, f64)]) -> f64 {
    formants.iter().map(|&(c, bw)| 1.0 / (1.0 + ((f - c) / bw).powi(2))).sum::<f64>() + 0.02
}

/// Harmonic voice with a slow pitch glide and on/off syllables.
fn synth_voice(v: &Voice, n: usize, sr: f64) -> Vec<f64> {
    let harmonics = ((0.45 * sr) / (v.f0 * 1.2)) as usize;
    let mut phase = 0.0;
    (0..n)
        .map(|k| {
            let t = k as f64 / sr;
            let f0 = v.f0 * (1.0 + 0.08 * (2.0 * PI * 0.7 * t + v.phase).sin());
            phase += 2.0 * PI * f0 / sr;
            let syl = (2.0 * PI * v.syllable_hz * t + v.phase).sin();
            let env = if syl > -0.2 { (syl + 0.2) / 1.2 } else { 0.0 };
            let pause = if (t * 0.9 + v.phase).fract() < 0.12 { 0.0 } else { 1.0 };
            let s: f64 = (1..=harmonics)
                .map(|h| formant_gain(h as f64 * f0, &v.formants) * (h as f64 * phase).sin() / (h as f64).sqrt())
                .sum();
            0.1 * env * pause * s
        })
        .collect()
}

/// Output of `system` for source `i`.
fn system_output(system: &str, i: usize, refs: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let own = &refs[i];
    let other = &refs[1 - i];
    let mix = |g: f64| own.iter().zip(other).map(|(a, b)| a + g * b).collect::<Vec<_>>();
    let out = match system {
        "clean" => own.clone(),
        "leak20" => mix(0.2),
        "leak50" => mix(0.5),
        "muffled" => apply_distortion(own, SAMPLE_RATE, &Distortion::LowPass { cutoff: Cutoff::Hz(1200.0) }, &mut spec_rng(seed, i))?,
        "noisy" => apply_distortion(
            own,
            SAMPLE_RATE,
            &Distortion::AdditiveNoise { snr_db: 5.0, color: NoiseColor::Pink },
            &mut spec_rng(seed, 100 + i),
        )?,
        other => anyhow::bail!("unknown demo system {other}"),
    };
    Ok(out)
}

fn config_text(seed: u64) -> String {
    let mut s = format!(
        "scenario = \"english\"\nseed = {seed}\nmos = \"{MOS_FILE}\"\noutput_dir = \"results\"\nnmi_svg = true\nmc_draws = 2000\n\n\
         [ps_bank]\nsize = 32\n\n[pm_bank]\nsize = 32\n\n[[trial]]\nid = \"{TRIAL_ID}\"\nreferences = [\"ref/src0.wav\", \"ref/src1.wav\"]\n"
    );
    for (name, _) in SYSTEMS {
        s.push_str(&format!(
            "\n[[trial.system]]\nname = \"{name}\"\noutputs = [\"sys/{name}_src0.wav\", \"sys/{name}_src1.wav\"]\n"
        ));
    }
    s
}

/// Writes the corpus, `mos.csv` and `config.toml` under `dir`; returns the config path.
pub fn write_demo(dir: &Path, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("ref"))?;
    std::fs::create_dir_all(dir.join("sys"))?;
    let n = (DURATION_S * SAMPLE_RATE as f64) as usize;
    let refs: Vec<Vec<f64>> = VOICES.iter().map(|v| synth_voice(v, n, SAMPLE_RATE as f64)).collect();
    let save = |rel: String, samples: Vec<f64>| -> Result<()> {
        let path = dir.join(&rel);
        write_wav(&path, &Signal { samples, sample_rate: SAMPLE_RATE }).with_context(|| format!("writing {}", path.display()))
    };
    for (i, r) in refs.iter().enumerate() {
        save(format!("ref/src{i}.wav"), r.clone())?;
    }
    let mut jitter = stream_rng(seed, 0x6d6f73);
    let mut mos = MosTable::new();
    for (name, centre) in SYSTEMS {
        for i in 0..refs.len() {
            save(format!("sys/{name}_src{i}.wav"), system_output(name, i, &refs, seed)?)?;
            let score: f64 = centre + jitter.random_range(-0.15..0.15);
            mos.insert((TRIAL_ID.to_string(), name.to_string(), i as u32), (score * 100.0).round() / 100.0);
        }
    }
    write_mos(&dir.join(MOS_FILE), &mos)?;
    let cfg = dir.join(CONFIG_FILE);
    std::fs::write(&cfg, config_text(seed))?;
    Ok(cfg)
}
