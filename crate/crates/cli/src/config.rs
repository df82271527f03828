//! Run configuration: a TOML file with per-scenario presets and CLI overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mapss_audio::distortions::{BankConfig, Family, Variant};
use mapss_audio::FrameParams;
use mapss_core::aggregate::{AggregationConfig, Method};
use mapss_core::bounds::{BoundConfig, DEFAULT_DECORRELATION_GAP};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    English,
    Spanish,
    MusicDrums,
    MusicNodrums,
}

impl Scenario {
    pub fn is_music(self) -> bool {
        matches!(self, Scenario::MusicDrums | Scenario::MusicNodrums)
    }

    /// Density-normalization exponent of the scenario.
    pub fn alpha(self) -> f64 {
        if self == Scenario::MusicDrums {
            0.0
        } else {
            1.0
        }
    }

    pub fn frame_params(self) -> FrameParams {
        if self.is_music() {
            FrameParams::MUSIC
        } else {
            FrameParams::SPEECH
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    /// Frames of the waveform are the feature vectors.
    #[default]
    Raw,
    /// Precomputed `.mapssemb` files listed per system.
    File,
}

/// Pooling settings shared by both measures plus a method per measure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggSection {
    pub window: Option<usize>,
    pub hop: Option<usize>,
    pub p: Option<f64>,
    pub ps: Option<Method>,
    pub pm: Option<Method>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    /// Keep this many entries, spread evenly over the enumeration.
    pub size: Option<usize>,
    pub families: Option<Vec<Family>>,
    /// TOML bank file replacing the default enumeration.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    /// One output per reference, in reference order.
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
    pub embeddings_ps: Option<PathBuf>,
    pub embeddings_pm: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub id: String,
    #[serde(default)]
    pub references: Vec<PathBuf>,
    #[serde(rename = "system")]
    pub systems: Vec<SystemConfig>,
}

fn default_lufs() -> f64 {
    -23.0
}
fn default_t() -> u32 {
    1
}
fn default_tau() -> f64 {
    0.99
}
fn default_confidence() -> f64 {
    0.95
}
fn default_draws() -> usize {
    10_000
}
fn default_gap() -> usize {
    DEFAULT_DECORRELATION_GAP
}
fn default_out() -> PathBuf {
    PathBuf::from("mapss_out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the distortion banks; the run seed when absent.
    pub bank_seed: Option<u64>,
    #[serde(default = "default_lufs")]
    pub target_lufs: f64,
    pub alpha: Option<f64>,
    #[serde(default = "default_t")]
    pub t: u32,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub frame_ms: Option<f64>,
    pub hop_ms: Option<f64>,
    pub activity_db: Option<f64>,
    #[serde(default)]
    pub bounds: BoundConfig,
    /// Confidence of utterance and correlation half-widths.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub agg: AggSection,
    #[serde(default)]
    pub ps_bank: BankSection,
    #[serde(default)]
    pub pm_bank: BankSection,
    #[serde(default)]
    pub encoder: Encoder,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub mos: Option<PathBuf>,
    /// Monte Carlo draws of the SRCC half-width.
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
    /// Within-trial jitter correlation of the scenario half-width.
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_gap")]
    pub decorrelation_gap: usize,
    #[serde(default)]
    pub nmi_svg: bool,
    pub threads: Option<usize>,
    #[serde(default, rename = "trial")]
    pub trials: Vec<TrialConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

/// Parameters after applying the scenario presets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub alpha: f64,
    pub frame: FrameParams,
    pub ps_agg: AggregationConfig,
    pub pm_agg: AggregationConfig,
    pub bank_seed: u64,
}

impl RunConfig {
    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(m) = &mut self.mos {
            fix(m);
        }
        for b in [&mut self.ps_bank, &mut self.pm_bank] {
            if let Some(f) = &mut b.file {
                fix(f);
            }
        }
        for trial in &mut self.trials {
            trial.references.iter_mut().for_each(fix);
            for sys in &mut trial.systems {
                sys.outputs.iter_mut().for_each(fix);
                sys.embeddings_ps.iter_mut().for_each(fix);
                sys.embeddings_pm.iter_mut().for_each(fix);
            }
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let preset = self.scenario.frame_params();
        let frame = FrameParams {
            frame_ms: self.frame_ms.unwrap_or(preset.frame_ms),
            hop_ms: self.hop_ms.unwrap_or(preset.hop_ms),
            activity_db: self.activity_db.unwrap_or(preset.activity_db),
        };
        let base = AggregationConfig {
            method: Method::Pesq,
            window: self.agg.window.unwrap_or(30),
            hop: self.agg.hop.unwrap_or(15),
            p: self.agg.p.unwrap_or(6.0),
        };
        let ps_agg = AggregationConfig { method: self.agg.ps.unwrap_or(Method::Pesq), ..base };
        let pm_agg = AggregationConfig { method: self.agg.pm.unwrap_or(Method::Average), ..base };
        ps_agg.validate()?;
        pm_agg.validate()?;
        let alpha = self.alpha.unwrap_or(self.scenario.alpha());
        if !(0.0..=1.0).contains(&alpha) {
            bail!("alpha must lie in [0, 1], got {alpha}");
        }
        if self.t == 0 {
            bail!("diffusion time t must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bail!("tau must lie in (0, 1], got {}", self.tau);
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            bail!("confidence must lie in (0, 1), got {}", self.confidence);
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            bail!("rho must lie in [-1, 1], got {}", self.rho);
        }
        Ok(Resolved { alpha, frame, ps_agg, pm_agg, bank_seed: self.bank_seed.unwrap_or(self.seed) })
    }

    /// Bank description for `variant` from the config section.
    pub fn bank_config(&self, variant: Variant) -> Result<BankConfig> {
        let section = match variant {
            Variant::Ps => &self.ps_bank,
            Variant::Pm => &self.pm_bank,
        };
        let mut bank = match &section.file {
            Some(path) => load_bank_file(path)?,
            None => BankConfig::new(variant),
        };
        if bank.variant != variant {
            bail!("bank file for {:?} declares variant {:?}", variant, bank.variant);
        }
        if section.size.is_some() {
            bank.size = section.size;
        }
        if section.families.is_some() {
            bank.families = section.families.clone();
        }
        Ok(bank)
    }
}

pub fn load_bank_file(path: &Path) -> Result<BankConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing bank file {}", path.display()))
}
