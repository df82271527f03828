//! End-to-end evaluation: audio or embedding files in, per-frame JSONL out.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use mapss_audio::distortions::{generate_bank, Variant};
use mapss_audio::framing::{detect_overlap_frames, frame_slice, inject_delay, FramePlan};
use mapss_audio::loudness::normalize_loudness;
use mapss_audio::{read_wav, AudioError};
use mapss_core::bounds::{pm_frame_bound, ps_frame_bound, BoundConfig, FrameBound, Measure};
use mapss_core::embeddings::{assemble_frame_set, encode_raw, read_embedding_file, EmbeddingMatrix, SourceItems};
use mapss_core::manifold::{build_graph, decompose};
use mapss_core::measures::{score_pm_frame, score_ps_frame};
use mapss_core::rng::stream_id;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Encoder, Resolved, RunConfig};

/// Frames scored in parallel between two flushes of the JSONL file.
const CHUNK: usize = 16;

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const RUN_FILE: &str = "run.json";

/// Manifold and bound settings shared by both measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManifoldParams {
    pub alpha: f64,
    pub t: u32,
    pub tau: f64,
    pub bounds: BoundConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub radius: f64,
    pub half_width: f64,
    pub valid: bool,
    pub components: serde_json::Value,
}

impl BoundRecord {
    fn from_bound(b: &FrameBound) -> Self {
        BoundRecord {
            radius: b.radius,
            half_width: b.half_width,
            valid: b.valid,
            components: serde_json::to_value(b.components).unwrap_or(serde_json::Value::Null),
        }
    }
}

/// Score of one source under one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source: u32,
    pub value: f64,
    /// Own-cluster distance (PS) or squared distance to the reference (PM).
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_low_power: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_error: Option<String>,
}

impl ScoreRecord {
    /// Bound usable for propagation.
    pub fn valid_bound(&self) -> Option<&BoundRecord> {
        self.bound.as_ref().filter(|b| b.valid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub n_items: usize,
    /// Retained diffusion coordinates.
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub scores: Vec<ScoreRecord>,
}

impl MeasureRecord {
    fn failed(n_items: usize, e: impl std::fmt::Display) -> Self {
        MeasureRecord { n_items, d: 0, error: Some(e.to_string()), scores: Vec::new() }
    }

    pub fn score(&self, source: u32) -> Option<&ScoreRecord> {
        self.scores.iter().find(|s| s.source == source)
    }
}

/// One line of `frames.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub trial: String,
    pub system: String,
    pub frame: u32,
    pub time_s: f64,
    pub sources: Vec<u32>,
    pub ps: MeasureRecord,
    pub pm: MeasureRecord,
}

impl FrameRecord {
    pub fn key(&self) -> (String, String, u32) {
        (self.trial.clone(), self.system.clone(), self.frame)
    }
}

/// Scores every source of one frame set under `measure`. Numerical failures
/// are recorded rather than raised so one degenerate frame does not stop a run.
pub fn score_measure(em: &EmbeddingMatrix<f64>, measure: Measure, p: &ManifoldParams) -> MeasureRecord {
    let n = em.n_items();
    let layout = match em.layout() {
        Ok(l) => l,
        Err(e) => return MeasureRecord::failed(n, e),
    };
    let se = match build_graph(&em.vectors, p.alpha).and_then(|g| decompose(&g, p.t, p.tau)) {
        Ok(se) => se,
        Err(e) => return MeasureRecord::failed(n, e),
    };
    let d = se.d;
    let coords = se.coordinate_matrix(d);
    let full = se.coordinate_matrix(se.full_dim());
    let ridge = p.bounds.ridge;
    let scores = match measure {
        Measure::Ps => match score_ps_frame(&coords, &layout, ridge) {
            Ok(scores) => scores
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let bound = ps_frame_bound(&full, d, &layout.sources, i, s, &p.bounds);
                    ScoreRecord {
                        source: layout.sources[i].source_id,
                        value: s.ps,
                        a: s.a,
                        b: Some(s.b),
                        nearest: Some(layout.sources[s.nearest].source_id),
                        shape: None,
                        scale: None,
                        ks_pass: None,
                        ks_low_power: None,
                        bound: bound.as_ref().ok().map(BoundRecord::from_bound),
                        bound_error: bound.err().map(|e| e.to_string()),
                    }
                })
                .collect(),
            Err(e) => return MeasureRecord::failed(n, e),
        },
        Measure::Pm => match score_pm_frame(&coords, &layout, ridge) {
            Ok(scores) => scores
                .iter()
                .zip(&layout.sources)
                .map(|(s, rows)| {
                    let bound = pm_frame_bound(&full, d, rows, s, &p.bounds);
                    ScoreRecord {
                        source: rows.source_id,
                        value: s.pm,
                        a: s.a,
                        b: None,
                        nearest: None,
                        shape: Some(s.fit.shape),
                        scale: Some(s.fit.scale),
                        ks_pass: Some(s.ks.pass),
                        ks_low_power: Some(s.ks.low_power),
                        bound: bound.as_ref().ok().map(BoundRecord::from_bound),
                        bound_error: bound.err().map(|e| e.to_string()),
                    }
                })
                .collect(),
            Err(e) => return MeasureRecord::failed(n, e),
        },
    };
    MeasureRecord { n_items: n, d, error: None, scores }
}

/// Options that are not part of the configuration file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    pub resume: bool,
    /// Delay applied to every system output.
    pub delay_ms: f64,
}

/// Reference audio of one trial with its distortion banks.
pub struct TrialAudio {
    pub sample_rate: u32,
    pub references: Vec<Vec<f64>>,
    pub ps_banks: Vec<Vec<Vec<f64>>>,
    pub pm_banks: Vec<Vec<Vec<f64>>>,
    pub plan: FramePlan,
}

fn normalize_or_keep(x: Vec<f64>, sr: u32, target: f64) -> Result<Vec<f64>, AudioError> {
    match normalize_loudness(&x, sr, target) {
        Ok(n) => Ok(n.samples),
        Err(AudioError::SilentInput) => Ok(x),
        Err(e) => Err(e),
    }
}

fn read_all(paths: &[PathBuf]) -> Result<(u32, Vec<Vec<f64>>)> {
    let mut sr = None;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let s = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
        match sr {
            None => sr = Some(s.sample_rate),
            Some(r) if r != s.sample_rate => {
                bail!("{}: sample rate {} differs from {}", p.display(), s.sample_rate, r)
            }
            _ => {}
        }
        out.push(s.samples);
    }
    Ok((sr.ok_or_else(|| anyhow!("no audio files"))?, out))
}

fn fit_length(mut x: Vec<f64>, len: usize) -> Vec<f64> {
    x.resize(len, 0.0);
    x
}

/// Loads, normalizes and frames the references of trial `index` and
/// synthesizes both banks for each of them.
pub fn prepare_trial(cfg: &RunConfig, res: &Resolved, index: usize) -> Result<TrialAudio> {
    let trial = &cfg.trials[index];
    if trial.references.len() < 2 {
        bail!("trial {}: need at least two references", trial.id);
    }
    let (sr, raw) = read_all(&trial.references).with_context(|| format!("trial {}", trial.id))?;
    let len = raw.iter().map(|r| r.len()).min().unwrap_or(0);
    if raw.iter().any(|r| r.len() != len) {
        warn!("trial {}: references differ in length, truncating to {len} samples", trial.id);
    }
    let references = raw
        .into_iter()
        .enumerate()
        .map(|(s, r)| {
            normalize_loudness(&r[..len], sr, cfg.target_lufs)
                .map(|n| n.samples)
                .with_context(|| format!("trial {}: reference {s}", trial.id))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = references.iter().map(|r| r.as_slice()).collect();
    let plan = detect_overlap_frames(&refs, sr, &res.frame).with_context(|| format!("trial {}", trial.id))?;
    let ps_specs = cfg.bank_config(Variant::Ps)?.specs(sr)?;
    let pm_specs = cfg.bank_config(Variant::Pm)?.specs(sr)?;
    let jobs: Vec<(usize, Variant)> =
        (0..references.len()).flat_map(|s| [(s, Variant::Ps), (s, Variant::Pm)]).collect();
    let banks = jobs
        .par_iter()
        .map(|&(s, v)| {
            let specs = if v == Variant::Ps { &ps_specs } else { &pm_specs };
            let seed = stream_id(&[res.bank_seed, index as u64, s as u64, v as u64]);
            generate_bank(&references[s], sr, specs, seed, Some(cfg.target_lufs))
                .with_context(|| format!("trial {}: {:?} bank of source {s}", trial.id, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ps_banks = Vec::new();
    let mut pm_banks = Vec::new();
    for ((_, v), bank) in jobs.iter().zip(banks) {
        if *v == Variant::Ps {
            ps_banks.push(bank);
        } else {
            pm_banks.push(bank);
        }
    }
    info!(
        "trial {}: {} of {} frames with overlapping sources, N_p = {} (PS) / {} (PM)",
        trial.id,
        plan.active.len(),
        plan.n_frames,
        ps_specs.len(),
        pm_specs.len()
    );
    Ok(TrialAudio { sample_rate: sr, references, ps_banks, pm_banks, plan })
}

/// Loads and normalizes one system's outputs, matched to the reference length.
pub fn prepare_outputs(cfg: &RunConfig, audio: &TrialAudio, trial: usize, system: usize, delay_ms: f64) -> Result<Vec<Vec<f64>>> {
    let t = &cfg.trials[trial];
    let sys = &t.systems[system];
    if sys.outputs.len() != audio.references.len() {
        bail!(
            "trial {} system {}: {} outputs for {} references",
            t.id,
            sys.name,
            sys.outputs.len(),
            audio.references.len()
        );
    }
    let (sr, raw) = read_all(&sys.outputs).with_context(|| format!("trial {} system {}", t.id, sys.name))?;
    if sr != audio.sample_rate {
        bail!("trial {} system {}: sample rate {sr} differs from references ({})", t.id, sys.name, audio.sample_rate);
    }
    let len = audio.references[0].len();
    raw.into_iter()
        .map(|x| {
            let y = normalize_or_keep(fit_length(x, len), sr, cfg.target_lufs)?;
            if delay_ms > 0.0 {
                Ok(inject_delay(&y, sr, delay_ms)?)
            } else {
                Ok(y)
            }
        })
        .collect()
}

fn frame_set(audio: &TrialAudio, outputs: &[Vec<f64>], k: usize, variant: Variant) -> Result<EmbeddingMatrix<f64>> {
    let plan = &audio.plan;
    let f = plan.active[k];
    let cut = |x: &[f64]| -> Result<DVector<f64>> {
        Ok(encode_raw(frame_slice(x, f, plan.frame_len, plan.hop), plan.frame_len)?)
    };
    let banks = if variant == Variant::Ps { &audio.ps_banks } else { &audio.pm_banks };
    let items = plan.sources[k]
        .iter()
        .map(|&s| {
            Ok(SourceItems {
                source_id: s as u32,
                output: cut(&outputs[s])?,
                reference: cut(&audio.references[s])?,
                distortions: banks[s].iter().map(|d| cut(d)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_frame_set(f as u32, &items)?)
}

/// Appends records in order and flushes after each batch.
struct FrameSink {
    out: BufWriter<File>,
}

impl FrameSink {
    fn write(&mut self, records: &[FrameRecord]) -> Result<()> {
        for r in records {
            serde_json::to_writer(&mut self.out, r)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Reads complete records from a previous run; a torn last line is dropped
/// and the file rewritten without it.
fn load_existing(path: &Path) -> Result<Vec<FrameRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut torn = false;
    for line in BufReader::new(file).lines() {
        let line = line?;
        match serde_json::from_str::<FrameRecord>(&line) {
            Ok(r) if !torn => records.push(r),
            _ => torn = true,
        }
    }
    if torn {
        warn!("{}: dropping incomplete trailing records", path.display());
        let mut sink = FrameSink { out: BufWriter::new(File::create(path)?) };
        sink.write(&records)?;
    }
    Ok(records)
}

/// Scores `count` frames through `make`, skipping keys already in `done`.
#[allow(clippy::too_many_arguments)]
fn run_frames<F>(
    trial: &str,
    system: &str,
    frames: &[(u32, f64, Vec<u32>)],
    done: &BTreeSet<(String, String, u32)>,
    params: &ManifoldParams,
    make: F,
    sink: &mut FrameSink,
    all: &mut Vec<FrameRecord>,
) -> Result<()>
where
    F: Fn(usize) -> Result<(EmbeddingMatrix<f64>, EmbeddingMatrix<f64>)> + Sync,
{
    let todo: Vec<usize> = (0..frames.len())
        .filter(|&k| !done.contains(&(trial.to_string(), system.to_string(), frames[k].0)))
        .collect();
    for chunk in todo.chunks(CHUNK) {
        let records = chunk
            .par_iter()
            .map(|&k| {
                let (frame, time_s, sources) = &frames[k];
                let (ps_set, pm_set) =
                    make(k).with_context(|| format!("trial {trial} system {system} frame {frame}"))?;
                Ok(FrameRecord {
                    trial: trial.to_string(),
                    system: system.to_string(),
                    frame: *frame,
                    time_s: *time_s,
                    sources: sources.clone(),
                    ps: score_measure(&ps_set, Measure::Ps, params),
                    pm: score_measure(&pm_set, Measure::Pm, params),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sink.write(&records)?;
        all.extend(records);
    }
    Ok(())
}

fn embedding_frames(path: &Path) -> Result<Vec<EmbeddingMatrix<f64>>> {
    Ok(read_embedding_file(path)
        .with_context(|| format!("reading {}", path.display()))?
        .iter()
        .map(|m| m.convert::<f64>())
        .collect())
}

fn source_ids(m: &EmbeddingMatrix<f64>) -> Vec<u32> {
    let mut ids: Vec<u32> = m.labels.iter().map(|l| l.source_id).collect();
    ids.dedup();
    ids
}

/// Runs every trial and system and returns all frame records in run order.
pub fn run_frames_for_config(cfg: &RunConfig, res: &Resolved, opts: &EvalOptions) -> Result<Vec<FrameRecord>> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let frames_path = cfg.output_dir.join(FRAMES_FILE);
    let run_path = cfg.output_dir.join(RUN_FILE);
    let fingerprint = serde_json::to_string_pretty(&serde_json::json!({
        "config": cfg,
        "resolved": res,
        "delay_ms": opts.delay_ms,
    }))?;
    let existing = if opts.resume {
        if let Ok(prev) = std::fs::read_to_string(&run_path) {
            if prev != fingerprint {
                bail!("{} was produced with a different configuration; rerun without --resume", run_path.display());
            }
        }
        load_existing(&frames_path)?
    } else {
        Vec::new()
    };
    std::fs::write(&run_path, &fingerprint)?;
    let done: BTreeSet<_> = existing.iter().map(|r| r.key()).collect();
    let file = if opts.resume {
        OpenOptions::new().create(true).append(true).open(&frames_path)?
    } else {
        File::create(&frames_path)?
    };
    let mut sink = FrameSink { out: BufWriter::new(file) };
    let params = ManifoldParams { alpha: res.alpha, t: cfg.t, tau: cfg.tau, bounds: cfg.bounds };
    let mut fresh = Vec::new();

    for (ti, trial) in cfg.trials.iter().enumerate() {
        match cfg.encoder {
            Encoder::Raw => {
                let audio = prepare_trial(cfg, res, ti)?;
                let hop_s = audio.plan.hop as f64 / audio.sample_rate as f64;
                let frames: Vec<(u32, f64, Vec<u32>)> = audio
                    .plan
                    .active
                    .iter()
                    .zip(&audio.plan.sources)
                    .map(|(&f, s)| (f as u32, f as f64 * hop_s, s.iter().map(|&x| x as u32).collect()))
                    .collect();
                for (si, sys) in trial.systems.iter().enumerate() {
                    let outputs = prepare_outputs(cfg, &audio, ti, si, opts.delay_ms)?;
                    let make = |k: usize| {
                        Ok((frame_set(&audio, &outputs, k, Variant::Ps)?, frame_set(&audio, &outputs, k, Variant::Pm)?))
                    };
                    run_frames(&trial.id, &sys.name, &frames, &done, &params, make, &mut sink, &mut fresh)?;
                    info!("trial {} system {}: done", trial.id, sys.name);
                }
            }
            Encoder::File => {
                if opts.delay_ms > 0.0 {
                    bail!("delays need the raw encoder; embedding files are fixed");
                }
                let hop_s = res.frame.hop_ms / 1000.0;
                for sys in &trial.systems {
                    let ps_path = sys
                        .embeddings_ps
                        .as_ref()
                        .ok_or_else(|| anyhow!("trial {} system {}: no embeddings file", trial.id, sys.name))?;
                    let ps_frames = embedding_frames(ps_path)?;
                    let pm_frames = match &sys.embeddings_pm {
                        Some(p) => embedding_frames(p)?,
                        None => ps_frames.clone(),
                    };
                    if ps_frames.len() != pm_frames.len()
                        || ps_frames.iter().zip(&pm_frames).any(|(a, b)| a.frame_index != b.frame_index)
                    {
                        bail!("trial {} system {}: PS and PM embedding files cover different frames", trial.id, sys.name);
                    }
                    let frames: Vec<(u32, f64, Vec<u32>)> = ps_frames
                        .iter()
                        .map(|m| (m.frame_index, m.frame_index as f64 * hop_s, source_ids(m)))
                        .collect();
                    let make = |k: usize| Ok((ps_frames[k].clone(), pm_frames[k].clone()));
                    run_frames(&trial.id, &sys.name, &frames, &done, &params, make, &mut sink, &mut fresh)?;
                }
            }
        }
    }

    // existing records first, then fresh ones, in configuration order
    let order = |r: &FrameRecord| -> (usize, usize, u32) {
        let ti = cfg.trials.iter().position(|t| t.id == r.trial).unwrap_or(usize::MAX);
        let si = cfg.trials.get(ti).and_then(|t| t.systems.iter().position(|s| s.name == r.system)).unwrap_or(usize::MAX);
        (ti, si, r.frame)
    };
    let mut all = existing;
    all.extend(fresh);
    all.sort_by_key(|r| order(r));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mapss_core::embeddings::FrameLayout;
    use nalgebra::DMatrix;

    fn toy_frame(shift: f64) -> EmbeddingMatrix<f64> {
        let n_p = 8;
        let layout = FrameLayout::canonical(2, n_p);
        let per = n_p + 2;
        let vectors = DMatrix::from_fn(2 * per, 6, |r, c| {
            let src = r / per;
            let base = if src == 0 { 0.0 } else { 3.0 };
            let wiggle = ((r * 13 + c * 7) % 17) as f64 / 17.0 - 0.5;
            base + wiggle * 0.4 + if r % per == 0 { shift } else { 0.0 }
        });
        let items: Vec<SourceItems<f64>> = layout
            .sources
            .iter()
            .map(|s| SourceItems {
                source_id: s.source_id,
                output: vectors.row(s.output).transpose(),
                reference: vectors.row(s.reference).transpose(),
                distortions: s.distortions.iter().map(|&r| vectors.row(r).transpose()).collect(),
            })
            .collect();
        assemble_frame_set(0, &items).unwrap()
    }

    #[test]
    fn measures_in_unit_interval() {
        let p = ManifoldParams { alpha: 1.0, t: 1, tau: 0.99, bounds: BoundConfig::default() };
        let em = toy_frame(0.0);
        for m in [Measure::Ps, Measure::Pm] {
            let rec = score_measure(&em, m, &p);
            assert!(rec.error.is_none(), "{:?}", rec.error);
            assert_eq!(rec.scores.len(), 2);
            for s in &rec.scores {
                assert!((0.0..=1.0).contains(&s.value));
                let b = s.bound.as_ref().unwrap();
                assert!(b.radius >= 0.0 && b.half_width >= 0.0);
            }
        }
    }

    #[test]
    fn record_roundtrips_through_json() {
        let p = ManifoldParams { alpha: 1.0, t: 1, tau: 0.99, bounds: BoundConfig::default() };
        let em = toy_frame(0.1);
        let r = FrameRecord {
            trial: "t".into(),
            system: "s".into(),
            frame: 3,
            time_s: 0.06,
            sources: vec![0, 1],
            ps: score_measure(&em, Measure::Ps, &p),
            pm: score_measure(&em, Measure::Pm, &p),
        };
        let line = serde_json::to_string(&r).unwrap();
        let back: FrameRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), line);
    }

    #[test]
    fn malformed_frame_is_recorded_not_raised() {
        let p = ManifoldParams { alpha: 1.0, t: 1, tau: 0.99, bounds: BoundConfig::default() };
        let mut em = toy_frame(0.0);
        em.labels.pop();
        let rec = score_measure(&em, Measure::Ps, &p);
        assert!(rec.error.is_some());
        assert!(rec.scores.is_empty());
    }
}
