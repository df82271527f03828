//! Re-runs an evaluation with the outputs delayed by several amounts.

use std::path::Path;

use anyhow::{bail, Result};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::EvalOptions;
use crate::report::Report;
use crate::run_evaluation;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delay_ms: f64,
    /// System name, or `all` for the whole run.
    pub system: String,
    pub ps_mean: Option<f64>,
    pub pm_mean: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn rows(delay_ms: f64, report: &Report) -> Vec<SweepRow> {
    let mut systems: Vec<&str> = Vec::new();
    for u in &report.utterances {
        if !systems.contains(&u.system.as_str()) {
            systems.push(&u.system);
        }
    }
    let mut out = vec![SweepRow {
        delay_ms,
        system: "all".into(),
        ps_mean: report.ps_mean,
        pm_mean: report.pm_mean,
    }];
    for s in systems {
        let utts = || report.utterances.iter().filter(move |u| u.system == s);
        out.push(SweepRow {
            delay_ms,
            system: s.to_string(),
            ps_mean: mean(utts().filter_map(|u| u.ps_mean)),
            pm_mean: mean(utts().filter_map(|u| u.pm)),
        });
    }
    out
}

/// Evaluates `cfg` once per delay into `out/delay_{d}ms` and writes `out/sweep.csv`.
pub fn sweep_delays(cfg: &RunConfig, delays_ms: &[f64], out: &Path) -> Result<Vec<(f64, Report)>> {
    if delays_ms.iter().any(|d| !d.is_finite() || *d < 0.0) {
        bail!("delays must be finite and non-negative");
    }
    std::fs::create_dir_all(out)?;
    let mut results = Vec::new();
    let mut table = Vec::new();
    for &d in delays_ms {
        let mut run = cfg.clone();
        run.output_dir = out.join(format!("delay_{d}ms"));
        info!("delay {d} ms");
        let report = run_evaluation(&run, &EvalOptions { resume: false, delay_ms: d })?;
        table.extend(rows(d, &report));
        results.push((d, report));
    }
    let mut w = csv::Writer::from_path(out.join(SWEEP_FILE))?;
    for r in &table {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(results)
}
