//! Evaluation pipeline behind the `mapss` command.

pub mod config;
pub mod demo;
pub mod pipeline;
pub mod report;
pub mod sweep;

use anyhow::Result;

pub use config::{Resolved, RunConfig, Scenario};
pub use pipeline::{EvalOptions, FrameRecord};
pub use report::{Report, UtteranceRow};

/// Scores every frame, pools, correlates and writes the outputs of one run.
pub fn run_evaluation(cfg: &RunConfig, opts: &EvalOptions) -> Result<Report> {
    let res = cfg.resolve()?;
    let records = pipeline::run_frames_for_config(cfg, &res, opts)?;
    let mos = match &cfg.mos {
        Some(path) => report::read_mos(path)?,
        None => report::MosTable::new(),
    };
    let report = report::build_report(&records, cfg, &res, &mos);
    report::write_outputs(&cfg.output_dir, &report, cfg.nmi_svg)?;
    Ok(report)
}
