//! Utterance pooling, correlation with listener scores, NMI and rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use mapss_core::aggregate::{aggregate, pooled_norm, AggregationConfig};
use mapss_core::bounds::{pcc_bound, propagate_utterance, scenario_bound, srcc_bound, IntervalBound};
use mapss_core::correlation::{default_thresholds, nmi_thresholded, pcc, scenario_mean, srcc, NmiPoint, NMI_BINS, NMI_MIN_FRAMES};
use mapss_core::rng::stream_id;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig, Scenario};
use crate::pipeline::{FrameRecord, MeasureRecord};

pub const UTTERANCES_FILE: &str = "utterances.csv";
pub const REPORT_FILE: &str = "report.json";
pub const NMI_SVG_FILE: &str = "nmi.svg";

/// Listener score keyed by (trial, system, source).
pub type MosTable = BTreeMap<(String, String, u32), f64>;

#[derive(Debug, Deserialize)]
struct MosRow {
    trial: String,
    system: String,
    source: u32,
    mos: f64,
}

pub fn read_mos(path: &Path) -> Result<MosTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut table = MosTable::new();
    for row in rdr.deserialize() {
        let row: MosRow = row.with_context(|| format!("parsing {}", path.display()))?;
        if !row.mos.is_finite() {
            anyhow::bail!("{}: non-finite MOS for {}/{}/{}", path.display(), row.trial, row.system, row.source);
        }
        if table.insert((row.trial.clone(), row.system.clone(), row.source), row.mos).is_some() {
            anyhow::bail!("{}: duplicate MOS row {}/{}/{}", path.display(), row.trial, row.system, row.source);
        }
    }
    Ok(table)
}

pub fn write_mos(path: &Path, table: &MosTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "system", "source", "mos"])?;
    for ((t, s, i), m) in table {
        w.write_record([t.clone(), s.clone(), i.to_string(), format!("{m}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Pooled scores of one source in one (trial, system) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceRow {
    pub trial: String,
    pub system: String,
    pub source: u32,
    pub frames: usize,
    pub ps_valid_frames: usize,
    pub pm_valid_frames: usize,
    /// Mean frame PS in [0, 1].
    pub ps_mean: Option<f64>,
    /// Pooled PS (PESQ scale under PESQ pooling).
    pub ps: Option<f64>,
    pub ps_b: Option<f64>,
    pub ps_h: Option<f64>,
    pub pm: Option<f64>,
    pub pm_b: Option<f64>,
    pub pm_h: Option<f64>,
    pub mos: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct Pooled {
    value: Option<f64>,
    mean: Option<f64>,
    valid: usize,
    bound: Option<IntervalBound>,
}

/// Pools one measure over an utterance. Frames with an invalid bound are left
/// out of both the value and its bound; if none is valid the value falls back
/// to all frames and the bound is absent.
fn pool(frames: &[(f64, Option<(f64, f64)>)], agg: &AggregationConfig, confidence: f64, gap: usize) -> Pooled {
    if frames.is_empty() {
        return Pooled::default();
    }
    let all: Vec<f64> = frames.iter().map(|f| f.0).collect();
    let mean = Some(all.iter().sum::<f64>() / all.len() as f64);
    let valid: Vec<(f64, (f64, f64))> = frames.iter().filter_map(|(v, b)| b.map(|b| (*v, b))).collect();
    if valid.is_empty() {
        return Pooled { value: aggregate(&all, agg).ok(), mean, valid: 0, bound: None };
    }
    let values: Vec<f64> = valid.iter().map(|x| x.0).collect();
    let radii: Vec<f64> = valid.iter().map(|x| x.1 .0).collect();
    let hws: Vec<f64> = valid.iter().map(|x| x.1 .1).collect();
    let norm = pooled_norm(&values, agg).unwrap_or(0.0);
    Pooled {
        value: aggregate(&values, agg).ok(),
        mean,
        valid: valid.len(),
        bound: propagate_utterance(&radii, &hws, agg, norm, confidence, gap).ok(),
    }
}

fn measure_frames(records: &[&FrameRecord], source: u32, pick: fn(&FrameRecord) -> &MeasureRecord) -> Vec<(f64, Option<(f64, f64)>)> {
    records
        .iter()
        .filter_map(|r| pick(r).score(source))
        .map(|s| (s.value, s.valid_bound().map(|b| (b.radius, b.half_width))))
        .collect()
}

/// Per-source utterance rows in record order.
pub fn utterance_rows(records: &[FrameRecord], res: &Resolved, cfg: &RunConfig, mos: &MosTable) -> Vec<UtteranceRow> {
    let mut groups: Vec<((String, String), Vec<&FrameRecord>)> = Vec::new();
    for r in records {
        let key = (r.trial.clone(), r.system.clone());
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push(r),
            _ => groups.push((key, vec![r])),
        }
    }
    let mut rows = Vec::new();
    for ((trial, system), recs) in groups {
        let mut sources: Vec<u32> = recs.iter().flat_map(|r| r.sources.iter().copied()).collect();
        sources.sort_unstable();
        sources.dedup();
        for source in sources {
            let frames = recs.iter().filter(|r| r.sources.contains(&source)).count();
            let ps = pool(&measure_frames(&recs, source, |r| &r.ps), &res.ps_agg, cfg.confidence, cfg.decorrelation_gap);
            let pm = pool(&measure_frames(&recs, source, |r| &r.pm), &res.pm_agg, cfg.confidence, cfg.decorrelation_gap);
            rows.push(UtteranceRow {
                mos: mos.get(&(trial.clone(), system.clone(), source)).copied(),
                trial: trial.clone(),
                system: system.clone(),
                source,
                frames,
                ps_valid_frames: ps.valid,
                pm_valid_frames: pm.valid,
                ps_mean: ps.mean,
                ps: ps.value,
                ps_b: ps.bound.map(|b| b.b),
                ps_h: ps.bound.map(|b| b.h),
                pm: pm.value,
                pm_b: pm.bound.map(|b| b.b),
                pm_h: pm.bound.map(|b| b.h),
            });
        }
    }
    rows
}

/// Correlation of one (trial, source) pair across systems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub measure: &'static str,
    pub metric: &'static str,
    pub trial: String,
    pub source: u32,
    pub systems: usize,
    pub value: f64,
    pub b: Option<f64>,
    pub h: Option<f64>,
}

/// Scenario-level mean of the coefficients of one measure and metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioCorrelation {
    pub measure: &'static str,
    pub metric: &'static str,
    pub value: f64,
    pub coefficients: usize,
    pub b: Option<f64>,
    pub h: Option<f64>,
}

type Pick = fn(&UtteranceRow) -> (Option<f64>, Option<f64>, Option<f64>);

/// Per-(trial, source) and scenario PCC/SRCC of PS and PM against MOS.
pub fn correlations(rows: &[UtteranceRow], cfg: &RunConfig) -> (Vec<Coefficient>, Vec<ScenarioCorrelation>) {
    let mut groups: BTreeMap<(usize, u32), Vec<&UtteranceRow>> = BTreeMap::new();
    let trial_pos = |t: &str| cfg.trials.iter().position(|x| x.id == t).unwrap_or(usize::MAX);
    for r in rows.iter().filter(|r| r.mos.is_some()) {
        groups.entry((trial_pos(&r.trial), r.source)).or_default().push(r);
    }
    let measures: [(&'static str, Pick, u64); 2] = [
        ("PS", |r| (r.ps, r.ps_b, r.ps_h), 0),
        ("PM", |r| (r.pm, r.pm_b, r.pm_h), 1),
    ];
    let mut coefficients = Vec::new();
    let mut scenario = Vec::new();
    for (measure, pick, tag) in measures {
        for (metric, is_pcc) in [("PCC", true), ("SRCC", false)] {
            let mut values = Vec::new();
            let mut per_trial: BTreeMap<usize, Vec<IntervalBound>> = BTreeMap::new();
            let mut all_bounded = true;
            for ((ti, source), members) in &groups {
                let usable: Vec<(f64, Option<f64>, Option<f64>, f64)> = members
                    .iter()
                    .filter_map(|r| {
                        let (v, b, h) = pick(r);
                        v.map(|v| (v, b, h, r.mos.unwrap()))
                    })
                    .collect();
                if usable.len() < 2 {
                    continue;
                }
                let v: Vec<f64> = usable.iter().map(|x| x.0).collect();
                let m: Vec<f64> = usable.iter().map(|x| x.3).collect();
                let coef = if is_pcc { pcc(&v, &m) } else { srcc(&v, &m) };
                let Ok(value) = coef else { continue };
                let bounds: Option<(Vec<f64>, Vec<f64>)> = usable
                    .iter()
                    .map(|x| x.1.zip(x.2))
                    .collect::<Option<Vec<_>>>()
                    .map(|bh| bh.into_iter().unzip());
                let interval = bounds.and_then(|(b, h)| {
                    if is_pcc {
                        pcc_bound(&v, &m, &b, &h).ok()
                    } else {
                        let stream = stream_id(&[*ti as u64, *source as u64, tag]);
                        srcc_bound(&v, &m, &b, &h, cfg.confidence, cfg.mc_draws, cfg.seed, stream).ok()
                    }
                });
                match interval {
                    Some(i) => per_trial.entry(*ti).or_default().push(i),
                    None => all_bounded = false,
                }
                values.push(value);
                coefficients.push(Coefficient {
                    measure,
                    metric,
                    trial: members[0].trial.clone(),
                    source: *source,
                    systems: usable.len(),
                    value,
                    b: interval.map(|i| i.b),
                    h: interval.map(|i| i.h),
                });
            }
            if let Some(mean) = scenario_mean(&values) {
                let trials: Vec<Vec<IntervalBound>> = per_trial.into_values().collect();
                let sb = if all_bounded { scenario_bound(&trials, cfg.rho, cfg.confidence) } else { None };
                scenario.push(ScenarioCorrelation {
                    measure,
                    metric,
                    value: mean,
                    coefficients: values.len(),
                    b: sb.map(|x| x.b),
                    h: sb.map(|x| x.h),
                });
            }
        }
    }
    (coefficients, scenario)
}

/// NMI between frame PS and PM of every utterance, per threshold.
pub fn nmi_curve(records: &[FrameRecord]) -> Vec<NmiPoint> {
    let mut utts: BTreeMap<(String, String, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        for &s in &r.sources {
            if let (Some(a), Some(b)) = (r.ps.score(s), r.pm.score(s)) {
                let e = utts.entry((r.trial.clone(), r.system.clone(), s)).or_default();
                e.0.push(a.value);
                e.1.push(b.value);
            }
        }
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = utts.into_values().collect();
    nmi_thresholded(&pairs, &default_thresholds(), NMI_BINS, NMI_MIN_FRAMES).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub seed: u64,
    pub resolved: Resolved,
    pub confidence: f64,
    pub frames: usize,
    pub ps_failed_frames: usize,
    pub pm_failed_frames: usize,
    pub ps_mean: Option<f64>,
    pub pm_mean: Option<f64>,
    /// Share of frame scores whose bound is valid.
    pub ps_valid_share: Option<f64>,
    pub pm_valid_share: Option<f64>,
    pub mean_ps_dim: Option<f64>,
    pub mean_pm_dim: Option<f64>,
    pub utterances: Vec<UtteranceRow>,
    pub coefficients: Vec<Coefficient>,
    pub correlations: Vec<ScenarioCorrelation>,
    pub nmi: Vec<NmiPoint>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn build_report(records: &[FrameRecord], cfg: &RunConfig, res: &Resolved, mos: &MosTable) -> Report {
    let utterances = utterance_rows(records, res, cfg, mos);
    let (coefficients, correlations) = correlations(&utterances, cfg);
    let scores = |pick: fn(&FrameRecord) -> &MeasureRecord| records.iter().flat_map(move |r| pick(r).scores.iter());
    let share = |pick: fn(&FrameRecord) -> &MeasureRecord| {
        mean(scores(pick).map(|s| if s.valid_bound().is_some() { 1.0 } else { 0.0 }))
    };
    let ok = |pick: fn(&FrameRecord) -> &MeasureRecord| records.iter().filter(move |r| pick(r).error.is_none());
    Report {
        scenario: cfg.scenario,
        seed: cfg.seed,
        resolved: res.clone(),
        confidence: cfg.confidence,
        frames: records.len(),
        ps_failed_frames: records.iter().filter(|r| r.ps.error.is_some()).count(),
        pm_failed_frames: records.iter().filter(|r| r.pm.error.is_some()).count(),
        ps_mean: mean(scores(|r| &r.ps).map(|s| s.value)),
        pm_mean: mean(scores(|r| &r.pm).map(|s| s.value)),
        ps_valid_share: share(|r| &r.ps),
        pm_valid_share: share(|r| &r.pm),
        mean_ps_dim: mean(ok(|r| &r.ps).map(|r| r.ps.d as f64)),
        mean_pm_dim: mean(ok(|r| &r.pm).map(|r| r.pm.d as f64)),
        utterances,
        coefficients,
        correlations,
        nmi: nmi_curve(records),
    }
}

fn opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

fn pm(v: Option<f64>, b: Option<f64>, h: Option<f64>) -> String {
    match (v, b, h) {
        (Some(v), Some(b), Some(h)) => format!("{v:.3} ±{b:.3}+{h:.3}"),
        (Some(v), _, _) => format!("{v:.3}"),
        _ => "-".into(),
    }
}

/// Human-readable summary.
pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario {:?}  alpha {}  frames {}  (PS failures {}, PM failures {})",
        r.scenario, r.resolved.alpha, r.frames, r.ps_failed_frames, r.pm_failed_frames
    );
    let _ = writeln!(
        s,
        "mean frame PS {}  PM {}  valid bounds PS {}  PM {}  mean d PS {}  PM {}",
        opt(r.ps_mean, 3),
        opt(r.pm_mean, 3),
        opt(r.ps_valid_share, 3),
        opt(r.pm_valid_share, 3),
        opt(r.mean_ps_dim, 1),
        opt(r.mean_pm_dim, 1)
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:<12} {:>3} {:>6} {:>7} {:>26} {:>26} {:>6}",
        "trial", "system", "src", "frames", "PS[0,1]", "PS pooled ±b+h", "PM ±b+h", "MOS"
    );
    for u in &r.utterances {
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:>3} {:>6} {:>7} {:>26} {:>26} {:>6}",
            u.trial,
            u.system,
            u.source,
            u.frames,
            opt(u.ps_mean, 3),
            pm(u.ps, u.ps_b, u.ps_h),
            pm(u.pm, u.pm_b, u.pm_h),
            opt(u.mos, 2)
        );
    }
    if !r.correlations.is_empty() {
        let _ = writeln!(s);
        for c in &r.correlations {
            let _ = writeln!(
                s,
                "{} {:<4} {} over {} coefficient(s)",
                c.measure,
                c.metric,
                pm(Some(c.value), c.b, c.h),
                c.coefficients
            );
        }
    }
    if !r.nmi.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>9} {:>8} {:>8} {:>8} {:>8}", "threshold", "n(PS)", "NMI|PS", "n(PM)", "NMI|PM");
        for p in &r.nmi {
            let _ = writeln!(
                s,
                "{:>9.1} {:>8} {:>8} {:>8} {:>8}",
                p.threshold,
                p.retained_by_ps,
                opt(p.nmi_by_ps, 3),
                p.retained_by_pm,
                opt(p.nmi_by_pm, 3)
            );
        }
    }
    s
}

/// NMI against threshold for both conditioning directions.
pub fn render_nmi_svg(points: &[NmiPoint]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let x = |t: f64| m + t * (w - 2.0 * m);
    let y = |v: f64| h - m - v * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<path d=\"M{} {} L{} {} L{} {}\" stroke=\"black\" fill=\"none\"/>",
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.1}</text>", x(0.0) - 6.0, y(v) + 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.1}</text>", x(v), y(0.0) + 18.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">threshold</text>", w / 2.0, h - 8.0);
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">NMI</text>", h / 2.0, h / 2.0);
    let series: [(&str, &str, fn(&NmiPoint) -> Option<f64>); 2] =
        [("by PS", "#1f77b4", |p| p.nmi_by_ps), ("by PM", "#d62728", |p| p.nmi_by_pm)];
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = points
            .iter()
            .filter_map(|p| get(p).map(|v| format!("{:.1},{:.1}", x(p.threshold), y(v))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(s, "<polyline points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"2\"/>", pts.join(" "));
        }
        let ly = m - 20.0 + 16.0 * i as f64;
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", w - 130.0, w - 110.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{name}</text>", w - 104.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `utterances.csv`, `report.json` and optionally `nmi.svg`.
pub fn write_outputs(dir: &Path, report: &Report, svg: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(UTTERANCES_FILE))?;
    for row in &report.utterances {
        w.serialize(row)?;
    }
    w.flush()?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;
    if svg {
        std::fs::write(dir.join(NMI_SVG_FILE), render_nmi_svg(&report.nmi))?;
    }
    Ok(())
}
