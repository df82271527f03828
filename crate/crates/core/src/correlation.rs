//! Correlation against listener scores and PS/PM complementarity.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooShort { needed: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CorrelationError::NonFinite);
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean-removed copy of `x`.
pub fn centered(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    let xc = centered(x);
    let yc = centered(y);
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let sxx: f64 = xc.iter().map(|a| a * a).sum();
    let syy: f64 = yc.iter().map(|b| b * b).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-tie ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check(x, y)?;
    pcc(&average_ranks(x), &average_ranks(y))
}

/// Gradient of `pcc(v, m)` with respect to `v`.
pub fn pcc_gradient(v: &[f64], m: &[f64]) -> Result<Vec<f64>, CorrelationError> {
    let r = pcc(v, m)?;
    let vc = centered(v);
    let mc = centered(m);
    let nv = vc.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nm = mc.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(vc
        .iter()
        .zip(&mc)
        .map(|(a, b)| b / (nv * nm) - r * a / (nv * nv))
        .collect())
}

/// Unweighted mean of per-(trial, source) coefficients.
pub fn scenario_mean(coefficients: &[f64]) -> Option<f64> {
    if coefficients.is_empty() {
        None
    } else {
        Some(mean(coefficients))
    }
}

/// Default equal-width bin count of the NMI histogram.
pub const NMI_BINS: usize = 10;
/// Below this many retained frames the NMI is reported as undefined.
pub const NMI_MIN_FRAMES: usize = 50;

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((v - lo) / (hi - lo) * bins as f64).floor() as isize;
    b.clamp(0, bins as isize - 1) as usize
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum()
}

/// Histogram NMI of paired samples, normalized by the mean of the marginal
/// entropies. Two constant variables count as identical (NMI 1).
pub fn nmi(x: &[f64], y: &[f64], bins: usize) -> Result<f64, CorrelationError> {
    check(x, y)?;
    let bins = bins.max(1);
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
    };
    let (xl, xh) = range(x);
    let (yl, yh) = range(y);
    let n = x.len() as f64;
    let mut joint = vec![0.0; bins * bins];
    let mut px = vec![0.0; bins];
    let mut py = vec![0.0; bins];
    for (&a, &b) in x.iter().zip(y) {
        let i = bin_of(a, xl, xh, bins);
        let j = bin_of(b, yl, yh, bins);
        joint[i * bins + j] += 1.0 / n;
        px[i] += 1.0 / n;
        py[j] += 1.0 / n;
    }
    let hx = entropy(&px);
    let hy = entropy(&py);
    let hxy = entropy(&joint);
    let denom = 0.5 * (hx + hy);
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok(((hx + hy - hxy) / denom).clamp(0.0, 1.0))
}

/// Min-max rescale to [0, 1]; a constant input maps to zeros.
pub fn minmax_normalize(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// One row of the thresholded NMI table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmiPoint {
    pub threshold: f64,
    /// Frames kept when conditioning on PS ≤ threshold.
    pub retained_by_ps: usize,
    pub nmi_by_ps: Option<f64>,
    /// Frames kept when conditioning on PM ≤ threshold.
    pub retained_by_pm: usize,
    pub nmi_by_pm: Option<f64>,
}

/// Default thresholds 0.1, 0.2, …, 1.0.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

/// NMI between PS and PM frames retained under each threshold of either
/// measure. Each utterance is given as a pair of aligned frame vectors and is
/// min-max normalized on its own before pooling.
pub fn nmi_thresholded(
    utterances: &[(Vec<f64>, Vec<f64>)],
    thresholds: &[f64],
    bins: usize,
    min_frames: usize,
) -> Result<Vec<NmiPoint>, CorrelationError> {
    let mut ps = Vec::new();
    let mut pm = Vec::new();
    for (a, b) in utterances {
        if a.len() != b.len() {
            return Err(CorrelationError::LengthMismatch(a.len(), b.len()));
        }
        ps.extend(minmax_normalize(a));
        pm.extend(minmax_normalize(b));
    }
    let select = |cond: &[f64], th: f64| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..cond.len() {
            if cond[k] <= th + 1e-12 {
                x.push(ps[k]);
                y.push(pm[k]);
            }
        }
        (x, y)
    };
    let score = |x: &[f64], y: &[f64]| -> Option<f64> {
        if x.len() < min_frames.max(2) {
            None
        } else {
            nmi(x, y, bins).ok()
        }
    };
    Ok(thresholds
        .iter()
        .map(|&th| {
            let (x1, y1) = select(&ps, th);
            let (x2, y2) = select(&pm, th);
            NmiPoint {
                threshold: th,
                retained_by_ps: x1.len(),
                nmi_by_ps: score(&x1, &y1),
                retained_by_pm: x2.len(),
                nmi_by_pm: score(&x2, &y2),
            }
        })
        .collect())
}
