//! Frame-to-utterance pooling: plain averaging and PESQ-style windowed pooling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOGISTIC_OFFSET: f64 = 0.999;
pub const LOGISTIC_RANGE: f64 = 4.0;
pub const LOGISTIC_SLOPE: f64 = 1.3669;
pub const LOGISTIC_SHIFT: f64 = 3.8224;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("no frames to aggregate")]
    EmptySet,
    #[error("invalid pooling configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Average,
    Pesq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub method: Method,
    /// Window length in frames.
    pub window: usize,
    /// Hop in frames.
    pub hop: usize,
    /// Norm order inside each window.
    pub p: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            method: Method::Pesq,
            window: 30,
            hop: 15,
            p: 6.0,
        }
    }
}

impl AggregationConfig {
    pub fn average() -> Self {
        AggregationConfig {
            method: Method::Average,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        if self.hop == 0 || self.window < self.hop {
            return Err(AggregateError::InvalidConfig(format!(
                "need window >= hop >= 1, got window {} hop {}",
                self.window, self.hop
            )));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(AggregateError::InvalidConfig(format!("need p >= 1, got {}", self.p)));
        }
        Ok(())
    }

    /// Overlap factor `⌈W / H⌉`.
    pub fn overlap(&self) -> usize {
        self.window.div_ceil(self.hop)
    }

    /// Number of windows `max(1, ⌊(F − W) / H⌋)`.
    pub fn n_windows(&self, frames: usize) -> usize {
        (frames.saturating_sub(self.window) / self.hop).max(1)
    }
}

/// `s(u) = 0.999 + 4 / (1 + exp(−1.3669 u + 3.8224))`.
pub fn logistic(u: f64) -> f64 {
    LOGISTIC_OFFSET + LOGISTIC_RANGE / (1.0 + (-LOGISTIC_SLOPE * u + LOGISTIC_SHIFT).exp())
}

/// `ds/du`; its maximum, at the midpoint, is `LOGISTIC_SLOPE`.
pub fn logistic_slope(u: f64) -> f64 {
    let e = (-LOGISTIC_SLOPE * u + LOGISTIC_SHIFT).exp();
    if !e.is_finite() {
        return 0.0;
    }
    LOGISTIC_RANGE * LOGISTIC_SLOPE * e / ((1.0 + e) * (1.0 + e))
}

/// Arithmetic mean.
pub fn aggregate_average(values: &[f64]) -> Result<f64, AggregateError> {
    if values.is_empty() {
        return Err(AggregateError::EmptySet);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Windowed p-norms followed by their RMS; the argument of the logistic map.
/// A window reaching past the last frame averages over the frames it covers.
pub fn pooled_norm(values: &[f64], cfg: &AggregationConfig) -> Result<f64, AggregateError> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(AggregateError::EmptySet);
    }
    let m = cfg.n_windows(values.len());
    let mut acc = 0.0;
    for w in 0..m {
        let start = w * cfg.hop;
        let end = (start + cfg.window).min(values.len());
        let slice = &values[start..end];
        let mean_p = slice.iter().map(|v| v.abs().powf(cfg.p)).sum::<f64>() / slice.len() as f64;
        let l = mean_p.powf(1.0 / cfg.p);
        acc += l * l;
    }
    Ok((acc / m as f64).sqrt())
}

/// PESQ-style pooled score in (0.999, 4.999).
pub fn aggregate_pesq(values: &[f64], cfg: &AggregationConfig) -> Result<f64, AggregateError> {
    pooled_norm(values, cfg).map(logistic)
}

/// Pools with the configured method.
pub fn aggregate(values: &[f64], cfg: &AggregationConfig) -> Result<f64, AggregateError> {
    match cfg.method {
        Method::Average => aggregate_average(values),
        Method::Pesq => aggregate_pesq(values, cfg),
    }
}
