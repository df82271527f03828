//! Error radii from spectral truncation and finite-sample half-widths, at
//! frame level and propagated to utterance, correlation and scenario level.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::aggregate::{logistic_slope, AggregationConfig, Method};
use crate::correlation::{centered, pcc_gradient, srcc, CorrelationError};
use crate::embeddings::ClusterRows;
use crate::linalg::{add_ridge, row_mean, scatter_about, sym_extreme_eigenvalues, Factor};
use crate::manifold::SpectralEmbedding;
use crate::measures::{GammaFit, MeasureError, PmScore, PsScore};
use crate::rng::stream_rng;
use crate::scalar::{lit, Scalar};
use crate::special::{gamma_q, gamma_q_dk, gamma_q_dx};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("Schur complement is not positive definite")]
    ComplementNotPD,
    #[error("retained block is numerically singular")]
    RetainedBlockSingular,
    #[error("confidence parameter must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("split index {d} exceeds dimension {n}")]
    InvalidSplit { d: usize, n: usize },
    #[error("no frames to propagate")]
    EmptyFrameSet,
    #[error("radii and half-widths differ in length")]
    LengthMismatch,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
}

/// Constants of the bounds. The universal constants default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    /// Total failure probability per frame bound.
    pub delta: f64,
    /// Constant of the truncation tail bound.
    pub c_tail: f64,
    /// Constant of the covariance concentration width.
    pub c_cov: f64,
    /// Constant of the shape deviation under truncation.
    pub c1: f64,
    /// Constant of the scale deviation under truncation.
    pub c2: f64,
    /// Relative eigenvalue floor.
    pub eps_r: f64,
    /// `n_eff = n_eff_factor · n` unless `bartlett` is set.
    pub n_eff_factor: f64,
    /// Estimate `n_eff` from lag autocorrelations instead.
    pub bartlett: bool,
    pub ridge: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            delta: 0.05,
            c_tail: 1.0,
            c_cov: 1.0,
            c1: 1.0,
            c2: 1.0,
            eps_r: 0.05,
            n_eff_factor: 0.7,
            bartlett: false,
            ridge: crate::measures::DEFAULT_RIDGE,
        }
    }
}

impl BoundConfig {
    fn check_delta(&self) -> Result<(), BoundError> {
        if self.delta > 0.0 && self.delta < 1.0 {
            Ok(())
        } else {
            Err(BoundError::InvalidDelta(self.delta))
        }
    }
}

/// Truncation error of the diffusion embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationBound {
    /// `(Σ_{ℓ>d} λ_ℓ^{2t})^{1/2}`.
    pub expected_error: f64,
    /// `λ_{d+1}^t`, zero when nothing is truncated.
    pub leading_dropped: f64,
    /// `π_min^{-1/2} / sqrt(ln 2)`.
    pub k_const: f64,
    /// Complement dimension `N - 1 - d`.
    pub m: usize,
    pub c: f64,
}

impl TruncationBound {
    /// `C · λ_{d+1}^t · K · (m + sqrt(m ln(1/δ)))`.
    pub fn tail_bound(&self, delta: f64) -> Result<f64, BoundError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(BoundError::InvalidDelta(delta));
        }
        let m = self.m as f64;
        Ok(self.c * self.leading_dropped * self.k_const * (m + (m * (1.0 / delta).ln()).sqrt()))
    }
}

/// Truncation statistics of `se` for its own `d`.
pub fn truncation_stats<T: Scalar>(se: &SpectralEmbedding<T>, pi_min: T, c: f64) -> TruncationBound {
    let pw = se.powered_eigenvalues();
    let tail: f64 = pw.iter().skip(se.d).map(|l| l.to_f64_lossy().powi(2)).sum();
    let leading_dropped = pw.get(se.d).map_or(0.0, |l| l.to_f64_lossy().abs());
    TruncationBound {
        expected_error: tail.sqrt(),
        leading_dropped,
        k_const: pi_min.to_f64_lossy().powf(-0.5) / std::f64::consts::LN_2.sqrt(),
        m: se.complement_dim(),
        c,
    }
}

/// `T(x_k) = Σ_{ℓ>d} λ_ℓ^{2t} u_ℓ(k)²`, the squared truncation error of item `k`.
pub fn truncation_energy<T: Scalar>(se: &SpectralEmbedding<T>, k: usize) -> T {
    se.embed_complement(k).map(|v| v.norm_squared()).unwrap_or_else(|_| T::zero())
}

/// Block split of a regularized covariance at the retained dimension `d`.
pub struct SchurSplit<T: Scalar> {
    pub d: usize,
    /// `(Σ^(d) + εI)⁻¹ C`, `d × m`.
    coupling: DMatrix<T>,
    retained: Factor<T>,
    complement: Option<Factor<T>>,
    /// `S = Σ^(⊥) + εI − Cᵀ(Σ^(d) + εI)⁻¹C`.
    pub schur: DMatrix<T>,
}

/// Residual of one difference vector after regressing out the retained block.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurResidual<T: Scalar> {
    pub residual: DVector<T>,
    /// `Δ^(d)ᵀ (Σ^(d) + εI)⁻¹ Δ^(d)`.
    pub truncated: T,
    /// `rᵀ S⁻¹ r`.
    pub residual_energy: T,
}

impl<T: Scalar> SchurSplit<T> {
    pub fn new(sigma: &DMatrix<T>, d: usize, eps: T) -> Result<Self, BoundError> {
        let n = sigma.nrows();
        if d > n || d == 0 {
            return Err(BoundError::InvalidSplit { d, n });
        }
        let m = n - d;
        let sd = add_ridge(&sigma.view((0, 0), (d, d)).into_owned(), eps);
        let retained = Factor::new(&sd).ok_or(BoundError::RetainedBlockSingular)?;
        if m == 0 {
            return Ok(SchurSplit {
                d,
                coupling: DMatrix::zeros(d, 0),
                retained,
                complement: None,
                schur: DMatrix::zeros(0, 0),
            });
        }
        let c = sigma.view((0, d), (d, m)).into_owned();
        let coupling = retained.solve_mat(&c).ok_or(BoundError::RetainedBlockSingular)?;
        let mut schur = add_ridge(&sigma.view((d, d), (m, m)).into_owned(), eps) - c.transpose() * &coupling;
        schur = (&schur + schur.transpose()) * lit::<T>(0.5);
        let chol = schur.clone().cholesky().ok_or(BoundError::ComplementNotPD)?;
        Ok(SchurSplit {
            d,
            coupling,
            retained,
            complement: Some(Factor::Cholesky(chol)),
            schur,
        })
    }

    pub fn complement_dim(&self) -> usize {
        self.schur.nrows()
    }

    /// Decomposes the full difference vector `delta`.
    pub fn residual(&self, delta: &DVector<T>) -> Result<SchurResidual<T>, BoundError> {
        let d = self.d;
        let m = self.complement_dim();
        if delta.len() != d + m {
            return Err(MeasureError::DimensionMismatch { expected: d + m, got: delta.len() }.into());
        }
        let dd = delta.rows(0, d).into_owned();
        let truncated = self.retained.quad_inv(&dd).ok_or(BoundError::RetainedBlockSingular)?;
        match &self.complement {
            None => Ok(SchurResidual {
                residual: DVector::zeros(0),
                truncated,
                residual_energy: T::zero(),
            }),
            Some(f) => {
                let residual = delta.rows(d, m) - self.coupling.transpose() * &dd;
                let energy = f.quad_inv(&residual).ok_or(BoundError::ComplementNotPD)?;
                Ok(SchurResidual {
                    residual,
                    truncated,
                    residual_energy: energy.max(T::zero()),
                })
            }
        }
    }
}

/// One-shot residual of `delta` against `sigma` split at `d`.
pub fn schur_residual<T: Scalar>(
    sigma: &DMatrix<T>,
    delta: &DVector<T>,
    d: usize,
    eps: T,
) -> Result<SchurResidual<T>, BoundError> {
    SchurSplit::new(sigma, d, eps)?.residual(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Ps,
    Pm,
}

/// Terms entering a PS frame bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsComponents {
    pub a: f64,
    pub b: f64,
    /// `sqrt(rᵀS⁻¹r)` for the own and nearest foreign cluster.
    pub residual_own: f64,
    pub residual_foreign: f64,
    pub lipschitz: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub delta_mu_own: f64,
    pub delta_sigma_own: f64,
    pub delta_mu_foreign: f64,
    pub delta_sigma_foreign: f64,
    pub n_eff_own: f64,
    pub n_eff_foreign: f64,
}

/// Terms entering a PM frame bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmComponents {
    pub k: f64,
    pub theta: f64,
    pub a: f64,
    /// Truncation box half-sides.
    pub box_k: f64,
    pub box_theta: f64,
    pub box_a: f64,
    /// Local (finite-sample) box half-sides after clamping.
    pub delta_k: f64,
    pub delta_theta: f64,
    pub delta_a: f64,
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub r_max: f64,
    /// Radius came from the gradient bound rather than the corners.
    pub gradient_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum BoundComponents {
    Ps(PsComponents),
    Pm(PmComponents),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameBound {
    pub measure: Measure,
    pub radius: f64,
    pub half_width: f64,
    pub delta: f64,
    /// False when a PM radius exceeds 1 or a term is not finite.
    pub valid: bool,
    pub components: BoundComponents,
}

impl FrameBound {
    pub fn total(&self) -> f64 {
        self.radius + self.half_width
    }
}

/// `(B ρ_own + A ρ_foreign) / (A + B)²`.
pub fn ps_radius(a: f64, b: f64, rho_own: f64, rho_foreign: f64) -> f64 {
    let s = a + b;
    if s <= 0.0 {
        return 0.0;
    }
    (b * rho_own + a * rho_foreign) / (s * s)
}

/// `sqrt(A² + B²) / (A + B)²`.
pub fn ps_lipschitz(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s <= 0.0 {
        return 0.0;
    }
    (a * a + b * b).sqrt() / (s * s)
}

/// Effective sample size from lag autocorrelations averaged over coordinates,
/// cut at the first lag that is not significant.
pub fn bartlett_n_eff<T: Scalar>(points: &DMatrix<T>) -> f64 {
    let n = points.nrows();
    if n < 3 {
        return n as f64;
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975);
    let cols: Vec<Vec<f64>> = (0..points.ncols())
        .map(|c| {
            let col: Vec<f64> = points.column(c).iter().map(|v| v.to_f64_lossy()).collect();
            centered(&col)
        })
        .collect();
    let mut sum = 0.0;
    for lag in 1..n - 1 {
        let mut acc = 0.0;
        let mut used = 0usize;
        for col in &cols {
            let var: f64 = col.iter().map(|v| v * v).sum();
            if var <= 0.0 {
                continue;
            }
            let cov: f64 = (0..n - lag).map(|k| col[k] * col[k + lag]).sum();
            acc += cov / var;
            used += 1;
        }
        let rho = if used > 0 { acc / used as f64 } else { 0.0 };
        sum += rho;
        if rho.abs() < z / ((n - lag) as f64).sqrt() {
            break;
        }
    }
    let inflation = (1.0 + 2.0 * sum).max(1.0);
    (n as f64 / inflation).clamp(1.0, n as f64)
}

struct Concentration {
    delta_mu: f64,
    delta_sigma: f64,
    lambda_max: f64,
    lambda_floor: f64,
    n_eff: f64,
}

fn concentration<T: Scalar>(points: &DMatrix<T>, cfg: &BoundConfig, delta_each: f64) -> Concentration {
    let n = points.nrows();
    let sigma = scatter_about(points, &row_mean(points));
    let (lmax, lmin) = sym_extreme_eigenvalues(&sigma)
        .map(|(a, b)| (a.to_f64_lossy().max(0.0), b.to_f64_lossy().max(0.0)))
        .unwrap_or((0.0, 0.0));
    let trace: f64 = sigma.diagonal().iter().map(|v| v.to_f64_lossy()).sum();
    let n_eff = if cfg.bartlett {
        bartlett_n_eff(points)
    } else {
        (cfg.n_eff_factor * n as f64).max(1.0)
    };
    let log_term = (2.0 / delta_each).ln();
    let r = if lmax > 0.0 { trace / lmax } else { 0.0 };
    Concentration {
        delta_mu: (2.0 * lmax * log_term / n_eff).sqrt(),
        delta_sigma: cfg.c_cov * lmax * (r / n_eff + (r + log_term) / n_eff),
        lambda_max: lmax,
        lambda_floor: lmin + cfg.eps_r * lmax,
        n_eff,
    }
}

fn eps_ps(dist: f64, c: &Concentration) -> f64 {
    if c.lambda_max <= 0.0 {
        return 0.0;
    }
    2.0 * dist.sqrt() * c.delta_mu * (c.lambda_max / c.lambda_floor).sqrt()
        + dist * c.delta_sigma / c.lambda_max
}

fn gather<T: Scalar>(coords: &DMatrix<T>, rows: &[usize], cols: usize) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols, |r, c| coords[(rows[r], c)])
}

/// Residual energy of `x` against the full-dimensional statistics of the
/// cluster formed by `rows`, centred on their mean.
fn ps_residual<T: Scalar>(
    full: &DMatrix<T>,
    rows: &[usize],
    x: &DVector<T>,
    d: usize,
    eps: T,
) -> Result<T, BoundError> {
    if full.ncols() == d {
        return Ok(T::zero());
    }
    let pts = gather(full, rows, full.ncols());
    let mu = row_mean(&pts);
    let split = SchurSplit::new(&scatter_about(&pts, &mu), d, eps)?;
    Ok(split.residual(&(x - mu))?.residual_energy)
}

/// PS bound for source `i` of a frame. `full` holds every diffusion
/// coordinate (`N × (N−1)`), of which the first `d` were used for `score`.
pub fn ps_frame_bound<T: Scalar>(
    full: &DMatrix<T>,
    d: usize,
    sources: &[ClusterRows],
    i: usize,
    score: &PsScore<T>,
    cfg: &BoundConfig,
) -> Result<FrameBound, BoundError> {
    cfg.check_delta()?;
    if d == 0 || d > full.ncols() {
        return Err(BoundError::InvalidSplit { d, n: full.ncols() });
    }
    let eps = lit::<T>(cfg.ridge);
    let own = &sources[i];
    let foreign = &sources[score.nearest];
    let x = full.row(own.output).transpose();
    let rho_own = ps_residual(full, &own.cluster_members(), &x, d, eps)?.to_f64_lossy().sqrt();
    let rho_foreign = ps_residual(full, &foreign.cluster_members(), &x, d, eps)?.to_f64_lossy().sqrt();

    let a = score.a.to_f64_lossy();
    let b = score.b.to_f64_lossy();
    let radius = ps_radius(a, b, rho_own, rho_foreign);

    let each = cfg.delta / 2.0;
    let c_own = concentration(&gather(full, &own.cluster_members(), d), cfg, each);
    let c_for = concentration(&gather(full, &foreign.cluster_members(), d), cfg, each);
    let eps_a = eps_ps(a, &c_own);
    let eps_b = eps_ps(b, &c_for);
    let lipschitz = ps_lipschitz(a, b);
    let half_width = lipschitz * (eps_a + eps_b).sqrt();

    Ok(FrameBound {
        measure: Measure::Ps,
        radius,
        half_width,
        delta: cfg.delta,
        valid: radius.is_finite() && half_width.is_finite(),
        components: BoundComponents::Ps(PsComponents {
            a,
            b,
            residual_own: rho_own,
            residual_foreign: rho_foreign,
            lipschitz,
            eps_a,
            eps_b,
            delta_mu_own: c_own.delta_mu,
            delta_sigma_own: c_own.delta_sigma,
            delta_mu_foreign: c_for.delta_mu,
            delta_sigma_foreign: c_for.delta_sigma,
            n_eff_own: c_own.n_eff,
            n_eff_foreign: c_for.n_eff,
        }),
    })
}

/// Largest `|Q(k', a'/θ') − Q(k, a/θ)|` over the eight corners of the box
/// `k ± dk, θ ± dθ, a ± da`; corners are kept inside the valid domain.
pub fn corner_deviation(k: f64, theta: f64, a: f64, dk: f64, dtheta: f64, da: f64) -> f64 {
    let center = gamma_q(k, a.max(0.0) / theta);
    let mut worst = 0.0f64;
    for corner in box_corners(k, theta, a, dk, dtheta, da) {
        let (kc, tc, ac) = corner;
        worst = worst.max((gamma_q(kc, ac / tc) - center).abs());
    }
    worst
}

fn box_corners(k: f64, theta: f64, a: f64, dk: f64, dtheta: f64, da: f64) -> Vec<(f64, f64, f64)> {
    let floor_k = k * 1e-6;
    let floor_t = theta * 1e-6;
    let mut out = Vec::with_capacity(8);
    for sk in [-1.0, 1.0] {
        for st in [-1.0, 1.0] {
            for sa in [-1.0, 1.0] {
                out.push((
                    (k + sk * dk).max(floor_k),
                    (theta + st * dtheta).max(floor_t),
                    (a + sa * da).max(0.0),
                ));
            }
        }
    }
    out
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |s| if n == 1 { lo } else { lo + (hi - lo) * s as f64 / (n - 1) as f64 })
}

/// Gradient norm of `F(k, θ, a) = Q(k, a/θ)`.
fn gradient_norm(k: f64, theta: f64, a: f64) -> f64 {
    let x = a / theta;
    let dk = gamma_q_dk(k, x);
    let dens = -gamma_q_dx(k, x);
    let dtheta = a / (theta * theta) * dens;
    let da = -dens / theta;
    (dk * dk + dtheta * dtheta + da * da).sqrt()
}

/// Whether `∂F/∂k` changes sign on the box, checked on a grid.
fn dk_changes_sign(k: f64, theta: f64, a: f64, dk: f64, dtheta: f64, da: f64, n: usize) -> bool {
    let (mut pos, mut neg) = (false, false);
    for kk in grid((k - dk).max(k * 1e-6), k + dk, n) {
        for tt in grid((theta - dtheta).max(theta * 1e-6), theta + dtheta, n) {
            for aa in grid((a - da).max(0.0), a + da, n) {
                let g = gamma_q_dk(kk, aa / tt);
                pos |= g > 0.0;
                neg |= g < 0.0;
            }
        }
    }
    pos && neg
}

/// Gradient-bound radius: grid supremum of `‖∇F‖` times the box half-diagonal.
fn gradient_radius(k: f64, theta: f64, a: f64, dk: f64, dtheta: f64, da: f64, n: usize) -> f64 {
    let mut sup = 0.0f64;
    for kk in grid((k - dk).max(k * 1e-6), k + dk, n) {
        for tt in grid((theta - dtheta).max(theta * 1e-6), theta + dtheta, n) {
            for aa in grid((a - da).max(0.0), a + da, n) {
                sup = sup.max(gradient_norm(kk, tt, aa));
            }
        }
    }
    sup * (dk * dk + dtheta * dtheta + da * da).sqrt()
}

const SIGN_GRID: usize = 5;

fn sample_moments(g: &[f64]) -> (f64, f64) {
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// PM bound for one source. `full` holds every diffusion coordinate, the first
/// `d` of which produced `score`.
pub fn pm_frame_bound<T: Scalar>(
    full: &DMatrix<T>,
    d: usize,
    rows: &ClusterRows,
    score: &PmScore<T>,
    cfg: &BoundConfig,
) -> Result<FrameBound, BoundError> {
    cfg.check_delta()?;
    let dim = full.ncols();
    if d == 0 || d > dim {
        return Err(BoundError::InvalidSplit { d, n: dim });
    }
    let n_p = rows.distortions.len();
    if n_p < 2 {
        return Err(MeasureError::TooFewDistortions { needed: 2, got: n_p }.into());
    }
    let eps = lit::<T>(cfg.ridge);
    let reference = full.row(rows.reference).transpose();
    let dist = gather(full, &rows.distortions, dim);
    let sigma = scatter_about(&dist, &reference);
    let split = SchurSplit::new(&sigma, d, eps)?;

    let mut g_trunc = Vec::with_capacity(n_p);
    let mut g_full = Vec::with_capacity(n_p);
    let mut delta_max = 0.0f64;
    for p in 0..n_p {
        let res = split.residual(&(dist.row(p).transpose() - &reference))?;
        let t = res.truncated.to_f64_lossy();
        let e = res.residual_energy.to_f64_lossy();
        g_trunc.push(t);
        g_full.push(t + e);
        delta_max = delta_max.max(e);
    }
    let out = split.residual(&(full.row(rows.output).transpose() - &reference))?;

    let fit: &GammaFit<T> = &score.fit;
    let k = fit.shape.to_f64_lossy();
    let theta = fit.scale.to_f64_lossy();
    let a = score.a.to_f64_lossy();
    let (mu_d, var_d) = (fit.mean.to_f64_lossy(), fit.variance.to_f64_lossy());
    let (mu_f, var_f) = sample_moments(&g_full);
    let npf = n_p as f64;
    let ratio = npf / (npf - 1.0);

    // deterministic part
    let box_k = cfg.c1 * delta_max * ratio * (mu_f + mu_d) / var_d;
    let box_theta = cfg.c2 * delta_max * ratio * (var_f + var_d) / (mu_d * mu_d);
    let box_a = out.residual_energy.to_f64_lossy();
    let fallback = (box_k > 0.0 || box_theta > 0.0 || box_a > 0.0)
        && dk_changes_sign(k, theta, a, box_k, box_theta, box_a, SIGN_GRID);
    let radius = if fallback {
        gradient_radius(k, theta, a, box_k, box_theta, box_a, SIGN_GRID)
    } else {
        corner_deviation(k, theta, a, box_k, box_theta, box_a)
    };

    // finite-sample part
    let log_term = (2.0 / (cfg.delta / 3.0)).ln();
    let r_max = g_full.iter().copied().fold(0.0f64, f64::max);
    let sd = var_d.sqrt();
    let delta_mu = (2.0 * var_d * log_term / npf).sqrt() + 3.0 * r_max * log_term / npf;
    let delta_sigma = (2.0 * r_max * r_max * log_term / npf).sqrt() + 3.0 * r_max * r_max * log_term / npf;
    let delta_a = (r_max * (log_term / npf).sqrt()).min(0.5 * a);
    let delta_k = ((2.0 * mu_d / var_d) * delta_mu + (2.0 * mu_d * mu_d / (var_d * sd)) * delta_sigma).min(0.5 * k);
    let delta_theta = ((var_d / (mu_d * mu_d)) * delta_mu + (2.0 * sd / mu_d) * delta_sigma).min(0.5 * theta);
    let half_width = corner_deviation(k, theta, a, delta_k, delta_theta, delta_a);

    let valid = radius.is_finite() && half_width.is_finite() && radius <= 1.0;
    Ok(FrameBound {
        measure: Measure::Pm,
        radius,
        half_width,
        delta: cfg.delta,
        valid,
        components: BoundComponents::Pm(PmComponents {
            k,
            theta,
            a,
            box_k,
            box_theta,
            box_a,
            delta_k,
            delta_theta,
            delta_a,
            delta_mu,
            delta_sigma,
            r_max,
            gradient_fallback: fallback,
        }),
    })
}

/// Standard normal quantile at `(1 + c) / 2`.
pub fn z_two_sided(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf((1.0 + confidence) / 2.0)
}

/// Frames further apart than this are treated as independent.
pub const DEFAULT_DECORRELATION_GAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalBound {
    /// Deterministic radius.
    pub b: f64,
    /// Half-width at the configured confidence.
    pub h: f64,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Utterance-level radius and half-width from frame bounds. `pooled_norm` is
/// the argument of the logistic map and is only read for PESQ pooling.
pub fn propagate_utterance(
    radii: &[f64],
    half_widths: &[f64],
    agg: &AggregationConfig,
    pooled_norm: f64,
    confidence: f64,
    gap: usize,
) -> Result<IntervalBound, BoundError> {
    if radii.is_empty() {
        return Err(BoundError::EmptyFrameSet);
    }
    if radii.len() != half_widths.len() {
        return Err(BoundError::LengthMismatch);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(BoundError::InvalidDelta(1.0 - confidence));
    }
    let z = z_two_sided(confidence);
    let sigmas: Vec<f64> = half_widths.iter().map(|h| h / z).collect();
    let f = radii.len() as f64;
    Ok(match agg.method {
        Method::Average => IntervalBound {
            b: radii.iter().sum::<f64>() / f,
            h: z * ((gap + 1) as f64).sqrt() / f.sqrt() * rms(&sigmas),
        },
        Method::Pesq => {
            let scale = agg.overlap() as f64 / (agg.n_windows(radii.len()) as f64).sqrt()
                * logistic_slope(pooled_norm);
            IntervalBound {
                b: scale * rms(radii),
                h: z * scale * rms(&sigmas),
            }
        }
    })
}

/// PCC radius `‖∇r‖ ‖b̃‖` and delta-method half-width `sqrt(Σ ∇r_q² h_q²)`.
pub fn pcc_bound(v: &[f64], mos: &[f64], b: &[f64], h: &[f64]) -> Result<IntervalBound, BoundError> {
    if b.len() != v.len() || h.len() != v.len() {
        return Err(BoundError::LengthMismatch);
    }
    let grad = pcc_gradient(v, mos)?;
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let bnorm = centered(b).iter().map(|x| x * x).sum::<f64>().sqrt();
    let hw = grad.iter().zip(h).map(|(g, s)| (g * s).powi(2)).sum::<f64>().sqrt();
    Ok(IntervalBound { b: gnorm * bnorm, h: hw })
}

/// SRCC radius from the two extreme bias orientations and Monte Carlo
/// half-width from Gaussian jitter with scales `h / z`.
pub fn srcc_bound(
    v: &[f64],
    mos: &[f64],
    b: &[f64],
    h: &[f64],
    confidence: f64,
    draws: usize,
    seed: u64,
    stream: u64,
) -> Result<IntervalBound, BoundError> {
    if b.len() != v.len() || h.len() != v.len() {
        return Err(BoundError::LengthMismatch);
    }
    let base = srcc(v, mos)?;
    let shifted = |sign: f64| -> f64 {
        let w: Vec<f64> = v.iter().zip(b).map(|(x, r)| x + sign * r).collect();
        srcc(&w, mos).map_or(0.0, |s| (s - base).abs())
    };
    let radius = shifted(1.0).max(shifted(-1.0));

    let z = z_two_sided(confidence);
    let scales: Vec<f64> = h.iter().map(|x| x / z).collect();
    let half_width = if draws == 0 || scales.iter().all(|s| *s == 0.0) {
        0.0
    } else {
        let mut rng = stream_rng(seed, stream);
        let mut dev = Vec::with_capacity(draws);
        let mut w = vec![0.0; v.len()];
        for _ in 0..draws {
            for q in 0..v.len() {
                let e: f64 = rng.sample(StandardNormal);
                w[q] = v[q] + scales[q] * e;
            }
            if let Ok(s) = srcc(&w, mos) {
                dev.push((s - base).abs());
            }
        }
        empirical_quantile(&mut dev, (1.0 + confidence) / 2.0)
    };
    Ok(IntervalBound { b: radius, h: half_width })
}

/// Nearest-rank quantile; empty input yields 0.
fn empirical_quantile(x: &mut [f64], q: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.sort_by(f64::total_cmp);
    let idx = ((q * x.len() as f64).ceil() as usize).clamp(1, x.len()) - 1;
    x[idx]
}

/// Scenario-level radius (mean) and half-width with within-trial jitter
/// correlation `rho`. `trials[l]` holds the per-source bounds of trial `l`.
pub fn scenario_bound(trials: &[Vec<IntervalBound>], rho: f64, confidence: f64) -> Option<IntervalBound> {
    let total: usize = trials.iter().map(|t| t.len()).sum();
    if total == 0 {
        return None;
    }
    let n = total as f64;
    let z = z_two_sided(confidence);
    let b = trials.iter().flatten().map(|x| x.b).sum::<f64>() / n;
    let mut var = 0.0;
    for trial in trials {
        let s: Vec<f64> = trial.iter().map(|x| x.h / z).collect();
        var += s.iter().map(|v| v * v).sum::<f64>();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                var += 2.0 * rho * s[i] * s[j];
            }
        }
    }
    Some(IntervalBound { b, h: z * (var.max(0.0)).sqrt() / n })
}

/// Count of frames kept after dropping those whose bound is invalid.
pub fn count_valid(bounds: &[FrameBound]) -> usize {
    bounds.iter().filter(|b| b.valid).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn schur_identity_against_full_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let sigma = random_spd(&mut rng, 8);
            let delta = DVector::from_fn(8, |_, _| rng.random_range(-2.0..2.0));
            let res = schur_residual(&sigma, &delta, 5, 1e-6).unwrap();
            let full = crate::measures::sq_mahalanobis(&delta, &DVector::zeros(8), &sigma, 1e-6).unwrap();
            let sum = res.truncated + res.residual_energy;
            assert!((sum - full).abs() <= 1e-8 * full.abs(), "{sum} vs {full}");
        }
    }

    #[test]
    fn schur_block_diagonal() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0, 5.0]));
        let delta = DVector::from_vec(vec![1.0, 1.0, 2.0, -1.0]);
        let res = schur_residual(&sigma, &delta, 2, 1e-6).unwrap();
        assert_eq!(res.residual.as_slice(), &[2.0, -1.0]);
        let zero = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(schur_residual(&sigma, &zero, 2, 1e-6).unwrap().residual_energy, 0.0);
    }

    #[test]
    fn ps_radius_examples() {
        assert_eq!(ps_radius(1.0, 2.0, 0.0, 0.0), 0.0);
        let (a, rho) = (1.5, 0.1);
        assert!((ps_radius(a, a, rho, rho) - rho / (2.0 * a)).abs() < 1e-15);
    }

    #[test]
    fn corner_closed_form() {
        let ln2 = std::f64::consts::LN_2;
        let hw = corner_deviation(1.0, 1.0, ln2, 0.0, 0.0, 0.5 * ln2);
        let oracle = (2f64.powf(-1.5) - 0.5).abs().max((2f64.powf(-0.5) - 0.5).abs());
        assert!((hw - oracle).abs() < 1e-12);
        assert!((hw - 0.2071).abs() < 1e-4);
        assert_eq!(corner_deviation(2.0, 1.5, 3.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn corners_dominate_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let k = rng.random_range(0.5..8.0);
            let th = rng.random_range(0.3..3.0);
            let a = rng.random_range(0.1..20.0);
            let (dk, dt, da) = (0.3 * k, 0.2 * th, 0.4 * a);
            let center = gamma_q(k, a / th);
            let corner = corner_deviation(k, th, a, dk, dt, da);
            let mut gmax = 0.0f64;
            for kk in grid(k - dk, k + dk, 10) {
                for tt in grid(th - dt, th + dt, 10) {
                    for aa in grid(a - da, a + da, 10) {
                        gmax = gmax.max((gamma_q(kk, aa / tt) - center).abs());
                    }
                }
            }
            assert!(corner >= gmax - 1e-9);
        }
    }

    #[test]
    fn utterance_average_examples() {
        let agg = AggregationConfig::average();
        let u = propagate_utterance(&[0.2; 12], &[0.0; 12], &agg, 0.0, 0.95, 4).unwrap();
        assert!((u.b - 0.2).abs() < 1e-15);
        assert_eq!(u.h, 0.0);
        // Half-width equals √(g+1)/√F times the common frame half-width.
        let u = propagate_utterance(&[0.0; 20], &[0.1; 20], &agg, 0.0, 0.95, 4).unwrap();
        assert!((u.h - 0.1 * 5f64.sqrt() / 20f64.sqrt()).abs() < 1e-12);
        assert!(propagate_utterance(&[], &[], &agg, 0.0, 0.95, 4).is_err());
    }

    #[test]
    fn utterance_pesq_uses_slope() {
        let agg = AggregationConfig::default();
        let mid = 3.8224 / 1.3669;
        let u = propagate_utterance(&[0.1; 30], &[0.0; 30], &agg, mid, 0.95, 4).unwrap();
        assert!((u.b - 2.0 * 0.1 * 1.3669).abs() < 1e-12);
    }

    #[test]
    fn z_value() {
        assert!((z_two_sided(0.95) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn zero_bounds_give_zero_correlation_bounds() {
        let v = [0.1, 0.5, 0.3, 0.9];
        let m = [1.0, 3.0, 2.5, 4.5];
        let z = [0.0; 4];
        assert_eq!(pcc_bound(&v, &m, &z, &z).unwrap(), IntervalBound { b: 0.0, h: 0.0 });
        assert_eq!(
            srcc_bound(&v, &m, &z, &z, 0.95, 1000, 1, 1).unwrap(),
            IntervalBound { b: 0.0, h: 0.0 }
        );
    }

    #[test]
    fn srcc_tiny_jitter_never_flips() {
        let v = [0.1, 0.2, 0.3, 0.4, 0.5];
        let m = [1.0, 2.0, 3.0, 5.0, 4.0];
        let h = [1e-6; 5];
        let r = srcc_bound(&v, &m, &[0.0; 5], &h, 0.95, 10_000, 3, 0).unwrap();
        assert_eq!(r.h, 0.0);
    }

    #[test]
    fn scenario_combination() {
        let z = z_two_sided(0.95);
        let one = IntervalBound { b: 0.2, h: z * 0.1 };
        let s = scenario_bound(&[vec![one, one]], 0.0, 0.95).unwrap();
        assert!((s.b - 0.2).abs() < 1e-15);
        assert!((s.h - z * (0.02f64).sqrt() / 2.0).abs() < 1e-12);
        let s1 = scenario_bound(&[vec![one, one]], 1.0, 0.95).unwrap();
        assert!((s1.h - z * 0.1).abs() < 1e-12);
    }

    #[test]
    fn bartlett_on_independent_rows_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-1.0..1.0));
        let n_eff = bartlett_n_eff(&pts);
        assert!(n_eff > 150.0, "{n_eff}");
        // A random walk is strongly autocorrelated.
        let mut walk = DMatrix::<f64>::zeros(200, 1);
        for r in 1..200 {
            walk[(r, 0)] = walk[(r - 1, 0)] + rng.random_range(-1.0..1.0);
        }
        assert!(bartlett_n_eff(&walk) < 50.0);
    }
}
