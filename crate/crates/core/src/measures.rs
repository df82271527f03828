//! Perceptual clusters on the manifold and the frame-level PS / PM scores.
//!
//! A source's cluster is its reference embedding plus the embeddings of the
//! reference's distortion bank. The system output is never part of its own
//! cluster statistics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::embeddings::FrameLayout;
use crate::linalg::{add_ridge, row_mean, scatter_about, Factor};
use crate::scalar::{from_usize, lit, Scalar};
use crate::special::{gamma_p, gamma_q, gamma_q_dx};

/// Ridge added to every covariance before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("regularized covariance is numerically singular")]
    SolveFailure,
    #[error("ridge must be positive")]
    InvalidRidge,
    #[error("PS needs at least two clusters")]
    SingleSource,
    #[error("need at least {needed} distortions, got {got}")]
    TooFewDistortions { needed: usize, got: usize },
    #[error("squared-distance moments are degenerate (mean {mean}, variance {variance})")]
    DegenerateMoments { mean: f64, variance: f64 },
    #[error("distances to own and nearest foreign cluster are both zero")]
    ZeroDistanceSum,
    #[error("source index {0} out of range")]
    SourceOutOfRange(usize),
}

/// `(x - μ)ᵀ (Σ + εI)⁻¹ (x - μ)`.
pub fn sq_mahalanobis<T: Scalar>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    eps: T,
) -> Result<T, MeasureError> {
    let dim = mu.len();
    if x.len() != dim {
        return Err(MeasureError::DimensionMismatch { expected: dim, got: x.len() });
    }
    if sigma.nrows() != dim || sigma.ncols() != dim {
        return Err(MeasureError::DimensionMismatch { expected: dim, got: sigma.nrows() });
    }
    if !(eps > T::zero()) {
        return Err(MeasureError::InvalidRidge);
    }
    let f = Factor::new(&add_ridge(sigma, eps)).ok_or(MeasureError::SolveFailure)?;
    let q = f.quad_inv(&(x - mu)).ok_or(MeasureError::SolveFailure)?;
    Ok(q.max(T::zero()))
}

/// Regularized Mahalanobis distance.
pub fn mahalanobis<T: Scalar>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    eps: T,
) -> Result<T, MeasureError> {
    sq_mahalanobis(x, mu, sigma, eps).map(|q| q.sqrt())
}

/// Inverse of `Σ + εI`, or `SolveFailure`.
fn regularized_inverse<T: Scalar>(sigma: &DMatrix<T>, eps: T) -> Result<DMatrix<T>, MeasureError> {
    if !(eps > T::zero()) {
        return Err(MeasureError::InvalidRidge);
    }
    let n = sigma.nrows();
    let f = Factor::new(&add_ridge(sigma, eps)).ok_or(MeasureError::SolveFailure)?;
    f.solve_mat(&DMatrix::identity(n, n)).ok_or(MeasureError::SolveFailure)
}

fn quad<T: Scalar>(m: &DMatrix<T>, v: &DVector<T>) -> T {
    v.dot(&(m * v)).max(T::zero())
}

fn gather<T: Scalar>(coords: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), coords.ncols(), |r, c| coords[(rows[r], c)])
}

/// Centroid and unbiased covariance of a reference-plus-distortions cluster.
#[derive(Debug, Clone)]
pub struct ClusterStatsPs<T: Scalar> {
    pub centroid: DVector<T>,
    pub covariance: DMatrix<T>,
    pub members: usize,
    /// `(Σ + εI)⁻¹`.
    pub precision: DMatrix<T>,
}

impl<T: Scalar> ClusterStatsPs<T> {
    /// Statistics of the rows of `points`.
    pub fn from_points(points: &DMatrix<T>, eps: T) -> Result<Self, MeasureError> {
        let centroid = row_mean(points);
        let covariance = scatter_about(points, &centroid);
        let precision = regularized_inverse(&covariance, eps)?;
        Ok(ClusterStatsPs {
            centroid,
            covariance,
            members: points.nrows(),
            precision,
        })
    }

    /// Statistics of `rows` of an embedding coordinate matrix.
    pub fn from_rows(coords: &DMatrix<T>, rows: &[usize], eps: T) -> Result<Self, MeasureError> {
        Self::from_points(&gather(coords, rows), eps)
    }

    pub fn distance(&self, x: &DVector<T>) -> Result<T, MeasureError> {
        if x.len() != self.centroid.len() {
            return Err(MeasureError::DimensionMismatch {
                expected: self.centroid.len(),
                got: x.len(),
            });
        }
        Ok(quad(&self.precision, &(x - &self.centroid)).sqrt())
    }
}

/// PS of one output with its two distances and the nearest foreign cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsScore<T: Scalar> {
    pub ps: T,
    /// Distance to the attributed cluster.
    pub a: T,
    /// Distance to the nearest foreign cluster.
    pub b: T,
    /// Position (in the layout) of the nearest foreign cluster.
    pub nearest: usize,
}

/// `1 - a / (a + b)`.
pub fn ps_from_distances<T: Scalar>(a: T, b: T) -> Result<T, MeasureError> {
    let s = a + b;
    if !(s > T::zero()) {
        return Err(MeasureError::ZeroDistanceSum);
    }
    Ok((T::one() - a / s).max(T::zero()).min(T::one()))
}

/// PS of `output` attributed to cluster `i`; ties in the nearest foreign
/// cluster resolve to the lowest index.
pub fn compute_ps<T: Scalar>(
    output: &DVector<T>,
    clusters: &[ClusterStatsPs<T>],
    i: usize,
) -> Result<PsScore<T>, MeasureError> {
    if clusters.len() < 2 {
        return Err(MeasureError::SingleSource);
    }
    if i >= clusters.len() {
        return Err(MeasureError::SourceOutOfRange(i));
    }
    let a = clusters[i].distance(output)?;
    let mut best: Option<(usize, T)> = None;
    for (j, c) in clusters.iter().enumerate() {
        if j == i {
            continue;
        }
        let dj = c.distance(output)?;
        if best.is_none_or(|(_, b)| dj < b) {
            best = Some((j, dj));
        }
    }
    let (nearest, b) = best.expect("at least one foreign cluster");
    Ok(PsScore {
        ps: ps_from_distances(a, b)?,
        a,
        b,
        nearest,
    })
}

/// PS cluster statistics for every source of a frame.
pub fn ps_clusters<T: Scalar>(
    coords: &DMatrix<T>,
    layout: &FrameLayout,
    eps: T,
) -> Result<Vec<ClusterStatsPs<T>>, MeasureError> {
    layout
        .sources
        .iter()
        .map(|s| ClusterStatsPs::from_rows(coords, &s.cluster_members(), eps))
        .collect()
}

/// PS for every source of a frame, given truncated coordinates (`N × d`).
pub fn score_ps_frame<T: Scalar>(
    coords: &DMatrix<T>,
    layout: &FrameLayout,
    eps: T,
) -> Result<Vec<PsScore<T>>, MeasureError> {
    let clusters = ps_clusters(coords, layout, eps)?;
    layout
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| compute_ps(&coords.row(s.output).transpose(), &clusters, i))
        .collect()
}

/// Gradient of PS with respect to the output coordinates.
pub fn ps_gradient<T: Scalar>(
    output: &DVector<T>,
    clusters: &[ClusterStatsPs<T>],
    i: usize,
) -> Result<DVector<T>, MeasureError> {
    let score = compute_ps(output, clusters, i)?;
    let s = score.a + score.b;
    let dps_da = -score.b / (s * s);
    let dps_db = score.a / (s * s);
    let grad_dist = |c: &ClusterStatsPs<T>, dist: T| -> DVector<T> {
        if dist > T::zero() {
            (&c.precision * (output - &c.centroid)) / dist
        } else {
            DVector::zeros(output.len())
        }
    };
    Ok(grad_dist(&clusters[i], score.a) * dps_da
        + grad_dist(&clusters[score.nearest], score.b) * dps_db)
}

/// Reference-centred covariance of a reference-free cluster.
#[derive(Debug, Clone)]
pub struct ClusterStatsPm<T: Scalar> {
    pub reference: DVector<T>,
    /// `1/(N_p - 1) Σ (ψ - ref)(ψ - ref)ᵀ`.
    pub covariance: DMatrix<T>,
    pub members: usize,
    pub precision: DMatrix<T>,
}

impl<T: Scalar> ClusterStatsPm<T> {
    pub fn from_points(
        reference: DVector<T>,
        distortions: &DMatrix<T>,
        eps: T,
    ) -> Result<Self, MeasureError> {
        let n_p = distortions.nrows();
        if n_p < 2 {
            return Err(MeasureError::TooFewDistortions { needed: 2, got: n_p });
        }
        if distortions.ncols() != reference.len() {
            return Err(MeasureError::DimensionMismatch {
                expected: reference.len(),
                got: distortions.ncols(),
            });
        }
        let covariance = scatter_about(distortions, &reference);
        let precision = regularized_inverse(&covariance, eps)?;
        Ok(ClusterStatsPm {
            reference,
            covariance,
            members: n_p,
            precision,
        })
    }

    pub fn from_rows(
        coords: &DMatrix<T>,
        reference_row: usize,
        distortion_rows: &[usize],
        eps: T,
    ) -> Result<Self, MeasureError> {
        Self::from_points(
            coords.row(reference_row).transpose(),
            &gather(coords, distortion_rows),
            eps,
        )
    }

    /// Squared Mahalanobis distance of `x` to the reference.
    pub fn sq_distance(&self, x: &DVector<T>) -> Result<T, MeasureError> {
        if x.len() != self.reference.len() {
            return Err(MeasureError::DimensionMismatch {
                expected: self.reference.len(),
                got: x.len(),
            });
        }
        Ok(quad(&self.precision, &(x - &self.reference)))
    }

    /// Squared distances of every row of `points`.
    pub fn sq_distances(&self, points: &DMatrix<T>) -> Result<Vec<T>, MeasureError> {
        (0..points.nrows()).map(|r| self.sq_distance(&points.row(r).transpose())).collect()
    }
}

/// Moment-matched Gamma law of a cluster's squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaFit<T: Scalar> {
    pub mean: T,
    /// Unbiased sample variance.
    pub variance: T,
    pub shape: T,
    pub scale: T,
    pub n: usize,
}

impl<T: Scalar> GammaFit<T> {
    pub fn from_moments(mean: T, variance: T, n: usize) -> Result<Self, MeasureError> {
        if !(mean > T::zero() && variance > T::zero()) {
            return Err(MeasureError::DegenerateMoments {
                mean: mean.to_f64_lossy(),
                variance: variance.to_f64_lossy(),
            });
        }
        Ok(GammaFit {
            mean,
            variance,
            shape: mean * mean / variance,
            scale: variance / mean,
            n,
        })
    }

    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }

    /// Gamma CDF at `x`.
    pub fn cdf(&self, x: T) -> T {
        gamma_p(self.shape, x / self.scale)
    }
}

/// Sample mean and unbiased variance of `distances`, matched to Gamma(k, θ).
pub fn fit_gamma<T: Scalar>(distances: &[T]) -> Result<GammaFit<T>, MeasureError> {
    let n = distances.len();
    if n < 2 {
        return Err(MeasureError::TooFewDistortions { needed: 2, got: n });
    }
    let nf = from_usize::<T>(n);
    let mean = distances.iter().copied().fold(T::zero(), |a, b| a + b) / nf;
    let ss = distances
        .iter()
        .map(|&g| (g - mean) * (g - mean))
        .fold(T::zero(), |a, b| a + b);
    let variance = ss / from_usize::<T>(n - 1);
    // Equal distances leave only rounding noise in the variance.
    if variance <= mean * mean * T::EPS * T::EPS * nf {
        return Err(MeasureError::DegenerateMoments {
            mean: mean.to_f64_lossy(),
            variance: variance.to_f64_lossy(),
        });
    }
    GammaFit::from_moments(mean, variance, n)
}

/// `Q(k̂, â / θ̂)`.
pub fn compute_pm<T: Scalar>(fit: &GammaFit<T>, a_hat: T) -> T {
    gamma_q(fit.shape, a_hat.max(T::zero()) / fit.scale)
}

/// PM of one output with its fit and squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmScore<T: Scalar> {
    pub pm: T,
    /// Squared distance of the output to its reference.
    pub a: T,
    pub fit: GammaFit<T>,
    pub ks: KsResult,
}

/// PM for every source of a frame, given truncated coordinates.
pub fn score_pm_frame<T: Scalar>(
    coords: &DMatrix<T>,
    layout: &FrameLayout,
    eps: T,
) -> Result<Vec<PmScore<T>>, MeasureError> {
    layout
        .sources
        .iter()
        .map(|s| {
            let stats = ClusterStatsPm::from_rows(coords, s.reference, &s.distortions, eps)?;
            let distances = stats.sq_distances(&gather(coords, &s.distortions))?;
            let fit = fit_gamma(&distances)?;
            let a = stats.sq_distance(&coords.row(s.output).transpose())?;
            Ok(PmScore {
                pm: compute_pm(&fit, a),
                a,
                fit,
                ks: ks_gamma_diagnostic(&fit, &distances),
            })
        })
        .collect()
}

/// Gradient of PM with respect to the output coordinates.
pub fn pm_gradient<T: Scalar>(
    output: &DVector<T>,
    stats: &ClusterStatsPm<T>,
    fit: &GammaFit<T>,
) -> Result<DVector<T>, MeasureError> {
    let a = stats.sq_distance(output)?;
    let dq = gamma_q_dx(fit.shape, a / fit.scale) / fit.scale;
    Ok((&stats.precision * (output - &stats.reference)) * (lit::<T>(2.0) * dq))
}

/// Below this sample size the KS verdict is reported as low-power.
pub const KS_LOW_POWER_N: usize = 10;

/// One-sample Kolmogorov–Smirnov check of distances against the fitted Gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// 5% critical value.
    pub critical: f64,
    pub pass: bool,
    pub low_power: bool,
}

/// KS statistic against Gamma(k̂, θ̂) with Stephens' finite-n 5% critical value.
pub fn ks_gamma_diagnostic<T: Scalar>(fit: &GammaFit<T>, distances: &[T]) -> KsResult {
    let mut xs: Vec<f64> = distances.iter().map(|d| d.to_f64_lossy()).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    let k = fit.shape.to_f64_lossy();
    let theta = fit.scale.to_f64_lossy();
    let mut stat = 0.0f64;
    for (idx, &x) in xs.iter().enumerate() {
        let f = gamma_p(k, (x / theta).max(0.0));
        let hi = (idx + 1) as f64 / n as f64 - f;
        let lo = f - idx as f64 / n as f64;
        stat = stat.max(hi).max(lo);
    }
    let sn = (n.max(1) as f64).sqrt();
    let critical = 1.358 / (sn + 0.12 + 0.11 / sn);
    KsResult {
        statistic: stat,
        critical,
        pass: stat <= critical,
        low_power: n < KS_LOW_POWER_N,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Uniform};

    #[test]
    fn mahalanobis_basics() {
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(mahalanobis(&mu, &mu, &id, 1e-6).unwrap(), 0.0);
        let x = DVector::from_vec(vec![4.0, 2.0]);
        let d = mahalanobis(&x, &mu, &id, 1e-12).unwrap();
        assert!((d - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_diagonal_oracle() {
        // (2,0) against diag(4,1) + 1e-6 I: sqrt(4 / (4 + 1e-6)).
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let d = mahalanobis(
            &DVector::from_vec(vec![2.0, 0.0]),
            &DVector::zeros(2),
            &sigma,
            1e-6,
        )
        .unwrap();
        let oracle = (4.0f64 / (4.0 + 1e-6)).sqrt();
        assert!((d - oracle).abs() < 1e-15);
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ps_arithmetic() {
        assert_eq!(ps_from_distances(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(ps_from_distances(1.5, 1.5).unwrap(), 0.5);
        assert_eq!(ps_from_distances(3.0, 1.0).unwrap(), 0.25);
        assert!(ps_from_distances(0.0f64, 0.0).is_err());
    }

    #[test]
    fn single_cluster_rejected() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let c = ClusterStatsPs::from_points(&pts, 1e-6).unwrap();
        let out = DVector::from_vec(vec![0.5]);
        assert_eq!(compute_ps(&out, &[c], 0).unwrap_err(), MeasureError::SingleSource);
    }

    #[test]
    fn nearest_tie_takes_lowest_index() {
        let a = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let far = DMatrix::from_row_slice(3, 1, &[9.0, 10.0, 11.0]);
        let far2 = DMatrix::from_row_slice(3, 1, &[-11.0, -10.0, -9.0]);
        let cs: Vec<_> = [a, far, far2]
            .iter()
            .map(|p| ClusterStatsPs::from_points(p, 1e-6).unwrap())
            .collect();
        let s = compute_ps(&DVector::from_vec(vec![0.0]), &cs, 0).unwrap();
        assert_eq!(s.nearest, 1);
        assert_eq!(s.ps, 1.0);
    }

    #[test]
    fn gamma_moment_arithmetic() {
        let fit = GammaFit::from_moments(2.0, 2.0, 10).unwrap();
        assert_eq!(fit.shape, 2.0);
        assert_eq!(fit.scale, 1.0);
        assert!(matches!(
            fit_gamma(&[3.0f64; 8]),
            Err(MeasureError::DegenerateMoments { .. })
        ));
        assert!(matches!(
            fit_gamma(&[3.0f64]),
            Err(MeasureError::TooFewDistortions { .. })
        ));
    }

    #[test]
    fn gamma_recovery_from_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Gamma::new(3.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
        let fit = fit_gamma(&xs).unwrap();
        assert!((2.7..=3.3).contains(&fit.shape), "k = {}", fit.shape);
        assert!((0.45..=0.55).contains(&fit.scale), "θ = {}", fit.scale);
    }

    #[test]
    fn pm_closed_forms() {
        let fit = GammaFit::from_moments(1.0, 1.0, 10).unwrap();
        assert_eq!(compute_pm(&fit, 0.0), 1.0);
        assert!((compute_pm(&fit, std::f64::consts::LN_2) - 0.5).abs() < 1e-12);
        assert!(compute_pm(&fit, 1e6) < 1e-300);
    }

    #[test]
    fn ks_accepts_gamma_and_rejects_uniform() {
        let mut passes = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let g = Gamma::new(2.5, 1.3).unwrap();
            let xs: Vec<f64> = (0..500).map(|_| g.sample(&mut rng)).collect();
            let fit = fit_gamma(&xs).unwrap();
            if ks_gamma_diagnostic(&fit, &xs).pass {
                passes += 1;
            }
        }
        assert!(passes >= 45, "{passes}/50");

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = Uniform::new(10.0, 11.0).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| u.sample(&mut rng)).collect();
        let fit = fit_gamma(&xs).unwrap();
        assert!(!ks_gamma_diagnostic(&fit, &xs).pass);
    }

    #[test]
    fn ks_small_sample_flagged() {
        let fit = GammaFit::from_moments(1.0, 0.5, 2).unwrap();
        let r = ks_gamma_diagnostic(&fit, &[0.5, 1.5]);
        assert!(r.low_power);
        assert!(r.statistic.is_finite());
    }
}
