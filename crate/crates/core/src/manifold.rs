//! Diffusion-maps embedding of one frame's item set.
//!
//! A Gaussian affinity with median bandwidth is density-normalized with
//! exponent `alpha`, row-normalized into a Markov transition matrix, and
//! decomposed through its symmetric conjugate `D^{1/2} P D^{-1/2}`. Right
//! eigenvectors are scaled to unit norm under the stationary measure, so that
//! Euclidean distances between full embeddings equal diffusion distances.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{pairwise_sq_dists, sym_eigen_desc};
use crate::scalar::{is_finite, lit, Scalar};

/// Eigenvalues at or below this value are excluded from the retained set.
pub const NONPOSITIVE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("need at least 2 items to build a graph, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate graph: median pairwise squared distance is zero")]
    DegenerateGraph,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("tau must lie in [0, 1], got {0}")]
    InvalidTau(f64),
    #[error("diffusion time must be positive")]
    InvalidTime,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("symmetric eigensolver failed to converge")]
    EigSolverFailure,
    #[error("no positive nontrivial eigenvalue")]
    NonPositiveSpectrum,
    #[error("item index {index} out of range for {n} items")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Markov graph over the items of one frame.
#[derive(Debug, Clone)]
pub struct DiffusionGraph<T: Scalar> {
    /// Gaussian affinities, unit diagonal.
    pub kernel: DMatrix<T>,
    /// Median off-diagonal squared distance.
    pub bandwidth_sq: T,
    pub alpha: T,
    /// Row sums of the density-normalized kernel.
    pub degrees: DVector<T>,
    /// Row-stochastic transition matrix.
    pub transition: DMatrix<T>,
    pub stationary: DVector<T>,
    /// `D^{-1/2} K^(α) D^{-1/2}`; shares the spectrum of `transition`.
    symmetric: DMatrix<T>,
}

impl<T: Scalar> DiffusionGraph<T> {
    pub fn len(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `P^t` by repeated multiplication.
    pub fn transition_power(&self, t: u32) -> DMatrix<T> {
        let n = self.len();
        let mut acc = DMatrix::identity(n, n);
        for _ in 0..t {
            acc = &acc * &self.transition;
        }
        acc
    }

    pub fn min_stationary(&self) -> T {
        self.stationary.iter().copied().fold(T::INF, |a, b| a.min(b))
    }
}

fn median<T: Scalar>(mut values: Vec<T>) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * lit::<T>(0.5)
    }
}

/// Builds the α-normalized Gaussian diffusion graph of the rows of `x`.
pub fn build_graph<T: Scalar>(x: &DMatrix<T>, alpha: T) -> Result<DiffusionGraph<T>, ManifoldError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ManifoldError::TooFewPoints(n));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(ManifoldError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    if x.iter().any(|v| !is_finite(*v)) {
        return Err(ManifoldError::NonFinite);
    }

    let sq = pairwise_sq_dists(x);
    let mut off = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            off.push(sq[(i, j)]);
        }
    }
    let bandwidth_sq = median(off);
    if !(bandwidth_sq > T::zero()) {
        return Err(ManifoldError::DegenerateGraph);
    }

    let kernel = sq.map(|d| (-d / bandwidth_sq).exp());
    let v: Vec<T> = (0..n).map(|i| kernel.row(i).sum()).collect();
    let kernel_alpha = DMatrix::from_fn(n, n, |i, j| {
        if alpha == T::zero() {
            kernel[(i, j)]
        } else {
            kernel[(i, j)] / (v[i] * v[j]).powf(alpha)
        }
    });
    let degrees = DVector::from_iterator(n, (0..n).map(|i| kernel_alpha.row(i).sum()));
    let transition = DMatrix::from_fn(n, n, |i, j| kernel_alpha[(i, j)] / degrees[i]);
    let total = degrees.sum();
    let stationary = degrees.map(|d| d / total);
    let sqrt_deg = degrees.map(|d| d.sqrt());
    let symmetric =
        DMatrix::from_fn(n, n, |i, j| kernel_alpha[(i, j)] / (sqrt_deg[i] * sqrt_deg[j]));

    Ok(DiffusionGraph {
        kernel,
        bandwidth_sq,
        alpha,
        degrees,
        transition,
        stationary,
        symmetric,
    })
}

/// Nontrivial spectrum of a diffusion graph with its truncation.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding<T: Scalar> {
    /// `λ_1 ≥ … ≥ λ_{N-1}`, trivial eigenvalue removed.
    pub eigenvalues: DVector<T>,
    /// `N × (N-1)`; column `ℓ-1` is `u_ℓ`, unit norm under the stationary measure.
    pub eigenvectors: DMatrix<T>,
    pub t: u32,
    /// Retained coordinate count.
    pub d: usize,
    pub tau: T,
    /// Number of eigenvalues above [`NONPOSITIVE_TOL`].
    pub n_positive: usize,
}

/// Smallest `k` whose cumulative eigenvalue share reaches `tau`.
pub fn truncation_dimension<T: Scalar>(eigenvalues: &[T], tau: T) -> Option<usize> {
    let tol = lit::<T>(NONPOSITIVE_TOL);
    let positive: Vec<T> = eigenvalues
        .iter()
        .map(|&l| if l > tol { l } else { T::zero() })
        .collect();
    let mut cum = Vec::with_capacity(positive.len());
    let mut acc = T::zero();
    for &l in &positive {
        acc += l;
        cum.push(acc);
    }
    let total = acc;
    if !(total > T::zero()) {
        return None;
    }
    let n_pos = positive.iter().filter(|&&l| l > T::zero()).count();
    let k = cum.iter().position(|&c| c / total >= tau).map_or(n_pos, |p| p + 1);
    Some(k.clamp(1, n_pos))
}

/// Spectral decomposition of `g` with diffusion time `t` and retention `tau`.
pub fn decompose<T: Scalar>(
    g: &DiffusionGraph<T>,
    t: u32,
    tau: T,
) -> Result<SpectralEmbedding<T>, ManifoldError> {
    if t == 0 {
        return Err(ManifoldError::InvalidTime);
    }
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(ManifoldError::InvalidTau(tau.to_f64_lossy()));
    }
    let n = g.len();
    let (values, vectors) = sym_eigen_desc(&g.symmetric).ok_or(ManifoldError::EigSolverFailure)?;
    if values.iter().any(|v| !is_finite(*v)) {
        return Err(ManifoldError::EigSolverFailure);
    }

    // The trivial pair has eigenvector ∝ sqrt(D); pick it by alignment so a
    // nearly disconnected graph with several unit eigenvalues stays stable.
    let sqrt_deg = g.degrees.map(|d| d.sqrt());
    let sqrt_deg = &sqrt_deg / sqrt_deg.norm();
    let trivial = (0..n)
        .max_by(|&a, &b| {
            let da = vectors.column(a).dot(&sqrt_deg).abs();
            let db = vectors.column(b).dot(&sqrt_deg).abs();
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
        })
        .expect("nonempty graph");

    let total_degree = g.degrees.sum();
    let scale = total_degree.sqrt();
    let mut eigenvalues = Vec::with_capacity(n - 1);
    let mut eigenvectors = DMatrix::zeros(n, n - 1);
    let mut col = 0;
    let tiny = lit::<T>(1e-12);
    for k in 0..n {
        if k == trivial {
            continue;
        }
        eigenvalues.push(values[k]);
        let mut u: DVector<T> =
            DVector::from_iterator(n, (0..n).map(|i| vectors[(i, k)] * scale / g.degrees[i].sqrt()));
        if let Some(first) = u.iter().find(|v| v.abs() > tiny) {
            if *first < T::zero() {
                u.neg_mut();
            }
        }
        eigenvectors.set_column(col, &u);
        col += 1;
    }

    let tol = lit::<T>(NONPOSITIVE_TOL);
    let n_positive = eigenvalues.iter().filter(|&&l| l > tol).count();
    let d = truncation_dimension(&eigenvalues, tau).ok_or(ManifoldError::NonPositiveSpectrum)?;

    Ok(SpectralEmbedding {
        eigenvalues: DVector::from_vec(eigenvalues),
        eigenvectors,
        t,
        d,
        tau,
        n_positive,
    })
}

impl<T: Scalar> SpectralEmbedding<T> {
    pub fn len(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full nontrivial dimension `N - 1`.
    pub fn full_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Complement dimension `N - 1 - d`.
    pub fn complement_dim(&self) -> usize {
        self.full_dim() - self.d
    }

    /// `λ_ℓ^t` for every nontrivial eigenvalue.
    pub fn powered_eigenvalues(&self) -> DVector<T> {
        self.eigenvalues.map(|l| powi(l, self.t))
    }

    fn check(&self, k: usize) -> Result<(), ManifoldError> {
        if k >= self.len() {
            Err(ManifoldError::IndexOutOfRange { index: k, n: self.len() })
        } else {
            Ok(())
        }
    }

    /// Truncated coordinates `(λ_ℓ^t u_ℓ(k))_{ℓ=1..d}` of item `k` (0-based).
    pub fn embed(&self, k: usize) -> Result<DVector<T>, ManifoldError> {
        self.check(k)?;
        Ok(self.coords(k, 0, self.d))
    }

    /// All `N - 1` coordinates of item `k`.
    pub fn embed_full(&self, k: usize) -> Result<DVector<T>, ManifoldError> {
        self.check(k)?;
        Ok(self.coords(k, 0, self.full_dim()))
    }

    /// Coordinates `d+1..N-1` of item `k`.
    pub fn embed_complement(&self, k: usize) -> Result<DVector<T>, ManifoldError> {
        self.check(k)?;
        Ok(self.coords(k, self.d, self.full_dim()))
    }

    fn coords(&self, k: usize, from: usize, to: usize) -> DVector<T> {
        DVector::from_iterator(
            to - from,
            (from..to).map(|l| powi(self.eigenvalues[l], self.t) * self.eigenvectors[(k, l)]),
        )
    }

    /// `N × dim` matrix of coordinates `0..dim` for every item.
    pub fn coordinate_matrix(&self, dim: usize) -> DMatrix<T> {
        let dim = dim.min(self.full_dim());
        let pw = self.powered_eigenvalues();
        DMatrix::from_fn(self.len(), dim, |k, l| pw[l] * self.eigenvectors[(k, l)])
    }

    /// Euclidean distance between full embeddings of items `i` and `j`.
    pub fn embedded_distance(&self, i: usize, j: usize) -> Result<T, ManifoldError> {
        let a = self.embed_full(i)?;
        let b = self.embed_full(j)?;
        Ok((a - b).norm())
    }

    /// Eigenvalue retention ratio achieved by `d`.
    pub fn retained_ratio(&self) -> T {
        let tol = lit::<T>(NONPOSITIVE_TOL);
        let pos = |l: &T| if *l > tol { *l } else { T::zero() };
        let total: T = self.eigenvalues.iter().map(pos).fold(T::zero(), |a, b| a + b);
        let kept: T = self.eigenvalues.iter().take(self.d).map(pos).fold(T::zero(), |a, b| a + b);
        kept / total
    }

    pub fn summary(&self, g: &DiffusionGraph<T>) -> SpectrumSummary {
        SpectrumSummary {
            n: self.len(),
            d: self.d,
            t: self.t,
            tau: self.tau.to_f64_lossy(),
            alpha: g.alpha.to_f64_lossy(),
            bandwidth_sq: g.bandwidth_sq.to_f64_lossy(),
            eigenvalues: self.eigenvalues.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

/// Diagnostic dump of one frame's spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub n: usize,
    pub d: usize,
    pub t: u32,
    pub tau: f64,
    pub alpha: f64,
    pub bandwidth_sq: f64,
    pub eigenvalues: Vec<f64>,
}

pub(crate) fn powi<T: Scalar>(x: T, t: u32) -> T {
    let mut acc = T::one();
    for _ in 0..t {
        acc *= x;
    }
    acc
}

/// Diffusion distance from powered transition rows, weighted by `1/π`.
pub fn diffusion_distance<T: Scalar>(
    g: &DiffusionGraph<T>,
    i: usize,
    j: usize,
    t: u32,
) -> Result<T, ManifoldError> {
    let pt = g.transition_power(t);
    diffusion_distance_from_power(&pt, &g.stationary, i, j)
}

/// As [`diffusion_distance`] with a precomputed `P^t`.
pub fn diffusion_distance_from_power<T: Scalar>(
    pt: &DMatrix<T>,
    stationary: &DVector<T>,
    i: usize,
    j: usize,
) -> Result<T, ManifoldError> {
    let n = pt.nrows();
    for &k in &[i, j] {
        if k >= n {
            return Err(ManifoldError::IndexOutOfRange { index: k, n });
        }
    }
    let mut acc = T::zero();
    for m in 0..n {
        let diff = pt[(i, m)] - pt[(j, m)];
        acc += diff * diff / stationary[m];
    }
    Ok(acc.sqrt())
}
