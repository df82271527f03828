//! Small dense linear-algebra helpers over `nalgebra` matrices.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{from_usize, Scalar};

/// Symmetric eigendecomposition with eigenpairs sorted by descending eigenvalue.
/// Column `k` of the returned matrix is the eigenvector of value `k`.
pub fn sym_eigen_desc<T: Scalar>(a: &DMatrix<T>) -> Option<(DVector<T>, DMatrix<T>)> {
    let n = a.nrows();
    let sym = (a + a.transpose()) * T::from_f64(0.5)?;
    let eig = nalgebra::SymmetricEigen::try_new(sym, T::EPS, 0)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Some((values, vectors))
}

/// Largest and smallest eigenvalue of a symmetric matrix.
pub fn sym_extreme_eigenvalues<T: Scalar>(a: &DMatrix<T>) -> Option<(T, T)> {
    if a.nrows() == 0 {
        return Some((T::zero(), T::zero()));
    }
    let (vals, _) = sym_eigen_desc(a)?;
    Some((vals[0], vals[vals.len() - 1]))
}

/// `a + eps * I`.
pub fn add_ridge<T: Scalar>(a: &DMatrix<T>, eps: T) -> DMatrix<T> {
    let mut out = a.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += eps;
    }
    out
}

/// A factorized symmetric matrix able to solve linear systems.
pub enum Factor<T: Scalar> {
    Cholesky(nalgebra::Cholesky<T, nalgebra::Dyn>),
    Lu(nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<T: Scalar> Factor<T> {
    /// Cholesky first, LU as fallback; `None` when the matrix is numerically singular.
    pub fn new(a: &DMatrix<T>) -> Option<Self> {
        if a.nrows() == 0 {
            return Some(Factor::Lu(a.clone().lu()));
        }
        if let Some(ch) = a.clone().cholesky() {
            return Some(Factor::Cholesky(ch));
        }
        let lu = a.clone().lu();
        if lu.is_invertible() {
            Some(Factor::Lu(lu))
        } else {
            None
        }
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> Option<DVector<T>> {
        let x = match self {
            Factor::Cholesky(ch) => ch.solve(b),
            Factor::Lu(lu) => lu.solve(b)?,
        };
        x.iter().all(|v| crate::scalar::is_finite(*v)).then_some(x)
    }

    pub fn solve_mat(&self, b: &DMatrix<T>) -> Option<DMatrix<T>> {
        let x = match self {
            Factor::Cholesky(ch) => ch.solve(b),
            Factor::Lu(lu) => lu.solve(b)?,
        };
        x.iter().all(|v| crate::scalar::is_finite(*v)).then_some(x)
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_inv(&self, b: &DVector<T>) -> Option<T> {
        let x = self.solve_vec(b)?;
        Some(b.dot(&x))
    }
}

/// Arithmetic mean of the rows of `points`.
pub fn row_mean<T: Scalar>(points: &DMatrix<T>) -> DVector<T> {
    let n = points.nrows();
    let mut mean = DVector::zeros(points.ncols());
    for r in 0..n {
        mean += points.row(r).transpose();
    }
    if n > 0 {
        mean /= from_usize::<T>(n);
    }
    mean
}

/// `1/(n-1) Σ (p - center)(p - center)ᵀ` over the rows `p` of `points`.
pub fn scatter_about<T: Scalar>(points: &DMatrix<T>, center: &DVector<T>) -> DMatrix<T> {
    let n = points.nrows();
    let dim = points.ncols();
    let mut centered = points.clone();
    for r in 0..n {
        for c in 0..dim {
            centered[(r, c)] -= center[c];
        }
    }
    let mut cov = centered.transpose() * &centered;
    if n > 1 {
        cov /= from_usize::<T>(n - 1);
    }
    cov
}

/// Squared Euclidean distances between all row pairs.
pub fn pairwise_sq_dists<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = T::zero();
            for c in 0..x.ncols() {
                let diff = x[(i, c)] - x[(j, c)];
                acc += diff * diff;
            }
            d[(i, j)] = acc;
            d[(j, i)] = acc;
        }
    }
    d
}
