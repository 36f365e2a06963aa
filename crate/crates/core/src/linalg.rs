//! Dense linear-algebra helpers shared across the crate: symmetrization,
//! jitter-stabilized Cholesky factorization, and eigenvalue-based matrix
//! functions for symmetric matrices.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

/// Relative jitter ladder used when a Cholesky factorization fails on a
/// nominally positive-definite matrix.
pub(crate) const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Replaces `m` with `(m + m^T) / 2`.
pub(crate) fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::of(0.5);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Scale used to make jitter relative to the matrix magnitude: the mean of
/// the diagonal, floored at 1.
pub(crate) fn diag_scale<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    if n == 0 {
        return T::one();
    }
    let mut tr = T::zero();
    for i in 0..n {
        tr += m[(i, i)];
    }
    let mean = tr / T::of(n as f64);
    if mean > T::one() {
        mean
    } else {
        T::one()
    }
}

/// Lower-triangular Cholesky factor of `m`, escalating a relative jitter on
/// the diagonal until the factorization succeeds.
///
/// Returns the factor and the absolute jitter that was added. Fails only
/// after the whole ladder is exhausted or if `m` contains non-finite
/// entries.
pub(crate) fn cholesky_with_jitter<T: Scalar>(
    m: &DMatrix<T>,
) -> Result<(DMatrix<T>, T), FactorizationError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FactorizationError::NonFinite);
    }
    let scale = diag_scale(m);
    for &rel in JITTER_LADDER.iter() {
        let jitter = scale * T::of(rel);
        let mut attempt = m.clone();
        if rel > 0.0 {
            for i in 0..attempt.nrows() {
                attempt[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(attempt) {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(FactorizationError::NotPositiveDefinite {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale.as_f64(),
    })
}

/// Error from a jitter-stabilized factorization.
#[derive(Debug, Clone, thiserror::Error)]
pub enum FactorizationError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not positive definite even with jitter up to {max_jitter:.3e}")]
    NotPositiveDefinite { max_jitter: f64 },
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub(crate) fn sym_eigen<T: Scalar>(m: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Rebuilds `U f(Λ) U^T` from an eigendecomposition.
fn rebuild<T: Scalar>(values: &[T], vectors: &DMatrix<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let n = values.len();
    let diag = DVector::from_iterator(n, values.iter().map(|&v| f(v)));
    let scaled = vectors * DMatrix::from_diagonal(&diag);
    let mut out = scaled * vectors.transpose();
    symmetrize(&mut out);
    out
}

/// Clamps the eigenvalues of a symmetric matrix at `floor` and rebuilds it.
pub(crate) fn eigen_floor<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let (values, vectors) = sym_eigen(m);
    if values.iter().all(|&v| v >= floor) {
        let mut out = m.clone();
        symmetrize(&mut out);
        return out;
    }
    rebuild(&values, &vectors, |v| if v < floor { floor } else { v })
}

/// `U Λ^{-1/2} U^T` of a symmetric matrix, with eigenvalues clamped at
/// `floor` so degeneracy never produces infinities.
pub(crate) fn inverse_sqrt_floored<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let (values, vectors) = sym_eigen(m);
    rebuild(&values, &vectors, |v| {
        let c = if v < floor { floor } else { v };
        T::one() / c.sqrt()
    })
}

/// Symmetric square-root factor `A = U Λ^{1/2} U^T` of a covariance matrix.
///
/// Negative eigenvalues are absorbed by the relative jitter ladder: the
/// smallest rung that makes all eigenvalues nonnegative is added before the
/// square root. Fails if the most negative eigenvalue is beyond the last
/// rung, or on non-finite input.
pub(crate) fn sym_sqrt_with_jitter<T: Scalar>(
    m: &DMatrix<T>,
) -> Result<DMatrix<T>, FactorizationError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FactorizationError::NonFinite);
    }
    let scale = diag_scale(m);
    let (values, vectors) = sym_eigen(m);
    let min = values.last().copied().unwrap_or_else(T::zero);
    for &rel in JITTER_LADDER.iter() {
        let jitter = scale * T::of(rel);
        if min + jitter >= T::zero() {
            return Ok(rebuild(&values, &vectors, |v| {
                let c = v + jitter;
                if c > T::zero() {
                    c.sqrt()
                } else {
                    T::zero()
                }
            }));
        }
    }
    Err(FactorizationError::NotPositiveDefinite {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale.as_f64(),
    })
}

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn solve_lower<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub(crate) fn solve_lower_transpose<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| f64::standard_normal(&mut rng));
        let mut m = &a * a.transpose();
        for i in 0..n {
            m[(i, i)] += 0.5;
        }
        m
    }

    #[test]
    fn cholesky_reproduces_input() {
        let m = random_spd(6, 1);
        let (l, jitter) = cholesky_with_jitter(&m).unwrap();
        assert_eq!(jitter, 0.0);
        let back = &l * l.transpose();
        assert_relative_eq!(back, m, epsilon = 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5.0]));
        assert!(cholesky_with_jitter(&m).is_err());
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = random_spd(5, 2);
        let inv_sqrt = inverse_sqrt_floored(&m, 1e-14);
        let ident = &inv_sqrt * &m * &inv_sqrt;
        assert_relative_eq!(ident, DMatrix::identity(5, 5), epsilon = 1e-8);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = random_spd(5, 3);
        let a = sym_sqrt_with_jitter(&m).unwrap();
        assert_relative_eq!(&a * a.transpose(), m, epsilon = 1e-9);
    }

    #[test]
    fn triangular_solves_match_dense() {
        let m = random_spd(7, 4);
        let (l, _) = cholesky_with_jitter(&m).unwrap();
        let b = DVector::from_fn(7, |i, _| (i as f64) - 2.5);
        let x = solve_lower(&l, &b);
        assert_relative_eq!(&l * &x, b, epsilon = 1e-12);
        let y = solve_lower_transpose(&l, &b);
        assert_relative_eq!(l.transpose() * &y, b, epsilon = 1e-12);
    }

    #[test]
    fn eigen_floor_lifts_small_eigenvalues() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1e-18]));
        let floored = eigen_floor(&m, 1e-12);
        let (values, _) = sym_eigen(&floored);
        assert!(values.iter().all(|&v| v >= 1e-12 * 0.999));
    }
}
