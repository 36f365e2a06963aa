//! Sparse signed up-embedding from a low-dimensional target space into the
//! input space, its least-squares down-projection, projection of normal
//! search distributions, and target-dimension growth with exact observation
//! transfer.
//!
//! Both spaces use the symmetric unit box `[-1, 1]` per coordinate; callers
//! that work on other boxes rescale around this module.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg;
use crate::scalar::Scalar;

/// Errors from embedding construction and growth.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EmbeddingError {
    #[error("target dimension {target} exceeds input dimension {input}")]
    TargetTooLarge { target: usize, input: usize },
    #[error("target dimension must be at least 1")]
    ZeroTarget,
    #[error("target dimension already equals the input dimension")]
    AlreadyFull,
}

/// A sparse signed embedding `Q: V → X`.
///
/// Every input dimension maps to exactly one target dimension with sign ±1
/// (one nonzero of magnitude one per row of `Q`), and every target
/// dimension owns at least one input dimension, so `Q` has full column rank
/// and `P = (QᵀQ)⁻¹Qᵀ` satisfies `P·Q = I`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    input_dim: usize,
    target_dim: usize,
    /// Per input dimension: (owning target dimension, sign).
    assignment: Vec<(usize, i8)>,
    /// Split fan-out bound when growing the target dimension.
    bin_size: usize,
}

impl Embedding {
    /// Random embedding: input dimensions are partitioned over the target
    /// dimensions as evenly as possible (bin sizes differ by at most one)
    /// with uniform ±1 signs. Deterministic for a given generator state.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        target_dim: usize,
        bin_size: usize,
        rng: &mut R,
    ) -> Result<Self, EmbeddingError> {
        if target_dim == 0 {
            return Err(EmbeddingError::ZeroTarget);
        }
        if target_dim > input_dim {
            return Err(EmbeddingError::TargetTooLarge {
                target: target_dim,
                input: input_dim,
            });
        }
        let mut dims: Vec<usize> = (0..input_dim).collect();
        dims.shuffle(rng);
        let mut assignment = vec![(0usize, 1i8); input_dim];
        for (pos, &dim) in dims.iter().enumerate() {
            let sign = if rng.gen::<bool>() { 1 } else { -1 };
            assignment[dim] = (pos % target_dim, sign);
        }
        Ok(Self {
            input_dim,
            target_dim,
            assignment,
            bin_size,
        })
    }

    /// The identity embedding (`Q = I`), used when the search runs in the
    /// full input space.
    pub fn identity(dim: usize, bin_size: usize) -> Self {
        Self {
            input_dim: dim,
            target_dim: dim,
            assignment: (0..dim).map(|i| (i, 1)).collect(),
            bin_size,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn bin_size(&self) -> usize {
        self.bin_size
    }

    pub fn assignment(&self) -> &[(usize, i8)] {
        &self.assignment
    }

    /// Number of input dimensions owned by each target dimension.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.target_dim];
        for &(t, _) in &self.assignment {
            counts[t] += 1;
        }
        counts
    }

    /// Dense `Q` (input_dim × target_dim).
    pub fn up_matrix<T: Scalar>(&self) -> DMatrix<T> {
        let mut q = DMatrix::zeros(self.input_dim, self.target_dim);
        for (i, &(t, sign)) in self.assignment.iter().enumerate() {
            q[(i, t)] = T::of(sign as f64);
        }
        q
    }

    /// Dense `P = (QᵀQ)⁻¹Qᵀ` (target_dim × input_dim): row `j` holds
    /// `sign_i / count_j` at each input dimension `i` owned by `j`.
    pub fn down_matrix<T: Scalar>(&self) -> DMatrix<T> {
        let counts = self.counts();
        let mut p = DMatrix::zeros(self.target_dim, self.input_dim);
        for (i, &(t, sign)) in self.assignment.iter().enumerate() {
            p[(t, i)] = T::of(sign as f64) / T::of(counts[t] as f64);
        }
        p
    }

    /// `x = Q v`, clipped to the `[-1, 1]` input box.
    pub fn project_up<T: Scalar>(&self, v: &DVector<T>) -> DVector<T> {
        assert_eq!(v.len(), self.target_dim, "target-space dimension mismatch");
        let one = T::one();
        DVector::from_fn(self.input_dim, |i, _| {
            let (t, sign) = self.assignment[i];
            let raw = if sign >= 0 { v[t] } else { -v[t] };
            raw.max(-one).min(one)
        })
    }

    /// `v = P x`.
    pub fn project_down<T: Scalar>(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.input_dim, "input-space dimension mismatch");
        let counts = self.counts();
        let mut v = DVector::zeros(self.target_dim);
        for (i, &(t, sign)) in self.assignment.iter().enumerate() {
            let term = if sign >= 0 { x[i] } else { -x[i] };
            v[t] += term;
        }
        for (t, count) in counts.iter().enumerate() {
            v[t] /= T::of(*count as f64);
        }
        v
    }

    /// Pushes a normal distribution through the down-projection:
    /// `(P m, P Σ Pᵀ)`, with the covariance symmetrized and its eigenvalues
    /// floored.
    pub fn project_distribution<T: Scalar>(
        &self,
        mean_x: &DVector<T>,
        cov_x: &DMatrix<T>,
    ) -> (DVector<T>, DMatrix<T>) {
        assert_eq!(mean_x.len(), self.input_dim);
        assert_eq!(cov_x.nrows(), self.input_dim);
        let p = self.down_matrix::<T>();
        let mean_v = &p * mean_x;
        let mut cov_v = &p * cov_x * p.transpose();
        linalg::symmetrize(&mut cov_v);
        let dv = self.target_dim;
        let mut tr = T::zero();
        for i in 0..dv {
            tr += cov_v[(i, i)];
        }
        let floor = T::of(1e-12) * T::one().max(tr / T::of(dv as f64));
        let cov_v = linalg::eigen_floor(&cov_v, floor);
        (mean_v, cov_v)
    }

    /// Grows the target dimension: every target dimension owning `k` inputs
    /// splits into `min(bin_size, k)` children, its inputs dealt evenly
    /// (randomly, seeded) among them with their original signs. Each old
    /// observation's coordinate is copied to all children, so every
    /// transferred observation up-projects to exactly the same input point.
    ///
    /// Returns the new embedding and the transferred observations.
    pub fn increase_dim<T: Scalar, R: Rng + ?Sized>(
        &self,
        observations: &[DVector<T>],
        rng: &mut R,
    ) -> Result<(Self, Vec<DVector<T>>), EmbeddingError> {
        if self.target_dim >= self.input_dim {
            return Err(EmbeddingError::AlreadyFull);
        }
        // Input dims per target dim, then child layout.
        let mut owned: Vec<Vec<usize>> = vec![Vec::new(); self.target_dim];
        for (i, &(t, _)) in self.assignment.iter().enumerate() {
            owned[t].push(i);
        }

        let mut assignment = vec![(0usize, 1i8); self.input_dim];
        let mut parent_of_child: Vec<usize> = Vec::new();
        let mut next_child = 0usize;
        for (t, inputs) in owned.iter().enumerate() {
            let children = self.bin_size.max(1).min(inputs.len());
            let first_child = next_child;
            for _ in 0..children {
                parent_of_child.push(t);
                next_child += 1;
            }
            let mut shuffled = inputs.clone();
            shuffled.shuffle(rng);
            for (pos, &i) in shuffled.iter().enumerate() {
                let (_, sign) = self.assignment[i];
                assignment[i] = (first_child + pos % children, sign);
            }
        }
        let new_target_dim = next_child;
        let grown = Self {
            input_dim: self.input_dim,
            target_dim: new_target_dim,
            assignment,
            bin_size: self.bin_size,
        };

        let transferred = observations
            .iter()
            .map(|v| {
                assert_eq!(v.len(), self.target_dim);
                DVector::from_fn(new_target_dim, |c, _| v[parent_of_child[c]])
            })
            .collect();
        Ok((grown, transferred))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn random_embedding_partitions_evenly() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let e = Embedding::random(10, 3, 3, &mut rng).unwrap();
        let mut counts = e.counts();
        counts.sort_unstable();
        assert_eq!(counts, vec![3, 3, 4]);

        // Every input owned exactly once; union covers all inputs.
        let total: usize = e.counts().iter().sum();
        assert_eq!(total, 10);
        for &(t, sign) in e.assignment() {
            assert!(t < 3);
            assert!(sign == 1 || sign == -1);
        }
    }

    #[test]
    fn square_embedding_is_signed_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let e = Embedding::random(6, 6, 3, &mut rng).unwrap();
        let q = e.up_matrix::<f64>();
        // |det Q| = 1 for a signed permutation.
        assert_relative_eq!(q.determinant().abs(), 1.0, epsilon = 1e-12);
        for row in 0..6 {
            let nonzero: Vec<f64> = q.row(row).iter().filter(|v| **v != 0.0).copied().collect();
            assert_eq!(nonzero.len(), 1);
            assert_eq!(nonzero[0].abs(), 1.0);
        }
    }

    #[test]
    fn rejects_bad_target_dims() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            Embedding::random(3, 5, 3, &mut rng),
            Err(EmbeddingError::TargetTooLarge { .. })
        ));
        assert!(matches!(
            Embedding::random(3, 0, 3, &mut rng),
            Err(EmbeddingError::ZeroTarget)
        ));
    }

    #[test]
    fn down_projection_inverts_up_projection() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for (d, dv) in [(4, 1), (7, 3), (9, 9), (20, 6), (33, 11)] {
            for _ in 0..40 {
                let e = Embedding::random(d, dv, 3, &mut rng).unwrap();
                let p = e.down_matrix::<f64>();
                let q = e.up_matrix::<f64>();
                let prod = &p * &q;
                let err = (prod - DMatrix::<f64>::identity(dv, dv))
                    .iter()
                    .fold(0.0f64, |a, &b| a.max(b.abs()));
                assert!(err < 1e-12, "P·Q deviates by {err} for d={d}, dv={dv}");
            }
        }
    }

    #[test]
    fn explicit_down_matrices() {
        // Q = I → P = I.
        let e = Embedding::identity(3, 3);
        assert_eq!(e.down_matrix::<f64>(), DMatrix::identity(3, 3));

        // d=2, d_V=1 with signs (+, +): P = (0.5, 0.5).
        let plus = Embedding {
            input_dim: 2,
            target_dim: 1,
            assignment: vec![(0, 1), (0, 1)],
            bin_size: 3,
        };
        assert_eq!(
            plus.down_matrix::<f64>(),
            DMatrix::from_row_slice(1, 2, &[0.5, 0.5])
        );

        // Signs (+, −): P = (0.5, −0.5).
        let mixed = Embedding {
            input_dim: 2,
            target_dim: 1,
            assignment: vec![(0, 1), (0, -1)],
            bin_size: 3,
        };
        assert_eq!(
            mixed.down_matrix::<f64>(),
            DMatrix::from_row_slice(1, 2, &[0.5, -0.5])
        );

        // Up-projection with signs (+, −): v = 0.3 → x = (0.3, −0.3).
        let x = mixed.project_up(&DVector::from_vec(vec![0.3]));
        assert_eq!(x, DVector::from_vec(vec![0.3, -0.3]));
        // Zero maps to zero.
        assert_eq!(
            mixed.project_up(&DVector::from_vec(vec![0.0])),
            DVector::zeros(2)
        );
        // Corners map to corners up to signs (pre-clip values ±1).
        let corner = mixed.project_up(&DVector::from_vec(vec![1.0]));
        assert_eq!(corner, DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn project_distribution_identity_and_closed_form() {
        let e = Embedding::identity(2, 3);
        let m = DVector::from_vec(vec![0.4, -0.2]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let (mv, cv) = e.project_distribution(&m, &c);
        assert_relative_eq!(mv, m, epsilon = 1e-14);
        assert_relative_eq!(cv, c, epsilon = 1e-12);

        // d=2 → d_V=1, P=(0.5, 0.5), Σ_X = I: Σ_V = 0.25 + 0.25 = 0.5.
        let half = Embedding {
            input_dim: 2,
            target_dim: 1,
            assignment: vec![(0, 1), (0, 1)],
            bin_size: 3,
        };
        let (mv, cv) = half.project_distribution(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DMatrix::identity(2, 2),
        );
        assert_relative_eq!(mv[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(cv[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projected_moments_match_monte_carlo() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let d = 6;
        let e = Embedding::random(d, 2, 3, &mut rng).unwrap();
        let mean = DVector::from_fn(d, |_, _| f64::standard_normal(&mut rng) * 0.3);
        let a = DMatrix::from_fn(d, d, |_, _| f64::standard_normal(&mut rng) * 0.4);
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.2;
        let (mv, cv) = e.project_distribution(&mean, &cov);

        let (chol, _) = crate::linalg::cholesky_with_jitter(&cov).unwrap();
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sum_outer = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let z = DVector::from_fn(d, |_, _| f64::standard_normal(&mut rng));
            let x = &mean + &chol * z;
            let v = e.project_down(&x);
            sum += &v;
            sum_outer += &v * v.transpose();
        }
        let emp_mean = sum / n as f64;
        let emp_cov = sum_outer / n as f64 - &emp_mean * emp_mean.transpose();
        assert!((&emp_mean - &mv).norm() < 0.02 * (1.0 + mv.norm()));
        let rel = (&emp_cov - &cv).norm() / cv.norm();
        assert!(rel < 0.02, "covariance Frobenius error {rel}");
    }

    #[test]
    fn increase_dim_splits_and_preserves_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        // d=9 from a single target dim with bin size 3 → three children of
        // three inputs each.
        let e = Embedding::random(9, 1, 3, &mut rng).unwrap();
        let obs: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_vec(vec![(i as f64) / 5.0 - 0.4]))
            .collect();
        let (grown, transferred) = e.increase_dim(&obs, &mut rng).unwrap();
        assert_eq!(grown.target_dim(), 3);
        let mut counts = grown.counts();
        counts.sort_unstable();
        assert_eq!(counts, vec![3, 3, 3]);
        for (v_old, v_new) in obs.iter().zip(transferred.iter()) {
            let x_old = e.project_up(v_old);
            let x_new = grown.project_up(v_new);
            assert_eq!(x_old, x_new, "up-projection changed during transfer");
        }
    }

    #[test]
    fn increase_dim_keeps_singleton_dims() {
        // A target dim with a single input cannot split.
        let e = Embedding {
            input_dim: 3,
            target_dim: 2,
            assignment: vec![(0, 1), (1, -1), (1, 1)],
            bin_size: 3,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let obs = vec![DVector::from_vec(vec![0.5, -0.25])];
        let (grown, transferred) = e.increase_dim(&obs, &mut rng).unwrap();
        // Dim 0 stays single, dim 1 splits into two.
        assert_eq!(grown.target_dim(), 3);
        assert_eq!(grown.counts().iter().sum::<usize>(), 3);
        assert_eq!(e.project_up(&obs[0]), grown.project_up(&transferred[0]));
    }

    #[test]
    fn increase_dim_at_full_dimension_errors() {
        let e = Embedding::identity(4, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert!(matches!(
            e.increase_dim::<f64, _>(&[], &mut rng),
            Err(EmbeddingError::AlreadyFull)
        ));
    }

    #[test]
    fn growth_is_bounded_by_bin_size() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut e = Embedding::random(50, 2, 3, &mut rng).unwrap();
        let mut dims = vec![e.target_dim()];
        while e.target_dim() < e.input_dim() {
            let (next, _) = e.increase_dim::<f64, _>(&[], &mut rng).unwrap();
            assert!(next.target_dim() <= (e.target_dim() * 3).min(50));
            assert!(next.target_dim() > e.target_dim());
            e = next;
            dims.push(e.target_dim());
            assert!(dims.len() < 20, "growth did not terminate");
        }
        assert_eq!(e.target_dim(), 50);
    }
}
