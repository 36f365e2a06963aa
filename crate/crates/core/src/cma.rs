//! Covariance-matrix-adaptation state machine: default hyperparameters,
//! the mean / covariance / step-size update with evolution paths, and
//! restart detection.
//!
//! The update keeps the exact form of the published recursions, including a
//! step-size path smoothed with the covariance-path rate; the classical
//! variant that smooths it with its own rate is available through
//! [`UpdateOptions`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::scalar::Scalar;

/// Errors from the CMA state machine.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CmaError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("population size must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error("population has {got} members, expected {expected}")]
    WrongPopulationSize { got: usize, expected: usize },
    #[error("population member {index} has dimension {got}, expected {expected}")]
    MemberDimension {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("population contains non-finite values")]
    NonFinite,
    #[error("covariance factorization failed: {0}")]
    Factorization(#[from] linalg::FactorizationError),
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

/// Population-level hyperparameters: selection weights, effective masses,
/// and the learning rates of the update recursions.
#[derive(Debug, Clone)]
pub struct CmaParams<T: Scalar> {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    /// Rank-indexed weights, positive for the first `mu` ranks and
    /// nonpositive afterwards; the positive block sums to one.
    pub weights: Vec<T>,
    pub mu_eff: T,
    pub mu_eff_neg: T,
    pub c_m: T,
    pub c_1: T,
    pub c_mu: T,
    pub c_c: T,
    pub c_sigma: T,
    pub d_sigma: T,
}

impl<T: Scalar> CmaParams<T> {
    /// Default hyperparameters for dimension `dim`, with the population size
    /// `λ = 4 + ⌊3 + ln d⌋`.
    pub fn defaults(dim: usize) -> Result<Self, CmaError> {
        if dim == 0 {
            return Err(CmaError::ZeroDimension);
        }
        let lambda = 4 + (3.0 + (dim as f64).ln()).floor() as usize;
        Self::with_population_size(dim, lambda)
    }

    /// Hyperparameters for an explicitly chosen population size.
    pub fn with_population_size(dim: usize, lambda: usize) -> Result<Self, CmaError> {
        if dim == 0 {
            return Err(CmaError::ZeroDimension);
        }
        if lambda < 2 {
            return Err(CmaError::PopulationTooSmall(lambda));
        }
        let d = T::of(dim as f64);
        let mu = lambda / 2;

        let raw: Vec<T> = (1..=lambda)
            .map(|i| (T::of((lambda + 1) as f64) * T::of(0.5)).ln() - T::of(i as f64).ln())
            .collect();
        let sum_pos: T = raw[..mu].iter().copied().fold(T::zero(), |a, b| a + b);
        let sum_sq_pos: T = raw[..mu].iter().map(|&w| w * w).fold(T::zero(), |a, b| a + b);
        let sum_neg: T = raw[mu..].iter().copied().fold(T::zero(), |a, b| a + b);
        let sum_sq_neg: T = raw[mu..].iter().map(|&w| w * w).fold(T::zero(), |a, b| a + b);

        let mu_eff = sum_pos * sum_pos / sum_sq_pos;
        let mu_eff_neg = if sum_sq_neg > T::zero() {
            sum_neg * sum_neg / sum_sq_neg
        } else {
            T::zero()
        };

        let one = T::one();
        let two = T::of(2.0);
        let c_1 = two / ((d + T::of(1.3)) * (d + T::of(1.3)) + mu_eff);
        let c_mu_raw =
            two * (mu_eff - two + one / mu_eff) / ((d + two) * (d + two) + mu_eff);
        let c_mu = (one - c_1).min(c_mu_raw).max(T::zero());

        // Scale of the nonpositive weight block, capped so the covariance
        // decay cannot be overwhelmed.
        let cap_mass = one + two * mu_eff_neg / (two + mu_eff);
        let gamma = if c_mu > T::zero() {
            let cap_rates = one + c_1 / c_mu;
            let cap_posdef = (one - c_1 - c_mu) / (d * c_mu);
            cap_rates.min(cap_mass).min(cap_posdef)
        } else {
            cap_mass
        };

        let mut weights = Vec::with_capacity(lambda);
        for (i, &w) in raw.iter().enumerate() {
            if i < mu {
                weights.push(w / sum_pos);
            } else {
                weights.push(gamma * w / sum_neg.abs());
            }
        }

        let c_c = (T::of(4.0) + mu_eff / d) / (d + T::of(4.0) + two * mu_eff / d);
        let c_sigma = (two + mu_eff) / (d + T::of(5.0) + two * mu_eff);
        let d_sigma = one
            + two * T::zero().max(((mu_eff - one) / (d + one)).sqrt() - one)
            + c_sigma;

        Ok(Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            mu_eff_neg,
            c_m: one,
            c_1,
            c_mu,
            c_c,
            c_sigma,
            d_sigma,
        })
    }
}

// ---------------------------------------------------------------------------
// Ranked population
// ---------------------------------------------------------------------------

/// A population of evaluated points sorted by ascending (noisy) objective
/// value; ties keep insertion order.
#[derive(Debug, Clone)]
pub struct RankedPopulation<T: Scalar> {
    points: Vec<DVector<T>>,
    values: Vec<T>,
    order: Vec<usize>,
}

impl<T: Scalar> RankedPopulation<T> {
    pub fn new(points: Vec<DVector<T>>, values: Vec<T>) -> Result<Self, CmaError> {
        if points.len() != values.len() {
            return Err(CmaError::WrongPopulationSize {
                got: values.len(),
                expected: points.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite())
            || points.iter().any(|p| p.iter().any(|x| !x.is_finite()))
        {
            return Err(CmaError::NonFinite);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        // Stable sort; NaN is excluded above so the comparison is total here.
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        Ok(Self {
            points,
            values,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The point with rank `i` (zero-based, best first).
    pub fn ranked_point(&self, i: usize) -> &DVector<T> {
        &self.points[self.order[i]]
    }

    /// The value with rank `i`.
    pub fn ranked_value(&self, i: usize) -> T {
        self.values[self.order[i]]
    }
}

// ---------------------------------------------------------------------------
// Search distribution
// ---------------------------------------------------------------------------

/// Which rate smooths the step-size evolution path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepPathRate {
    /// Reuse the covariance-path rate `c_c` (the default recursion here).
    #[default]
    CovarianceRate,
    /// Use the step-size rate `c_σ` (the classical cumulative step-size
    /// adaptation).
    SigmaRate,
}

/// Options for [`SearchDistribution::update`].
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateOptions {
    pub step_path_rate: StepPathRate,
}

/// The multivariate-normal search state `N(m, σ²C)` with its evolution
/// paths and generation counter.
#[derive(Debug, Clone)]
pub struct SearchDistribution<T: Scalar> {
    pub mean: DVector<T>,
    pub step_size: T,
    /// Shape matrix `C`; kept symmetric with eigenvalues above the floor.
    pub shape: DMatrix<T>,
    pub path_c: DVector<T>,
    pub path_sigma: DVector<T>,
    pub generation: u64,
}

/// Eigenvalue floor applied to the shape matrix after each update.
fn shape_floor<T: Scalar>(c: &DMatrix<T>) -> T {
    let d = c.nrows();
    let mut tr = T::zero();
    for i in 0..d {
        tr += c[(i, i)];
    }
    T::of(1e-12) * T::one().max(tr / T::of(d as f64))
}

impl<T: Scalar> SearchDistribution<T> {
    /// Fresh distribution centered at the origin: `C = I`, zero paths.
    pub fn isotropic(dim: usize, step_size: T) -> Self {
        Self {
            mean: DVector::zeros(dim),
            step_size,
            shape: DMatrix::identity(dim, dim),
            path_c: DVector::zeros(dim),
            path_sigma: DVector::zeros(dim),
            generation: 0,
        }
    }

    /// Initial distribution from a set of evaluated points: the mean is the
    /// point with the smallest value (first wins ties), the step size is
    /// `0.3 · domain_length`, the shape is the identity.
    pub fn from_evaluated_points(domain_length: T, points: &[(DVector<T>, T)]) -> Self {
        assert!(!points.is_empty(), "need at least one evaluated point");
        let mut best = 0;
        for (i, (_, v)) in points.iter().enumerate().skip(1) {
            if *v < points[best].1 {
                best = i;
            }
        }
        let dim = points[best].0.len();
        Self {
            mean: points[best].0.clone(),
            step_size: T::of(0.3) * domain_length,
            shape: DMatrix::identity(dim, dim),
            path_c: DVector::zeros(dim),
            path_sigma: DVector::zeros(dim),
            generation: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Full covariance `σ²C`.
    pub fn covariance(&self) -> DMatrix<T> {
        &self.shape * (self.step_size * self.step_size)
    }

    /// Draws `n` points from `N(m, σ²C)`.
    pub fn sample_points<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<T>>, CmaError> {
        let (chol, _) = linalg::cholesky_with_jitter(&self.shape)?;
        let dim = self.dim();
        Ok((0..n)
            .map(|_| {
                let z = DVector::from_fn(dim, |_, _| T::standard_normal(rng));
                &self.mean + &chol * z * self.step_size
            })
            .collect())
    }

    /// One generation of the update, in order: mean shift from the `mu` best
    /// points, covariance evolution path, covariance (decay + weighted outer
    /// products over all ranks + rank-one path term, then symmetrization and
    /// eigenvalue flooring), step-size evolution path against the previous
    /// shape, and the exponential step-size rule.
    pub fn update(
        &self,
        params: &CmaParams<T>,
        population: &RankedPopulation<T>,
        options: &UpdateOptions,
    ) -> Result<Self, CmaError> {
        let dim = self.dim();
        if population.len() != params.lambda {
            return Err(CmaError::WrongPopulationSize {
                got: population.len(),
                expected: params.lambda,
            });
        }
        for i in 0..population.len() {
            let p = population.ranked_point(i);
            if p.len() != dim {
                return Err(CmaError::MemberDimension {
                    index: i,
                    got: p.len(),
                    expected: dim,
                });
            }
        }

        let one = T::one();
        let two = T::of(2.0);
        let sigma = self.step_size;

        // (a) mean
        let mut shift = DVector::zeros(dim);
        for i in 0..params.mu {
            shift += (population.ranked_point(i) - &self.mean) * params.weights[i];
        }
        let mean = &self.mean + &shift * params.c_m;
        let mean_step = (&mean - &self.mean) / sigma;

        // (b) covariance evolution path
        let cc = params.c_c;
        let path_c = &self.path_c * (one - cc)
            + &mean_step * (cc * (two - cc) * params.mu_eff).sqrt();

        // (c) covariance
        let mut rank_mu = DMatrix::zeros(dim, dim);
        for i in 0..params.lambda {
            let y = population.ranked_point(i) - &self.mean;
            rank_mu += (&y * y.transpose()) * params.weights[i];
        }
        let mut shape = &self.shape * (one - params.c_1 - params.c_mu)
            + rank_mu * (params.c_mu / (sigma * sigma))
            + (&path_c * path_c.transpose()) * params.c_1;
        linalg::symmetrize(&mut shape);
        let shape = linalg::eigen_floor(&shape, shape_floor(&shape));

        // (d) step-size evolution path against the previous shape
        let rate = match options.step_path_rate {
            StepPathRate::CovarianceRate => params.c_c,
            StepPathRate::SigmaRate => params.c_sigma,
        };
        let prev_inv_sqrt = inverse_sqrt(&self.shape);
        let path_sigma = &self.path_sigma * (one - rate)
            + prev_inv_sqrt * &mean_step * (rate * (two - rate) * params.mu_eff).sqrt();

        // (e) step size
        let norm_ratio = path_sigma.norm() / T::of(dim as f64).sqrt();
        let step_size = sigma * ((params.c_sigma / params.d_sigma) * (norm_ratio - one)).exp();

        Ok(Self {
            mean,
            step_size,
            shape,
            path_c,
            path_sigma,
            generation: self.generation + 1,
        })
    }
}

/// `C^{-1/2}` of a symmetric shape matrix: eigendecomposition with
/// eigenvalues clamped at the shape floor, rebuilt as `U Λ^{-1/2} U^T`.
pub fn inverse_sqrt<T: Scalar>(c: &DMatrix<T>) -> DMatrix<T> {
    linalg::inverse_sqrt_floored(c, shape_floor(c))
}

// ---------------------------------------------------------------------------
// Restart detection
// ---------------------------------------------------------------------------

/// Thresholds for [`should_restart`].
#[derive(Debug, Clone)]
pub struct RestartConfig<T: Scalar> {
    /// Number of most recent generations over which flat progress triggers
    /// a restart.
    pub flat_window: usize,
    /// Relative improvement below which progress counts as flat.
    pub flat_tol: T,
    /// Maximum allowed condition number of the shape matrix.
    pub cond_max: T,
    pub sigma_min: T,
    pub sigma_max: T,
}

impl<T: Scalar> RestartConfig<T> {
    /// Default thresholds: window `10 + ⌈30 d / λ⌉`, relative flat tolerance
    /// 1e-9, condition cap 1e14, step-size bounds `[1e-8, 10·σ₀]`.
    pub fn defaults(dim: usize, lambda: usize, sigma0: T) -> Self {
        let flat_window = 10 + (30.0 * dim as f64 / lambda as f64).ceil() as usize;
        Self {
            flat_window,
            flat_tol: T::of(1e-9),
            cond_max: T::of(1e14),
            sigma_min: T::of(1e-8),
            sigma_max: T::of(10.0) * sigma0,
        }
    }
}

/// Whether a local run should be abandoned: flat best-value progress over
/// the configured window, an ill-conditioned shape matrix, or a step size
/// outside its bounds.
pub fn should_restart<T: Scalar>(
    dist: &SearchDistribution<T>,
    best_history: &[T],
    config: &RestartConfig<T>,
) -> bool {
    if dist.step_size < config.sigma_min || dist.step_size > config.sigma_max {
        return true;
    }
    if best_history.len() >= config.flat_window && config.flat_window >= 2 {
        let old = best_history[best_history.len() - config.flat_window];
        let new = best_history[best_history.len() - 1];
        let scale = T::one().max(old.abs());
        if old - new < config.flat_tol * scale {
            return true;
        }
    }
    let (eigs, _) = linalg::sym_eigen(&dist.shape);
    if let (Some(&max), Some(&min)) = (eigs.first(), eigs.last()) {
        if min <= T::zero() || max / min > config.cond_max {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn default_population_sizes() {
        // λ = 4 + ⌊3 + ln d⌋
        let p = CmaParams::<f64>::defaults(100).unwrap();
        assert_eq!(p.lambda, 11);
        assert_eq!(p.mu, 5);
        let p = CmaParams::<f64>::defaults(2).unwrap();
        assert_eq!(p.lambda, 7);
        assert_eq!(p.mu, 3);
        assert!(CmaParams::<f64>::defaults(0).is_err());
    }

    #[test]
    fn forced_small_population_weights() {
        // λ = 5: positive weights normalize ln(3) - ln(i) over the first two
        // ranks.
        let p = CmaParams::<f64>::with_population_size(10, 5).unwrap();
        assert_eq!(p.mu, 2);
        assert_relative_eq!(p.weights[0], 0.7304227103091852, epsilon = 5e-5);
        assert_relative_eq!(p.weights[1], 0.26957728969081496, epsilon = 5e-5);
    }

    #[test]
    fn weight_invariants_across_dims() {
        for dim in [1, 2, 3, 7, 20, 100, 500] {
            let p = CmaParams::<f64>::defaults(dim).unwrap();
            let pos_sum: f64 = p.weights[..p.mu].iter().sum();
            assert!((pos_sum - 1.0).abs() < 1e-12, "dim {dim}: sum {pos_sum}");
            for w in &p.weights[..p.mu] {
                assert!(*w > 0.0);
            }
            // The first tail weight is exactly zero for odd λ, strictly
            // negative otherwise; all tail weights are nonpositive.
            for w in &p.weights[p.mu..] {
                assert!(*w <= 0.0);
            }
            for pair in p.weights.windows(2) {
                assert!(pair[0] >= pair[1], "weights not descending at dim {dim}");
            }
            assert!(p.c_1 + p.c_mu > 0.0 && p.c_1 + p.c_mu <= 1.0);
            for rate in [p.c_1, p.c_mu, p.c_c, p.c_sigma] {
                assert!(rate > 0.0 && rate <= 1.0, "rate {rate} out of range");
            }
        }
    }

    #[test]
    fn init_from_evaluated_points() {
        let pts = vec![
            (DVector::from_vec(vec![0.2, 0.4]), 3.0),
            (DVector::from_vec(vec![0.9, 0.1]), 1.0),
            (DVector::from_vec(vec![0.5, 0.5]), 1.0),
        ];
        let dist = SearchDistribution::from_evaluated_points(1.0, &pts);
        // Lower index wins the tie.
        assert_eq!(dist.mean, DVector::from_vec(vec![0.9, 0.1]));
        assert_eq!(dist.step_size, 0.3);
        assert_eq!(dist.shape, DMatrix::identity(2, 2));
        assert_eq!(dist.generation, 0);
        assert!(dist.path_c.iter().all(|&v| v == 0.0));

        let single = vec![(DVector::from_vec(vec![0.1]), 9.0)];
        let d1 = SearchDistribution::from_evaluated_points(2.0, &single);
        assert_eq!(d1.mean[0], 0.1);
        assert_relative_eq!(d1.step_size, 0.6);
    }

    fn population_around(
        dist: &SearchDistribution<f64>,
        params: &CmaParams<f64>,
        seed: u64,
    ) -> RankedPopulation<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let points = dist.sample_points(params.lambda, &mut rng).unwrap();
        let values: Vec<f64> = points.iter().map(|p| p.norm_squared()).collect();
        RankedPopulation::new(points, values).unwrap()
    }

    #[test]
    fn mean_fixed_when_best_points_equal_mean() {
        let params = CmaParams::<f64>::defaults(2).unwrap();
        let dist = SearchDistribution::isotropic(2, 0.5);
        let mut points = vec![DVector::from_vec(vec![0.0, 0.0]); params.mu];
        points.extend((0..params.lambda - params.mu).map(|i| {
            DVector::from_vec(vec![1.0 + i as f64, -1.0])
        }));
        let values: Vec<f64> = (0..params.lambda).map(|i| i as f64).collect();
        let pop = RankedPopulation::new(points, values).unwrap();
        let next = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
        assert_relative_eq!(next.mean, dist.mean, epsilon = 1e-15);
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn step_size_fixed_point_when_path_norm_is_sqrt_dim() {
        let params = CmaParams::<f64>::defaults(2).unwrap();
        let dist = SearchDistribution::isotropic(2, 0.5);
        // With C = I and zero paths, the new step path is
        // k·Δm/σ with k = sqrt(c_c(2-c_c)µ_eff); pick Δm so its norm is √d.
        let k = (params.c_c * (2.0 - params.c_c) * params.mu_eff).sqrt();
        let target = dist.step_size * (2.0f64).sqrt() / k;
        let shift = DVector::from_vec(vec![target, 0.0]);
        let mut points = vec![DVector::from_vec(vec![shift[0], 0.0]); params.mu];
        points.extend(vec![DVector::zeros(2); params.lambda - params.mu]);
        let values: Vec<f64> = (0..params.lambda).map(|i| i as f64).collect();
        let pop = RankedPopulation::new(points, values).unwrap();
        let next = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
        assert_relative_eq!(next.path_sigma.norm(), (2.0f64).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(next.step_size, dist.step_size, epsilon = 1e-12);
    }

    #[test]
    fn translation_equivariance() {
        let params = CmaParams::<f64>::defaults(3).unwrap();
        let mut dist = SearchDistribution::isotropic(3, 0.4);
        dist.path_c = DVector::from_vec(vec![0.1, -0.2, 0.05]);
        dist.path_sigma = DVector::from_vec(vec![-0.3, 0.2, 0.0]);
        let pop = population_around(&dist, &params, 77);

        let offset = DVector::from_vec(vec![5.0, -3.0, 1.5]);
        let mut shifted_dist = dist.clone();
        shifted_dist.mean = &dist.mean + &offset;
        let shifted_points: Vec<_> = (0..pop.len())
            .map(|i| pop.ranked_point(i) + &offset)
            .collect();
        let shifted_values: Vec<f64> = (0..pop.len()).map(|i| pop.ranked_value(i)).collect();
        let shifted_pop = RankedPopulation::new(shifted_points, shifted_values).unwrap();

        let a = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
        let b = shifted_dist
            .update(&params, &shifted_pop, &UpdateOptions::default())
            .unwrap();
        assert_relative_eq!(&b.mean - &offset, a.mean, epsilon = 1e-10);
        assert_relative_eq!(b.shape, a.shape, epsilon = 1e-10);
        assert_relative_eq!(b.step_size, a.step_size, epsilon = 1e-12);
        assert_relative_eq!(b.path_c, a.path_c, epsilon = 1e-12);
        assert_relative_eq!(b.path_sigma, a.path_sigma, epsilon = 1e-12);
    }

    #[test]
    fn rank_invariance_under_value_offset() {
        let params = CmaParams::<f64>::defaults(2).unwrap();
        let dist = SearchDistribution::isotropic(2, 0.7);
        let pop = population_around(&dist, &params, 5);
        let shifted_values: Vec<f64> = (0..pop.len()).map(|i| pop.ranked_value(i) + 100.0).collect();
        let shifted_points: Vec<_> = (0..pop.len()).map(|i| pop.ranked_point(i).clone()).collect();
        let shifted = RankedPopulation::new(shifted_points, shifted_values).unwrap();
        let a = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
        let b = dist.update(&params, &shifted, &UpdateOptions::default()).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.step_size, b.step_size);
    }

    #[test]
    fn zero_covariance_rates_freeze_shape() {
        let mut params = CmaParams::<f64>::defaults(2).unwrap();
        params.c_1 = 0.0;
        params.c_mu = 0.0;
        let mut dist = SearchDistribution::isotropic(2, 0.5);
        dist.shape = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.9]);
        let pop = population_around(&dist, &params, 8);
        let next = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
        assert_relative_eq!(next.shape, dist.shape, epsilon = 1e-14);
    }

    #[test]
    fn non_finite_population_is_rejected() {
        let points = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        assert!(matches!(
            RankedPopulation::new(points.clone(), vec![0.0, f64::NAN]),
            Err(CmaError::NonFinite)
        ));
        let mut bad = points;
        bad[0][0] = f64::INFINITY;
        assert!(matches!(
            RankedPopulation::new(bad, vec![0.0, 1.0]),
            Err(CmaError::NonFinite)
        ));
    }

    #[test]
    fn wrong_population_size_is_rejected() {
        let params = CmaParams::<f64>::defaults(2).unwrap();
        let dist = SearchDistribution::isotropic(2, 0.5);
        let points = vec![DVector::zeros(2); params.lambda - 1];
        let values = vec![0.0; params.lambda - 1];
        let pop = RankedPopulation::new(points, values).unwrap();
        assert!(matches!(
            dist.update(&params, &pop, &UpdateOptions::default()),
            Err(CmaError::WrongPopulationSize { .. })
        ));
    }

    #[test]
    fn inverse_sqrt_examples() {
        let ident = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(inverse_sqrt(&ident), ident, epsilon = 1e-12);

        let c = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert_relative_eq!(inverse_sqrt(&c), expected, epsilon = 1e-12);

        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| f64::standard_normal(&mut rng));
        let spd = &a * a.transpose() + DMatrix::identity(4, 4);
        let inv_sqrt = inverse_sqrt(&spd);
        assert_relative_eq!(
            &inv_sqrt * &inv_sqrt * &spd,
            DMatrix::identity(4, 4),
            epsilon = 1e-8
        );
    }

    #[test]
    fn restart_detection() {
        let params = CmaParams::<f64>::defaults(4).unwrap();
        let dist = SearchDistribution::isotropic(4, 0.3);
        let cfg = RestartConfig::defaults(4, params.lambda, 0.3);

        // Fresh distribution, no history.
        assert!(!should_restart(&dist, &[], &cfg));

        // Flat best history.
        let flat = vec![1.0; cfg.flat_window];
        assert!(should_restart(&dist, &flat, &cfg));

        // Still improving.
        let improving: Vec<f64> = (0..cfg.flat_window).map(|i| 1.0 - 0.01 * i as f64).collect();
        assert!(!should_restart(&dist, &improving, &cfg));

        // Ill-conditioned shape.
        let mut bad = dist.clone();
        bad.shape = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-16, 1.0, 1.0]));
        assert!(should_restart(&bad, &[], &cfg));

        // Step size out of bounds.
        let mut tiny = dist.clone();
        tiny.step_size = 1e-9;
        assert!(should_restart(&tiny, &[], &cfg));
        let mut huge = dist;
        huge.step_size = 100.0;
        assert!(should_restart(&huge, &[], &cfg));
    }

    #[test]
    fn shape_stays_symmetric_positive_definite_over_many_generations() {
        let params = CmaParams::<f64>::defaults(4).unwrap();
        let mut dist = SearchDistribution::isotropic(4, 0.3);
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for gen in 0..1000 {
            let points = dist.sample_points(params.lambda, &mut rng).unwrap();
            let values: Vec<f64> = points
                .iter()
                .map(|p| p.iter().map(|x: &f64| x.abs().sqrt()).sum::<f64>())
                .collect();
            let pop = RankedPopulation::new(points, values).unwrap();
            dist = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
            // Clamp the step size so a thousand selection-driven generations
            // cannot underflow it; only the shape is under test.
            dist.step_size = dist.step_size.clamp(1e-6, 10.0);

            let max_asym = (&dist.shape - dist.shape.transpose())
                .iter()
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(max_asym < 1e-10, "asymmetry {max_asym} at generation {gen}");
            let (eigs, _) = linalg::sym_eigen(&dist.shape);
            let floor = shape_floor(&dist.shape);
            // Recomputing eigenvalues of the floored matrix wobbles at the
            // machine-epsilon scale of the matrix norm.
            let slack = 1e-14 * dist.shape.norm();
            assert!(
                *eigs.last().unwrap() >= floor - slack,
                "eigenvalue {} below floor {floor} at generation {gen}",
                eigs.last().unwrap()
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn update_is_translation_equivariant_prop(
            seed in 0u64..1000,
            shift in -10.0f64..10.0,
        ) {
            let params = CmaParams::<f64>::defaults(2).unwrap();
            let dist = SearchDistribution::isotropic(2, 0.5);
            let pop = population_around(&dist, &params, seed);
            let offset = DVector::from_vec(vec![shift, -shift * 0.5]);

            let mut shifted_dist = dist.clone();
            shifted_dist.mean = &dist.mean + &offset;
            let pts: Vec<_> = (0..pop.len()).map(|i| pop.ranked_point(i) + &offset).collect();
            let vals: Vec<f64> = (0..pop.len()).map(|i| pop.ranked_value(i)).collect();
            let shifted_pop = RankedPopulation::new(pts, vals).unwrap();

            let a = dist.update(&params, &pop, &UpdateOptions::default()).unwrap();
            let b = shifted_dist.update(&params, &shifted_pop, &UpdateOptions::default()).unwrap();
            prop_assert!((&b.mean - &offset - &a.mean).norm() < 1e-9);
            prop_assert!((&b.shape - &a.shape).norm() < 1e-9);
        }
    }
}
