//! Gaussian-process regression with a Matérn 5/2 ARD kernel: maximum-
//! likelihood hyperparameter fitting by multi-start projected gradient
//! ascent, joint posterior evaluation, and Thompson-sampling selection over
//! a finite candidate pool.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::scalar::Scalar;

const SQRT_5: f64 = 2.236_067_977_499_79;
/// Maximum outer iterations of one gradient ascent.
const MAX_MLE_STEPS: usize = 100;
/// Convergence tolerance on the infinity norm of the projected gradient.
const GRAD_TOL: f64 = 1e-5;

/// Errors from the GP module.
#[derive(Debug, Clone, thiserror::Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inputs and outputs differ in length ({inputs} vs {outputs})")]
    LengthMismatch { inputs: usize, outputs: usize },
    #[error("observations contain non-finite values")]
    NonFinite,
    #[error("need at least 2 observations to fit, got {got}")]
    TooFewObservations { got: usize },
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("kernel matrix factorization failed: {0}")]
    Factorization(#[from] linalg::FactorizationError),
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// Matérn 5/2 ARD kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<T: Scalar> {
    /// One positive lengthscale per input dimension.
    pub lengthscales: DVector<T>,
    pub signal_variance: T,
    pub noise_variance: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn isotropic(dim: usize, lengthscale: T, signal_variance: T, noise_variance: T) -> Self {
        Self {
            lengthscales: DVector::from_element(dim, lengthscale),
            signal_variance,
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Box bounds for the kernel hyperparameters, on a unit-scaled input domain.
#[derive(Debug, Clone)]
pub struct HyperparamBounds<T: Scalar> {
    pub lengthscale: (T, T),
    pub signal_variance: (T, T),
    pub noise_variance: (T, T),
}

impl<T: Scalar> Default for HyperparamBounds<T> {
    fn default() -> Self {
        Self {
            lengthscale: (T::of(0.005), T::of(2.0)),
            signal_variance: (T::of(0.05), T::of(20.0)),
            noise_variance: (T::of(5e-4), T::of(0.2)),
        }
    }
}

/// Matérn 5/2 with automatic relevance determination:
/// `s·(1 + √5 r + 5r²/3)·exp(−√5 r)` where `r` is the lengthscale-scaled
/// Euclidean distance. Symmetric in its point arguments.
pub fn matern52_ard<T: Scalar>(
    x: &DVector<T>,
    y: &DVector<T>,
    params: &KernelParams<T>,
) -> Result<T, GpError> {
    let d = params.dim();
    if x.len() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if y.len() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    Ok(kernel_unchecked(x, y, params))
}

#[inline]
fn kernel_unchecked<T: Scalar>(x: &DVector<T>, y: &DVector<T>, params: &KernelParams<T>) -> T {
    let mut r_sq = T::zero();
    for i in 0..x.len() {
        let diff = (x[i] - y[i]) / params.lengthscales[i];
        r_sq += diff * diff;
    }
    let r = r_sq.sqrt();
    let sqrt5_r = T::of(SQRT_5) * r;
    params.signal_variance
        * (T::one() + sqrt5_r + T::of(5.0 / 3.0) * r_sq)
        * (-sqrt5_r).exp()
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Training data with outputs standardized to zero mean and unit variance
/// (falling back to unit scale when all outputs are equal).
#[derive(Debug, Clone)]
pub struct ObservationSet<T: Scalar> {
    input_dim: usize,
    inputs: Vec<DVector<T>>,
    raw_outputs: Vec<T>,
    standardized: Vec<T>,
    output_mean: T,
    output_std: T,
}

impl<T: Scalar> ObservationSet<T> {
    pub fn new(inputs: Vec<DVector<T>>, raw_outputs: Vec<T>) -> Result<Self, GpError> {
        if inputs.len() != raw_outputs.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                outputs: raw_outputs.len(),
            });
        }
        if raw_outputs.iter().any(|v| !v.is_finite())
            || inputs.iter().any(|p| p.iter().any(|x| !x.is_finite()))
        {
            return Err(GpError::NonFinite);
        }
        let input_dim = inputs.first().map_or(0, |p| p.len());
        if let Some(bad) = inputs.iter().find(|p| p.len() != input_dim) {
            return Err(GpError::DimensionMismatch {
                expected: input_dim,
                got: bad.len(),
            });
        }
        let mut set = Self {
            input_dim,
            inputs,
            raw_outputs,
            standardized: Vec::new(),
            output_mean: T::zero(),
            output_std: T::one(),
        };
        set.restandardize();
        Ok(set)
    }

    pub fn empty(input_dim: usize) -> Self {
        Self {
            input_dim,
            inputs: Vec::new(),
            raw_outputs: Vec::new(),
            standardized: Vec::new(),
            output_mean: T::zero(),
            output_std: T::one(),
        }
    }

    fn restandardize(&mut self) {
        let n = self.raw_outputs.len();
        if n == 0 {
            self.output_mean = T::zero();
            self.output_std = T::one();
            self.standardized.clear();
            return;
        }
        let mean = self
            .raw_outputs
            .iter()
            .copied()
            .fold(T::zero(), |a, b| a + b)
            / T::of(n as f64);
        let std = if n > 1 {
            let var = self
                .raw_outputs
                .iter()
                .map(|&y| (y - mean) * (y - mean))
                .fold(T::zero(), |a, b| a + b)
                / T::of((n - 1) as f64);
            var.sqrt()
        } else {
            T::zero()
        };
        let std = if std > T::of(1e-12) { std } else { T::one() };
        self.output_mean = mean;
        self.output_std = std;
        self.standardized = self
            .raw_outputs
            .iter()
            .map(|&y| (y - mean) / std)
            .collect();
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inputs(&self) -> &[DVector<T>] {
        &self.inputs
    }

    pub fn raw_outputs(&self) -> &[T] {
        &self.raw_outputs
    }

    pub fn standardized_outputs(&self) -> &[T] {
        &self.standardized
    }

    pub fn output_mean(&self) -> T {
        self.output_mean
    }

    pub fn output_std(&self) -> T {
        self.output_std
    }

    /// Maps a standardized prediction back to the raw output scale.
    pub fn destandardize(&self, value: T) -> T {
        value * self.output_std + self.output_mean
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A trained GP: hyperparameters, training set, and the factorized kernel
/// matrix `K + σ_n² I` with its solved weight vector.
///
/// Immutable for prediction; [`GpModel::append`] extends the factorization
/// in place with a new observation without refitting hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel<T: Scalar> {
    params: KernelParams<T>,
    obs: ObservationSet<T>,
    /// Lower-triangular factor of `K + σ_n² I + jitter·I`.
    chol: DMatrix<T>,
    alpha: DVector<T>,
    jitter: T,
}

impl<T: Scalar> GpModel<T> {
    /// Builds a model at the given hyperparameters without any fitting.
    pub fn with_params(obs: ObservationSet<T>, params: KernelParams<T>) -> Result<Self, GpError> {
        if !obs.is_empty() && obs.input_dim() != params.dim() {
            return Err(GpError::DimensionMismatch {
                expected: params.dim(),
                got: obs.input_dim(),
            });
        }
        let n = obs.len();
        if n == 0 {
            return Ok(Self {
                params,
                obs,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter: T::zero(),
            });
        }
        let k = noisy_kernel_matrix(obs.inputs(), &params);
        let (chol, jitter) = linalg::cholesky_with_jitter(&k)?;
        let y = DVector::from_column_slice(obs.standardized_outputs());
        let alpha = linalg::solve_lower_transpose(&chol, &linalg::solve_lower(&chol, &y));
        Ok(Self {
            params,
            obs,
            chol,
            alpha,
            jitter,
        })
    }

    /// A model with no training data: the posterior is the prior.
    pub fn prior(params: KernelParams<T>) -> Self {
        let dim = params.dim();
        Self::with_params(ObservationSet::empty(dim), params).expect("empty set always factors")
    }

    /// Maximum-likelihood fit: `restarts` projected gradient ascents on the
    /// log hyperparameters (the first from a fixed heuristic start, the rest
    /// from log-uniform draws), keeping the best local maximum. At most 100
    /// steps per ascent, projected-gradient tolerance 1e-5. Deterministic
    /// for a given generator state.
    pub fn fit<R: Rng + ?Sized>(
        obs: ObservationSet<T>,
        bounds: &HyperparamBounds<T>,
        restarts: usize,
        rng: &mut R,
    ) -> Result<Self, GpError> {
        Self::fit_warm(obs, bounds, restarts, None, rng)
    }

    /// Like [`GpModel::fit`], but the first ascent starts from
    /// `warm_start` when given (clamped into bounds). Used when refitting as
    /// a dataset grows.
    pub fn fit_warm<R: Rng + ?Sized>(
        obs: ObservationSet<T>,
        bounds: &HyperparamBounds<T>,
        restarts: usize,
        warm_start: Option<&KernelParams<T>>,
        rng: &mut R,
    ) -> Result<Self, GpError> {
        let n = obs.len();
        if n < 2 {
            return Err(GpError::TooFewObservations { got: n });
        }
        let dim = obs.input_dim();
        let restarts = restarts.max(1);
        let log_bounds = LogBounds::new(dim, bounds);

        let mut best: Option<(T, Vec<T>)> = None;
        for start_idx in 0..restarts {
            let theta0 = if start_idx == 0 {
                match warm_start {
                    Some(p) => log_bounds.clamp(log_params(p)),
                    None => log_bounds.heuristic(),
                }
            } else {
                log_bounds.draw(rng)
            };
            if let Some((lml, theta)) = ascend(&obs, &log_bounds, theta0) {
                if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                    best = Some((lml, theta));
                }
            }
        }
        let (_, theta) = best.ok_or(GpError::Factorization(
            linalg::FactorizationError::NotPositiveDefinite { max_jitter: 0.0 },
        ))?;
        Self::with_params(obs, params_from_log(dim, &theta))
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Log marginal likelihood of the training data under the current
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> T {
        let n = self.obs.len();
        if n == 0 {
            return T::zero();
        }
        let y = DVector::from_column_slice(self.obs.standardized_outputs());
        let mut log_det_half = T::zero();
        for i in 0..n {
            log_det_half += self.chol[(i, i)].ln();
        }
        -T::of(0.5) * y.dot(&self.alpha)
            - log_det_half
            - T::of(0.5 * n as f64) * T::of((2.0 * std::f64::consts::PI).ln())
    }

    /// Posterior mean and covariance over the standardized outputs at the
    /// given points. The covariance is symmetrized and its diagonal clamped
    /// at zero.
    pub fn posterior(
        &self,
        points: &[DVector<T>],
    ) -> Result<(DVector<T>, DMatrix<T>), GpError> {
        if points.is_empty() {
            return Err(GpError::EmptyCandidates);
        }
        let dim = self.params.dim();
        for p in points {
            if p.len() != dim {
                return Err(GpError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        let m = points.len();
        let mut prior_cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let k = kernel_unchecked(&points[i], &points[j], &self.params);
                prior_cov[(i, j)] = k;
                prior_cov[(j, i)] = k;
            }
        }
        let n = self.obs.len();
        if n == 0 {
            return Ok((DVector::zeros(m), prior_cov));
        }

        // Cross-kernel K* (n × m), mean = K*ᵀ α, covariance reduction VᵀV
        // with V = L⁻¹ K*.
        let mut k_star = DMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                k_star[(i, j)] = kernel_unchecked(&self.obs.inputs()[i], &points[j], &self.params);
            }
        }
        let mean = k_star.transpose() * &self.alpha;
        let mut v = DMatrix::zeros(n, m);
        for j in 0..m {
            let col = linalg::solve_lower(&self.chol, &k_star.column(j).into_owned());
            v.set_column(j, &col);
        }
        let mut cov = prior_cov - v.transpose() * v;
        linalg::symmetrize(&mut cov);
        for i in 0..m {
            if cov[(i, i)] < T::zero() {
                cov[(i, i)] = T::zero();
            }
        }
        Ok((mean, cov))
    }

    /// Extends the model with one observation, reusing the existing
    /// hyperparameters and output standardization. The Cholesky factor is
    /// extended by one row in O(n²); the full matrix is refactored only if
    /// the incremental pivot degenerates.
    pub fn append(&mut self, x: DVector<T>, y: T) -> Result<(), GpError> {
        if x.len() != self.params.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.params.dim(),
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        let n = self.obs.len();
        let y_std = (y - self.obs.output_mean) / self.obs.output_std;
        let diag = kernel_unchecked(&x, &x, &self.params) + self.params.noise_variance + self.jitter;

        if n == 0 {
            self.obs.inputs.push(x);
            self.obs.raw_outputs.push(y);
            self.obs.standardized.push(y_std);
            self.chol = DMatrix::from_element(1, 1, diag.sqrt());
            self.alpha = DVector::from_element(1, y_std / diag);
            return Ok(());
        }

        let k_vec = DVector::from_fn(n, |i, _| {
            kernel_unchecked(&self.obs.inputs[i], &x, &self.params)
        });
        let b = linalg::solve_lower(&self.chol, &k_vec);
        let pivot_sq = diag - b.norm_squared();

        self.obs.inputs.push(x);
        self.obs.raw_outputs.push(y);
        self.obs.standardized.push(y_std);

        let tiny = T::of(1e-12) * diag;
        if pivot_sq > tiny {
            let mut extended = DMatrix::zeros(n + 1, n + 1);
            extended.view_mut((0, 0), (n, n)).copy_from(&self.chol);
            for i in 0..n {
                extended[(n, i)] = b[i];
            }
            extended[(n, n)] = pivot_sq.sqrt();
            self.chol = extended;
        } else {
            // Degenerate pivot: refactor the whole extended matrix.
            let k = noisy_kernel_matrix(self.obs.inputs(), &self.params);
            let (chol, jitter) = linalg::cholesky_with_jitter(&k)?;
            self.chol = chol;
            self.jitter = jitter;
        }
        let y_all = DVector::from_column_slice(&self.obs.standardized);
        self.alpha =
            linalg::solve_lower_transpose(&self.chol, &linalg::solve_lower(&self.chol, &y_all));
        Ok(())
    }
}

fn noisy_kernel_matrix<T: Scalar>(inputs: &[DVector<T>], params: &KernelParams<T>) -> DMatrix<T> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_unchecked(&inputs[i], &inputs[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += params.noise_variance;
    }
    k
}

// ---------------------------------------------------------------------------
// Maximum likelihood internals
// ---------------------------------------------------------------------------

/// Log-parameter vector layout: `[ln ℓ_1 .. ln ℓ_d, ln s, ln σ_n²]`.
fn log_params<T: Scalar>(p: &KernelParams<T>) -> Vec<T> {
    let mut v: Vec<T> = p.lengthscales.iter().map(|&l| l.ln()).collect();
    v.push(p.signal_variance.ln());
    v.push(p.noise_variance.ln());
    v
}

fn params_from_log<T: Scalar>(dim: usize, theta: &[T]) -> KernelParams<T> {
    KernelParams {
        lengthscales: DVector::from_iterator(dim, theta[..dim].iter().map(|&t| t.exp())),
        signal_variance: theta[dim].exp(),
        noise_variance: theta[dim + 1].exp(),
    }
}

struct LogBounds<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> LogBounds<T> {
    fn new(dim: usize, bounds: &HyperparamBounds<T>) -> Self {
        let mut lo = vec![bounds.lengthscale.0.ln(); dim];
        let mut hi = vec![bounds.lengthscale.1.ln(); dim];
        lo.push(bounds.signal_variance.0.ln());
        hi.push(bounds.signal_variance.1.ln());
        lo.push(bounds.noise_variance.0.ln());
        hi.push(bounds.noise_variance.1.ln());
        Self { lo, hi }
    }

    fn clamp(&self, mut theta: Vec<T>) -> Vec<T> {
        for (t, (&lo, &hi)) in theta.iter_mut().zip(self.lo.iter().zip(self.hi.iter())) {
            *t = (*t).max(lo).min(hi);
        }
        theta
    }

    /// Geometric midpoints of the bound boxes.
    fn heuristic(&self) -> Vec<T> {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(&lo, &hi)| (lo + hi) * T::of(0.5))
            .collect()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(&lo, &hi)| lo + T::unit_uniform(rng) * (hi - lo))
            .collect()
    }

    /// Zeroes gradient components that push against an active bound.
    fn project_gradient(&self, theta: &[T], grad: &mut [T]) {
        let eps = T::of(1e-12);
        for i in 0..theta.len() {
            if (theta[i] - self.lo[i]).abs() <= eps && grad[i] < T::zero() {
                grad[i] = T::zero();
            }
            if (theta[i] - self.hi[i]).abs() <= eps && grad[i] > T::zero() {
                grad[i] = T::zero();
            }
        }
    }
}

/// One projected gradient ascent from `theta0`; returns the best
/// (log-likelihood, log-params) reached, or `None` if the very first
/// evaluation fails to factorize.
fn ascend<T: Scalar>(
    obs: &ObservationSet<T>,
    bounds: &LogBounds<T>,
    theta0: Vec<T>,
) -> Option<(T, Vec<T>)> {
    let dim = obs.input_dim();
    let mut theta = bounds.clamp(theta0);
    let (mut lml, mut grad) = lml_and_grad(obs, dim, &theta)?;
    let mut step = T::of(0.25);
    let min_step = T::of(1e-9);
    let tol = T::of(GRAD_TOL);

    for _ in 0..MAX_MLE_STEPS {
        bounds.project_gradient(&theta, &mut grad);
        let grad_norm = grad.iter().fold(T::zero(), |a, &g| a.max(g.abs()));
        if grad_norm < tol {
            break;
        }
        // Backtracking line search along the projected gradient.
        let mut advanced = false;
        while step >= min_step {
            let candidate: Vec<T> = bounds.clamp(
                theta
                    .iter()
                    .zip(grad.iter())
                    .map(|(&t, &g)| t + step * g)
                    .collect(),
            );
            match lml_only(obs, dim, &candidate) {
                Some(next) if next > lml => {
                    theta = candidate;
                    lml = next;
                    step = (step * T::of(1.5)).min(T::one());
                    advanced = true;
                    break;
                }
                _ => step *= T::of(0.5),
            }
        }
        if !advanced {
            break;
        }
        match lml_and_grad(obs, dim, &theta) {
            Some((l, g)) => {
                lml = l;
                grad = g;
            }
            None => break,
        }
    }
    Some((lml, theta))
}

fn lml_only<T: Scalar>(obs: &ObservationSet<T>, dim: usize, theta: &[T]) -> Option<T> {
    let params = params_from_log(dim, theta);
    let n = obs.len();
    let k = noisy_kernel_matrix(obs.inputs(), &params);
    let (chol, _) = linalg::cholesky_with_jitter(&k).ok()?;
    let y = DVector::from_column_slice(obs.standardized_outputs());
    let alpha = linalg::solve_lower_transpose(&chol, &linalg::solve_lower(&chol, &y));
    let mut log_det_half = T::zero();
    for i in 0..n {
        log_det_half += chol[(i, i)].ln();
    }
    Some(
        -T::of(0.5) * y.dot(&alpha)
            - log_det_half
            - T::of(0.5 * n as f64) * T::of((2.0 * std::f64::consts::PI).ln()),
    )
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters, via `∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`.
fn lml_and_grad<T: Scalar>(obs: &ObservationSet<T>, dim: usize, theta: &[T]) -> Option<(T, Vec<T>)> {
    let params = params_from_log(dim, theta);
    let n = obs.len();
    let k = noisy_kernel_matrix(obs.inputs(), &params);
    let (chol, _) = linalg::cholesky_with_jitter(&k).ok()?;
    let y = DVector::from_column_slice(obs.standardized_outputs());
    let alpha = linalg::solve_lower_transpose(&chol, &linalg::solve_lower(&chol, &y));

    let mut log_det_half = T::zero();
    for i in 0..n {
        log_det_half += chol[(i, i)].ln();
    }
    let lml = -T::of(0.5) * y.dot(&alpha)
        - log_det_half
        - T::of(0.5 * n as f64) * T::of((2.0 * std::f64::consts::PI).ln());

    // A = ααᵀ − K⁻¹ (only needed elementwise inside traces).
    let k_inv = invert_from_cholesky(&chol);
    let half = T::of(0.5);
    let mut grad = vec![T::zero(); dim + 2];
    let inputs = obs.inputs();
    let sqrt5 = T::of(SQRT_5);
    let five_thirds = T::of(5.0 / 3.0);

    for i in 0..n {
        for j in 0..n {
            let a_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
            let weight = half * a_ij;

            let xi = &inputs[i];
            let xj = &inputs[j];
            let mut r_sq = T::zero();
            for t in 0..dim {
                let diff = (xi[t] - xj[t]) / params.lengthscales[t];
                r_sq += diff * diff;
            }
            let r = r_sq.sqrt();
            let e = (-sqrt5 * r).exp();
            let k_signal = params.signal_variance * (T::one() + sqrt5 * r + five_thirds * r_sq) * e;

            // ∂K/∂ln s = signal part of K.
            grad[dim] += weight * k_signal;

            // ∂K/∂ln ℓ_t = (5/3)·s·(1 + √5 r)·e^{−√5 r} · ((x_t−y_t)/ℓ_t)².
            let common = five_thirds * params.signal_variance * (T::one() + sqrt5 * r) * e;
            for t in 0..dim {
                let diff = (xi[t] - xj[t]) / params.lengthscales[t];
                grad[t] += weight * common * diff * diff;
            }

            // ∂K/∂ln σ_n² = σ_n² on the diagonal.
            if i == j {
                grad[dim + 1] += weight * params.noise_variance;
            }
        }
    }
    Some((lml, grad))
}

fn invert_from_cholesky<T: Scalar>(chol: &DMatrix<T>) -> DMatrix<T> {
    let n = chol.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = T::one();
        let x = linalg::solve_lower_transpose(chol, &linalg::solve_lower(chol, &e));
        inv.set_column(col, &x);
    }
    inv
}

// ---------------------------------------------------------------------------
// Thompson sampling
// ---------------------------------------------------------------------------

/// One exact joint posterior draw over `candidates`, driven by the given
/// standard-normal vector: `sample = μ + Σ^{1/2} z` with the symmetric
/// matrix square root, so permuting candidates together with `z` permutes
/// the sample.
pub fn joint_posterior_sample<T: Scalar>(
    model: &GpModel<T>,
    candidates: &[DVector<T>],
    z: &DVector<T>,
) -> Result<DVector<T>, GpError> {
    if candidates.is_empty() {
        return Err(GpError::EmptyCandidates);
    }
    assert_eq!(z.len(), candidates.len(), "normal vector length mismatch");
    let (mean, cov) = model.posterior(candidates)?;
    let factor = linalg::sym_sqrt_with_jitter(&cov)?;
    Ok(mean + factor * z)
}

/// Draws one joint Thompson sample over the candidate pool and returns the
/// index of its minimizer; ties go to the lowest index. Deterministic for a
/// given generator state.
pub fn thompson_select<T: Scalar, R: Rng + ?Sized>(
    model: &GpModel<T>,
    candidates: &[DVector<T>],
    rng: &mut R,
) -> Result<usize, GpError> {
    if candidates.is_empty() {
        return Err(GpError::EmptyCandidates);
    }
    let z = DVector::from_fn(candidates.len(), |_, _| T::standard_normal(rng));
    let sample = joint_posterior_sample(model, candidates, &z)?;
    let mut best = 0;
    for i in 1..sample.len() {
        if sample[i] < sample[best] {
            best = i;
        }
    }
    Ok(best)
}
