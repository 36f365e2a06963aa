//! Hyper-ellipsoid local regions derived from a multivariate-normal search
//! distribution: chi-squared confidence thresholds, Mahalanobis membership,
//! and candidate-pool sampling constrained to the region intersected with a
//! box domain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cma::SearchDistribution;
use crate::linalg;
use crate::scalar::Scalar;

/// How a point's Mahalanobis distance is compared against the chi-squared
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MembershipRule {
    /// Squared distance `Δ² ≤ q` with `q` the chi-squared quantile — the
    /// region then contains exactly the configured probability mass.
    #[default]
    SquaredThreshold,
    /// Unsquared distance `Δ ≤ q` against the same quantile value. Kept for
    /// comparison experiments; the contained mass is not the configured one.
    DistanceThreshold,
}

/// Error from building a local region.
#[derive(Debug, Clone, thiserror::Error)]
pub enum RegionError {
    #[error("effective covariance could not be factorized: {0}")]
    Factorization(#[from] linalg::FactorizationError),
    #[error("dimension mismatch: region is {region}-dimensional, point is {point}-dimensional")]
    DimensionMismatch { region: usize, point: usize },
}

/// An α-level confidence hyper-ellipsoid of a multivariate normal.
///
/// Membership is `Δ²(x) = (x-m)^T Σ_eff^{-1} (x-m) ≤ threshold_sq` under the
/// default rule, where `threshold_sq` is the chi-squared quantile holding
/// mass α in `dim` degrees of freedom.
#[derive(Debug, Clone)]
pub struct LocalRegion<T: Scalar> {
    center: DVector<T>,
    eff_cov: DMatrix<T>,
    threshold_sq: T,
    /// Lower-triangular factor of `eff_cov`.
    factor: DMatrix<T>,
    /// Inverse of `factor` (also lower-triangular).
    inv_factor: DMatrix<T>,
    rule: MembershipRule,
}

impl<T: Scalar> LocalRegion<T> {
    /// Builds the region from explicit moments `(center, eff_cov)`.
    pub fn from_moments(
        center: DVector<T>,
        eff_cov: DMatrix<T>,
        alpha: T,
        rule: MembershipRule,
    ) -> Result<Self, RegionError> {
        let dim = center.len();
        let mut cov = eff_cov;
        linalg::symmetrize(&mut cov);
        let (factor, _) = linalg::cholesky_with_jitter(&cov)?;
        let inv_factor = invert_lower(&factor);
        Ok(Self {
            center,
            eff_cov: cov,
            threshold_sq: chi2_quantile(alpha, dim),
            factor,
            inv_factor,
            rule,
        })
    }

    /// Builds the region of a CMA search distribution, with the covariance
    /// scaled as `(scale·σ)² C` so both the region and its proposal
    /// distribution grow and shrink with the trust scale.
    pub fn from_distribution(
        dist: &SearchDistribution<T>,
        scale: T,
        alpha: T,
        rule: MembershipRule,
    ) -> Result<Self, RegionError> {
        let s = scale * dist.step_size;
        let eff_cov = &dist.shape * (s * s);
        Self::from_moments(dist.mean.clone(), eff_cov, alpha, rule)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<T> {
        &self.center
    }

    pub fn effective_covariance(&self) -> &DMatrix<T> {
        &self.eff_cov
    }

    /// The chi-squared quantile bounding the squared Mahalanobis distance.
    pub fn threshold_sq(&self) -> T {
        self.threshold_sq
    }

    pub fn rule(&self) -> MembershipRule {
        self.rule
    }

    /// Squared Mahalanobis distance of `x` from the region center.
    pub fn mahalanobis_sq(&self, x: &DVector<T>) -> T {
        debug_assert_eq!(x.len(), self.dim());
        let diff = x - &self.center;
        let u = &self.inv_factor * diff;
        u.norm_squared()
    }

    /// Whether `x` lies inside the region under the configured rule.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        let d_sq = self.mahalanobis_sq(x);
        match self.rule {
            MembershipRule::SquaredThreshold => d_sq <= self.threshold_sq,
            MembershipRule::DistanceThreshold => d_sq <= self.threshold_sq * self.threshold_sq,
        }
    }

    /// Semi-axis lengths of the α-level surface, descending:
    /// `sqrt(threshold_sq · eigenvalue_i)` of the effective covariance.
    pub fn radii(&self) -> Vec<T> {
        let (values, _) = linalg::sym_eigen(&self.eff_cov);
        values
            .into_iter()
            .map(|v| {
                let v = if v > T::zero() { v } else { T::zero() };
                (self.threshold_sq * v).sqrt()
            })
            .collect()
    }

    /// Radius of the region boundary in the standardized space where the
    /// covariance is the identity.
    fn standardized_radius(&self) -> T {
        match self.rule {
            MembershipRule::SquaredThreshold => self.threshold_sq.sqrt(),
            MembershipRule::DistanceThreshold => self.threshold_sq,
        }
    }

    /// Draws exactly `n_c` candidate points from the normal distribution
    /// with the region's own covariance, keeps those inside the region after
    /// clipping to `bounds`, and never fails.
    ///
    /// If the rejection acceptance rate drops below 1e-3 within `100·n_c`
    /// draws, the remaining slots are filled by sampling uniformly inside
    /// the ellipsoid (normal direction, radius rescaled by `U^(1/d)`) and
    /// clipping.
    pub fn sample_candidates<R: Rng + ?Sized>(
        &self,
        bounds: &[(T, T)],
        n_c: usize,
        rng: &mut R,
    ) -> Vec<DVector<T>> {
        assert_eq!(bounds.len(), self.dim(), "bounds/region dimension mismatch");
        let dim = self.dim();
        let mut out = Vec::with_capacity(n_c);
        let max_attempts = 100usize.saturating_mul(n_c);
        let mut attempts = 0usize;
        while out.len() < n_c && attempts < max_attempts {
            attempts += 1;
            let z = DVector::from_fn(dim, |_, _| T::standard_normal(rng));
            let mut x = &self.center + &self.factor * z;
            clip_to_box(&mut x, bounds);
            if self.contains(&x) {
                out.push(x);
            }
            // Give up on rejection once the acceptance rate is hopeless.
            if attempts >= 1000 && (out.len() as f64) < 1e-3 * attempts as f64 {
                break;
            }
        }
        let radius = self.standardized_radius();
        let exponent = T::one() / T::of(dim as f64);
        while out.len() < n_c {
            let z = DVector::from_fn(dim, |_, _| T::standard_normal(rng));
            let norm = z.norm();
            let dir = if norm > T::zero() {
                z / norm
            } else {
                DVector::zeros(dim)
            };
            let r = radius * T::unit_uniform(rng).powf(exponent);
            let mut x = &self.center + &self.factor * (dir * r);
            clip_to_box(&mut x, bounds);
            out.push(x);
        }
        out
    }
}

fn clip_to_box<T: Scalar>(x: &mut DVector<T>, bounds: &[(T, T)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds.iter()) {
        if *v < lo {
            *v = lo;
        } else if *v > hi {
            *v = hi;
        }
    }
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower<T: Scalar>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = T::one();
        let x = linalg::solve_lower(l, &e);
        inv.set_column(col, &x);
    }
    inv
}

// ---------------------------------------------------------------------------
// Chi-squared quantile via the regularized lower incomplete gamma function
// ---------------------------------------------------------------------------

/// Quantile of the chi-squared distribution with `dof` degrees of freedom:
/// the value `q` such that the regularized lower incomplete gamma function
/// satisfies `P(dof/2, q/2) = p`, solved to an absolute CDF tolerance of
/// 1e-10 (or a few machine epsilons, whichever is larger).
///
/// # Panics
/// Panics unless `0 < p < 1` and `dof ≥ 1`.
pub fn chi2_quantile<T: Scalar>(p: T, dof: usize) -> T {
    assert!(dof >= 1, "chi-squared quantile needs dof >= 1");
    assert!(
        p > T::zero() && p < T::one(),
        "chi-squared quantile needs 0 < p < 1"
    );
    let a = T::of(dof as f64) * T::of(0.5);
    let tol = {
        let base = T::of(1e-10);
        let eps = T::default_epsilon() * T::of(8.0);
        if eps > base {
            eps
        } else {
            base
        }
    };

    // Bracket the root by doubling, then bisect, then polish with Newton.
    let mut lo = T::zero();
    let mut hi = T::of(dof as f64).max(T::one());
    while chi2_cdf(a, hi) < p {
        lo = hi;
        hi = hi * T::of(2.0);
        if hi > T::of(1e300) {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if chi2_cdf(a, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * (T::one() + hi) {
            break;
        }
    }
    let mut q = (lo + hi) * T::of(0.5);
    for _ in 0..32 {
        let err = chi2_cdf(a, q) - p;
        if err.abs() <= tol {
            break;
        }
        let pdf = chi2_pdf(a, q);
        if !(pdf > T::zero()) {
            break;
        }
        let step = err / pdf;
        let next = q - step;
        // Keep Newton inside the bracket.
        q = if next > lo && next < hi { next } else { (lo + hi) * T::of(0.5) };
        if err > T::zero() {
            hi = if q < hi { hi } else { q };
        } else {
            lo = if q > lo { lo } else { q };
        }
    }
    q
}

/// CDF of the chi-squared distribution expressed through `a = dof/2`.
fn chi2_cdf<T: Scalar>(a: T, q: T) -> T {
    if q <= T::zero() {
        T::zero()
    } else {
        reg_lower_gamma(a, q * T::of(0.5))
    }
}

/// PDF of the chi-squared distribution expressed through `a = dof/2`.
fn chi2_pdf<T: Scalar>(a: T, q: T) -> T {
    if q <= T::zero() {
        return T::zero();
    }
    let half = T::of(0.5);
    let x = q * half;
    ((a - T::one()) * x.ln() - x - ln_gamma(a)).exp() * half
}

/// Regularized lower incomplete gamma function `P(a, x)`.
///
/// Series expansion for `x < a + 1`, Lentz continued fraction for the upper
/// tail otherwise.
pub(crate) fn reg_lower_gamma<T: Scalar>(a: T, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x < a + T::one() {
        lower_gamma_series(a, x)
    } else {
        T::one() - upper_gamma_cf(a, x)
    }
}

fn lower_gamma_series<T: Scalar>(a: T, x: T) -> T {
    let mut term = T::one() / a;
    let mut sum = term;
    let mut n = a;
    for _ in 0..500 {
        n += T::one();
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * T::default_epsilon() {
            break;
        }
    }
    (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
}

fn upper_gamma_cf<T: Scalar>(a: T, x: T) -> T {
    let tiny = T::of(1e-30);
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..500 {
        let an = -T::of(i as f64) * (T::of(i as f64) - a);
        b += T::of(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h *= delta;
        if (delta - T::one()).abs() < T::default_epsilon() {
            break;
        }
    }
    (a * x.ln() - x - ln_gamma(a)).exp() * h
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub(crate) fn ln_gamma<T: Scalar>(z: T) -> T {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let half = T::of(0.5);
    if z < half {
        // Reflection formula for small arguments.
        let pi = T::pi();
        return (pi / (pi * z).sin()).ln() - ln_gamma(T::one() - z);
    }
    let z = z - T::one();
    let mut acc = T::of(0.99999999999980993);
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += T::of(c) / (z + T::of((i + 1) as f64));
    }
    let t = z + T::of(7.5);
    T::of(0.5 * (2.0 * std::f64::consts::PI).ln()) + (z + half) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cma::SearchDistribution;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    // Probability mass of a standard normal within three standard
    // deviations, P(|Z| <= 3); the matching 1-dof quantile is exactly 9.
    const THREE_SIGMA_MASS: f64 = 0.99730020393673981;

    #[test]
    fn quantile_matches_three_sigma_in_one_dof() {
        let q = chi2_quantile(THREE_SIGMA_MASS, 1);
        assert_relative_eq!(q, 9.0, epsilon = 1e-6);
    }

    #[test]
    fn quantile_closed_form_two_dof() {
        // For two dof the CDF is 1 - exp(-q/2), so q(p) = -2 ln(1-p).
        assert_relative_eq!(chi2_quantile(0.5, 2), 2.0 * 2.0f64.ln(), epsilon = 1e-10);
        assert_relative_eq!(
            chi2_quantile(0.9973, 2),
            11.829007011943707,
            epsilon = 1e-8
        );
    }

    #[test]
    fn quantile_is_monotone() {
        let mut prev = 0.0;
        for p in [0.01, 0.1, 0.5, 0.9, 0.99, 0.9999, 0.999999] {
            let q: f64 = chi2_quantile(p, 5);
            assert!(q > prev, "not monotone in p at {p}");
            assert!(q.is_finite());
            prev = q;
        }
        let mut prev = 0.0;
        for d in [1, 2, 3, 5, 10, 50, 200] {
            let q = chi2_quantile(0.9, d);
            assert!(q > prev, "not monotone in dof at {d}");
            prev = q;
        }
    }

    #[test]
    fn quantile_works_in_f32() {
        let q: f32 = chi2_quantile(0.5f32, 2);
        assert_relative_eq!(q, 2.0 * std::f32::consts::LN_2, epsilon = 1e-5);
    }

    fn region_from(
        center: Vec<f64>,
        cov: Vec<f64>,
        alpha: f64,
    ) -> LocalRegion<f64> {
        let d = center.len();
        LocalRegion::from_moments(
            DVector::from_vec(center),
            DMatrix::from_row_slice(d, d, &cov),
            alpha,
            MembershipRule::SquaredThreshold,
        )
        .unwrap()
    }

    #[test]
    fn mahalanobis_basics() {
        let r = region_from(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 1.0], 0.9973);
        assert_eq!(r.mahalanobis_sq(&DVector::from_vec(vec![0.0, 0.0])), 0.0);
        // 4/4 + 1/1 = 2
        assert_relative_eq!(
            r.mahalanobis_sq(&DVector::from_vec(vec![2.0, 1.0])),
            2.0,
            epsilon = 1e-12
        );

        let ident = region_from(vec![1.0, -1.0], vec![1.0, 0.0, 0.0, 1.0], 0.9);
        assert_relative_eq!(
            ident.mahalanobis_sq(&DVector::from_vec(vec![2.0, 1.0])),
            1.0 + 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn radii_identity_two_dims() {
        let r = region_from(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 0.9973);
        let radii = r.radii();
        assert_eq!(radii.len(), 2);
        for &x in &radii {
            assert_relative_eq!(x, 3.4393323497364583, epsilon = 1e-7);
        }
    }

    #[test]
    fn doubling_scale_doubles_radii_and_quadruples_eigenvalues() {
        let mut dist = SearchDistribution::isotropic(2, 0.4);
        dist.mean = DVector::from_vec(vec![0.2, 0.8]);
        dist.shape = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let r1 =
            LocalRegion::from_distribution(&dist, 1.0, 0.9973, MembershipRule::SquaredThreshold)
                .unwrap();
        let r2 =
            LocalRegion::from_distribution(&dist, 2.0, 0.9973, MembershipRule::SquaredThreshold)
                .unwrap();
        for (a, b) in r1.radii().iter().zip(r2.radii().iter()) {
            assert_relative_eq!(2.0 * a, *b, epsilon = 1e-10);
        }
        let (e1, _) = linalg::sym_eigen(r1.effective_covariance());
        let (e2, _) = linalg::sym_eigen(r2.effective_covariance());
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert_relative_eq!(4.0 * a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn unit_scale_region_is_sigma_squared_c() {
        let mut dist = SearchDistribution::isotropic(3, 0.3);
        dist.shape[(0, 1)] = 0.1;
        dist.shape[(1, 0)] = 0.1;
        let r = LocalRegion::from_distribution(&dist, 1.0, 0.9973, MembershipRule::SquaredThreshold)
            .unwrap();
        let expected = &dist.shape * (0.3 * 0.3);
        assert_relative_eq!(r.effective_covariance(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn candidates_satisfy_membership_and_box() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let r = region_from(
            vec![0.5, 0.5],
            vec![0.04, 0.01, 0.01, 0.09],
            0.9973,
        );
        let bounds = [(0.0, 1.0), (0.0, 1.0)];
        let cands = r.sample_candidates(&bounds, 500, &mut rng);
        assert_eq!(cands.len(), 500);
        for c in &cands {
            assert!(r.contains(c));
            for (v, &(lo, hi)) in c.iter().zip(bounds.iter()) {
                assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn degenerate_scale_collapses_to_center() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let dist = SearchDistribution::isotropic(4, 1e-12);
        let r = LocalRegion::from_distribution(&dist, 1.0, 0.9973, MembershipRule::SquaredThreshold)
            .unwrap();
        let bounds = vec![(-1.0, 1.0); 4];
        for c in r.sample_candidates(&bounds, 50, &mut rng) {
            assert!((c - r.center()).norm() < 1e-6);
        }
    }

    #[test]
    fn rejection_sampler_mean_matches_center() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let r = region_from(
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5],
            0.9973,
        );
        let bounds = vec![(-100.0, 100.0); 3];
        let n = 100_000;
        let cands = r.sample_candidates(&bounds, n, &mut rng);
        for dim in 0..3 {
            let mean = cands.iter().map(|c| c[dim]).sum::<f64>() / n as f64;
            let var = cands.iter().map(|c| (c[dim] - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se,
                "dim {dim}: mean {mean} further than 3 standard errors {se}"
            );
        }
    }

    #[test]
    fn membership_fraction_matches_alpha_small() {
        // Small-scale version of the coverage check; the acceptance suite
        // runs the full 1e5-sample version for d in {2, 5, 10}.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut dist = SearchDistribution::isotropic(3, 0.7);
        dist.shape = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.1, 0.4, 1.5, 0.0, 0.1, 0.0, 0.8]);
        let r = LocalRegion::from_distribution(&dist, 1.0, 0.9973, MembershipRule::SquaredThreshold)
            .unwrap();
        let (chol, _) = linalg::cholesky_with_jitter(&(&dist.shape * (0.7 * 0.7))).unwrap();
        let n = 20_000;
        let mut inside = 0;
        for _ in 0..n {
            let z = DVector::from_fn(3, |_, _| f64::standard_normal(&mut rng));
            let x = &dist.mean + &chol * z;
            if r.contains(&x) {
                inside += 1;
            }
        }
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.9973).abs() < 0.004, "coverage {frac}");
    }

    #[test]
    fn affine_map_preserves_mahalanobis() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |_, _| f64::standard_normal(&mut rng))
                + DMatrix::identity(d, d) * 2.0;
            let m = DVector::from_fn(d, |_, _| f64::standard_normal(&mut rng));
            let b = DMatrix::from_fn(d, d, |_, _| f64::standard_normal(&mut rng));
            let cov = &b * b.transpose() + DMatrix::identity(d, d) * 0.5;
            let x = DVector::from_fn(d, |_, _| f64::standard_normal(&mut rng));

            let r = LocalRegion::from_moments(
                m.clone(),
                cov.clone(),
                0.9,
                MembershipRule::SquaredThreshold,
            )
            .unwrap();
            let r_mapped = LocalRegion::from_moments(
                &a * &m,
                &a * &cov * a.transpose(),
                0.9,
                MembershipRule::SquaredThreshold,
            )
            .unwrap();
            let d0 = r.mahalanobis_sq(&x);
            let d1 = r_mapped.mahalanobis_sq(&(&a * &x));
            assert_relative_eq!(d0, d1, max_relative = 1e-7);
        }
    }

    #[test]
    #[should_panic]
    fn quantile_rejects_bad_probability() {
        chi2_quantile(1.0, 3);
    }
}
