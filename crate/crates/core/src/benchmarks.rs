//! Synthetic benchmark problems: classic multimodal test functions, dummy-
//! dimension padding, randomly shifted variants, domain scaling to the unit
//! box, Latin-hypercube initialization, and distance-to-optimum traces.

use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::optimizers::RunRecord;
use crate::scalar::Scalar;

/// RNG stream ids carved out so derived generators never collide.
const SHIFT_STREAM: u64 = 0x73686966;
const NOISE_STREAM: u64 = 0x6e6f6973;

/// Errors from the benchmark registry and diagnostics.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BenchmarkError {
    #[error("unknown problem '{name}'; known: {registry}")]
    UnknownProblem { name: String, registry: String },
    #[error("problem '{0}' has no dimension suffix (try e.g. '{0}-20')")]
    MissingDimension(String),
    #[error("problem '{name}' needs dimension >= {min}")]
    DimensionTooSmall { name: String, min: usize },
    #[error("problem has no known optimum location")]
    UnknownOptimum,
}

/// A box-constrained minimization problem.
///
/// The evaluator is a pure function of the point; evaluation counting is the
/// caller's concern, so instances are safe to share across runs.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub bounds: Vec<(f64, f64)>,
    evaluator: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    /// Known global optimum locations (empty when unknown). For padded
    /// problems these cover only the effective dimensions listed in
    /// `distance_dims`.
    pub optima: Vec<DVector<f64>>,
    pub optimum_value: Option<f64>,
    /// Dimensions used for distance diagnostics; `None` means all.
    pub distance_dims: Option<Vec<usize>>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .finish()
    }
}

impl Problem {
    pub fn custom(
        name: impl Into<String>,
        bounds: Vec<(f64, f64)>,
        evaluator: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bounds,
            evaluator: Arc::new(evaluator),
            optima: Vec::new(),
            optimum_value: None,
            distance_dims: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim(), "evaluation point dimension mismatch");
        (self.evaluator)(x)
    }

    /// Maps a unit-box point into this problem's box.
    pub fn point_from_unit(&self, unit: &DVector<f64>) -> DVector<f64> {
        assert_eq!(unit.len(), self.dim());
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = self.bounds[i];
            lo + unit[i] * (hi - lo)
        })
    }

    /// Maps a point of this problem's box into the unit box.
    pub fn point_to_unit(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim());
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = self.bounds[i];
            if hi > lo {
                (x[i] - lo) / (hi - lo)
            } else {
                0.5
            }
        })
    }

    /// The same problem rescaled onto `[0, 1]^d`: the evaluator composes the
    /// inverse affine map, and known optima are mapped consistently.
    pub fn to_unit(&self) -> Problem {
        let inner = self.clone();
        let optima = self.optima.iter().map(|o| self.point_to_unit(o)).collect();
        Problem {
            name: self.name.clone(),
            bounds: vec![(0.0, 1.0); self.dim()],
            evaluator: Arc::new(move |unit: &DVector<f64>| {
                inner.evaluate(&inner.point_from_unit(unit))
            }),
            optima,
            optimum_value: self.optimum_value,
            distance_dims: self.distance_dims.clone(),
        }
    }

    /// Wraps the evaluator with additive Gaussian noise from a dedicated
    /// seeded stream. Intended for per-run instances; the internal generator
    /// is serialized behind a lock.
    pub fn with_noise(self, noise_std: f64, seed: u64) -> Problem {
        if noise_std <= 0.0 {
            return self;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM);
        let rng = Mutex::new(rng);
        let inner = self.evaluator.clone();
        Problem {
            evaluator: Arc::new(move |x: &DVector<f64>| {
                let noise = f64::standard_normal(&mut *rng.lock().unwrap()) * noise_std;
                inner(x) + noise
            }),
            ..self
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form test functions
// ---------------------------------------------------------------------------

/// Closed forms of the registry functions, defined on all of ℝ^d.
pub mod functions {
    use std::f64::consts::PI;

    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|&v| v * v).sum()
    }

    pub fn levy(x: &[f64]) -> f64 {
        let w: Vec<f64> = x.iter().map(|&v| 1.0 + (v - 1.0) / 4.0).collect();
        let d = w.len();
        let mut sum = (PI * w[0]).sin().powi(2);
        for i in 0..d - 1 {
            sum += (w[i] - 1.0).powi(2) * (1.0 + 10.0 * (PI * w[i] + 1.0).sin().powi(2));
        }
        sum + (w[d - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[d - 1]).sin().powi(2))
    }

    pub fn alpine(x: &[f64]) -> f64 {
        x.iter().map(|&v| (v * v.sin() + 0.1 * v).abs()).sum()
    }

    pub fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter()
                .map(|&v| v * v - 10.0 * (2.0 * PI * v).cos())
                .sum::<f64>()
    }

    pub fn ellipsoid(x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (i + 1) as f64 * v * v)
            .sum()
    }

    pub fn schaffer2(x1: f64, x2: f64) -> f64 {
        let num = (x1 * x1 - x2 * x2).sin().powi(2) - 0.5;
        let den = (1.0 + 0.001 * (x1 * x1 + x2 * x2)).powi(2);
        0.5 + num / den
    }

    pub fn branin(x1: f64, x2: f64) -> f64 {
        let a = 1.0;
        let b = 5.1 / (4.0 * PI * PI);
        let c = 5.0 / PI;
        let r = 6.0;
        let s = 10.0;
        let t = 1.0 / (8.0 * PI);
        a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

const REGISTRY_PATTERNS: &[&str] = &[
    "sphere-<d>",
    "levy-<d>",
    "alpine-<d>",
    "rastrigin-<d>",
    "ellipsoid-<d>",
    "shifted-levy-<d>",
    "shifted-alpine-<d>",
    "schaffer2-<d>  (2 effective dims + d-2 dummies)",
    "branin2-<d>    (2 effective dims + d-2 dummies)",
];

/// Name patterns accepted by [`make_problem`].
pub fn registry_names() -> &'static [&'static str] {
    REGISTRY_PATTERNS
}

/// Builds a registry problem from a name like `levy-100`, `branin2-500`, or
/// `shifted-alpine-2`. The seed fixes the random shift of shifted variants
/// (drawn on a dedicated substream) so one instance is shared across runs;
/// unshifted problems ignore it.
pub fn make_problem(name: &str, seed: u64) -> Result<Problem, BenchmarkError> {
    make_problem_with(name, seed, false)
}

/// Like [`make_problem`], with optional seed-based permutation of the
/// effective-dimension placement of the padded problems (which otherwise sit
/// at the first two coordinates).
pub fn make_problem_with(
    name: &str,
    seed: u64,
    permute_effective_dims: bool,
) -> Result<Problem, BenchmarkError> {
    let normalized = name.trim().to_ascii_lowercase();
    let (base, dim) = split_name(&normalized)?;
    let registry = REGISTRY_PATTERNS.join(", ");
    let unknown = || BenchmarkError::UnknownProblem {
        name: name.to_string(),
        registry: registry.clone(),
    };

    let problem = match base {
        "sphere" => separable(&normalized, dim, (-5.12, 5.12), functions::sphere, 0.0),
        "levy" => {
            let mut p = separable(&normalized, dim, (-10.0, 10.0), functions::levy, 1.0);
            p.optimum_value = Some(0.0);
            p
        }
        "alpine" => separable(&normalized, dim, (-10.0, 10.0), functions::alpine, 0.0),
        "rastrigin" => separable(&normalized, dim, (-5.12, 5.12), functions::rastrigin, 0.0),
        "ellipsoid" => separable(&normalized, dim, (-5.12, 5.12), functions::ellipsoid, 0.0),
        "shifted-levy" => shifted(
            separable(&normalized, dim, (-10.0, 10.0), functions::levy, 1.0),
            seed,
        ),
        "shifted-alpine" => shifted(
            separable(&normalized, dim, (-10.0, 10.0), functions::alpine, 0.0),
            seed,
        ),
        "schaffer2" => {
            if dim < 2 {
                return Err(BenchmarkError::DimensionTooSmall {
                    name: name.to_string(),
                    min: 2,
                });
            }
            padded_two_dim(
                &normalized,
                dim,
                [(-100.0, 100.0), (-100.0, 100.0)],
                (-100.0, 100.0),
                functions::schaffer2,
                vec![DVector::from_vec(vec![0.0, 0.0])],
                seed,
                permute_effective_dims,
            )
        }
        "branin2" => {
            if dim < 2 {
                return Err(BenchmarkError::DimensionTooSmall {
                    name: name.to_string(),
                    min: 2,
                });
            }
            padded_two_dim(
                &normalized,
                dim,
                [(-5.0, 10.0), (0.0, 15.0)],
                (-5.0, 10.0),
                functions::branin,
                vec![
                    DVector::from_vec(vec![-std::f64::consts::PI, 12.275]),
                    DVector::from_vec(vec![std::f64::consts::PI, 2.275]),
                    DVector::from_vec(vec![9.42478, 2.475]),
                ],
                seed,
                permute_effective_dims,
            )
        }
        _ => return Err(unknown()),
    };
    Ok(problem)
}

fn split_name(name: &str) -> Result<(&str, usize), BenchmarkError> {
    let idx = name
        .rfind('-')
        .ok_or_else(|| BenchmarkError::MissingDimension(name.to_string()))?;
    let (base, dim_part) = name.split_at(idx);
    let dim_part = dim_part[1..].trim_end_matches('d');
    let dim: usize = dim_part
        .parse()
        .ok()
        .filter(|&d| d >= 1)
        .ok_or_else(|| BenchmarkError::MissingDimension(name.to_string()))?;
    Ok((base, dim))
}

/// A separable function applied to all coordinates, optimum at
/// `(opt_coord, …, opt_coord)`.
fn separable(
    name: &str,
    dim: usize,
    bounds: (f64, f64),
    f: fn(&[f64]) -> f64,
    opt_coord: f64,
) -> Problem {
    Problem {
        name: name.to_string(),
        bounds: vec![bounds; dim],
        evaluator: Arc::new(move |x: &DVector<f64>| f(x.as_slice())),
        optima: vec![DVector::from_element(dim, opt_coord)],
        optimum_value: Some(0.0),
        distance_dims: None,
    }
}

/// Shifted variant `f(x + δ)` with `δ_i ~ U(l, u)` drawn once from a
/// dedicated substream of the seed; the box stays that of the original.
fn shifted(original: Problem, seed: u64) -> Problem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(SHIFT_STREAM);
    let delta = DVector::from_fn(original.dim(), |i, _| {
        let (lo, hi) = original.bounds[i];
        lo + f64::unit_uniform(&mut rng) * (hi - lo)
    });
    let inner = original.evaluator.clone();
    let shifted_optima: Vec<DVector<f64>> =
        original.optima.iter().map(|o| o - &delta).collect();
    let delta_for_eval = delta.clone();
    Problem {
        name: format!("shifted-{}", original.name),
        bounds: original.bounds.clone(),
        evaluator: Arc::new(move |x: &DVector<f64>| inner(&(x + &delta_for_eval))),
        optima: shifted_optima,
        optimum_value: original.optimum_value,
        distance_dims: None,
    }
}

/// A 2-dimensional function embedded in `dim` coordinates; the remaining
/// ones are dummies the evaluator ignores.
#[allow(clippy::too_many_arguments)]
fn padded_two_dim(
    name: &str,
    dim: usize,
    eff_bounds: [(f64, f64); 2],
    dummy_bounds: (f64, f64),
    f: fn(f64, f64) -> f64,
    eff_optima: Vec<DVector<f64>>,
    seed: u64,
    permute: bool,
) -> Problem {
    let eff: [usize; 2] = if permute && dim > 2 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(SHIFT_STREAM.wrapping_add(1));
        let mut dims: Vec<usize> = (0..dim).collect();
        dims.shuffle(&mut rng);
        [dims[0], dims[1]]
    } else {
        [0, 1]
    };
    let mut bounds = vec![dummy_bounds; dim];
    bounds[eff[0]] = eff_bounds[0];
    bounds[eff[1]] = eff_bounds[1];
    let optima = eff_optima
        .iter()
        .map(|o| DVector::from_vec(vec![o[0], o[1]]))
        .collect();
    Problem {
        name: name.to_string(),
        bounds,
        evaluator: Arc::new(move |x: &DVector<f64>| f(x[eff[0]], x[eff[1]])),
        optima,
        optimum_value: if name.starts_with("branin") {
            Some(0.39788735772973834)
        } else {
            Some(0.0)
        },
        distance_dims: Some(vec![eff[0], eff[1]]),
    }
}

// ---------------------------------------------------------------------------
// Latin hypercube sampling
// ---------------------------------------------------------------------------

/// `n` points in `[0, 1)^d`: per dimension, one point per stratum
/// `[k/n, (k+1)/n)` in a random stratum order, uniformly jittered within the
/// stratum. Deterministic for a given generator state.
pub fn latin_hypercube<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Vec<DVector<T>> {
    assert!(n >= 1);
    let n_scalar = T::of(n as f64);
    let mut coords: Vec<Vec<T>> = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        coords.push(
            strata
                .into_iter()
                .map(|k| (T::of(k as f64) + T::unit_uniform(rng)) / n_scalar)
                .collect(),
        );
    }
    (0..n)
        .map(|i| DVector::from_fn(dim, |d, _| coords[d][i]))
        .collect()
}

// ---------------------------------------------------------------------------
// Distance diagnostics
// ---------------------------------------------------------------------------

/// Distance traces against the known optimum set.
#[derive(Debug, Clone)]
pub struct DistanceTrace {
    /// Per evaluated point, in evaluation order.
    pub per_eval: Vec<f64>,
    /// Per logged generation, distance of the distribution mean.
    pub per_generation_mean: Vec<f64>,
}

/// Euclidean distance of a point (original coordinates) to the nearest
/// known optimum, restricted to the problem's effective dimensions when it
/// has dummy padding.
pub fn distance_to_nearest_optimum(
    point: &DVector<f64>,
    problem: &Problem,
) -> Result<f64, BenchmarkError> {
    if problem.optima.is_empty() {
        return Err(BenchmarkError::UnknownOptimum);
    }
    let dist = problem
        .optima
        .iter()
        .map(|opt| match &problem.distance_dims {
            Some(dims) => dims
                .iter()
                .enumerate()
                .map(|(k, &d)| (point[d] - opt[k]).powi(2))
                .sum::<f64>()
                .sqrt(),
            None => (point - opt).norm(),
        })
        .fold(f64::INFINITY, f64::min);
    Ok(dist)
}

/// Distances of every evaluated point and of every logged distribution mean
/// to the problem's optimum set.
pub fn distance_to_optimum(
    record: &RunRecord,
    problem: &Problem,
) -> Result<DistanceTrace, BenchmarkError> {
    let per_eval = record
        .evals
        .iter()
        .map(|e| distance_to_nearest_optimum(&e.point, problem))
        .collect::<Result<Vec<_>, _>>()?;
    let per_generation_mean = record
        .generations
        .iter()
        .map(|g| {
            let unit = DVector::from_column_slice(&g.mean_unit);
            distance_to_nearest_optimum(&problem.point_from_unit(&unit), problem)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DistanceTrace {
        per_eval,
        per_generation_mean,
    })
}
