//! Optimization loops: the CMA-driven meta-algorithm in three variants
//! (plain, trust-scaled, subspace-embedded) plus standard BO, trust-region
//! BO, and plain CMA-ES baselines.
//!
//! All optimizers run on the problem rescaled to the unit box, log evaluated
//! points in original coordinates, never exceed the evaluation budget, and
//! are bit-deterministic for a given seed.

mod baselines;
mod cma_meta;

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::benchmarks::Problem;
use crate::cma::{CmaError, StepPathRate};
use crate::embedding::EmbeddingError;
use crate::gp::{GpError, GpModel, HyperparamBounds, KernelParams, ObservationSet};
use crate::linalg::FactorizationError;
use crate::region::{MembershipRule, RegionError};
use crate::trscale::TrustScaleError;

pub use baselines::{run_baseline_bo, run_baseline_cmaes, run_baseline_turbo, trust_region_sides, uniform_candidates};
pub use cma_meta::{run_cma_baxus, run_cma_bo, run_cma_turbo};

/// Errors from an optimizer run.
#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("budget {budget} and initial design {n0} violate budget > n0 >= 2")]
    BadBudget { budget: usize, n0: usize },
    #[error("surrogate error: {0}")]
    Gp(#[from] GpError),
    #[error("search-distribution error: {0}")]
    Cma(#[from] CmaError),
    #[error("local-region error: {0}")]
    Region(#[from] RegionError),
    #[error("trust-scale error: {0}")]
    Trust(#[from] TrustScaleError),
    #[error("embedding error: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("factorization error: {0}")]
    Factorization(#[from] FactorizationError),
}

/// The available optimization methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CmaBo,
    CmaTurbo,
    CmaBaxus,
    Bo,
    Turbo,
    CmaEs,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::CmaBo,
        Method::CmaTurbo,
        Method::CmaBaxus,
        Method::Bo,
        Method::Turbo,
        Method::CmaEs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::CmaBo => "cma-bo",
            Method::CmaTurbo => "cma-turbo",
            Method::CmaBaxus => "cma-baxus",
            Method::Bo => "bo",
            Method::Turbo => "turbo",
            Method::CmaEs => "cma-es",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cma-bo" => Ok(Method::CmaBo),
            "cma-turbo" => Ok(Method::CmaTurbo),
            "cma-baxus" => Ok(Method::CmaBaxus),
            "bo" => Ok(Method::Bo),
            "turbo" => Ok(Method::Turbo),
            "cma-es" => Ok(Method::CmaEs),
            other => Err(format!(
                "unknown method '{other}'; known: cma-bo, cma-turbo, cma-baxus, bo, turbo, cma-es"
            )),
        }
    }
}

/// Tunables shared by all optimizers. Defaults follow the standard settings;
/// every knob is exposed through the experiment-config file format.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Confidence mass of the hyper-ellipsoid local regions.
    pub alpha: f64,
    /// Candidate-pool sizing `n_c = min(candidates_per_dim · d_c, candidate_cap)`.
    pub candidates_per_dim: usize,
    pub candidate_cap: usize,
    /// Fixed candidate-pool size overriding the rule above.
    pub n_c_override: Option<usize>,
    pub gp_bounds: HyperparamBounds<f64>,
    /// Multi-starts per hyperparameter fit.
    pub gp_restarts: usize,
    /// Refit hyperparameters before every proposal instead of once per
    /// generation.
    pub refit_every_point: bool,
    /// Train the surrogate on all data ever observed instead of the data
    /// since the last restart.
    pub gp_on_global: bool,
    /// For the BO/TuRBO baselines: evaluations between hyperparameter
    /// refits (the factorization is extended every evaluation regardless).
    pub baseline_refit_period: usize,
    pub membership_rule: MembershipRule,
    pub step_path_rate: StepPathRate,
    /// Relative slack for counting an evaluation as an improvement.
    pub improvement_slack: f64,
    /// Count trust-scale success once per generation instead of per point.
    pub success_per_generation: bool,
    /// Overrides for the trust-scale bounds.
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    /// Fan-out bound when growing the embedding target dimension.
    pub bin_size: usize,
    /// Initial target dimension of the embedded variant.
    pub initial_target_dim: usize,
    /// Restart thresholds.
    pub flat_tol: f64,
    pub cond_max: f64,
    pub sigma_min: f64,
    /// Restart when σ exceeds this multiple of its initial value.
    pub sigma_max_factor: f64,
    /// Additive Gaussian observation noise (0 = noiseless).
    pub eval_noise_std: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9973,
            candidates_per_dim: 100,
            candidate_cap: 5000,
            n_c_override: None,
            gp_bounds: HyperparamBounds::default(),
            gp_restarts: 3,
            refit_every_point: false,
            gp_on_global: false,
            baseline_refit_period: 1,
            membership_rule: MembershipRule::SquaredThreshold,
            step_path_rate: StepPathRate::CovarianceRate,
            improvement_slack: 1e-3,
            success_per_generation: false,
            scale_min: None,
            scale_max: None,
            bin_size: 3,
            initial_target_dim: 2,
            flat_tol: 1e-9,
            cond_max: 1e14,
            sigma_min: 1e-8,
            sigma_max_factor: 10.0,
            eval_noise_std: 0.0,
        }
    }
}

impl OptimizerConfig {
    /// Candidate-pool size for a search space of dimension `d_c`.
    pub fn candidate_count(&self, d_c: usize) -> usize {
        self.n_c_override
            .unwrap_or_else(|| (self.candidates_per_dim * d_c).min(self.candidate_cap))
            .max(1)
    }
}

/// Marker on evaluation and generation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// First initial design of the run.
    Init,
    /// Fresh local run after a restart.
    Restart,
    /// The embedding target dimension grew.
    DimIncrease,
}

impl Event {
    pub fn label(&self) -> &'static str {
        match self {
            Event::Init => "init",
            Event::Restart => "restart",
            Event::DimIncrease => "dim-increase",
        }
    }
}

/// One objective evaluation.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    /// 1-based evaluation index.
    pub index: usize,
    /// Evaluated point in original problem coordinates.
    pub point: DVector<f64>,
    pub value: f64,
    /// Minimum value seen up to and including this evaluation.
    pub best_so_far: f64,
    /// Generation counter at evaluation time.
    pub generation: u64,
    /// Trust scale at evaluation time (1 when the method has none).
    pub scale: f64,
    /// Embedding target dimension, for the embedded method.
    pub target_dim: Option<usize>,
    pub event: Option<Event>,
}

/// Per-generation state snapshot, logged before the distribution update.
#[derive(Debug, Clone)]
pub struct GenerationRecord {
    pub index: u64,
    /// Distribution mean in unit working coordinates.
    pub mean_unit: Vec<f64>,
    pub sigma: f64,
    pub scale: f64,
    pub target_dim: Option<usize>,
    /// Semi-axis lengths of the local region (descending).
    pub radii: Vec<f64>,
    pub threshold_sq: f64,
    /// For 2-dimensional regions: effective covariance entries
    /// `(c00, c01, c11)` in unit coordinates, enough to redraw the ellipse.
    pub ellipse: Option<[f64; 3]>,
    pub event: Option<Event>,
    pub wall_ms: f64,
}

/// Full log of one optimizer run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub problem: String,
    pub seed: u64,
    pub budget: usize,
    pub n0: usize,
    pub evals: Vec<EvalRecord>,
    pub generations: Vec<GenerationRecord>,
    /// Experiment-level configuration snapshot, filled by the runner.
    pub config_snapshot: String,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn best_value(&self) -> Option<f64> {
        self.evals.last().map(|e| e.best_so_far)
    }

    pub fn best_point(&self) -> Option<&DVector<f64>> {
        let mut best: Option<&EvalRecord> = None;
        for e in &self.evals {
            if best.map_or(true, |b| e.value < b.value) {
                best = Some(e);
            }
        }
        best.map(|e| &e.point)
    }
}

/// Runs `method` on `problem` with a fresh generator seeded from `seed`.
pub fn run(
    method: Method,
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<RunRecord, OptimizerError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noisy;
    let problem = if config.eval_noise_std > 0.0 {
        noisy = problem.clone().with_noise(config.eval_noise_std, seed);
        &noisy
    } else {
        problem
    };
    let mut record = match method {
        Method::CmaBo => run_cma_bo(problem, budget, n0, config, &mut rng)?,
        Method::CmaTurbo => run_cma_turbo(problem, budget, n0, config, &mut rng)?,
        Method::CmaBaxus => run_cma_baxus(problem, budget, n0, config, &mut rng)?,
        Method::Bo => run_baseline_bo(problem, budget, n0, config, &mut rng)?,
        Method::Turbo => run_baseline_turbo(problem, budget, n0, config, &mut rng)?,
        Method::CmaEs => run_baseline_cmaes(problem, budget, n0, config, &mut rng)?,
    };
    record.seed = seed;
    Ok(record)
}

use rand::SeedableRng;

// ---------------------------------------------------------------------------
// Shared run-loop machinery
// ---------------------------------------------------------------------------

/// Budget-guarded evaluation logger shared by all optimizer loops.
struct Recorder<'a> {
    problem: &'a Problem,
    unit: Problem,
    budget: usize,
    evals: Vec<EvalRecord>,
    best: f64,
    started: Instant,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, budget: usize) -> Self {
        Self {
            problem,
            unit: problem.to_unit(),
            budget,
            evals: Vec::with_capacity(budget),
            best: f64::INFINITY,
            started: Instant::now(),
        }
    }

    fn used(&self) -> usize {
        self.evals.len()
    }

    fn exhausted(&self) -> bool {
        self.evals.len() >= self.budget
    }

    fn remaining(&self) -> usize {
        self.budget - self.evals.len()
    }

    fn best(&self) -> f64 {
        self.best
    }

    /// Evaluates a unit-coordinate point, logs it, and returns its value.
    /// Panics if called past the budget; loops must check first.
    fn evaluate(
        &mut self,
        unit_point: &DVector<f64>,
        generation: u64,
        scale: f64,
        target_dim: Option<usize>,
        event: Option<Event>,
    ) -> f64 {
        assert!(!self.exhausted(), "evaluation past budget");
        let value = self.unit.evaluate(unit_point);
        if value < self.best {
            self.best = value;
        }
        self.evals.push(EvalRecord {
            index: self.evals.len() + 1,
            point: self.problem.point_from_unit(unit_point),
            value,
            best_so_far: self.best,
            generation,
            scale,
            target_dim,
            event,
        });
        value
    }

    fn finish(
        self,
        method: Method,
        n0: usize,
        generations: Vec<GenerationRecord>,
    ) -> RunRecord {
        RunRecord {
            method,
            problem: self.problem.name.clone(),
            seed: 0,
            budget: self.budget,
            n0,
            evals: self.evals,
            generations,
            config_snapshot: String::new(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

fn check_budget(budget: usize, n0: usize) -> Result<(), OptimizerError> {
    if n0 < 2 || budget < n0 {
        return Err(OptimizerError::BadBudget { budget, n0 });
    }
    Ok(())
}

/// Whether `value` strictly improves on `best` beyond a relative slack.
fn improves(value: f64, best: f64, slack: f64) -> bool {
    value < best - slack * best.abs()
}

/// Fits (or refits) the surrogate on `data`, warm-starting from the last
/// fitted hyperparameters when available.
fn fit_surrogate<R: Rng + ?Sized>(
    data: &[(DVector<f64>, f64)],
    config: &OptimizerConfig,
    warm: &mut Option<KernelParams<f64>>,
    rng: &mut R,
) -> Result<GpModel<f64>, OptimizerError> {
    let inputs: Vec<DVector<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
    let outputs: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
    let obs = ObservationSet::new(inputs, outputs)?;
    let model = GpModel::fit_warm(obs, &config.gp_bounds, config.gp_restarts, warm.as_ref(), rng)?;
    *warm = Some(model.params().clone());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::make_problem;

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            let parsed: Method = m.name().parse().unwrap();
            assert_eq!(parsed, m);
        }
        assert!("sgd".parse::<Method>().is_err());
    }

    #[test]
    fn candidate_count_rule() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.candidate_count(100), 5000);
        assert_eq!(cfg.candidate_count(20), 2000);
        assert_eq!(cfg.candidate_count(2), 200);
        let mut over = cfg.clone();
        over.n_c_override = Some(50);
        assert_eq!(over.candidate_count(100), 50);
    }

    #[test]
    fn bad_budgets_are_rejected() {
        let p = make_problem("sphere-2", 0).unwrap();
        let cfg = OptimizerConfig::default();
        assert!(matches!(
            run(Method::CmaBo, &p, 10, 20, &cfg, 0),
            Err(OptimizerError::BadBudget { .. })
        ));
        assert!(matches!(
            run(Method::Bo, &p, 10, 1, &cfg, 0),
            Err(OptimizerError::BadBudget { .. })
        ));
    }
}
