//! Comparison baselines: global Thompson-sampling BO, hyper-rectangle
//! trust-region BO, and plain CMA-ES with restarts.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use crate::benchmarks::{latin_hypercube, Problem};
use crate::cma::{
    should_restart, CmaParams, RankedPopulation, SearchDistribution, UpdateOptions,
};
use crate::gp::{thompson_select, KernelParams};
use crate::linalg;
use crate::scalar::Scalar;
use crate::trscale::TrustScale;

use super::cma_meta_support::{apply_scale_bounds, restart_thresholds};
use super::{
    check_budget, fit_surrogate, improves, Event, GenerationRecord, Method, OptimizerConfig,
    OptimizerError, Recorder, RunRecord,
};

/// `n` points drawn uniformly from the unit box.
pub fn uniform_candidates<R: Rng + ?Sized>(
    dim: usize,
    n: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| f64::unit_uniform(rng)))
        .collect()
}

/// Trust-region side lengths: the base length scaled per dimension by the
/// GP lengthscales while preserving the hyper-volume, so the product of the
/// sides is `scale^d` before box intersection.
pub fn trust_region_sides(scale: f64, lengthscales: &DVector<f64>) -> Vec<f64> {
    let d = lengthscales.len();
    let log_geo_mean = lengthscales.iter().map(|l| l.ln()).sum::<f64>() / d as f64;
    let geo_mean = log_geo_mean.exp();
    lengthscales.iter().map(|l| scale * l / geo_mean).collect()
}

/// Standard BO: a global surrogate over all observed data with sequential
/// Thompson-sampling selection over uniform candidate pools. No restarts.
pub fn run_baseline_bo<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    check_budget(budget, n0)?;
    let d = problem.dim();
    let n_c = config.candidate_count(d);
    let mut rec = Recorder::new(problem, budget);
    let mut archive: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut warm: Option<KernelParams<f64>> = None;

    let draw = n0.min(rec.remaining());
    for p in latin_hypercube::<f64, _>(draw, d, rng) {
        let y = rec.evaluate(&p, 0, 1.0, None, Some(Event::Init));
        archive.push((p, y));
    }
    if rec.exhausted() {
        return Ok(rec.finish(Method::Bo, n0, Vec::new()));
    }

    let mut gp = fit_surrogate(&archive, config, &mut warm, rng)?;
    let mut since_refit = 0usize;
    while !rec.exhausted() {
        if since_refit >= config.baseline_refit_period.max(1) {
            gp = fit_surrogate(&archive, config, &mut warm, rng)?;
            since_refit = 0;
        }
        let candidates = uniform_candidates(d, n_c, rng);
        let sel = thompson_select(&gp, &candidates, rng)?;
        let x = candidates[sel].clone();
        let y = rec.evaluate(&x, 0, 1.0, None, None);
        gp.append(x.clone(), y)?;
        archive.push((x, y));
        since_refit += 1;
    }
    Ok(rec.finish(Method::Bo, n0, Vec::new()))
}

/// Trust-region BO: a hyper-rectangle centered at the incumbent with
/// lengthscale-shaped, volume-preserving sides, the success/failure scale
/// dynamics, and restarts from a fresh design when the scale collapses.
pub fn run_baseline_turbo<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    check_budget(budget, n0)?;
    let d = problem.dim();
    let n_c = config.candidate_count(d);
    let mut rec = Recorder::new(problem, budget);
    let mut archive: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut warm: Option<KernelParams<f64>> = None;
    let mut run_idx: u64 = 0;
    let mut first_run = true;

    while !rec.exhausted() {
        let run_event = if first_run { Event::Init } else { Event::Restart };
        first_run = false;

        let draw = n0.min(rec.remaining());
        let mut omega: Vec<(DVector<f64>, f64)> = Vec::with_capacity(draw);
        for p in latin_hypercube::<f64, _>(draw, d, rng) {
            let y = rec.evaluate(&p, run_idx, 1.0, None, Some(run_event));
            omega.push((p.clone(), y));
            archive.push((p, y));
        }
        if rec.exhausted() {
            break;
        }

        let mut trust = apply_scale_bounds(TrustScale::<f64>::new(d, 1), config);
        let (mut incumbent, mut local_best) = omega
            .iter()
            .fold((omega[0].0.clone(), f64::INFINITY), |(bx, bv), (x, y)| {
                if *y < bv {
                    (x.clone(), *y)
                } else {
                    (bx, bv)
                }
            });

        let mut gp = fit_surrogate(
            if config.gp_on_global { &archive } else { &omega },
            config,
            &mut warm,
            rng,
        )?;
        let mut since_refit = 0usize;
        while !rec.exhausted() && !trust.needs_restart {
            if since_refit >= config.baseline_refit_period.max(1) {
                gp = fit_surrogate(
                    if config.gp_on_global { &archive } else { &omega },
                    config,
                    &mut warm,
                    rng,
                )?;
                since_refit = 0;
            }
            let sides = trust_region_sides(trust.scale, &gp.params().lengthscales);
            let tr_bounds: Vec<(f64, f64)> = (0..d)
                .map(|i| {
                    let half = sides[i] * 0.5;
                    ((incumbent[i] - half).max(0.0), (incumbent[i] + half).min(1.0))
                })
                .collect();
            let candidates: Vec<DVector<f64>> = (0..n_c)
                .map(|_| {
                    DVector::from_fn(d, |i, _| {
                        let (lo, hi) = tr_bounds[i];
                        lo + f64::unit_uniform(rng) * (hi - lo)
                    })
                })
                .collect();
            let sel = thompson_select(&gp, &candidates, rng)?;
            let x = candidates[sel].clone();
            let y = rec.evaluate(&x, run_idx, trust.scale, None, None);
            let improved = improves(y, local_best, config.improvement_slack);
            if y < local_best {
                local_best = y;
                incumbent = x.clone();
            }
            gp.append(x.clone(), y)?;
            omega.push((x.clone(), y));
            archive.push((x, y));
            since_refit += 1;
            trust = trust.record(improved)?;
        }
        run_idx += 1;
    }
    Ok(rec.finish(Method::Turbo, n0, Vec::new()))
}

/// Plain CMA-ES: random sampling from the search distribution (clipped to
/// the box), no surrogate, with the standard restart criteria.
pub fn run_baseline_cmaes<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    check_budget(budget, n0)?;
    let d = problem.dim();
    let params = CmaParams::<f64>::defaults(d)?;
    let lambda = params.lambda;
    let t_max = ((budget - n0) / lambda) as u64;
    let opts = UpdateOptions {
        step_path_rate: config.step_path_rate,
    };
    let mut rec = Recorder::new(problem, budget);
    let mut gens: Vec<GenerationRecord> = Vec::new();
    let mut t: u64 = 0;
    let mut first_run = true;

    'outer: while !rec.exhausted() && t <= t_max {
        let run_event = if first_run { Event::Init } else { Event::Restart };
        first_run = false;

        let draw = n0.min(rec.remaining());
        let mut init: Vec<(DVector<f64>, f64)> = Vec::with_capacity(draw);
        for p in latin_hypercube::<f64, _>(draw, d, rng) {
            let y = rec.evaluate(&p, t, 1.0, None, Some(run_event));
            init.push((p, y));
        }
        if rec.exhausted() {
            break;
        }

        let mut dist = SearchDistribution::from_evaluated_points(1.0, &init);
        let restart_cfg = restart_thresholds(d, lambda, dist.step_size, config);
        let mut local_best = init.iter().map(|(_, y)| *y).fold(f64::INFINITY, f64::min);
        let mut history: Vec<f64> = Vec::new();
        let mut pending_event = Some(run_event);

        while t <= t_max && !rec.exhausted() {
            let gen_started = Instant::now();
            let (factor, _) = linalg::cholesky_with_jitter(&dist.shape)?;
            let mut gen_points = Vec::with_capacity(lambda);
            let mut gen_values = Vec::with_capacity(lambda);
            for _ in 0..lambda {
                if rec.exhausted() {
                    break;
                }
                let z = DVector::from_fn(d, |_, _| f64::standard_normal(rng));
                let mut x = &dist.mean + &factor * z * dist.step_size;
                for v in x.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                let y = rec.evaluate(&x, t, 1.0, None, None);
                if y < local_best {
                    local_best = y;
                }
                gen_points.push(x);
                gen_values.push(y);
            }

            let (eigs, _) = linalg::sym_eigen(&dist.shape);
            let radii: Vec<f64> = eigs
                .iter()
                .map(|&e| dist.step_size * e.max(0.0).sqrt())
                .collect();
            let ellipse = (d == 2).then(|| {
                let c = dist.covariance();
                [c[(0, 0)], c[(0, 1)], c[(1, 1)]]
            });
            gens.push(GenerationRecord {
                index: t,
                mean_unit: dist.mean.iter().copied().collect(),
                sigma: dist.step_size,
                scale: 1.0,
                target_dim: None,
                radii,
                threshold_sq: 1.0,
                ellipse,
                event: pending_event.take(),
                wall_ms: gen_started.elapsed().as_secs_f64() * 1e3,
            });

            if gen_points.len() == lambda {
                let pop = RankedPopulation::new(gen_points, gen_values)?;
                dist = dist.update(&params, &pop, &opts)?;
            }
            t += 1;
            history.push(local_best);
            if should_restart(&dist, &history, &restart_cfg) {
                continue 'outer;
            }
        }
        break;
    }
    Ok(rec.finish(Method::CmaEs, n0, gens))
}
