//! The CMA-driven meta-loop: a search distribution defines a confidence
//! ellipsoid, a Thompson-sampling BO step picks points inside it, and the
//! distribution is updated from the evaluated generation. Three variants:
//! plain regions, trust-scaled regions, and trust-scaled regions in an
//! adaptively growing embedded subspace.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use crate::benchmarks::{latin_hypercube, Problem};
use crate::cma::{
    should_restart, CmaParams, RankedPopulation, RestartConfig, SearchDistribution, UpdateOptions,
};
use crate::embedding::Embedding;
use crate::gp::{thompson_select, KernelParams};
use crate::region::LocalRegion;
use crate::trscale::TrustScale;

use super::{
    check_budget, fit_surrogate, improves, Event, GenerationRecord, Method, OptimizerConfig,
    OptimizerError, Recorder, RunRecord,
};

/// Plain variant: unit-scale ellipsoid regions, restarts on the
/// distribution criteria only.
pub fn run_cma_bo<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    run_ellipsoid_meta(problem, budget, n0, config, rng, false)
}

/// Trust-scaled variant: the region is scaled by a success-driven factor
/// whose collapse also restarts the local run at a new random location.
pub fn run_cma_turbo<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<RunRecord, OptimizerError> {
    run_ellipsoid_meta(problem, budget, n0, config, rng, true)
}

fn apply_scale_bounds(mut trust: TrustScale<f64>, config: &OptimizerConfig) -> TrustScale<f64> {
    if let Some(lo) = config.scale_min {
        trust.min_scale = lo;
    }
    if let Some(hi) = config.scale_max {
        trust.max_scale = hi;
    }
    trust
}

fn restart_thresholds(
    dim: usize,
    lambda: usize,
    sigma0: f64,
    config: &OptimizerConfig,
) -> RestartConfig<f64> {
    let mut rc = RestartConfig::defaults(dim, lambda, sigma0);
    rc.flat_tol = config.flat_tol;
    rc.cond_max = config.cond_max;
    rc.sigma_min = config.sigma_min;
    rc.sigma_max = config.sigma_max_factor * sigma0;
    rc
}

fn run_ellipsoid_meta<R: Rng + ?Sized>(
    problem: &Problem,
    budget: usize,
    n0: usize,
    config: &OptimizerConfig,
    rng: &mut R,
    trust_scaled: bool,
) -> Result<RunRecord, OptimizerError> {
    check_budget(budget, n0)?;
    let d = problem.dim();
    let params = CmaParams::<f64>::defaults(d)?;
    let lambda = params.lambda;
    let t_max = ((budget - n0) / lambda) as u64;
    let opts = UpdateOptions {
        step_path_rate: config.step_path_rate,
    };
    let unit_bounds = vec![(0.0, 1.0); d];
    let n_c = config.candidate_count(d);

    let mut rec = Recorder::new(problem, budget);
    let mut gens: Vec<GenerationRecord> = Vec::new();
    let mut archive: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut warm: Option<KernelParams<f64>> = None;
    let mut t: u64 = 0;
    let mut first_run = true;

    'outer: while !rec.exhausted() && t <= t_max {
        let run_event = if first_run { Event::Init } else { Event::Restart };
        first_run = false;

        let draw = n0.min(rec.remaining());
        let mut omega: Vec<(DVector<f64>, f64)> = Vec::with_capacity(draw);
        for p in latin_hypercube::<f64, _>(draw, d, rng) {
            let y = rec.evaluate(&p, t, 1.0, None, Some(run_event));
            omega.push((p.clone(), y));
            archive.push((p, y));
        }
        if rec.exhausted() {
            break;
        }

        let mut dist = SearchDistribution::from_evaluated_points(1.0, &omega);
        let restart_cfg = restart_thresholds(d, lambda, dist.step_size, config);
        let mut trust =
            trust_scaled.then(|| apply_scale_bounds(TrustScale::<f64>::new(d, 1), config));
        let mut local_best = omega
            .iter()
            .map(|(_, y)| *y)
            .fold(f64::INFINITY, f64::min);
        let mut history: Vec<f64> = Vec::new();
        let mut pending_event = Some(run_event);

        while t <= t_max && !rec.exhausted() {
            let gen_started = Instant::now();
            let l_scale = trust.as_ref().map_or(1.0, |tr| tr.scale);
            let region =
                LocalRegion::from_distribution(&dist, l_scale, config.alpha, config.membership_rule)?;
            let fit_set: &[(DVector<f64>, f64)] =
                if config.gp_on_global { &archive } else { &omega };
            let mut gp = fit_surrogate(fit_set, config, &mut warm, rng)?;

            let gen_best_before = local_best;
            let mut gen_points = Vec::with_capacity(lambda);
            let mut gen_values = Vec::with_capacity(lambda);
            let mut trust_restart = false;
            for i in 0..lambda {
                if rec.exhausted() {
                    break;
                }
                if config.refit_every_point && i > 0 {
                    let fit_set: &[(DVector<f64>, f64)] =
                        if config.gp_on_global { &archive } else { &omega };
                    gp = fit_surrogate(fit_set, config, &mut warm, rng)?;
                }
                let candidates = region.sample_candidates(&unit_bounds, n_c, rng);
                let sel = thompson_select(&gp, &candidates, rng)?;
                let x = candidates[sel].clone();
                let y = rec.evaluate(&x, t, l_scale, None, None);
                let improved = improves(y, local_best, config.improvement_slack);
                if y < local_best {
                    local_best = y;
                }
                gp.append(x.clone(), y)?;
                omega.push((x.clone(), y));
                archive.push((x.clone(), y));
                gen_points.push(x);
                gen_values.push(y);
                if let Some(tr) = trust.as_mut() {
                    if !config.success_per_generation {
                        *tr = tr.record(improved)?;
                        if tr.needs_restart {
                            trust_restart = true;
                            break;
                        }
                    }
                }
            }

            let ellipse = (d == 2).then(|| {
                let c = region.effective_covariance();
                [c[(0, 0)], c[(0, 1)], c[(1, 1)]]
            });
            gens.push(GenerationRecord {
                index: t,
                mean_unit: dist.mean.iter().copied().collect(),
                sigma: dist.step_size,
                scale: l_scale,
                target_dim: None,
                radii: region.radii(),
                threshold_sq: region.threshold_sq(),
                ellipse,
                event: pending_event.take(),
                wall_ms: gen_started.elapsed().as_secs_f64() * 1e3,
            });

            if gen_points.len() == lambda {
                if let Some(tr) = trust.as_mut() {
                    if config.success_per_generation {
                        let gen_best = gen_values.iter().copied().fold(f64::INFINITY, f64::min);
                        *tr =
                            tr.record(improves(gen_best, gen_best_before, config.improvement_slack))?;
                        if tr.needs_restart {
                            trust_restart = true;
                        }
                    }
                }
                let pop = RankedPopulation::new(gen_points, gen_values)?;
                dist = dist.update(&params, &pop, &opts)?;
            }
            t += 1;
            history.push(local_best);
            if trust_restart || should_restart(&dist, &history, &restart_cfg) {
                continue 'outer;
            }
        }
        break;
    }

    let method = if trust_scaled {
        Method::CmaTurbo
    } else {
        Method::CmaBo
    };
    Ok(rec.finish(method, n0, gens))
}

// ---------------------------------------------------------------------------
// Embedded variant
// ---------------------------------------------------------------------------

/// How the next local run of the embedded variant chooses its embedding.
enum NextEmbedding {
    /// Fresh random embedding at the configured initial target dimension.
    InitialRandom,
    /// Identity embedding at the full input dimension (after the growth
    /// schedule exhausted a full-dimensional run).
    IdentityFull,
}

/// `x ∈ [0,1]^d → [-1,1]^d`; the embedded variant works in centered
/// coordinates so the signed embedding is center-preserving.
fn centered(p: &DVector<f64>) -> DVector<f64> {
    p.map(|v| 2.0 * v - 1.0)
}

/// `[-1,1] → [0,1]` per coordinate.
fn to_unit01(p: &DVector<f64>) -> DVector<f64> {
    p.map(|v| (v + 1.0) * 0.5)
}

/// Subspace-embedded variant: the CMA distribution lives in the full input
/// space, the BO step runs in the embedded target space on the projected
/// distribution, and trust-scale collapse grows the target dimension
/// (transferring observations exactly) until it reaches the full dimension.
///
/// The surrogate always trains on the local dataset carried through
/// embedding transfers; `gp_on_global` has no effect here because earlier
/// restarts' observations have no target-space representation.
pub fn run_cma_baxus<R: Rng + ?Sized>(
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
    let mut next_embedding = NextEmbedding::InitialRandom;

    'outer: while !rec.exhausted() && t <= t_max {
        let run_event = if first_run { Event::Init } else { Event::Restart };
        first_run = false;

        let mut emb = match next_embedding {
            NextEmbedding::InitialRandom => {
                let d_v0 = config.initial_target_dim.clamp(1, d);
                if d_v0 == d {
                    Embedding::identity(d, config.bin_size)
                } else {
                    Embedding::random(d, d_v0, config.bin_size, rng)?
                }
            }
            NextEmbedding::IdentityFull => Embedding::identity(d, config.bin_size),
        };
        next_embedding = NextEmbedding::InitialRandom;
        let mut warm: Option<KernelParams<f64>> = None;

        let draw = n0.min(rec.remaining());
        let mut init_centered: Vec<(DVector<f64>, f64)> = Vec::with_capacity(draw);
        let mut omega_v: Vec<(DVector<f64>, f64)> = Vec::with_capacity(draw);
        for p01 in latin_hypercube::<f64, _>(draw, d, rng) {
            let y = rec.evaluate(&p01, t, 1.0, Some(emb.target_dim()), Some(run_event));
            let x_c = centered(&p01);
            omega_v.push((emb.project_down(&x_c), y));
            init_centered.push((x_c, y));
        }
        if rec.exhausted() {
            break;
        }

        // Centered box has side length 2, so the initial step size is 0.6.
        let mut dist = SearchDistribution::from_evaluated_points(2.0, &init_centered);
        let restart_cfg = restart_thresholds(d, lambda, dist.step_size, config);
        let mut trust =
            apply_scale_bounds(TrustScale::<f64>::new(emb.target_dim(), 1), config);
        let mut local_best = omega_v
            .iter()
            .map(|(_, y)| *y)
            .fold(f64::INFINITY, f64::min);
        let mut history: Vec<f64> = Vec::new();
        let mut pending_event = Some(run_event);

        while t <= t_max && !rec.exhausted() {
            let gen_started = Instant::now();
            let d_v = emb.target_dim();
            let l_scale = trust.scale;
            let (mean_v, cov_v) = emb.project_distribution(&dist.mean, &dist.covariance());
            let region = LocalRegion::from_moments(
                mean_v,
                cov_v * (l_scale * l_scale),
                config.alpha,
                config.membership_rule,
            )?;
            let fit_set: Vec<(DVector<f64>, f64)> = omega_v
                .iter()
                .map(|(v, y)| (to_unit01(v), *y))
                .collect();
            let mut gp = fit_surrogate(&fit_set, config, &mut warm, rng)?;

            let n_c = config.candidate_count(d_v);
            let v_bounds = vec![(-1.0, 1.0); d_v];
            let mut gen_points = Vec::with_capacity(lambda);
            let mut gen_values = Vec::with_capacity(lambda);
            let mut trust_restart = false;
            for i in 0..lambda {
                if rec.exhausted() {
                    break;
                }
                if config.refit_every_point && i > 0 {
                    let fit_set: Vec<(DVector<f64>, f64)> = omega_v
                        .iter()
                        .map(|(v, y)| (to_unit01(v), *y))
                        .collect();
                    gp = fit_surrogate(&fit_set, config, &mut warm, rng)?;
                }
                let candidates_v = region.sample_candidates(&v_bounds, n_c, rng);
                let candidates_gp: Vec<DVector<f64>> =
                    candidates_v.iter().map(to_unit01).collect();
                let sel = thompson_select(&gp, &candidates_gp, rng)?;
                let v = candidates_v[sel].clone();
                let x_c = emb.project_up(&v);
                let x01 = to_unit01(&x_c);
                let y = rec.evaluate(&x01, t, l_scale, Some(d_v), None);
                let improved = improves(y, local_best, config.improvement_slack);
                if y < local_best {
                    local_best = y;
                }
                gp.append(to_unit01(&v), y)?;
                omega_v.push((v, y));
                gen_points.push(x_c);
                gen_values.push(y);
                trust = trust.record(improved)?;
                if trust.needs_restart {
                    trust_restart = true;
                    break;
                }
            }

            gens.push(GenerationRecord {
                index: t,
                mean_unit: to_unit01(&dist.mean).iter().copied().collect(),
                sigma: dist.step_size,
                scale: l_scale,
                target_dim: Some(d_v),
                radii: region.radii(),
                threshold_sq: region.threshold_sq(),
                ellipse: None,
                event: pending_event.take(),
                wall_ms: gen_started.elapsed().as_secs_f64() * 1e3,
            });

            if gen_points.len() == lambda {
                let pop = RankedPopulation::new(gen_points, gen_values)?;
                dist = dist.update(&params, &pop, &opts)?;
            }
            t += 1;
            history.push(local_best);

            if trust_restart {
                if emb.target_dim() < d {
                    // Grow the target dimension in place: transfer the local
                    // dataset and reset the trust scale for the new space.
                    let values: Vec<f64> = omega_v.iter().map(|(_, y)| *y).collect();
                    let coords: Vec<DVector<f64>> =
                        omega_v.iter().map(|(v, _)| v.clone()).collect();
                    let (grown, transferred) = emb.increase_dim(&coords, rng)?;
                    emb = grown;
                    omega_v = transferred.into_iter().zip(values).collect();
                    warm = None;
                    trust = apply_scale_bounds(TrustScale::<f64>::new(emb.target_dim(), 1), config);
                    pending_event = Some(Event::DimIncrease);
                    continue;
                }
                next_embedding = NextEmbedding::IdentityFull;
                continue 'outer;
            }
            if should_restart(&dist, &history, &restart_cfg) {
                continue 'outer;
            }
        }
        break;
    }

    Ok(rec.finish(Method::CmaBaxus, n0, gens))
}
