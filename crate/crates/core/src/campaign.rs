//! Multi-start calibration: repeated solver launches with roughness
//! perturbation, tolerance tightening and best-result tracking.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::assembly::{CalibrationState, Problem};
use crate::error::{Error, Result};
use crate::network::PipeCatalog;
use crate::newton::{solve_newton, SolverConfig};
use crate::tensor::solve_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Newton,
    Tensor,
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Outer launches (each restarts from the supplied x₀).
    pub launches: usize,
    /// Sequential solver calls per launch.
    pub inner_runs: usize,
    pub method: Method,
    pub seed: u64,
    /// Std-deviation fraction of the diameter for the small-roughness jitter.
    pub perturb_small_sigma_frac: f64,
    /// Roughnesses above this fraction of the diameter are re-randomised.
    pub threshold_frac: f64,
    /// Multiplier on `eps_f`/`eps_x` applied whenever the best result improves.
    pub tighten_factor: f64,
    pub solver: SolverConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            launches: 13,
            inner_runs: 50,
            method: Method::Tensor,
            seed: 0,
            perturb_small_sigma_frac: 0.0005,
            threshold_frac: 0.05,
            tighten_factor: 0.7,
            solver: SolverConfig::default(),
        }
    }
}

impl CampaignConfig {
    fn validate(&self) -> Result<()> {
        if self.launches == 0 || self.inner_runs == 0 {
            return Err(Error::Solver("launch and run counts must be at least 1".into()));
        }
        for frac in [self.perturb_small_sigma_frac, self.threshold_frac, self.tighten_factor] {
            if !(0.0..1.0).contains(&frac) || frac == 0.0 {
                return Err(Error::Solver("campaign fractions must lie in (0,1)".into()));
            }
        }
        self.solver.validate()
    }
}

/// Result of one launch.
#[derive(Debug, Clone)]
pub struct LaunchRecord {
    pub best_x: DVector<f64>,
    pub best_v: f64,
    /// 1-based index of the run that produced the best result.
    pub best_run: usize,
    /// Mean inner-solver iterations over the runs up to and including the best.
    pub avg_iterations_to_best: f64,
    pub run_iterations: Vec<usize>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub launches: Vec<LaunchRecord>,
    pub best_launch: usize,
    pub best_x: DVector<f64>,
    pub best_v: f64,
}

/// Roughness perturbation between runs: components above
/// `threshold_frac·d` are re-drawn uniformly in `[0, threshold_frac·d]`,
/// the rest receive `𝒩(0, (sigma_frac·d)²)` jitter; heads are carried over
/// unperturbed. The result is clamped to the state bounds.
pub fn perturb(
    x_plus: &CalibrationState,
    pipes: &PipeCatalog,
    cfg: &CampaignConfig,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut x = x_plus.x.clone();
    for j in 0..pipes.n_pipes() {
        let d = pipes.diameter[j];
        let threshold = cfg.threshold_frac * d;
        if x[j] > threshold {
            x[j] = rng.random_range(0.0..threshold);
        } else {
            let normal = Normal::new(0.0, cfg.perturb_small_sigma_frac * d).unwrap();
            x[j] += normal.sample(rng);
        }
    }
    x_plus.clamped(x)
}

/// Run `launches × inner_runs` solver calls. Tolerances tighten whenever the
/// launch best improves; failed inner solves are logged and tolerated.
/// Deterministic for a fixed seed; each launch owns an independent RNG
/// stream, so launches can also run in parallel.
pub fn run_campaign(
    problem: &Problem,
    x0: &CalibrationState,
    cfg: &CampaignConfig,
) -> Result<CampaignResult> {
    cfg.validate()?;
    let launches: Vec<LaunchRecord> = (0..cfg.launches)
        .map(|launch| run_launch(problem, x0, cfg, launch))
        .collect::<Result<_>>()?;
    finish_campaign(launches)
}

/// As [`run_campaign`], distributing launches over `threads` OS threads.
/// Output is merged by launch index, so it is identical to the sequential run.
pub fn run_campaign_parallel(
    problem: &Problem,
    x0: &CalibrationState,
    cfg: &CampaignConfig,
    threads: usize,
) -> Result<CampaignResult> {
    cfg.validate()?;
    if threads <= 1 {
        return run_campaign(problem, x0, cfg);
    }
    let mut slots: Vec<Option<Result<LaunchRecord>>> = (0..cfg.launches).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_mutex = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(cfg.launches) {
            scope.spawn(|| loop {
                let launch = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if launch >= cfg.launches {
                    break;
                }
                let record = run_launch(problem, x0, cfg, launch);
                slots_mutex.lock().unwrap()[launch] = Some(record);
            });
        }
    });
    let launches: Vec<LaunchRecord> = slots
        .into_iter()
        .map(|r| r.expect("every launch filled"))
        .collect::<Result<_>>()?;
    finish_campaign(launches)
}

fn finish_campaign(launches: Vec<LaunchRecord>) -> Result<CampaignResult> {
    let best_launch = launches
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_v.total_cmp(&b.1.best_v))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Solver("no launches completed".into()))?;
    if !launches[best_launch].best_v.is_finite() {
        return Err(Error::Solver("every launch failed".into()));
    }
    Ok(CampaignResult {
        best_x: launches[best_launch].best_x.clone(),
        best_v: launches[best_launch].best_v,
        best_launch,
        launches,
    })
}

fn run_launch(
    problem: &Problem,
    x0: &CalibrationState,
    cfg: &CampaignConfig,
    launch: usize,
) -> Result<LaunchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(launch as u64 + 1);

    let mut solver_cfg = cfg.solver.clone();
    let mut best_x = x0.x.clone();
    let mut best_v = f64::INFINITY;
    let mut best_run = 0;
    let mut run_iterations = Vec::with_capacity(cfg.inner_runs);
    let mut failed = 0;
    let mut start = x0.x.clone();

    for run in 1..=cfg.inner_runs {
        let state = x0.with_x(start.clone());
        let outcome = match cfg.method {
            Method::Newton => solve_newton(&state, &solver_cfg, problem),
            Method::Tensor => solve_tensor(&state, &solver_cfg, problem),
        };
        match outcome {
            Ok(out) => {
                run_iterations.push(out.iterations);
                if out.residual.v < best_v {
                    best_v = out.residual.v;
                    best_x = out.state.x.clone();
                    best_run = run;
                    solver_cfg.eps_f = (solver_cfg.eps_f * cfg.tighten_factor).max(1e-9);
                    solver_cfg.eps_x = (solver_cfg.eps_x * cfg.tighten_factor).max(1e-12);
                }
            }
            Err(e) => {
                run_iterations.push(0);
                failed += 1;
                log::debug!("launch {launch} run {run} failed: {e}");
            }
        }
        if run < cfg.inner_runs {
            let best_state = x0.with_x(best_x.clone());
            start = perturb(&best_state, &problem.pipes, cfg, &mut rng);
        }
    }

    if best_run == 0 {
        return Err(Error::Solver(format!("launch {launch}: every inner run failed")));
    }
    let avg = run_iterations[..best_run]
        .iter()
        .map(|&n| n as f64)
        .sum::<f64>()
        / best_run as f64;
    Ok(LaunchRecord {
        best_x,
        best_v,
        best_run,
        avg_iterations_to_best: avg,
        run_iterations,
        failed_runs: failed,
    })
}
