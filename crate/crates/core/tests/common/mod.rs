//! Shared oracles and instance builders for the integration tests. Oracle
//! code stays independent of the implementation paths it checks: derivatives
//! come from finite-difference stencils and tensor models from explicit
//! per-component Hessians.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pipecal::assembly::{residual, CalibrationState, Problem};
use pipecal::flow::FlowDerivativeBundle;
use pipecal::forward::generate_measurements;
use pipecal::network::MeasurementSet;
use pipecal::synth;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// 4th-order central difference of a scalar function.
pub fn central5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// A feasible random calibration instance: connected network, planted
/// roughness, forward-simulated measurement sets, and the planted state.
pub struct PlantedInstance {
    pub problem: Problem,
    pub planted: CalibrationState,
    pub eps: DVector<f64>,
}

/// Build a random instance whose measurements come from the forward solver at
/// a planted roughness; retries seeds until every pipe flow is turbulent.
pub fn planted_instance(
    seed: u64,
    n_j: usize,
    n_l: usize,
    n_p: usize,
    n_m: usize,
) -> PlantedInstance {
    for attempt in 0..300 {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(attempt * 1_000_003));
        let Ok((topo, pipes)) = synth::random_network(&mut rng, n_j, n_l, n_p) else {
            continue;
        };
        let eps = synth::random_roughness(&mut rng, &pipes, 0.005, 0.04);
        let demands: Vec<DVector<f64>> =
            (0..n_m).map(|_| synth::random_demands(&mut rng, n_j)).collect();
        let heads: Vec<DVector<f64>> = (0..n_m)
            .map(|_| DVector::from_element(1, 100.0 + rng.random_range(0.0..8.0)))
            .collect();
        let Ok((sets, truth)) = generate_measurements(&eps, &demands, &heads, &topo, &pipes)
        else {
            continue;
        };
        // keep only clearly turbulent instances with well-separated heads;
        // finite-difference oracles need |Δh| comfortably away from the kink
        let all_turbulent = sets.iter().enumerate().all(|(i, set)| {
            pipecal::forward::solve_steady(&eps, &set.q, &set.h_s, &topo, &pipes, None)
                .map(|s| {
                    s.turbulent.iter().all(|&t| t)
                        && s.delta_h.iter().all(|&dh| dh.abs() >= 0.05)
                })
                .unwrap_or(false)
                && truth[i].iter().all(|h| h.is_finite())
        });
        if !all_turbulent {
            continue;
        }
        let Ok(problem) = Problem::new(topo, pipes, sets) else {
            continue;
        };
        let n_free = problem.topo.n_j - problem.topo.n_p;
        let mut x = DVector::zeros(problem.n_unknowns());
        x.rows_mut(0, problem.topo.n_l).copy_from(&eps);
        for i in 0..n_m {
            for (r, &node) in problem.topo.unsensed.iter().enumerate() {
                x[problem.topo.n_l + i * n_free + r] = truth[i][node];
            }
        }
        let Ok(planted) = CalibrationState::new(&problem, x) else {
            continue;
        };
        // the planted state must satisfy the bounds and have nonzero head loss
        if residual(&planted, &problem).is_err() {
            continue;
        }
        // independence of the measurement sets (full column rank at the
        // spec's diagnostic threshold) is an assumption of the problem class
        if problem.n_equations() >= problem.n_unknowns() {
            let j = pipecal::assembly::jacobian(&planted, &problem).unwrap();
            let svd = j.svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-10 * smax)
                .count();
            if rank < problem.n_unknowns() {
                continue;
            }
        }
        return PlantedInstance {
            problem,
            planted,
            eps,
        };
    }
    panic!("no feasible random instance found for seed {seed}");
}

/// Finite-difference Jacobian of the stacked residual.
pub fn fd_jacobian(state: &CalibrationState, problem: &Problem) -> DMatrix<f64> {
    let n = problem.n_unknowns();
    let m = problem.n_equations();
    let mut j = DMatrix::zeros(m, n);
    for p in 0..n {
        let h = 1e-7 * state.x[p].abs().max(1e-4);
        let mut xp = state.x.clone();
        let mut xm = state.x.clone();
        xp[p] += h;
        xm[p] -= h;
        let fp = residual(&state.with_x(xp), problem).unwrap().f;
        let fm = residual(&state.with_x(xm), problem).unwrap().f;
        j.set_column(p, &((fp - fm) / (2.0 * h)));
    }
    j
}

/// Richardson-extrapolated finite-difference Hessians of every residual
/// component (the mixed cross stencil at h and h/2).
pub fn fd_hessians(state: &CalibrationState, problem: &Problem) -> Vec<DMatrix<f64>> {
    let n = problem.n_unknowns();
    let m = problem.n_equations();
    let eval = |x: DVector<f64>| residual(&state.with_x(x), problem).unwrap().f;
    let entry = |p: usize, q: usize, hp: f64, hq: f64| -> DVector<f64> {
        let mut xpp = state.x.clone();
        let mut xpm = state.x.clone();
        let mut xmp = state.x.clone();
        let mut xmm = state.x.clone();
        xpp[p] += hp;
        xpp[q] += hq;
        xpm[p] += hp;
        xpm[q] -= hq;
        xmp[p] -= hp;
        xmp[q] += hq;
        xmm[p] -= hp;
        xmm[q] -= hq;
        (eval(xpp) - eval(xpm) - eval(xmp) + eval(xmm)) / (4.0 * hp * hq)
    };
    // head steps stay well below the smallest |Δh| kept by the instance
    // builders; roughness steps stay below the 1/ℓ curvature scale
    let n_l = problem.topo.n_l;
    let step = |p: usize| {
        if p < n_l {
            1e-4 * state.x[p].abs().max(1e-3)
        } else {
            1e-5 * state.x[p].abs().max(1.0)
        }
    };
    let mut hess = vec![DMatrix::zeros(n, n); m];
    for p in 0..n {
        for q in 0..=p {
            let (hp, hq) = (step(p), step(q));
            let coarse = entry(p, q, hp, hq);
            let fine = entry(p, q, 0.5 * hp, 0.5 * hq);
            let richardson = (fine.scale(4.0) - coarse) / 3.0;
            for r in 0..m {
                hess[r][(p, q)] = richardson[r];
                hess[r][(q, p)] = richardson[r];
            }
        }
    }
    hess
}

/// The brute-force tensor model `f + J d + ½ [dᵀ H_r d]_r` with everything
/// from finite differences.
pub fn brute_force_tensor(
    state: &CalibrationState,
    problem: &Problem,
    d: &DVector<f64>,
) -> DVector<f64> {
    let f0 = residual(state, problem).unwrap().f;
    let j = fd_jacobian(state, problem);
    let hess = fd_hessians(state, problem);
    DVector::from_fn(problem.n_equations(), |r, _| {
        f0[r] + (j.row(r) * d)[0] + 0.5 * (d.transpose() * &hess[r] * d)[0]
    })
}

/// A modest random direction scaled to the state (20 % on roughness, cm on
/// heads) — large enough to exercise the quadratic term, small enough for the
/// finite-difference oracle to stay accurate.
pub fn modest_direction(rng: &mut StdRng, state: &CalibrationState, n_l: usize) -> DVector<f64> {
    DVector::from_fn(state.x.len(), |p, _| {
        let scale = if p < n_l {
            0.2 * state.x[p].abs().max(1e-4)
        } else {
            0.05
        };
        rng.random_range(-scale..scale)
    })
}

/// Planted separator scalars for one pipe: all six components drawn away from
/// zero, with `f̃ = c·e/b` when a vanishing sub-determinant is requested.
#[derive(Debug, Clone, Copy)]
pub struct PlantedSeparators {
    pub b: f64,
    pub c: f64,
    pub e: f64,
    pub ftil: f64,
    pub v: f64,
    pub w: f64,
}

impl PlantedSeparators {
    /// With `force_delta_hat_zero` the scalars are small integers with
    /// `f̃ = c·e/b` exact in floating point, so the vanishing sub-determinant
    /// holds bit-exactly (a rounded near-zero would be amplified to ~1e-8 by
    /// the square root in the pair formulas).
    pub fn random(rng: &mut StdRng, force_delta_hat_zero: bool) -> Self {
        let draw = |rng: &mut StdRng| {
            let mag = rng.random_range(0.3..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        let draw_int = |rng: &mut StdRng, hi: i32| {
            let mag = rng.random_range(1..=hi) as f64;
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        if force_delta_hat_zero {
            let b = draw_int(rng, 2);
            let k = draw_int(rng, 3);
            let e = draw_int(rng, 3);
            Self {
                b,
                c: b * k,
                e,
                ftil: k * e,
                v: draw_int(rng, 3),
                w: draw_int(rng, 3),
            }
        } else {
            Self {
                b: draw(rng),
                c: draw(rng),
                e: draw(rng),
                ftil: draw(rng),
                v: draw(rng),
                w: draw(rng),
            }
        }
    }

    /// The quadratic-coefficient values this separator set produces.
    pub fn coefficients(&self) -> (f64, f64, f64, f64, f64, f64) {
        let p_eps2 = 2.0 * self.b * self.e;
        let p_dh2 = 2.0 * self.c * self.ftil;
        let p_epsdh = -(self.b * self.ftil + self.c * self.e);
        let p_eps = self.b * self.w + self.e * self.v;
        let p_dh = -(self.c * self.w + self.ftil * self.v);
        let f0 = self.v * self.w;
        (p_eps, p_dh, p_eps2, p_epsdh, p_dh2, f0)
    }
}

/// A synthetic degenerate instance on a real network: planted separators per
/// (set, pipe) define the derivative bundles, and `f`, `α` are the unique
/// decomposition of the planted `f̄_0` over image ⊕ kernel.
pub struct DegenerateInstance {
    pub problem: Problem,
    pub bundles: Vec<FlowDerivativeBundle>,
    pub f: DVector<f64>,
    pub alpha: Vec<DVector<f64>>,
    pub planted: Vec<Vec<PlantedSeparators>>,
}

pub fn degenerate_instance(
    seed: u64,
    n_j: usize,
    n_l: usize,
    n_p: usize,
    n_m: usize,
    force_delta_hat_zero: bool,
) -> DegenerateInstance {
    let mut rng = StdRng::seed_from_u64(seed);
    let (topo, pipes) = synth::random_network(&mut rng, n_j, n_l, n_p).unwrap();
    degenerate_instance_on(topo, pipes, n_m, force_delta_hat_zero, &mut rng)
}

/// As [`degenerate_instance`] but on a caller-supplied topology.
pub fn degenerate_instance_on(
    topo: pipecal::network::NetworkTopology,
    pipes: pipecal::network::PipeCatalog,
    n_m: usize,
    force_delta_hat_zero: bool,
    rng: &mut StdRng,
) -> DegenerateInstance {
    let n_l = topo.n_l;
    // dummy sets only fix the dimensions; bundles and f are injected
    let sets: Vec<MeasurementSet> = (0..n_m)
        .map(|i| MeasurementSet {
            y_h: DVector::zeros(topo.n_p),
            q: DVector::zeros(topo.n_j),
            h_s: DVector::from_element(topo.n_s, 100.0),
            id: i + 1,
        })
        .collect();
    let problem = Problem::new(topo, pipes, sets).unwrap();

    let mut bundles = Vec::new();
    let mut f = DVector::zeros(n_m * problem.topo.n_j);
    let mut alpha = Vec::new();
    let mut planted = Vec::new();
    let s_t = problem.topo.cycle_f().transpose();
    for i in 0..n_m {
        let per_pipe: Vec<PlantedSeparators> = (0..n_l)
            .map(|_| PlantedSeparators::random(rng, force_delta_hat_zero))
            .collect();
        let mut bundle = FlowDerivativeBundle {
            p_eps: DVector::zeros(n_l),
            p_dh: DVector::zeros(n_l),
            p_eps2: DVector::zeros(n_l),
            p_epsdh: DVector::zeros(n_l),
            p_dh2: DVector::zeros(n_l),
        };
        let mut f0_target = DVector::zeros(n_l);
        for (j, ps) in per_pipe.iter().enumerate() {
            let (p_eps, p_dh, p_eps2, p_epsdh, p_dh2, f0) = ps.coefficients();
            bundle.p_eps[j] = p_eps;
            bundle.p_dh[j] = p_dh;
            bundle.p_eps2[j] = p_eps2;
            bundle.p_epsdh[j] = p_epsdh;
            bundle.p_dh2[j] = p_dh2;
            f0_target[j] = f0;
        }
        // decompose f̄_0 = diag(c_l)AᵀL⁻¹f − Sᵀα: A annihilates the kernel part
        let fi = problem.topo.a() * &f0_target;
        let proj = problem.project_to_pipes(&fi);
        let kernel_part = &proj - &f0_target;
        let a_i = if s_t.ncols() > 0 {
            let sol = s_t
                .clone()
                .svd(true, true)
                .solve(&kernel_part, 1e-13)
                .expect("kernel decomposition");
            let check = (&s_t * &sol - &kernel_part).norm();
            assert!(check < 1e-10, "kernel decomposition failed: {check}");
            sol
        } else {
            assert!(kernel_part.norm() < 1e-10);
            DVector::zeros(0)
        };
        f.rows_mut(i * problem.topo.n_j, problem.topo.n_j).copy_from(&fi);
        alpha.push(a_i);
        bundles.push(bundle);
        planted.push(per_pipe);
    }
    DegenerateInstance {
        problem,
        bundles,
        f,
        alpha,
        planted,
    }
}

/// Tree network with full sensing (n_p = n_j, n_m = 1) and planted roughness,
/// the well-posed recovery setting.
pub fn tree_instance(seed: u64, n_j: usize) -> PlantedInstance {
    planted_instance(seed, n_j, n_j, n_j, 1)
}

/// The bundled benchmark as a `Problem` with a given measurement file choice.
pub fn benchmark_problem(hires: bool) -> Problem {
    let (topo, pipes) = pipecal::benchmark::three_cycle_network();
    let sets = if hires {
        pipecal::benchmark::hires_sets()
    } else {
        pipecal::benchmark::table2_sets()
    };
    Problem::new(topo, pipes, sets).unwrap()
}

/// Assemble a calibration state for a problem from roughness plus per-set head rows.
pub fn state_from_parts(
    problem: &Problem,
    eps: &DVector<f64>,
    heads: &[Vec<f64>],
) -> CalibrationState {
    let n_free = problem.topo.n_j - problem.topo.n_p;
    let mut x = DVector::zeros(problem.n_unknowns());
    x.rows_mut(0, problem.topo.n_l).copy_from(eps);
    for (i, row) in heads.iter().enumerate() {
        for (r, &h) in row.iter().enumerate() {
            x[problem.topo.n_l + i * n_free + r] = h;
        }
    }
    CalibrationState::new(problem, x).unwrap()
}
