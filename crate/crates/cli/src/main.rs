//! `pipecal` command line: calibrate a network from measurement sets, run
//! forward simulations, self-check the derivative and tensor machinery, or
//! factor a conic section.
//!
//! Exit codes: 0 success, 2 input error, 3 campaign-wide failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use pipecal::assembly::{jacobian, residual, CalibrationState, Problem};
use pipecal::campaign::{run_campaign_parallel, CampaignConfig, Method};
use pipecal::conic::{classify, factor, is_real_factorizable, Conic, DEFAULT_TOL};
use pipecal::network::{load_demands, load_measurements, load_network, measurements_to_csv};
use pipecal::newton::SolverConfig;
use pipecal::report::{build_report, text_table};

#[derive(Parser)]
#[command(name = "pipecal", version, about = "Pipe roughness identification for water networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Newton,
    Tensor,
}

#[derive(Subcommand)]
enum Command {
    /// Identify roughnesses and unmeasured heads with a multi-start campaign.
    Calibrate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum, default_value = "tensor")]
        method: MethodArg,
        #[arg(long, default_value_t = 13)]
        launches: usize,
        #[arg(long, default_value_t = 50)]
        inner_runs: usize,
        /// RNG seed; never taken from the clock.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial roughness as a fraction of each diameter.
        #[arg(long, default_value_t = 0.01)]
        initial_roughness_frac: f64,
        /// Residual tolerance (m³/s) before tightening.
        #[arg(long, default_value_t = 1e-7)]
        eps_f: f64,
        #[arg(long, default_value_t = 1e-9)]
        eps_x: f64,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        /// Threads distributing launches; output is merged by launch index.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the steady state for given roughnesses and write measurement CSV.
    Simulate {
        #[arg(long)]
        network: PathBuf,
        /// JSON file with the per-pipe roughness (array or {"roughness_m": [...]}).
        #[arg(long)]
        roughness_file: PathBuf,
        /// Demand patterns in the measurement CSV format (y_h_m ignored).
        #[arg(long)]
        demands_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full inner pressure heads per set.
        #[arg(long)]
        ground_truth_out: Option<PathBuf>,
    },
    /// Diagnostics: finite-difference checks, tensor identities, root values.
    Check {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Evaluate at this state (JSON: {"roughness_m": [...], "heads_m": [[...]]}).
        #[arg(long)]
        at: Option<PathBuf>,
        /// Also verify the Hadamard form against finite-difference Hessians.
        #[arg(long)]
        hessian_bruteforce: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify and factor the conic a x² + 2h xy + b y² + 2f x + 2g y + c.
    #[command(allow_negative_numbers = true)]
    FactorConic {
        a: f64,
        h: f64,
        b: f64,
        f: f64,
        g: f64,
        c: f64,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Environment overrides for the fluid constants.
fn apply_fluid_overrides(pipes: &mut pipecal::network::PipeCatalog) -> anyhow::Result<()> {
    let mut changed = false;
    let mut read = |name: &str, field: &mut f64| -> anyhow::Result<()> {
        if let Ok(text) = std::env::var(name) {
            *field = text
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("{name} is not a number: {text}"))?;
            changed = true;
        }
        Ok(())
    };
    let mut rho = pipes.density;
    let mut eta = pipes.viscosity;
    let mut g = pipes.gravity;
    read("PIPECAL_RHO", &mut rho)?;
    read("PIPECAL_ETA", &mut eta)?;
    read("PIPECAL_G", &mut g)?;
    if changed {
        *pipes = pipecal::network::PipeCatalog::new(
            pipes.length.clone(),
            pipes.diameter.clone(),
            g,
            rho,
            eta,
        )?;
        log::info!("fluid constants overridden: rho={rho}, eta={eta}, g={g}");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Calibrate {
            network,
            measurements,
            method,
            launches,
            inner_runs,
            seed,
            initial_roughness_frac,
            eps_f,
            eps_x,
            max_iter,
            parallel,
            out,
        } => {
            let (topo, mut pipes) = load_network(&network)?;
            apply_fluid_overrides(&mut pipes)?;
            let sets = load_measurements(&measurements, &topo)?;
            let problem = Problem::new(topo, pipes, sets)?;
            let x0 = initial_state(&problem, initial_roughness_frac)?;
            let cfg = CampaignConfig {
                launches,
                inner_runs,
                method: match method {
                    MethodArg::Newton => Method::Newton,
                    MethodArg::Tensor => Method::Tensor,
                },
                seed,
                solver: SolverConfig {
                    eps_f,
                    eps_x,
                    max_iter,
                    scaling_enabled: matches!(method, MethodArg::Newton),
                    ..SolverConfig::default()
                },
                ..CampaignConfig::default()
            };
            let result = match run_campaign_parallel(&problem, &x0, &cfg, parallel) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("campaign failed: {e}");
                    return Ok(ExitCode::from(3));
                }
            };
            let report = build_report(&problem, &cfg, &result);
            print!("{}", text_table(&report));
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                eprintln!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            network,
            roughness_file,
            demands_file,
            out,
            ground_truth_out,
        } => {
            let (topo, mut pipes) = load_network(&network)?;
            apply_fluid_overrides(&mut pipes)?;
            let eps = read_roughness(&roughness_file, topo.n_l)?;
            let demands = load_demands(&demands_file, &topo)?;
            let (q, h_s): (Vec<_>, Vec<_>) = demands.into_iter().unzip();
            let (sets, truth) =
                pipecal::forward::generate_measurements(&eps, &q, &h_s, &topo, &pipes)?;
            std::fs::write(&out, measurements_to_csv(&topo, &sets))?;
            eprintln!("wrote {} sets to {}", sets.len(), out.display());
            if let Some(path) = ground_truth_out {
                let rows: Vec<Vec<f64>> = truth.iter().map(|h| h.iter().copied().collect()).collect();
                std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check {
            network,
            measurements,
            at,
            hessian_bruteforce,
            seed,
        } => {
            run_check(network, measurements, at, hessian_bruteforce, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::FactorConic { a, h, b, f, g, c } => {
            let conic = Conic::new(a, h, b, f, g, c);
            println!("conic: {a}x^2 + {}xy + {b}y^2 + {}x + {}y + {c}", 2.0 * h, 2.0 * f, 2.0 * g);
            println!("delta = {:.6e}, delta_hat = {:.6e}", conic.delta(), conic.delta_hat());
            println!("classification: {:?}", classify(&conic));
            println!("real factorization exists: {}", is_real_factorizable(&conic));
            match factor(&conic, DEFAULT_TOL) {
                Ok(pairs) if pairs.is_empty() => println!("no feasible sign triple"),
                Ok(pairs) => {
                    for lp in pairs {
                        let fmt = |l: &[num_complex::Complex64; 3]| {
                            format!("({:.6} x + {:.6} y + {:.6})", l[0], l[1], l[2])
                        };
                        println!(
                            "signs ({:+},{:+},{:+}): nu = {:.6}  {} {}",
                            lp.signs[0],
                            lp.signs[1],
                            lp.signs[2],
                            lp.nu,
                            fmt(&lp.first),
                            fmt(&lp.second)
                        );
                    }
                }
                Err(e) => println!("not factorizable: {e}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_roughness(path: &PathBuf, n_l: usize) -> anyhow::Result<DVector<f64>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum RoughnessFile {
        Bare(Vec<f64>),
        Keyed { roughness_m: Vec<f64> },
    }
    let text = std::fs::read_to_string(path)?;
    let parsed: RoughnessFile = serde_json::from_str(&text)?;
    let values = match parsed {
        RoughnessFile::Bare(v) => v,
        RoughnessFile::Keyed { roughness_m } => roughness_m,
    };
    anyhow::ensure!(
        values.len() == n_l,
        "roughness file has {} entries, network has {n_l} pipes",
        values.len()
    );
    Ok(DVector::from_vec(values))
}

/// Initial state: ε₀ as a diameter fraction, heads from per-set steady solves
/// at ε₀ (clamped into the head bounds).
fn initial_state(problem: &Problem, rough_frac: f64) -> anyhow::Result<CalibrationState> {
    let eps0 = DVector::from_fn(problem.topo.n_l, |j, _| rough_frac * problem.pipes.diameter[j]);
    let n_free = problem.topo.n_j - problem.topo.n_p;
    let mut x = DVector::zeros(problem.n_unknowns());
    x.rows_mut(0, problem.topo.n_l).copy_from(&eps0);
    for (i, set) in problem.sets.iter().enumerate() {
        let sol = pipecal::forward::solve_steady(
            &eps0,
            &set.q,
            &set.h_s,
            &problem.topo,
            &problem.pipes,
            None,
        )?;
        for (r, &node) in problem.topo.unsensed.iter().enumerate() {
            x[problem.topo.n_l + i * n_free + r] = sol.heads[node];
        }
    }
    let state = CalibrationState::new(problem, x)?;
    Ok(state.with_x(state.clamped(state.x.clone())))
}

fn run_check(
    network: Option<PathBuf>,
    measurements: Option<PathBuf>,
    at: Option<PathBuf>,
    hessian_bruteforce: bool,
    seed: u64,
) -> anyhow::Result<()> {
    use pipecal::tensor::{tensor_jacobian, tensor_residual, SearchDirection, TensorContext};
    use rand::{Rng, SeedableRng};

    let (topo, mut pipes, sets) = match (&network, &measurements) {
        (Some(net), Some(meas)) => {
            let (topo, pipes) = load_network(net)?;
            let sets = load_measurements(meas, &topo)?;
            (topo, pipes, sets)
        }
        _ => {
            println!("no network given; generating a seeded random instance (seed {seed})");
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let (topo, pipes) = pipecal::synth::random_network(&mut rng, 3, 4, 2)?;
            let eps = pipecal::synth::random_roughness(&mut rng, &pipes, 0.005, 0.04);
            let demands: Vec<DVector<f64>> =
                (0..2).map(|_| pipecal::synth::random_demands(&mut rng, topo.n_j)).collect();
            let heads: Vec<DVector<f64>> =
                (0..2).map(|_| DVector::from_element(1, 100.0 + rng.random_range(0.0..5.0))).collect();
            let (sets, _) =
                pipecal::forward::generate_measurements(&eps, &demands, &heads, &topo, &pipes)?;
            (topo, pipes, sets)
        }
    };
    apply_fluid_overrides(&mut pipes)?;
    let problem = Problem::new(topo, pipes, sets)?;

    let state = match at {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            let reference: pipecal::benchmark::ReferenceSolution = serde_json::from_str(&text)?;
            let mut x = DVector::zeros(problem.n_unknowns());
            for (j, &r) in reference.roughness_m.iter().enumerate() {
                x[j] = r;
            }
            let n_free = problem.topo.n_j - problem.topo.n_p;
            for (i, row) in reference.heads_m.iter().enumerate() {
                for (r, &h) in row.iter().enumerate() {
                    x[problem.topo.n_l + i * n_free + r] = h;
                }
            }
            CalibrationState::new(&problem, x)?
        }
        None => initial_state(&problem, 0.01)?,
    };

    // derivative families against 5-point central differences
    let fd_err = derivative_fd_errors(&problem, &state)?;
    println!("max relative FD error of [p_eps, p_dh, p_eps2, p_epsdh, p_dh2]:");
    println!(
        "  [{:.3e}, {:.3e}, {:.3e}, {:.3e}, {:.3e}]  (tolerance 1e-5)",
        fd_err[0], fd_err[1], fd_err[2], fd_err[3], fd_err[4]
    );

    // tensor identities at d = 0
    let rep = residual(&state, &problem)?;
    let ctx = TensorContext::at(&state, &problem)?;
    let zero = SearchDirection::zeros(&problem);
    let tr = tensor_residual(&zero, &ctx, &problem);
    let dr = (&tr.stacked - &rep.f).amax() / rep.f.amax().max(1e-300);
    println!("tensor_residual(0) vs f(x): relative deviation {dr:.3e}");
    let j = jacobian(&state, &problem)?;
    let jt = tensor_jacobian(&zero, &ctx, &problem);
    let dj = (&jt - &j).amax() / j.amax().max(1e-300);
    println!("tensor_jacobian(0) vs J(x): relative deviation {dj:.3e}");
    println!("v(x) = {:.6e} m3/s ({:.6e} l/s)", rep.v, rep.v * 1e3);

    // rank diagnostic at the 1e-10 threshold
    let svd = j.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    println!(
        "jacobian rank {rank}/{} (singular values {:.3e} .. {:.3e})",
        problem.n_unknowns(),
        svd.singular_values.min(),
        smax
    );

    // root-condition values
    let diag = pipecal::factorization::root_diagnostic(&state, &problem)?;
    for (i, per_pipe) in diag.iter().enumerate() {
        let max1 = per_pipe.iter().map(|(a, _)| a.abs()).fold(0.0_f64, f64::max);
        let max2 = per_pipe.iter().map(|(_, b)| b.abs()).fold(0.0_f64, f64::max);
        println!("root diagnostic set {}: max |Delta-expr| = {max1:.3e}, max |Delta-hat-expr| = {max2:.3e}", i + 1);
    }

    if hessian_bruteforce {
        let err = hessian_bruteforce_error(&problem, &state)?;
        println!("Hadamard form vs finite-difference Hessians: relative deviation {err:.3e} (tolerance 1e-4)");
    }
    Ok(())
}

fn derivative_fd_errors(problem: &Problem, state: &CalibrationState) -> anyhow::Result<[f64; 5]> {
    use pipecal::flow::{derivatives_scalar, flow};
    let central5 = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| {
        (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
    };
    let mut err = [0.0_f64; 5];
    let eps = state.eps(problem).into_owned();
    for i in 0..problem.n_m() {
        let dh = problem.delta_h(state, i)?;
        for j in 0..problem.topo.n_l {
            let pipe = problem.pipes.pipe(j);
            let [p_eps, p_dh, p_eps2, p_epsdh, p_dh2] = derivatives_scalar(eps[j], dh[j], &pipe)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let he = 1e-7 * eps[j].abs().max(1.0);
            let hd = 1e-7 * dh[j].abs().max(1.0);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            err[0] = err[0].max(rel(p_eps, central5(&|e| flow(e, dh[j], &pipe), eps[j], he)));
            err[1] = err[1].max(rel(p_dh, central5(&|d| flow(eps[j], d, &pipe), dh[j], hd)));
            let d_eps = |e: f64| derivatives_scalar(e, dh[j], &pipe).unwrap()[0];
            let d_dh = |d: f64| derivatives_scalar(eps[j], d, &pipe).unwrap();
            err[2] = err[2].max(rel(p_eps2, central5(&d_eps, eps[j], he)));
            err[3] = err[3].max(rel(p_epsdh, central5(&|d| d_dh(d)[0], dh[j], hd)));
            err[4] = err[4].max(rel(p_dh2, central5(&|d| d_dh(d)[1], dh[j], hd)));
        }
    }
    Ok(err)
}

/// Assemble the quadratic model from finite-difference Hessians of the
/// residual and compare with the Hadamard form at a random direction.
fn hessian_bruteforce_error(problem: &Problem, state: &CalibrationState) -> anyhow::Result<f64> {
    use pipecal::tensor::{tensor_residual, SearchDirection, TensorContext};
    let n = problem.n_unknowns();
    let m = problem.n_equations();
    let f0 = residual(state, problem)?.f;
    let step = |p: usize| 1e-4 * state.x[p].abs().max(1e-3);
    let eval = |x: DVector<f64>| -> anyhow::Result<DVector<f64>> {
        Ok(residual(&state.with_x(x), problem)?.f)
    };
    // FD Jacobian
    let mut jfd = nalgebra::DMatrix::zeros(m, n);
    for p in 0..n {
        let h = 1e-7 * state.x[p].abs().max(1e-4);
        let mut xp = state.x.clone();
        let mut xm = state.x.clone();
        xp[p] += h;
        xm[p] -= h;
        jfd.set_column(p, &((eval(xp)? - eval(xm)?) / (2.0 * h)));
    }
    // FD Hessians, one per residual component
    let mut hess = vec![nalgebra::DMatrix::zeros(n, n); m];
    for p in 0..n {
        for q in 0..=p {
            let (hp, hq) = (step(p), step(q));
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
            let second = (eval(xpp)? - eval(xpm)? - eval(xmp)? + eval(xmm)?) / (4.0 * hp * hq);
            for r in 0..m {
                hess[r][(p, q)] = second[r];
                hess[r][(q, p)] = second[r];
            }
        }
    }
    let mut rng_state = 0x2545f4914f6cdd1d_u64;
    let mut next = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
        (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let d = DVector::from_fn(n, |p, _| next() * state.x[p].abs().max(1e-4) * 0.2);
    let brute = DVector::from_fn(m, |r, _| {
        f0[r] + (jfd.row(r) * &d)[0] + 0.5 * (d.transpose() * &hess[r] * &d)[0]
    });
    let ctx = TensorContext::at(state, problem)?;
    let analytic = tensor_residual(&SearchDirection::new(d, problem)?, &ctx, problem).stacked;
    Ok((&brute - &analytic).amax() / analytic.amax().max(1e-300))
}
