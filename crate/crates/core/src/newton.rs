//! Newton-Raphson baseline: least-squares search direction, backtracking step
//! length, optional variable scaling and bound projection.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{residual, CalibrationState, Problem, ResidualReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Residual tolerance on `v(x)` (m³/s).
    pub eps_f: f64,
    /// Step tolerance on `‖μ Δx‖`.
    pub eps_x: f64,
    pub max_iter: usize,
    /// Step lengths below this reject the iteration.
    pub mu_min: f64,
    /// Diagonal column scaling by `max(|x0|, 1e-4)`; Newton only, the tensor
    /// path never scales.
    pub scaling_enabled: bool,
    /// Step-length reduction factor in (0, 1).
    pub backtrack_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_f: 1e-7,
            eps_x: 1e-9,
            max_iter: 300,
            mu_min: 1e-8,
            scaling_enabled: true,
            backtrack_factor: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_f <= 0.0 || self.eps_x <= 0.0 || self.mu_min <= 0.0 {
            return Err(Error::Solver("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.backtrack_factor) || self.backtrack_factor == 0.0 {
            return Err(Error::Solver("backtrack_factor must lie in (0,1)".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Solver("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `v(x) < eps_f`.
    Converged,
    /// `‖μ Δx‖ < eps_x`.
    SmallStep,
    /// No step length above `mu_min` decreased the residual.
    StepRejected,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: CalibrationState,
    pub residual: ResidualReport,
    pub iterations: usize,
    pub termination: Termination,
}

/// Least-squares Newton direction `Δx = −(JᵀJ)⁻¹Jᵀf` through the normal
/// equations; errors when `J` loses column rank at machine level. Severe
/// ill-conditioning (the benchmark sits around 1e11 at its published start)
/// is passed through: the squared condition number then limits the step
/// accuracy, matching the baseline's observed behaviour.
pub fn newton_direction(j: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let ncols = j.ncols();
    let svd = j.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= 1e-14 * smax {
        return Err(Error::Singular {
            message: format!("Jacobian column rank below {ncols}"),
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    let jtj = j.transpose() * j;
    let rhs = -(j.transpose() * f);
    let step = jtj
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| jtj.lu().solve(&rhs))
        .ok_or_else(|| Error::Singular {
            message: "normal equations are numerically singular".into(),
            condition: (smax / smin).powi(2),
        })?;
    Ok(step)
}

/// Newton-Raphson with backtracking on the L1 residual. Iterates are
/// projected to the bounds inside the line search, so accepted steps decrease
/// `v` monotonically.
pub fn solve_newton(
    x0: &CalibrationState,
    cfg: &SolverConfig,
    problem: &Problem,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let scale = if cfg.scaling_enabled {
        Some(DVector::from_fn(x0.x.len(), |i, _| x0.x[i].abs().max(1e-4)))
    } else {
        None
    };
    solve_with(x0, cfg, problem, |state, rep, problem| {
        let j = crate::assembly::jacobian(state, problem)?;
        match &scale {
            Some(s) => {
                let mut js = j;
                for (c, &sc) in s.iter().enumerate() {
                    js.column_mut(c).scale_mut(sc);
                }
                let dz = newton_direction(&js, &rep.f)?;
                Ok(dz.component_mul(s))
            }
            None => newton_direction(&j, &rep.f),
        }
    })
}

/// Shared outer loop: direction provider + backtracking + projection.
pub(crate) fn solve_with(
    x0: &CalibrationState,
    cfg: &SolverConfig,
    problem: &Problem,
    mut direction: impl FnMut(&CalibrationState, &ResidualReport, &Problem) -> Result<DVector<f64>>,
) -> Result<SolveOutcome> {
    let mut state = x0.with_x(x0.clamped(x0.x.clone()));
    let mut rep = residual(&state, problem)?; // domain error at x0 is fatal
    if !rep.v.is_finite() {
        return Err(Error::Solver("non-finite residual at the initial state".into()));
    }

    let mut iterations = 0;
    let termination = loop {
        if rep.v < cfg.eps_f {
            break Termination::Converged;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }
        let step = direction(&state, &rep, problem)?;
        iterations += 1;

        let mut mu = 1.0;
        let mut accepted = None;
        while mu >= cfg.mu_min {
            let candidate = state.clamped(&state.x + mu * &step);
            if let Ok(cand_rep) = residual(&state.with_x(candidate.clone()), problem) {
                if cand_rep.v.is_finite() && cand_rep.v < rep.v {
                    accepted = Some((candidate, cand_rep, mu));
                    break;
                }
            }
            mu *= cfg.backtrack_factor;
        }
        match accepted {
            Some((x, new_rep, mu)) => {
                let step_norm = (mu * &step).norm();
                state = state.with_x(x);
                rep = new_rep;
                if step_norm < cfg.eps_x {
                    break Termination::SmallStep;
                }
            }
            None => break Termination::StepRejected,
        }
    };
    Ok(SolveOutcome {
        state,
        residual: rep,
        iterations,
        termination,
    })
}
