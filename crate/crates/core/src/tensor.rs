//! Second-order (tensor) search direction: the Hadamard-form residual of the
//! quadratic model, its analytic Jacobian, a damped least-squares inner
//! solver and the outer iteration.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{jacobian_from_bundles, kernel_rhs, residual, CalibrationState, Problem, ResidualReport};
use crate::error::{Error, Result};
use crate::flow::FlowDerivativeBundle;
use crate::newton::{newton_direction, solve_with, SolveOutcome, SolverConfig};

/// Search direction partitioned like the state: `d = [d_ε; d_hN^(1); …]`.
#[derive(Debug, Clone)]
pub struct SearchDirection {
    pub d: DVector<f64>,
    n_l: usize,
    n_free: usize,
}

impl SearchDirection {
    pub fn new(d: DVector<f64>, problem: &Problem) -> Result<Self> {
        if d.len() != problem.n_unknowns() {
            return Err(Error::Dimension(format!(
                "direction has {} entries, problem needs {}",
                d.len(),
                problem.n_unknowns()
            )));
        }
        Ok(Self {
            d,
            n_l: problem.topo.n_l,
            n_free: problem.topo.n_j - problem.topo.n_p,
        })
    }

    pub fn zeros(problem: &Problem) -> Self {
        Self {
            d: DVector::zeros(problem.n_unknowns()),
            n_l: problem.topo.n_l,
            n_free: problem.topo.n_j - problem.topo.n_p,
        }
    }

    pub fn d_eps(&self) -> nalgebra::DVectorView<'_, f64> {
        self.d.rows(0, self.n_l)
    }

    pub fn d_hn(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.d.rows(self.n_l + i * self.n_free, self.n_free)
    }
}

/// Everything the quadratic model needs at a fixed outer iterate: derivative
/// bundles and the zero-order term `diag(c_l)AᵀL⁻¹f^(i)` per set.
#[derive(Debug, Clone)]
pub struct TensorContext {
    pub bundles: Vec<FlowDerivativeBundle>,
    /// Per-set zero-order term (the `r_f` slices).
    pub rf: Vec<DVector<f64>>,
}

impl TensorContext {
    pub fn at(state: &CalibrationState, problem: &Problem) -> Result<Self> {
        let rep = residual(state, problem)?;
        Self::from_parts(problem.bundles_at(state)?, &rep, problem)
    }

    pub fn from_parts(
        bundles: Vec<FlowDerivativeBundle>,
        rep: &ResidualReport,
        problem: &Problem,
    ) -> Result<Self> {
        let (rf, _) = kernel_rhs(rep, problem, None)?;
        Ok(Self { bundles, rf })
    }
}

/// Residual of the quadratic model, per set and stacked.
#[derive(Debug, Clone)]
pub struct TensorResidual {
    pub per_set: Vec<DVector<f64>>,
    pub stacked: DVector<f64>,
}

/// Per-pipe quadratic-model vector `m̄^(i)(d)`:
/// `½ p_ε²⊙d_ε² − d_ε⊙p_εΔh⊙t + ½ p_Δh²⊙t² + p_ε⊙d_ε − p_Δh⊙t + diag(c_l)AᵀL⁻¹f^(i)`
/// with `t = AᵀC̄_hᵀ d_hN^(i)`. At `d = 0` the image `A·m̄` is exactly `f`.
pub fn tensor_residual_bar(
    d: &SearchDirection,
    ctx: &TensorContext,
    problem: &Problem,
    set: usize,
) -> DVector<f64> {
    let b = &ctx.bundles[set];
    let d_eps = d.d_eps().into_owned();
    let t = if d.n_free > 0 {
        problem.topo.at_cbar_t() * d.d_hn(set)
    } else {
        DVector::zeros(problem.topo.n_l)
    };
    let mut m = ctx.rf[set].clone();
    m += 0.5 * b.p_eps2.component_mul(&d_eps).component_mul(&d_eps);
    m -= d_eps.component_mul(&b.p_epsdh).component_mul(&t);
    m += 0.5 * b.p_dh2.component_mul(&t).component_mul(&t);
    m += b.p_eps.component_mul(&d_eps);
    m -= b.p_dh.component_mul(&t);
    m
}

/// `A·m̄^(i)` for every set.
pub fn tensor_residual(d: &SearchDirection, ctx: &TensorContext, problem: &Problem) -> TensorResidual {
    let a = problem.topo.a();
    let n_j = problem.topo.n_j;
    let mut per_set = Vec::with_capacity(problem.n_m());
    let mut stacked = DVector::zeros(problem.n_equations());
    for i in 0..problem.n_m() {
        let m = a * tensor_residual_bar(d, ctx, problem, i);
        stacked.rows_mut(i * n_j, n_j).copy_from(&m);
        per_set.push(m);
    }
    TensorResidual { per_set, stacked }
}

/// Analytic Jacobian of the stacked tensor residual with respect to `d`.
/// At `d = 0` it equals the system Jacobian exactly.
pub fn tensor_jacobian(d: &SearchDirection, ctx: &TensorContext, problem: &Problem) -> DMatrix<f64> {
    let topo = &problem.topo;
    let a = topo.a();
    let n_free = topo.n_j - topo.n_p;
    let mut j = DMatrix::zeros(problem.n_equations(), problem.n_unknowns());
    let d_eps = d.d_eps().into_owned();
    for (i, b) in ctx.bundles.iter().enumerate() {
        let rows = i * topo.n_j;
        let t = if n_free > 0 {
            topo.at_cbar_t() * d.d_hn(i)
        } else {
            DVector::zeros(topo.n_l)
        };
        // ∂m̄/∂d_ε = diag(p_ε²⊙d_ε + p_ε − p_εΔh⊙t)
        let diag_eps = b.p_eps2.component_mul(&d_eps) + &b.p_eps - b.p_epsdh.component_mul(&t);
        let eps_block = a * DMatrix::from_diagonal(&diag_eps);
        j.view_mut((rows, 0), (topo.n_j, topo.n_l)).copy_from(&eps_block);
        if n_free > 0 {
            // ∂m̄/∂d_hN = diag(p_Δh²⊙t − p_Δh − p_εΔh⊙d_ε) AᵀC̄_hᵀ
            let diag_hn = b.p_dh2.component_mul(&t) - &b.p_dh - b.p_epsdh.component_mul(&d_eps);
            let hn_block = a * DMatrix::from_diagonal(&diag_hn) * topo.at_cbar_t();
            j.view_mut((rows, topo.n_l + i * n_free), (topo.n_j, n_free))
                .copy_from(&hn_block);
        }
    }
    j
}

/// Damped least-squares settings for the inner solve of the quadratic model.
#[derive(Debug, Clone)]
pub struct InnerConfig {
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            max_iter: 100,
            grad_tol: 1e-12,
        }
    }
}

/// Solve the quadratic model for a search direction, starting from 10 % of
/// the Newton direction. Returns the best direction found (never worse than
/// its start); falls back to the full Newton direction when the inner
/// iteration cannot make progress from a non-finite model.
pub fn solve_tensor_direction(
    state: &CalibrationState,
    problem: &Problem,
    inner: &InnerConfig,
) -> Result<SearchDirection> {
    let ctx = TensorContext::at(state, problem)?;
    let rep = residual(state, problem)?;
    let j = jacobian_from_bundles(&ctx.bundles, problem);
    let newton = newton_direction(&j, &rep.f)?;
    let d0 = 0.1 * &newton;

    match levenberg_marquardt(&d0, &ctx, problem, inner) {
        Some(d) => SearchDirection::new(d, problem),
        None => {
            log::warn!("tensor inner solve failed; falling back to the Newton direction");
            SearchDirection::new(newton, problem)
        }
    }
}

fn levenberg_marquardt(
    d0: &DVector<f64>,
    ctx: &TensorContext,
    problem: &Problem,
    inner: &InnerConfig,
) -> Option<DVector<f64>> {
    let eval = |d: &DVector<f64>| -> Option<DVector<f64>> {
        let sd = SearchDirection::new(d.clone(), problem).ok()?;
        let g = tensor_residual(&sd, ctx, problem).stacked;
        g.iter().all(|v| v.is_finite()).then_some(g)
    };
    let mut d = d0.clone();
    let mut g = eval(&d)?;
    let mut phi = g.norm_squared();
    let mut best = (d.clone(), phi);
    let mut lambda = inner.lambda_init;

    for _ in 0..inner.max_iter {
        let sd = SearchDirection::new(d.clone(), problem).ok()?;
        let jt = tensor_jacobian(&sd, ctx, problem);
        let grad = jt.transpose() * &g;
        if grad.norm() < inner.grad_tol {
            break;
        }
        let jtj = jt.transpose() * &jt;
        // Marquardt scaling keeps the damping meaningful across the very
        // different ε and head column magnitudes.
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let mut damped = jtj.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= inner.lambda_factor;
            continue;
        };
        let delta = chol.solve(&(-&grad));
        let trial = &d + &delta;
        match eval(&trial) {
            Some(gt) => {
                let phit = gt.norm_squared();
                if phit < phi {
                    d = trial;
                    g = gt;
                    phi = phit;
                    lambda /= inner.lambda_factor;
                    if phi < best.1 {
                        best = (d.clone(), phi);
                    }
                } else {
                    lambda *= inner.lambda_factor;
                }
            }
            None => lambda *= inner.lambda_factor,
        }
        if lambda > 1e12 {
            break;
        }
    }
    Some(best.0)
}

/// Outer iteration identical to the Newton solver except the direction comes
/// from the quadratic model and no variable scaling is applied.
pub fn solve_tensor(
    x0: &CalibrationState,
    cfg: &SolverConfig,
    problem: &Problem,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let inner = InnerConfig::default();
    solve_with(x0, cfg, problem, |state, _rep, problem| {
        solve_tensor_direction(state, problem, &inner).map(|sd| sd.d)
    })
}
