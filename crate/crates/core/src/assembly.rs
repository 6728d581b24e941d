//! Stacked residual, block Jacobian and the kernel-related quantities shared
//! by all measurement sets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::flow::{self, FlowDerivativeBundle};
use crate::network::{head_bounds, head_loss, MeasurementSet, NetworkTopology, PipeCatalog};

/// A calibration problem instance: network, pipes, measurement sets and the
/// constant factorisation of `L = A diag(c_l) Aᵀ` (x-independent, computed
/// once).
#[derive(Debug, Clone)]
pub struct Problem {
    pub topo: NetworkTopology,
    pub pipes: PipeCatalog,
    pub sets: Vec<MeasurementSet>,
    chol_l: Cholesky<f64, Dyn>,
    diag_cl_at: DMatrix<f64>,
}

impl Problem {
    pub fn new(topo: NetworkTopology, pipes: PipeCatalog, sets: Vec<MeasurementSet>) -> Result<Self> {
        if pipes.n_pipes() != topo.n_l {
            return Err(Error::Dimension(format!(
                "catalog has {} pipes, topology {}",
                pipes.n_pipes(),
                topo.n_l
            )));
        }
        for set in &sets {
            if set.y_h.len() != topo.n_p || set.q.len() != topo.n_j || set.h_s.len() != topo.n_s {
                return Err(Error::Dimension(format!(
                    "measurement set {} does not match the topology",
                    set.id
                )));
            }
        }
        let a = topo.a();
        let l = a * DMatrix::from_diagonal(&pipes.c_l) * a.transpose();
        let chol_l = Cholesky::new(l)
            .ok_or_else(|| Error::InvalidNetwork("L = A diag(c_l) Aᵀ is not positive definite".into()))?;
        let diag_cl_at = DMatrix::from_diagonal(&pipes.c_l) * a.transpose();
        Ok(Self {
            topo,
            pipes,
            sets,
            chol_l,
            diag_cl_at,
        })
    }

    pub fn n_m(&self) -> usize {
        self.sets.len()
    }

    /// Unknown count `n_l + n_m (n_j − n_p)`.
    pub fn n_unknowns(&self) -> usize {
        self.topo.n_l + self.n_m() * (self.topo.n_j - self.topo.n_p)
    }

    /// Equation count `n_m n_j`.
    pub fn n_equations(&self) -> usize {
        self.n_m() * self.topo.n_j
    }

    pub fn l_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol_l.solve(rhs)
    }

    /// `diag(c_l) Aᵀ L⁻¹ f` — the zero-order kernel projection of a nodal vector.
    pub fn project_to_pipes(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.diag_cl_at * self.chol_l.solve(f)
    }

    /// Head loss of set `i` at the given state.
    pub fn delta_h(&self, state: &CalibrationState, i: usize) -> Result<DVector<f64>> {
        let set = &self.sets[i];
        head_loss(
            &self.topo,
            &self.topo.elevations.clone(),
            &set.h_s,
            &set.y_h,
            &state.h_n(self, i).into_owned(),
        )
    }

    /// Derivative bundles for every measurement set at the given state.
    pub fn bundles_at(&self, state: &CalibrationState) -> Result<Vec<FlowDerivativeBundle>> {
        let eps = state.eps(self).into_owned();
        (0..self.n_m())
            .map(|i| {
                let dh = self.delta_h(state, i)?;
                flow::derivatives(&eps, &dh, &self.pipes).map_err(|e| match e {
                    Error::ZeroHeadLoss { pipes, .. } => Error::ZeroHeadLoss {
                        pipes,
                        context: format!(" in measurement set {}", self.sets[i].id),
                    },
                    other => other,
                })
            })
            .collect()
    }
}

/// Stacked unknown vector `x = [ε; h_N^(1); …; h_N^(n_m)]` with componentwise
/// bounds.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    pub x: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl CalibrationState {
    /// Bounds: ε ∈ [0, 0.1 d] (loose; the published results may exceed the 5 %
    /// mark), h_N within the surrounding known heads of its set.
    pub fn new(problem: &Problem, x: DVector<f64>) -> Result<Self> {
        if x.len() != problem.n_unknowns() {
            return Err(Error::Dimension(format!(
                "state has {} entries, problem needs {}",
                x.len(),
                problem.n_unknowns()
            )));
        }
        let n_l = problem.topo.n_l;
        let n_free = problem.topo.n_j - problem.topo.n_p;
        let mut lower = DVector::zeros(x.len());
        let mut upper = DVector::zeros(x.len());
        for j in 0..n_l {
            lower[j] = 0.0;
            upper[j] = 0.1 * problem.pipes.diameter[j];
        }
        for (i, set) in problem.sets.iter().enumerate() {
            let (lo, hi) = head_bounds(&problem.topo, set);
            for r in 0..n_free {
                lower[n_l + i * n_free + r] = lo[r];
                upper[n_l + i * n_free + r] = hi[r];
            }
        }
        Ok(Self { x, lower, upper })
    }

    pub fn eps<'a>(&'a self, problem: &Problem) -> nalgebra::DVectorView<'a, f64> {
        self.x.rows(0, problem.topo.n_l)
    }

    pub fn h_n<'a>(&'a self, problem: &Problem, i: usize) -> nalgebra::DVectorView<'a, f64> {
        let n_free = problem.topo.n_j - problem.topo.n_p;
        self.x.rows(problem.topo.n_l + i * n_free, n_free)
    }

    /// Componentwise projection to the bounds.
    pub fn clamped(&self, x: DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn with_x(&self, x: DVector<f64>) -> Self {
        Self {
            x,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

/// Residual `f(x)` with its L1 norm, sliced per measurement set.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub f: DVector<f64>,
    /// `v(x) = ‖f‖_L1` (m³/s).
    pub v: f64,
    n_j: usize,
}

impl ResidualReport {
    /// Wrap an externally assembled stacked residual (synthetic instances).
    pub fn from_stacked(f: DVector<f64>, v: f64, n_j: usize) -> Self {
        Self { f, v, n_j }
    }

    pub fn per_set(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.f.rows(i * self.n_j, self.n_j)
    }

    pub fn n_sets(&self) -> usize {
        self.f.len() / self.n_j
    }
}

/// `f^(i) = A x_Q(ε, h_N^(i)) − q̄^(i)` stacked over sets.
pub fn residual(state: &CalibrationState, problem: &Problem) -> Result<ResidualReport> {
    let eps = state.eps(problem).into_owned();
    let a = problem.topo.a();
    let mut f = DVector::zeros(problem.n_equations());
    for i in 0..problem.n_m() {
        let dh = problem.delta_h(state, i)?;
        let zero: Vec<usize> = (0..problem.topo.n_l).filter(|&j| dh[j] == 0.0).collect();
        if !zero.is_empty() {
            return Err(Error::ZeroHeadLoss {
                pipes: zero,
                context: format!(" in measurement set {}", problem.sets[i].id),
            });
        }
        let q = flow::flows(&eps, &dh, &problem.pipes);
        let fi = a * q - &problem.sets[i].q;
        f.rows_mut(i * problem.topo.n_j, problem.topo.n_j).copy_from(&fi);
    }
    let v = f.iter().map(|v| v.abs()).sum();
    Ok(ResidualReport {
        f,
        v,
        n_j: problem.topo.n_j,
    })
}

/// Block Jacobian of the stacked residual,
/// `J ∈ R^(n_m n_j × n_l + n_m(n_j−n_p))`.
pub fn jacobian(state: &CalibrationState, problem: &Problem) -> Result<DMatrix<f64>> {
    let bundles = problem.bundles_at(state)?;
    Ok(jacobian_from_bundles(&bundles, problem))
}

/// Jacobian assembled from precomputed derivative bundles.
pub fn jacobian_from_bundles(bundles: &[FlowDerivativeBundle], problem: &Problem) -> DMatrix<f64> {
    let topo = &problem.topo;
    let n_free = topo.n_j - topo.n_p;
    let a = topo.a();
    let mut j = DMatrix::zeros(problem.n_equations(), problem.n_unknowns());
    for (i, bundle) in bundles.iter().enumerate() {
        let rows = i * topo.n_j;
        let eps_block = a * DMatrix::from_diagonal(&bundle.p_eps);
        j.view_mut((rows, 0), (topo.n_j, topo.n_l)).copy_from(&eps_block);
        if n_free > 0 {
            let hn_block = -a * DMatrix::from_diagonal(&bundle.p_dh) * topo.at_cbar_t();
            j.view_mut((rows, topo.n_l + i * n_free), (topo.n_j, n_free))
                .copy_from(&hn_block);
        }
    }
    j
}

/// Per-set `f̄_0^(i) = diag(c_l) Aᵀ L⁻¹ f^(i) − Sᵀ α^(i)` and the stacked
/// `r_f` (the α-free part).
pub fn kernel_rhs(
    report: &ResidualReport,
    problem: &Problem,
    alpha: Option<&[DVector<f64>]>,
) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
    let n_cycles = problem.topo.n_l - problem.topo.n_j;
    if let Some(alpha) = alpha {
        if alpha.len() != report.n_sets() || alpha.iter().any(|a| a.len() != n_cycles) {
            return Err(Error::Dimension("alpha does not match the cycle count".into()));
        }
    }
    let s_t = problem.topo.cycle_f().transpose();
    let mut fbar = Vec::with_capacity(report.n_sets());
    let mut r_f = DVector::zeros(report.n_sets() * problem.topo.n_l);
    for i in 0..report.n_sets() {
        let projected = problem.project_to_pipes(&report.per_set(i).into_owned());
        r_f.rows_mut(i * problem.topo.n_l, problem.topo.n_l).copy_from(&projected);
        let shifted = match alpha {
            Some(alpha) => &projected - &s_t * &alpha[i],
            None => projected,
        };
        fbar.push(shifted);
    }
    Ok((fbar, r_f))
}
