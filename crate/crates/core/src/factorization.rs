//! Analytic factorization of the quadratic model: per-pipe determinants,
//! separator pairs with sign enumeration, candidate linear systems for the
//! search direction, and the kernel-space transforms.
//!
//! Everything here works over ℂ; discriminants are frequently negative.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::assembly::{CalibrationState, Problem};
use crate::error::{Error, Result};
use crate::flow::FlowDerivativeBundle;
use crate::tensor::SearchDirection;

type C64 = Complex64;

/// Scalar inputs of one pipe in one measurement set.
#[derive(Debug, Clone, Copy)]
pub struct PipeQuadratic {
    pub p_eps: f64,
    pub p_dh: f64,
    pub p_eps2: f64,
    pub p_epsdh: f64,
    pub p_dh2: f64,
    /// `f̄_0 = [diag(c_l)AᵀL⁻¹f − Sᵀα]_j`.
    pub f0: f64,
}

impl PipeQuadratic {
    pub fn from_bundle(bundle: &FlowDerivativeBundle, f0: &DVector<f64>, j: usize) -> Self {
        Self {
            p_eps: bundle.p_eps[j],
            p_dh: bundle.p_dh[j],
            p_eps2: bundle.p_eps2[j],
            p_epsdh: bundle.p_epsdh[j],
            p_dh2: bundle.p_dh2[j],
            f0: f0[j],
        }
    }
}

/// `Δ = ½·det [[p_ε², −p_εΔh, p_ε], [−p_εΔh, p_Δh², −p_Δh], [p_ε, −p_Δh, 2f̄_0]]`
/// and `Δ̂ = p_ε² p_Δh² − p_εΔh²`.
pub fn determinants(q: &PipeQuadratic) -> (f64, f64) {
    let (a, h, f) = (q.p_eps2, -q.p_epsdh, q.p_eps);
    let (b, g) = (q.p_dh2, -q.p_dh);
    let c = 2.0 * q.f0;
    let delta = 0.5 * (a * b * c + 2.0 * f * g * h - a * g * g - b * f * f - c * h * h);
    let delta_hat = q.p_eps2 * q.p_dh2 - q.p_epsdh * q.p_epsdh;
    (delta, delta_hat)
}

/// Pair products of the separators for one feasible sign triple. Individual
/// separator components are not determined, only their pairwise products.
#[derive(Debug, Clone, Copy)]
pub struct SeparatorPairs {
    pub signs: [i8; 3],
    pub ec: C64,
    pub bw: C64,
    pub fv: C64,
    pub bf: C64,
    pub ev: C64,
    pub cw: C64,
    /// `b⊙e = ½ p_ε²`.
    pub be: C64,
    /// `c⊙f̃ = ½ p_Δh²`.
    pub cf: C64,
    /// `v⊙w = f̄_0`.
    pub vw: C64,
    /// Absolute consistency-product defect.
    pub defect: f64,
}

/// Evaluate all 8 sign triples and keep those whose consistency product
/// `(−p_εΔh±₁√)(p_ε±₂√)(−p_Δh±₃√) = 2 p_ε² p_Δh² f̄_0` holds within
/// `tol` relative to the problem scale. An empty list signals that no
/// factorization exists (Δ ≠ 0).
pub fn separator_pairs(q: &PipeQuadratic, tol: f64) -> Vec<SeparatorPairs> {
    let sq1 = C64::from(q.p_epsdh * q.p_epsdh - q.p_eps2 * q.p_dh2).sqrt();
    let sq2 = C64::from(q.p_eps * q.p_eps - 2.0 * q.f0 * q.p_eps2).sqrt();
    let sq3 = C64::from(q.p_dh * q.p_dh - 2.0 * q.f0 * q.p_dh2).sqrt();
    let rhs = C64::from(2.0 * q.p_eps2 * q.p_dh2 * q.f0);

    let mut out = Vec::new();
    for signs in [
        [1, 1, 1],
        [1, 1, -1],
        [1, -1, 1],
        [1, -1, -1],
        [-1, 1, 1],
        [-1, 1, -1],
        [-1, -1, 1],
        [-1, -1, -1],
    ] {
        let [s1, s2, s3] = signs.map(f64::from);
        let t1 = -q.p_epsdh + s1 * sq1;
        let t2 = q.p_eps + s2 * sq2;
        let t3 = -q.p_dh + s3 * sq3;
        let defect = (t1 * t2 * t3 - rhs).norm();
        let scale = [
            t1.norm() * t2.norm() * t3.norm(),
            rhs.norm(),
            (q.p_epsdh * q.p_eps * q.p_dh).abs(),
        ]
        .into_iter()
        .fold(f64::MIN_POSITIVE, f64::max);
        if defect <= tol * scale {
            out.push(SeparatorPairs {
                signs,
                ec: 0.5 * t1,
                bw: 0.5 * t2,
                fv: 0.5 * t3,
                bf: 0.5 * (-q.p_epsdh - s1 * sq1),
                ev: 0.5 * (q.p_eps - s2 * sq2),
                cw: 0.5 * (-q.p_dh - s3 * sq3),
                be: C64::from(0.5 * q.p_eps2),
                cf: C64::from(0.5 * q.p_dh2),
                vw: C64::from(q.f0),
                defect,
            });
        }
    }
    out
}

/// Separator pair products for one measurement set, one entry per pipe.
#[derive(Debug, Clone)]
pub struct SetSeparators {
    pub eb: Vec<C64>,
    pub ec: Vec<C64>,
    pub bf: Vec<C64>,
    pub ev: Vec<C64>,
    pub bw: Vec<C64>,
    pub chosen: Vec<SeparatorPairs>,
}

/// Pick, per pipe, the feasible sign triple with the smallest consistency
/// defect. Fails listing the pipes where no triple is feasible.
pub fn select_separators(
    bundle: &FlowDerivativeBundle,
    f0: &DVector<f64>,
    tol: f64,
) -> Result<SetSeparators> {
    let n_l = f0.len();
    let mut sep = SetSeparators {
        eb: Vec::with_capacity(n_l),
        ec: Vec::with_capacity(n_l),
        bf: Vec::with_capacity(n_l),
        ev: Vec::with_capacity(n_l),
        bw: Vec::with_capacity(n_l),
        chosen: Vec::with_capacity(n_l),
    };
    let mut infeasible = Vec::new();
    for j in 0..n_l {
        let q = PipeQuadratic::from_bundle(bundle, f0, j);
        let candidates = separator_pairs(&q, tol);
        match candidates
            .into_iter()
            .min_by(|a, b| a.defect.total_cmp(&b.defect))
        {
            Some(best) => {
                sep.eb.push(best.be);
                sep.ec.push(best.ec);
                sep.bf.push(best.bf);
                sep.ev.push(best.ev);
                sep.bw.push(best.bw);
                sep.chosen.push(best);
            }
            None => infeasible.push(j),
        }
    }
    if !infeasible.is_empty() {
        return Err(Error::Solver(format!(
            "no feasible separator sign triple on pipes {infeasible:?} (Δ ≠ 0 within tolerance)"
        )));
    }
    Ok(sep)
}

/// One assembled candidate search direction.
#[derive(Debug, Clone)]
pub struct CandidateDirection {
    pub direction: SearchDirection,
    /// Norm of the dropped imaginary part.
    pub imag_norm: f64,
    /// Pairing choice per set: `false` = (e·b, e·c) rows, `true` = (b·e, b·f̃).
    pub pairing: Vec<bool>,
}

/// Assemble and solve the `2^{n_m}` candidate linear systems in least
/// squares. Rank-deficient candidates are skipped with a log entry.
pub fn candidate_directions(
    seps: &[SetSeparators],
    problem: &Problem,
) -> Vec<CandidateDirection> {
    let n_m = seps.len();
    let topo = &problem.topo;
    let n = problem.topo.n_l + n_m * (topo.n_j - topo.n_p);
    let n_free = topo.n_j - topo.n_p;
    let at_cbar: DMatrix<C64> = topo.at_cbar_t().map(C64::from);
    let mut out = Vec::new();
    for variant in 0..(1usize << n_m) {
        let pairing: Vec<bool> = (0..n_m).map(|i| variant >> i & 1 == 1).collect();
        let mut m = DMatrix::<C64>::zeros(n_m * topo.n_l, n);
        let mut rhs = DVector::<C64>::zeros(n_m * topo.n_l);
        for (i, sep) in seps.iter().enumerate() {
            let rows = i * topo.n_l;
            for j in 0..topo.n_l {
                m[(rows + j, j)] = sep.eb[j];
            }
            let (pair, neg_rhs) = if pairing[i] {
                (&sep.bf, &sep.bw)
            } else {
                (&sep.ec, &sep.ev)
            };
            if n_free > 0 {
                for j in 0..topo.n_l {
                    for c in 0..n_free {
                        m[(rows + j, topo.n_l + i * n_free + c)] = pair[j] * at_cbar[(j, c)];
                    }
                }
            }
            for j in 0..topo.n_l {
                rhs[rows + j] = -neg_rhs[j];
            }
        }
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax)
            .count();
        if rank < n || smax == 0.0 {
            log::debug!("candidate {variant}: rank {rank} < {n}, skipped");
            continue;
        }
        let Ok(d_c) = svd.solve(&rhs, 1e-12 * smax) else {
            continue;
        };
        let real = d_c.map(|z| z.re);
        let imag_norm = d_c.map(|z| z.im).norm();
        if let Ok(direction) = SearchDirection::new(real, problem) {
            out.push(CandidateDirection {
                direction,
                imag_norm,
                pairing,
            });
        }
    }
    out
}

/// The kernel-space representation: the `2^{n_m}` matrices `M_𝔜`, the shift
/// `s`, the zero-order stack `r_f` and the block-diagonal cycle matrix.
#[derive(Debug, Clone)]
pub struct KernelTransform {
    pub m_variants: Vec<DMatrix<C64>>,
    pub s: DVector<C64>,
    pub r_f: DVector<f64>,
    /// Block diagonal of `Sᵀ`, (n_m n_l) × (n_m (n_l − n_j)).
    pub s_b: DMatrix<f64>,
    pub alpha: DVector<f64>,
    /// Stacked residual `f` at the expansion state.
    pub f: DVector<f64>,
    n_j: usize,
    n_l: usize,
}

/// Build all `M_𝔜`, `s`, `r_f`. Each variant uses, per set, either the
/// `(e·b, e·c)` or the `(b·e, b·f̃)` diagonal pairing.
pub fn kernel_transform(
    bundles: &[FlowDerivativeBundle],
    seps: &[SetSeparators],
    f: &DVector<f64>,
    alpha: Option<&[DVector<f64>]>,
    problem: &Problem,
) -> Result<KernelTransform> {
    let topo = &problem.topo;
    let n_m = bundles.len();
    if seps.len() != n_m || f.len() != n_m * topo.n_j {
        return Err(Error::Dimension("kernel_transform inputs disagree on the set count".into()));
    }
    let n = topo.n_l + n_m * (topo.n_j - topo.n_p);
    let n_free = topo.n_j - topo.n_p;
    let n_cycles = topo.n_l - topo.n_j;
    let at_cbar: DMatrix<C64> = topo.at_cbar_t().map(C64::from);

    let mut s = DVector::<C64>::zeros(n_m * topo.n_l);
    let mut r_f = DVector::<f64>::zeros(n_m * topo.n_l);
    for (i, bundle) in bundles.iter().enumerate() {
        let fi = f.rows(i * topo.n_j, topo.n_j).into_owned();
        let proj = problem.project_to_pipes(&fi);
        r_f.rows_mut(i * topo.n_l, topo.n_l).copy_from(&proj);
        for j in 0..topo.n_l {
            let sqrt_p2 = C64::from(bundle.p_eps2[j]).sqrt();
            s[i * topo.n_l + j] = C64::from(bundle.p_eps[j]) / sqrt_p2;
        }
    }

    let mut m_variants = Vec::with_capacity(1 << n_m);
    for variant in 0..(1usize << n_m) {
        let mut m = DMatrix::<C64>::zeros(n_m * topo.n_l, n);
        for i in 0..n_m {
            let rows = i * topo.n_l;
            let bundle = &bundles[i];
            let pair = if variant >> i & 1 == 1 {
                &seps[i].bf
            } else {
                &seps[i].ec
            };
            for j in 0..topo.n_l {
                let sqrt_p2 = C64::from(bundle.p_eps2[j]).sqrt();
                m[(rows + j, j)] = sqrt_p2;
                if n_free > 0 {
                    let w = 2.0 * pair[j] / sqrt_p2;
                    for c in 0..n_free {
                        m[(rows + j, topo.n_l + i * n_free + c)] = w * at_cbar[(j, c)];
                    }
                }
            }
        }
        m_variants.push(m);
    }

    let s_t = topo.cycle_f().transpose();
    let mut s_b = DMatrix::<f64>::zeros(n_m * topo.n_l, n_m * n_cycles);
    for i in 0..n_m {
        s_b.view_mut((i * topo.n_l, i * n_cycles), (topo.n_l, n_cycles))
            .copy_from(&s_t);
    }
    let alpha_stacked = match alpha {
        Some(alpha) => {
            if alpha.len() != n_m || alpha.iter().any(|a| a.len() != n_cycles) {
                return Err(Error::Dimension("alpha does not match the cycle count".into()));
            }
            let mut st = DVector::zeros(n_m * n_cycles);
            for (i, a) in alpha.iter().enumerate() {
                st.rows_mut(i * n_cycles, n_cycles).copy_from(a);
            }
            st
        }
        None => DVector::zeros(n_m * n_cycles),
    };

    Ok(KernelTransform {
        m_variants,
        s,
        r_f,
        s_b,
        alpha: alpha_stacked,
        f: f.clone(),
        n_j: topo.n_j,
        n_l: topo.n_l,
    })
}

impl KernelTransform {
    pub fn n_sets(&self) -> usize {
        self.s.len() / self.n_l
    }

    /// Left side of the kernel identity:
    /// `blockdiag(A)·(½(M_𝔜 d)^⊙² + (M_𝔜 d)⊙s + r_f)`, which recovers the
    /// stacked residual at `d = 0` and is α-invariant in the A-image.
    pub fn evaluate(&self, problem: &Problem, variant: usize, d: &DVector<f64>) -> DVector<C64> {
        let m = &self.m_variants[variant];
        let d_c: DVector<C64> = d.map(C64::from);
        let md = m * d_c;
        let per_pipe = DVector::<C64>::from_fn(md.len(), |k, _| {
            0.5 * md[k] * md[k] + md[k] * self.s[k] + C64::from(self.r_f[k])
        });
        let a = problem.topo.a();
        let mut out = DVector::<C64>::zeros(self.n_sets() * self.n_j);
        for i in 0..self.n_sets() {
            for r in 0..self.n_j {
                let mut acc = C64::from(0.0);
                for j in 0..self.n_l {
                    acc += C64::from(a[(r, j)]) * per_pipe[i * self.n_l + j];
                }
                out[i * self.n_j + r] = acc;
            }
        }
        out
    }

    /// Difference between the kernel-identity evaluation and the tensor
    /// residual for the same direction, exposed as a diagnostic.
    pub fn residual_difference(
        &self,
        problem: &Problem,
        variant: usize,
        d: &DVector<f64>,
        tensor_stacked: &DVector<f64>,
    ) -> f64 {
        let e = self.evaluate(problem, variant, d);
        (0..e.len())
            .map(|k| (e[k] - C64::from(tensor_stacked[k])).norm())
            .fold(0.0, f64::max)
    }
}

/// The transformed problem `W β^⊙² + 2β + 2W r_f = 0` with the generalized
/// inverse of `M̃ = [diag(s) M_𝔜 | −S_b]`.
#[derive(Debug, Clone)]
pub struct BetaTransform {
    pub w: DMatrix<C64>,
    pub m_tilde: DMatrix<C64>,
    pub m_tilde_pinv: DMatrix<C64>,
    /// `max |M̃#M̃ − I|`; the "perfect inversion" premise holds only when this
    /// is numerically zero, which generally fails and is reported, not
    /// asserted.
    pub inversion_defect: f64,
    r_f: DVector<C64>,
    n_unknowns: usize,
}

pub fn beta_transform(
    kt: &KernelTransform,
    variant: usize,
    pinv_tol: f64,
) -> Result<BetaTransform> {
    let m = &kt.m_variants[variant];
    let rows = m.nrows();
    let n = m.ncols();
    let n_alpha = kt.s_b.ncols();
    let mut m_tilde = DMatrix::<C64>::zeros(rows, n + n_alpha);
    for r in 0..rows {
        for c in 0..n {
            m_tilde[(r, c)] = kt.s[r] * m[(r, c)];
        }
        for c in 0..n_alpha {
            m_tilde[(r, n + c)] = C64::from(-kt.s_b[(r, c)]);
        }
    }
    let svd = m_tilde.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let m_tilde_pinv = svd
        .pseudo_inverse(pinv_tol * smax)
        .map_err(|e| Error::Solver(e.to_string()))?;
    let ident = &m_tilde_pinv * &m_tilde;
    let mut defect = 0.0_f64;
    for r in 0..ident.nrows() {
        for c in 0..ident.ncols() {
            let expected = if r == c { C64::from(1.0) } else { C64::from(0.0) };
            defect = defect.max((ident[(r, c)] - expected).norm());
        }
    }
    // W = [M_𝔜 | 0] M̃#
    let mut m_ext = DMatrix::<C64>::zeros(rows, n + n_alpha);
    m_ext.view_mut((0, 0), (rows, n)).copy_from(m);
    let w = m_ext * &m_tilde_pinv;
    Ok(BetaTransform {
        w,
        m_tilde,
        m_tilde_pinv,
        inversion_defect: defect,
        r_f: kt.r_f.map(C64::from),
        n_unknowns: n,
    })
}

impl BetaTransform {
    /// Residual of `W β^⊙² + 2β + 2W r_f`.
    pub fn beta_residual(&self, beta: &DVector<C64>) -> DVector<C64> {
        let sq = DVector::from_fn(beta.len(), |k, _| beta[k] * beta[k]);
        let two = C64::from(2.0);
        &self.w * sq + beta * two + (&self.w * &self.r_f) * two
    }

    /// Recover `[d; α] = −M̃#(½β^⊙² + r_f)`.
    pub fn recover(&self, beta: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
        let sq = DVector::from_fn(beta.len(), |k, _| 0.5 * beta[k] * beta[k]);
        let full = -(&self.m_tilde_pinv * (sq + &self.r_f));
        let d = full.rows(0, self.n_unknowns).into_owned();
        let alpha = full.rows(self.n_unknowns, full.len() - self.n_unknowns).into_owned();
        (d, alpha)
    }
}

/// Values of the root conditions at a state, per set and pipe:
/// `(2 p_Δh p_εΔh p_ε − p_ε²(p_Δh)² − p_Δh²(p_ε)², (p_εΔh)² − p_ε² p_Δh²)`.
/// Exposed for inspection only; whether the turbulent-flow derivatives satisfy
/// them numerically at a root is an open question.
pub fn root_diagnostic(state: &CalibrationState, problem: &Problem) -> Result<Vec<Vec<(f64, f64)>>> {
    let bundles = problem.bundles_at(state)?;
    Ok(bundles
        .iter()
        .map(|b| {
            (0..problem.topo.n_l)
                .map(|j| {
                    let v1 = 2.0 * b.p_dh[j] * b.p_epsdh[j] * b.p_eps[j]
                        - b.p_eps2[j] * b.p_dh[j] * b.p_dh[j]
                        - b.p_dh2[j] * b.p_eps[j] * b.p_eps[j];
                    let v2 = b.p_epsdh[j] * b.p_epsdh[j] - b.p_eps2[j] * b.p_dh2[j];
                    (v1, v2)
                })
                .collect()
        })
        .collect())
}
