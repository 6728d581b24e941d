//! Colebrook-White turbulent pipe flow and its five partial-derivative
//! families with respect to roughness and head loss.
//!
//! Everything here is a pure pointwise function of `(ε_j, Δh_j)`; the j-th
//! component never depends on any other pipe.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::{Pipe, PipeCatalog};

const LN10: f64 = std::f64::consts::LN_10;

/// Logarithm argument `ℓ(ε, Δh) = ε/(3.7 d) + 2.51 (ηA/(ρd)) √(k/|Δh|)`.
///
/// Only defined for `Δh ≠ 0`; the flow itself short-circuits that case.
pub fn ell(eps: f64, dh: f64, pipe: &Pipe) -> Result<f64> {
    if dh == 0.0 {
        return Err(Error::ZeroHeadLoss {
            pipes: vec![0],
            context: " (ell)".into(),
        });
    }
    Ok(ell_unchecked(eps, dh.abs(), pipe))
}

#[inline]
fn ell_unchecked(eps: f64, abs_dh: f64, pipe: &Pipe) -> f64 {
    eps / (3.7 * pipe.diameter)
        + 2.51 * pipe.viscosity * pipe.area / (pipe.density * pipe.diameter)
            * (pipe.k / abs_dh).sqrt()
}

/// Turbulent flow `Q = −sign(Δh) (2/ln 10) √(|Δh|/k) ln ℓ`; zero at `Δh = 0`
/// (motionless pipe). `ℓ ≥ 1` reverses the flow direction and is permitted
/// numerically; vectorised callers flag it.
pub fn flow(eps: f64, dh: f64, pipe: &Pipe) -> f64 {
    if dh == 0.0 {
        return 0.0;
    }
    let u = dh.abs();
    -dh.signum() * (2.0 / LN10) * (u / pipe.k).sqrt() * ell_unchecked(eps, u, pipe).ln()
}

/// Flows for every pipe; logs a single warning listing out-of-regime pipes
/// (`ℓ ≥ 1`).
pub fn flows(eps: &DVector<f64>, dh: &DVector<f64>, pipes: &PipeCatalog) -> DVector<f64> {
    let mut out_of_regime = Vec::new();
    let q = DVector::from_fn(eps.len(), |j, _| {
        let pipe = pipes.pipe(j);
        if dh[j] != 0.0 && ell_unchecked(eps[j], dh[j].abs(), &pipe) >= 1.0 {
            out_of_regime.push(j);
        }
        flow(eps[j], dh[j], &pipe)
    });
    if !out_of_regime.is_empty() {
        log::debug!("log argument ℓ ≥ 1 (flow direction inverted) on pipes {out_of_regime:?}");
    }
    q
}

/// The five derivative vectors of the turbulent flow at `(ε, Δh)`.
///
/// The mixed second derivative is symmetric (the flow is C² in the turbulent
/// regime), so a single `p_epsdh` field serves both orders.
#[derive(Debug, Clone)]
pub struct FlowDerivativeBundle {
    /// ∂f_t/∂ε
    pub p_eps: DVector<f64>,
    /// ∂f_t/∂Δh
    pub p_dh: DVector<f64>,
    /// ∂²f_t/∂ε²
    pub p_eps2: DVector<f64>,
    /// ∂²f_t/∂ε∂Δh
    pub p_epsdh: DVector<f64>,
    /// ∂²f_t/∂Δh²
    pub p_dh2: DVector<f64>,
}

/// Scalar derivative set for one pipe; `sign(Δh)` is treated as constant
/// (the Dirac delta at `Δh = 0` is dropped).
pub fn derivatives_scalar(eps: f64, dh: f64, pipe: &Pipe) -> Result<[f64; 5]> {
    if dh == 0.0 {
        return Err(Error::ZeroHeadLoss {
            pipes: vec![0],
            context: " (derivatives)".into(),
        });
    }
    let s = dh.signum();
    let u = dh.abs();
    let d = pipe.diameter;
    let k = pipe.k;
    let visc = 2.51 * pipe.viscosity * pipe.area / (pipe.density * d);
    let l = ell_unchecked(eps, u, pipe);
    let ln_l = l.ln();
    let sqrt_uk = (u / k).sqrt();
    let inv_sqrt_ku = 1.0 / (k * u).sqrt();

    let p_eps = -(2.0 / LN10) * s * sqrt_uk / (3.7 * d * l);
    let p_dh = -(1.0 / LN10) * (inv_sqrt_ku * ln_l - visc / (u * l));
    let p_eps2 = s * (2.0 / LN10) * sqrt_uk / (3.7 * d * 3.7 * d * l * l);
    let p_epsdh = -(1.0 / LN10) * (inv_sqrt_ku / (3.7 * d * l) + visc / (3.7 * d * u * l * l));
    let p_dh2 = s / (2.0 * LN10)
        * (ln_l / (k.sqrt() * u.powf(1.5)) - visc / (u * u * l)
            + visc * visc * k.sqrt() / (u.powf(2.5) * l * l));
    Ok([p_eps, p_dh, p_eps2, p_epsdh, p_dh2])
}

/// Derivative bundle over all pipes; fails listing every pipe with `Δh = 0`.
pub fn derivatives(
    eps: &DVector<f64>,
    dh: &DVector<f64>,
    pipes: &PipeCatalog,
) -> Result<FlowDerivativeBundle> {
    let n = pipes.n_pipes();
    if eps.len() != n || dh.len() != n {
        return Err(Error::Dimension(format!(
            "derivatives: got ε of {} and Δh of {} for {n} pipes",
            eps.len(),
            dh.len()
        )));
    }
    let zero: Vec<usize> = (0..n).filter(|&j| dh[j] == 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroHeadLoss {
            pipes: zero,
            context: String::new(),
        });
    }
    let mut bundle = FlowDerivativeBundle {
        p_eps: DVector::zeros(n),
        p_dh: DVector::zeros(n),
        p_eps2: DVector::zeros(n),
        p_epsdh: DVector::zeros(n),
        p_dh2: DVector::zeros(n),
    };
    for j in 0..n {
        let [a, b, c, d, e] = derivatives_scalar(eps[j], dh[j], &pipes.pipe(j))?;
        bundle.p_eps[j] = a;
        bundle.p_dh[j] = b;
        bundle.p_eps2[j] = c;
        bundle.p_epsdh[j] = d;
        bundle.p_dh2[j] = e;
    }
    Ok(bundle)
}

/// Per-pipe turbulence check: `|Q| d ρ / (A η) ≥ 4000`.
pub fn reynolds_ok(q: &DVector<f64>, pipes: &PipeCatalog) -> Vec<bool> {
    (0..pipes.n_pipes())
        .map(|j| {
            q[j].abs() * pipes.diameter[j] * pipes.density / (pipes.area[j] * pipes.viscosity)
                >= 4000.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::DVector;

    fn test_pipe() -> Pipe {
        // 3-cycle pipe 1 geometry
        let cat = PipeCatalog::new(
            DVector::from_vec(vec![10.0]),
            DVector::from_vec(vec![0.04]),
            9.81,
            998.2,
            1.002e-3,
        )
        .unwrap();
        cat.pipe(0)
    }

    #[test]
    fn ell_direct_formula() {
        let pipe = test_pipe();
        let eps = 0.002;
        let dh = 1.0;
        // independent re-evaluation from raw constants
        let area = std::f64::consts::PI * 0.04 * 0.04 / 4.0;
        let k = 10.0 / (2.0 * 0.04 * 9.81 * area * area);
        let expected = eps / (3.7 * 0.04) + 2.51 * 1.002e-3 * area / (998.2 * 0.04) * (k / dh).sqrt();
        assert_relative_eq!(ell(eps, dh, &pipe).unwrap(), expected, max_relative = 1e-14);
        // linearity in ε: doubling ε adds exactly ε/(3.7 d)
        let doubled = ell(2.0 * eps, dh, &pipe).unwrap();
        assert_relative_eq!(
            doubled - ell(eps, dh, &pipe).unwrap(),
            eps / (3.7 * 0.04),
            max_relative = 1e-12
        );
    }

    #[test]
    fn ell_vanishes_for_huge_head_loss() {
        let pipe = test_pipe();
        assert!(ell(0.0, 1e12, &pipe).unwrap() < 1e-6);
        assert!(ell(0.0, 1e12, &pipe).unwrap() > 0.0);
    }

    #[test]
    fn ell_rejects_zero_head_loss() {
        let pipe = test_pipe();
        assert!(ell(0.001, 0.0, &pipe).is_err());
    }

    #[test]
    fn flow_zero_at_zero_head_loss() {
        let pipe = test_pipe();
        assert_eq!(flow(0.002, 0.0, &pipe), 0.0);
    }

    #[test]
    fn flow_odd_in_head_loss() {
        let pipe = test_pipe();
        for dh in [0.01, 0.5, 3.0, 18.0] {
            for eps in [0.0, 1e-4, 2e-3] {
                assert_abs_diff_eq!(
                    flow(eps, -dh, &pipe),
                    -flow(eps, dh, &pipe),
                    epsilon = 0.0
                );
            }
        }
    }

    /// Invert the implicit Darcy-Weisbach/Colebrook-White relation for Δh by
    /// bisection given Q and confirm the closed form agrees.
    #[test]
    fn flow_round_trips_through_implicit_relation() {
        let pipe = test_pipe();
        let eps = 0.002;
        let dh_true = 0.5;
        let q = flow(eps, dh_true, &pipe);
        // Q as a function of Δh is monotone increasing for Δh > 0 in regime
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if flow(eps, mid, &pipe) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(0.5 * (lo + hi), dh_true, epsilon = 1e-9);
    }

    #[test]
    fn derivative_signs() {
        let pipe = test_pipe();
        for dh in [-4.0, -0.2, 0.3, 6.0] {
            let [p_eps, _, p_eps2, _, _] = derivatives_scalar(1e-3, dh, &pipe).unwrap();
            assert_eq!(p_eps.signum(), -dh.signum(), "sign(p_ε) = −sign(Δh)");
            assert_eq!(p_eps2.signum(), dh.signum(), "sign(p_ε²) = sign(Δh)");
        }
        // ε = 0 keeps p_ε finite and nonzero (ℓ > 0 through the viscous term)
        let [p_eps, ..] = derivatives_scalar(0.0, 1.0, &pipe).unwrap();
        assert!(p_eps.is_finite() && p_eps != 0.0);
    }

    /// 5-point central stencil; the 3-point one is too coarse for the sharp
    /// 1/ℓ curvature at ε → 0 with large |Δh|.
    fn central5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn derivatives_match_central_differences() {
        let pipe = test_pipe();
        let fd_step = 1e-7;
        let mut checked = 0;
        for &eps in &[0.0_f64, 2e-4, 1e-3, 2e-3] {
            for &dh in &[-9.0_f64, -1.0, -0.05, 0.02, 0.7, 15.0] {
                let he = fd_step * eps.abs().max(1.0);
                let hd = fd_step * dh.abs().max(1.0);
                let [p_eps, p_dh, p_eps2, p_epsdh, p_dh2] =
                    derivatives_scalar(eps, dh, &pipe).unwrap();
                let fd_eps = central5(|e| flow(e, dh, &pipe), eps, he);
                let fd_dh = central5(|d| flow(eps, d, &pipe), dh, hd);
                assert_relative_eq!(p_eps, fd_eps, max_relative = 1e-5);
                assert_relative_eq!(p_dh, fd_dh, max_relative = 1e-5);
                // second derivatives from first-derivative differences
                let fd_eps2 = central5(|e| derivatives_scalar(e, dh, &pipe).unwrap()[0], eps, he);
                let fd_epsdh = central5(|d| derivatives_scalar(eps, d, &pipe).unwrap()[0], dh, hd);
                let fd_dh2 = central5(|d| derivatives_scalar(eps, d, &pipe).unwrap()[1], dh, hd);
                assert_relative_eq!(p_eps2, fd_eps2, max_relative = 1e-5);
                assert_relative_eq!(p_epsdh, fd_epsdh, max_relative = 1e-5);
                assert_relative_eq!(p_dh2, fd_dh2, max_relative = 1e-5);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn derivatives_report_offending_pipes() {
        let cat = PipeCatalog::new(
            DVector::from_vec(vec![10.0, 12.0, 8.0]),
            DVector::from_vec(vec![0.04, 0.05, 0.04]),
            9.81,
            998.2,
            1.002e-3,
        )
        .unwrap();
        let eps = DVector::from_element(3, 1e-3);
        let dh = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        match derivatives(&eps, &dh, &cat) {
            Err(Error::ZeroHeadLoss { pipes, .. }) => assert_eq!(pipes, vec![1, 2]),
            other => panic!("expected ZeroHeadLoss, got {other:?}"),
        }
    }

    #[test]
    fn reynolds_boundary_inclusive() {
        let cat = PipeCatalog::new(
            DVector::from_vec(vec![10.0]),
            DVector::from_vec(vec![0.04]),
            9.81,
            998.2,
            1.002e-3,
        )
        .unwrap();
        let q_boundary = 4000.0 * cat.area[0] * cat.viscosity / (cat.diameter[0] * cat.density);
        assert_eq!(reynolds_ok(&DVector::from_vec(vec![q_boundary]), &cat), vec![true]);
        assert_eq!(reynolds_ok(&DVector::from_vec(vec![0.0]), &cat), vec![false]);
    }
}
