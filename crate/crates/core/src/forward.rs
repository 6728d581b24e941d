//! Steady-state forward solver: given roughnesses and demands, solve for all
//! inner heads and flows. Serves as the ground-truth oracle and as the
//! synthetic-measurement generator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow;
use crate::network::{MeasurementSet, NetworkTopology, PipeCatalog};

#[derive(Debug, Clone)]
pub struct SteadySolution {
    /// Inner-node pressure heads (m).
    pub heads: DVector<f64>,
    /// Pipe flows (m³/s).
    pub flows: DVector<f64>,
    pub delta_h: DVector<f64>,
    /// Nodal balance residual `A·Q − q̄`.
    pub node_residual: DVector<f64>,
    /// Per-pipe turbulence check at the solution.
    pub turbulent: Vec<bool>,
}

fn delta_h_of_heads(
    topo: &NetworkTopology,
    h_s: &DVector<f64>,
    heads: &DVector<f64>,
) -> DVector<f64> {
    topo.source_incidence_f().transpose() * h_s
        - topo.a().transpose() * (heads + &topo.elevations)
}

/// Solve `A f_t(ε, Δh(h)) = q̄` for the inner pressure heads by damped Newton
/// on the nodal equations. The initial guess comes from the linearised
/// network `L θ = A diag(c_l) C̃_sᵀ h_s − q̄` unless one is supplied.
pub fn solve_steady(
    eps: &DVector<f64>,
    q_bar: &DVector<f64>,
    h_s: &DVector<f64>,
    topo: &NetworkTopology,
    pipes: &PipeCatalog,
    h_guess: Option<&DVector<f64>>,
) -> Result<SteadySolution> {
    if eps.len() != topo.n_l || q_bar.len() != topo.n_j || h_s.len() != topo.n_s {
        return Err(Error::Dimension("solve_steady arguments do not match topology".into()));
    }
    let a = topo.a();
    let mut heads = match h_guess {
        Some(h) => h.clone(),
        None => {
            let l = a * DMatrix::from_diagonal(&pipes.c_l) * a.transpose();
            let rhs = a * pipes.c_l.component_mul(&(topo.source_incidence_f().transpose() * h_s))
                - q_bar;
            let theta = l
                .cholesky()
                .ok_or_else(|| Error::InvalidNetwork("L is not positive definite".into()))?
                .solve(&rhs);
            let mut guess = theta - &topo.elevations;
            // break exact head ties so no pipe starts at Δh = 0
            let dh = delta_h_of_heads(topo, h_s, &guess);
            if dh.iter().any(|&v| v == 0.0) {
                for i in 0..guess.len() {
                    guess[i] += 1e-6 * (i + 1) as f64;
                }
            }
            guess
        }
    };

    let eval = |heads: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let dh = delta_h_of_heads(topo, h_s, heads);
        let zero: Vec<usize> = (0..topo.n_l).filter(|&j| dh[j] == 0.0).collect();
        if !zero.is_empty() {
            return Err(Error::ZeroHeadLoss {
                pipes: zero,
                context: " (steady solve)".into(),
            });
        }
        let q = flow::flows(eps, &dh, pipes);
        let r = a * &q - q_bar;
        Ok((dh, q, r))
    };

    let (mut dh, mut q, mut r) = eval(&heads)?;
    let mut v = r.iter().map(|x| x.abs()).sum::<f64>();
    let tol = 1e-12;
    let mut converged = r.amax() <= tol;
    for _ in 0..200 {
        if converged {
            break;
        }
        let bundle = flow::derivatives(eps, &dh, pipes)?;
        // ∂(A f_t)/∂h = −A diag(p_Δh) Aᵀ
        let j = -(a * DMatrix::from_diagonal(&bundle.p_dh) * a.transpose());
        let step = j
            .lu()
            .solve(&-&r)
            .ok_or_else(|| Error::Singular {
                message: "steady-state Jacobian is singular".into(),
                condition: f64::INFINITY,
            })?;
        let mut mu = 1.0;
        let mut accepted = false;
        while mu >= 1e-12 {
            let trial = &heads + mu * &step;
            if let Ok((dh_t, q_t, r_t)) = eval(&trial) {
                let v_t = r_t.iter().map(|x| x.abs()).sum::<f64>();
                if v_t < v && v_t.is_finite() {
                    heads = trial;
                    dh = dh_t;
                    q = q_t;
                    r = r_t;
                    v = v_t;
                    accepted = true;
                    break;
                }
            }
            mu *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = r.amax() <= tol;
    }
    if r.amax() > 1e-10 {
        return Err(Error::Solver(format!(
            "steady solve did not converge: max nodal residual {:.3e} m³/s, per node {:?}",
            r.amax(),
            r.as_slice()
        )));
    }
    let turbulent = flow::reynolds_ok(&q, pipes);
    if turbulent.iter().any(|&t| !t) {
        let violators: Vec<usize> = turbulent
            .iter()
            .enumerate()
            .filter(|(_, &t)| !t)
            .map(|(j, _)| j)
            .collect();
        log::warn!("steady solution leaves the turbulent regime on pipes {violators:?}");
    }
    Ok(SteadySolution {
        heads,
        flows: q,
        delta_h: dh,
        node_residual: r,
        turbulent,
    })
}

/// Generate one measurement set per demand/source-head pair from steady
/// solves at the given roughness. Sensed heads are emitted
/// elevation-inclusive; the full pressure-head vectors are returned alongside
/// as hidden ground truth.
pub fn generate_measurements(
    eps: &DVector<f64>,
    demands: &[DVector<f64>],
    source_heads: &[DVector<f64>],
    topo: &NetworkTopology,
    pipes: &PipeCatalog,
) -> Result<(Vec<MeasurementSet>, Vec<DVector<f64>>)> {
    if demands.len() != source_heads.len() {
        return Err(Error::Dimension("one source-head vector per demand vector required".into()));
    }
    let mut sets = Vec::with_capacity(demands.len());
    let mut truth = Vec::with_capacity(demands.len());
    for (idx, (q_bar, h_s)) in demands.iter().zip(source_heads).enumerate() {
        let sol = solve_steady(eps, q_bar, h_s, topo, pipes, None).map_err(|e| {
            Error::Solver(format!("measurement set {}: {e}", idx + 1))
        })?;
        let total = &sol.heads + &topo.elevations;
        let y_h = DVector::from_fn(topo.n_p, |r, _| total[topo.sensed[r]]);
        sets.push(MeasurementSet {
            y_h,
            q: q_bar.clone(),
            h_s: h_s.clone(),
            id: idx + 1,
        });
        truth.push(sol.heads);
    }
    Ok((sets, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reproduces_published_heads_within_tolerance() {
        let (topo, pipes) = benchmark::three_cycle_network();
        let sets = benchmark::table2_sets();
        let published_hn = benchmark::h_n_star_published();
        for (i, set) in sets.iter().enumerate() {
            let sol = solve_steady(&benchmark::eps_star(), &set.q, &set.h_s, &topo, &pipes, None).unwrap();
            let total = &sol.heads + &topo.elevations;
            for (r, &node) in topo.sensed.iter().enumerate() {
                assert_abs_diff_eq!(total[node], set.y_h[r], epsilon = 5e-3);
            }
            assert_abs_diff_eq!(sol.heads[0], published_hn[i][0], epsilon = 5e-3);
            assert_abs_diff_eq!(sol.heads[4], published_hn[i][1], epsilon = 5e-3);
            assert!(sol.node_residual.amax() <= 1e-10);
            assert!(sol.turbulent.iter().all(|&t| t));
        }
    }

    #[test]
    fn zero_demand_gives_hydrostatic_equilibrium() {
        let (topo, pipes) = benchmark::three_cycle_network();
        let sol = solve_steady(
            &benchmark::eps_star(),
            &DVector::zeros(5),
            &DVector::from_vec(vec![100.0]),
            &topo,
            &pipes,
            None,
        )
        .unwrap();
        // all total heads settle at the source head, all flows vanish; the
        // nodal balance (not the head) carries the 1e-10 guarantee
        let total = &sol.heads + &topo.elevations;
        for v in total.iter() {
            assert_abs_diff_eq!(*v, 100.0, epsilon = 1e-6);
        }
        assert!(sol.flows.amax() < 1e-7);
        assert!(sol.node_residual.amax() <= 1e-10);
        assert!(sol.turbulent.iter().all(|&t| !t));
    }

    #[test]
    fn cycle_energy_consistency() {
        // Δh built from nodal heads satisfies S·Δh = 0 by construction
        let (topo, pipes) = benchmark::three_cycle_network();
        let sets = benchmark::table2_sets();
        let sol = solve_steady(&benchmark::eps_star(), &sets[0].q, &sets[0].h_s, &topo, &pipes, None).unwrap();
        let s = topo.cycle_f();
        let around = s * &sol.delta_h;
        assert!(around.amax() < 1e-12);
    }

    #[test]
    fn regenerated_sensed_heads_match_table() {
        let (topo, pipes) = benchmark::three_cycle_network();
        let sets = benchmark::table2_sets();
        let demands: Vec<_> = sets.iter().map(|s| s.q.clone()).collect();
        let heads: Vec<_> = sets.iter().map(|s| s.h_s.clone()).collect();
        let (generated, truth) =
            generate_measurements(&benchmark::eps_star(), &demands, &heads, &topo, &pipes).unwrap();
        for (gen, published) in generated.iter().zip(&sets) {
            for r in 0..topo.n_p {
                assert_abs_diff_eq!(gen.y_h[r], published.y_h[r], epsilon = 5e-3);
            }
        }
        assert_eq!(truth.len(), 3);
    }
}
