//! Property tests of the structural and pointwise invariants.

mod common;

use nalgebra::DVector;
use pipecal::flow::{derivatives_scalar, flow, reynolds_ok};
use pipecal::network::{head_loss, PipeCatalog};
use pipecal::synth;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

proptest! {
    /// S·Aᵀ = 0 in integer arithmetic and the sensor selectors partition the
    /// identity, for arbitrary generated networks.
    #[test]
    fn network_structure_invariants(seed in 0u64..5000, n_j in 3usize..8, extra in 0usize..4, n_p in 1usize..4) {
        let mut rng = StdRng::seed_from_u64(seed);
        let n_l = n_j + extra;
        let n_p = n_p.min(n_j);
        let (topo, pipes) = synth::random_network(&mut rng, n_j, n_l, n_p).unwrap();
        let prod = &topo.cycle * topo.incidence.transpose();
        prop_assert!(prod.iter().all(|&v| v == 0));
        let ident = topo.sensor_select.transpose() * &topo.sensor_select
            + topo.sensor_complement.transpose() * &topo.sensor_complement;
        for r in 0..n_j {
            for c in 0..n_j {
                prop_assert_eq!(ident[(r, c)], i64::from(r == c));
            }
        }
        // L = A diag(c_l) Aᵀ is symmetric positive definite
        let a = topo.a();
        let l = a * nalgebra::DMatrix::from_diagonal(&pipes.c_l) * a.transpose();
        let eig = l.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&v| v > 0.0), "eigenvalues {:?}", eig.as_slice());
    }

    /// head_loss(h_N + δ) − head_loss(h_N) = −AᵀC̄_hᵀδ exactly.
    #[test]
    fn head_loss_affinity(seed in 0u64..2000, delta0 in -5.0f64..5.0, delta1 in -5.0f64..5.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (topo, _) = synth::random_network(&mut rng, 4, 6, 2).unwrap();
        let z = topo.elevations.clone();
        let h_s = DVector::from_element(1, 100.0);
        let y_h = DVector::from_element(topo.n_p, 95.0);
        let h_n = DVector::from_element(topo.n_j - topo.n_p, 93.0);
        let delta = DVector::from_vec(vec![delta0, delta1]);
        let base = head_loss(&topo, &z, &h_s, &y_h, &h_n).unwrap();
        let moved = head_loss(&topo, &z, &h_s, &y_h, &(&h_n + &delta)).unwrap();
        let expected = -(topo.at_cbar_t() * &delta);
        prop_assert!(((moved - base) - expected).amax() < 1e-12);
    }

    /// Odd symmetry of the flow and the derivative sign structure across the
    /// sampled turbulent domain.
    #[test]
    fn flow_symmetry_and_derivative_signs(
        d in 0.03f64..0.08,
        l in 5.0f64..30.0,
        eps_frac in 0.0f64..0.05,
        dh_mag in 0.01f64..20.0,
        flip in proptest::bool::ANY,
    ) {
        let pipes = PipeCatalog::new(
            DVector::from_element(1, l),
            DVector::from_element(1, d),
            9.81,
            998.2,
            1.002e-3,
        ).unwrap();
        let pipe = pipes.pipe(0);
        let eps = eps_frac * d;
        let dh = if flip { -dh_mag } else { dh_mag };
        prop_assert!((flow(eps, -dh, &pipe) + flow(eps, dh, &pipe)).abs() < 1e-18);
        prop_assert!((flow(eps, -dh, &pipe).abs() - flow(eps, dh, &pipe).abs()).abs() < 1e-18);
        let [p_eps, _, _, p_epsdh, _] = derivatives_scalar(eps, dh, &pipe).unwrap();
        prop_assert_eq!(p_eps.signum(), -dh.signum());
        // the mixed derivative is sign-definite (negative) in the domain
        prop_assert!(p_epsdh < 0.0);
    }

    /// Reynolds check against a direct formula.
    #[test]
    fn reynolds_direct(q_lps in -20.0f64..20.0, d in 0.03f64..0.08) {
        let pipes = PipeCatalog::new(
            DVector::from_element(1, 10.0),
            DVector::from_element(1, d),
            9.81,
            998.2,
            1.002e-3,
        ).unwrap();
        let q = q_lps * 1e-3;
        let re = q.abs() * d * 998.2 / (pipes.area[0] * 1.002e-3);
        prop_assert_eq!(reynolds_ok(&DVector::from_element(1, q), &pipes), vec![re >= 4000.0]);
    }
}
