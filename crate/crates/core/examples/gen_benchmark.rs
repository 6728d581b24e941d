//! Regenerate the bundled 3-cycle benchmark files:
//! `data/threecycle_meas_hires.csv` (steady-state heads at ε*, rounded to
//! 5 decimals) and `data/threecycle_xstar.json` (ε* plus the per-set
//! least-squares heads on that data).
//!
//! Run from the workspace root: `cargo run -p pipecal --example gen_benchmark`

use nalgebra::DVector;
use pipecal::assembly::{jacobian, residual, CalibrationState, Problem};
use pipecal::benchmark;
use pipecal::forward::solve_steady;
use pipecal::network::{measurements_to_csv, MeasurementSet};

fn main() {
    let (topo, pipes) = benchmark::three_cycle_network();
    let published = benchmark::table2_sets();
    let eps_star = benchmark::eps_star();

    // steady solves at ε* for the published demand pattern
    let mut hires = Vec::new();
    for set in &published {
        let sol = solve_steady(&eps_star, &set.q, &set.h_s, &topo, &pipes, None).unwrap();
        assert!(sol.node_residual.amax() <= 1e-12);
        let total = &sol.heads + &topo.elevations;
        let y_h = DVector::from_fn(topo.n_p, |r, _| {
            (total[topo.sensed[r]] * 1e5).round() / 1e5
        });
        hires.push(MeasurementSet {
            y_h,
            q: set.q.clone(),
            h_s: set.h_s.clone(),
            id: set.id,
        });
    }
    let csv = measurements_to_csv(&topo, &hires);
    std::fs::write("data/threecycle_meas_hires.csv", &csv).unwrap();
    println!("wrote data/threecycle_meas_hires.csv");

    // per-set least-squares heads given ε* on the rounded data (the same
    // construction that produced the published reference column)
    let mut heads_m = Vec::new();
    let mut v_total = 0.0;
    for set in &hires {
        let single = Problem::new(topo.clone(), pipes.clone(), vec![set.clone()]).unwrap();
        let guess = solve_steady(&eps_star, &set.q, &set.h_s, &topo, &pipes, None).unwrap();
        let mut h_n = DVector::from_vec(vec![guess.heads[0], guess.heads[4]]);
        for _ in 0..60 {
            let mut x = DVector::zeros(10);
            x.rows_mut(0, 8).copy_from(&eps_star);
            x.rows_mut(8, 2).copy_from(&h_n);
            let state = CalibrationState::new(&single, x).unwrap();
            let f = residual(&state, &single).unwrap().f;
            let j = jacobian(&state, &single).unwrap();
            let jh = j.columns(8, 2).into_owned();
            let delta = (jh.transpose() * &jh)
                .cholesky()
                .unwrap()
                .solve(&(-(jh.transpose() * &f)));
            h_n += &delta;
            if delta.norm() < 1e-14 {
                break;
            }
        }
        let mut x = DVector::zeros(10);
        x.rows_mut(0, 8).copy_from(&eps_star);
        x.rows_mut(8, 2).copy_from(&h_n);
        let state = CalibrationState::new(&single, x).unwrap();
        let rep = residual(&state, &single).unwrap();
        v_total += rep.v;
        heads_m.push(vec![h_n[0], h_n[1]]);
    }
    let reference = benchmark::ReferenceSolution {
        roughness_m: eps_star.iter().copied().collect(),
        heads_m,
    };
    std::fs::write(
        "data/threecycle_xstar.json",
        serde_json::to_string_pretty(&reference).unwrap(),
    )
    .unwrap();
    println!("wrote data/threecycle_xstar.json");
    println!("v(x*) on the hires data: {v_total:.6e} m3/s");
}
