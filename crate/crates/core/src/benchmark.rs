//! Bundled 3-cycle benchmark: network, measurement sets, reference solution
//! and the standard initial state.
//!
//! Two measurement files ship with the crate. `threecycle_meas.csv` carries
//! the published values (sensed heads printed to 4 decimals, which leaves a
//! residual floor around 1e-5 m³/s). `threecycle_meas_hires.csv` carries the
//! same demand pattern regenerated with the steady-state forward solver and
//! heads kept to 5 decimals, which restores the benchmark's published
//! residual scale (~1e-7 m³/s); the calibration comparisons run on that file.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::network::{measurements_from_csv, network_from_json, MeasurementSet, NetworkTopology, PipeCatalog};

pub const NETWORK_JSON: &str = include_str!("../../../data/threecycle.net");
pub const MEASUREMENTS_CSV: &str = include_str!("../../../data/threecycle_meas.csv");
pub const MEASUREMENTS_HIRES_CSV: &str = include_str!("../../../data/threecycle_meas_hires.csv");
pub const XSTAR_JSON: &str = include_str!("../../../data/threecycle_xstar.json");

/// The 3-cycle network: 5 inner nodes, 1 reservoir, 8 pipes, sensors at
/// nodes 2–4.
pub fn three_cycle_network() -> (NetworkTopology, PipeCatalog) {
    network_from_json(NETWORK_JSON).expect("bundled network is valid")
}

/// The three published measurement sets.
pub fn table2_sets() -> Vec<MeasurementSet> {
    let (topo, _) = three_cycle_network();
    measurements_from_csv(MEASUREMENTS_CSV, &topo).expect("bundled measurements are valid")
}

/// Steady-state regenerated measurement sets (5-decimal heads).
pub fn hires_sets() -> Vec<MeasurementSet> {
    let (topo, _) = three_cycle_network();
    measurements_from_csv(MEASUREMENTS_HIRES_CSV, &topo).expect("bundled measurements are valid")
}

/// True roughness per pipe (m).
pub fn eps_star() -> DVector<f64> {
    DVector::from_vec(vec![2.0, 1.75, 1.5, 1.25, 1.0, 0.75, 0.5, 0.25]).scale(1e-3)
}

/// Published unmeasured heads of the reference solution, per set (m).
pub fn h_n_star_published() -> [[f64; 2]; 3] {
    [[93.104, 90.885], [88.538, 84.846], [82.818, 77.280]]
}

/// Reference solution sidecar: ε* plus full-precision per-set least-squares
/// heads for the hires measurement file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub roughness_m: Vec<f64>,
    /// One row of unmeasured pressure heads per measurement set.
    pub heads_m: Vec<Vec<f64>>,
}

pub fn x_star() -> ReferenceSolution {
    serde_json::from_str(XSTAR_JSON).expect("bundled reference solution is valid")
}

/// The published initial state: ε₀ = 1 % of the diameter, heads as listed.
pub fn x0() -> DVector<f64> {
    let mut x = DVector::zeros(8 + 6);
    for j in 0..8 {
        x[j] = 0.0004;
    }
    for (i, v) in [93.9488, 90.8934, 89.9429, 84.8642, 84.9250, 77.3115]
        .into_iter()
        .enumerate()
    {
        x[8 + i] = v;
    }
    x
}
