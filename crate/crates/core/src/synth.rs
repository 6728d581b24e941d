//! Seeded random test instances: spanning-tree-plus-chords networks, demand
//! patterns, and synthetic turbulent states.

use nalgebra::DVector;
use rand::prelude::*;
use rand::rngs::StdRng;

use crate::error::Result;
use crate::network::{Endpoint, NetworkTopology, PipeCatalog};

/// A random connected network: a spanning tree over `n_j` inner nodes plus
/// one source, extended by distinct chord edges up to `n_l` pipes, with
/// `n_p` sensors on random inner nodes.
pub fn random_network(
    rng: &mut StdRng,
    n_j: usize,
    n_l: usize,
    n_p: usize,
) -> Result<(NetworkTopology, PipeCatalog)> {
    assert!(n_l >= n_j, "need at least a spanning tree");
    assert!(n_p <= n_j);
    // nodes 0..n_j inner, one source; tree edges attach each node to a random
    // earlier node (the source counts as the root)
    let mut ends: Vec<(Endpoint, Endpoint)> = Vec::with_capacity(n_l);
    for i in 0..n_j {
        let parent = if i == 0 {
            Endpoint::Source(0)
        } else if rng.random_range(0..=i) == 0 {
            Endpoint::Source(0)
        } else {
            Endpoint::Inner(rng.random_range(0..i))
        };
        ends.push((parent, Endpoint::Inner(i)));
    }
    let mut existing: std::collections::HashSet<(usize, usize)> = ends
        .iter()
        .map(|&(a, b)| edge_key(a, b, n_j))
        .collect();
    let mut guard = 0;
    while ends.len() < n_l {
        let a = rng.random_range(0..n_j + 1);
        let b = rng.random_range(0..n_j + 1);
        let (ea, eb) = (endpoint_of(a, n_j), endpoint_of(b, n_j));
        let key = edge_key(ea, eb, n_j);
        if a != b && !existing.contains(&key) {
            existing.insert(key);
            ends.push((ea, eb));
        }
        guard += 1;
        if guard > 10_000 {
            // dense graph: allow parallel pipes rather than looping forever
            if a != b {
                ends.push((ea, eb));
            }
        }
    }
    let mut sensed: Vec<usize> = (0..n_j).collect();
    sensed.shuffle(rng);
    sensed.truncate(n_p);

    let elevations = DVector::from_fn(n_j, |_, _| rng.random_range(0.0..5.0));
    let node_names = (0..n_j).map(|i| format!("n{}", i + 1)).collect();
    let pipe_names = (0..n_l).map(|i| format!("p{}", i + 1)).collect();
    let topo = NetworkTopology::new(
        n_j,
        1,
        ends,
        sensed,
        elevations,
        node_names,
        vec!["src".into()],
        pipe_names,
    )?;
    let length = DVector::from_fn(n_l, |_, _| rng.random_range(5.0..30.0));
    let diameter = DVector::from_fn(n_l, |_, _| rng.random_range(0.03..0.08));
    let pipes = PipeCatalog::new(length, diameter, 9.81, 998.2, 1.002e-3)?;
    Ok((topo, pipes))
}

fn endpoint_of(idx: usize, n_j: usize) -> Endpoint {
    if idx < n_j {
        Endpoint::Inner(idx)
    } else {
        Endpoint::Source(idx - n_j)
    }
}

fn edge_key(a: Endpoint, b: Endpoint, n_j: usize) -> (usize, usize) {
    let idx = |e: Endpoint| match e {
        Endpoint::Inner(i) => i,
        Endpoint::Source(s) => n_j + s,
    };
    let (x, y) = (idx(a), idx(b));
    (x.min(y), x.max(y))
}

/// A random tree network where every inner node carries a sensor
/// (`n_p = n_j`, `n_l = n_j`); the well-posed single-set setting.
pub fn random_tree_network(rng: &mut StdRng, n_j: usize) -> Result<(NetworkTopology, PipeCatalog)> {
    random_network(rng, n_j, n_j, n_j)
}

/// Random roughness within `[lo, hi]` fractions of each diameter.
pub fn random_roughness(rng: &mut StdRng, pipes: &PipeCatalog, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(pipes.n_pipes(), |j, _| {
        pipes.diameter[j] * rng.random_range(lo..hi)
    })
}

/// Demands drawing every inner node in `[0.5, 2.5]` l/s; keeps the network
/// well inside the turbulent regime for desk-scale pipes.
pub fn random_demands(rng: &mut StdRng, n_j: usize) -> DVector<f64> {
    DVector::from_fn(n_j, |_, _| rng.random_range(0.5e-3..2.5e-3))
}

/// A sampled turbulent evaluation point `(ε, Δh)` for one pipe:
/// `ε ∈ [0, 0.05 d]`, `|Δh| ∈ [0.01, 20]` with random sign.
pub fn random_turbulent_point(rng: &mut StdRng, diameter: f64) -> (f64, f64) {
    let eps = rng.random_range(0.0..0.05 * diameter);
    let mag = 10f64.powf(rng.random_range(-2.0..1.3_f64)).min(20.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    (eps, sign * mag)
}
