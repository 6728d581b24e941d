//! Network graph structure, structural matrices and file ingestion.
//!
//! Index conventions: inner nodes, source nodes and pipes are numbered by
//! their order of appearance in the network file. The incidence matrix `A`
//! counts flow into an inner node as positive; the source incidence counts
//! flow out of a source as positive. All internal units are SI (m, m³/s).

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Water at 20 °C; the paper treats these as constants.
pub const DEFAULT_RHO: f64 = 998.2;
pub const DEFAULT_ETA: f64 = 1.002e-3;
pub const DEFAULT_G: f64 = 9.81;

/// One end of a pipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Inner(usize),
    Source(usize),
}

/// Graph structure of the network with all structural matrices.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    pub n_j: usize,
    pub n_s: usize,
    pub n_l: usize,
    pub n_p: usize,
    /// Inner-node incidence matrix `A`, n_j × n_l, entries in {−1,0,1}.
    pub incidence: DMatrix<i64>,
    /// Source incidence `C̃_s`, n_s × n_l; +1 where a pipe leaves the source.
    pub source_incidence: DMatrix<i64>,
    /// Cycle matrix `S`, (n_l − n_j) × n_l, with `S·Aᵀ = 0`.
    pub cycle: DMatrix<i64>,
    /// Sensor selector `C_h`, n_p × n_j.
    pub sensor_select: DMatrix<i64>,
    /// Complement `C̄_h`, (n_j − n_p) × n_j.
    pub sensor_complement: DMatrix<i64>,
    /// Inner-node elevations z (m).
    pub elevations: DVector<f64>,
    /// Sensed inner nodes in ascending index order.
    pub sensed: Vec<usize>,
    /// Unsensed inner nodes in ascending index order.
    pub unsensed: Vec<usize>,
    /// Pipe endpoints, in pipe order (`from`, `to`); positive flow runs from → to.
    pub pipe_ends: Vec<(Endpoint, Endpoint)>,
    pub node_names: Vec<String>,
    pub source_names: Vec<String>,
    pub pipe_names: Vec<String>,
    a_f: DMatrix<f64>,
    cs_f: DMatrix<f64>,
    ch_f: DMatrix<f64>,
    cbar_f: DMatrix<f64>,
    /// Cached `Aᵀ C̄_hᵀ`, n_l × (n_j − n_p); the constant head-loss sensitivity is its negative.
    at_cbar_t: DMatrix<f64>,
}

impl NetworkTopology {
    /// Build from pipe endpoints, sensor placement and elevations; computes a
    /// fundamental cycle basis and validates every structural invariant.
    pub fn new(
        n_j: usize,
        n_s: usize,
        pipe_ends: Vec<(Endpoint, Endpoint)>,
        sensed: Vec<usize>,
        elevations: DVector<f64>,
        node_names: Vec<String>,
        source_names: Vec<String>,
        pipe_names: Vec<String>,
    ) -> Result<Self> {
        let n_l = pipe_ends.len();
        if n_s == 0 {
            return Err(Error::InvalidNetwork("no source node".into()));
        }
        if elevations.len() != n_j {
            return Err(Error::Dimension(format!(
                "elevations has length {}, expected {n_j}",
                elevations.len()
            )));
        }
        let mut incidence = DMatrix::<i64>::zeros(n_j, n_l);
        let mut source_incidence = DMatrix::<i64>::zeros(n_s, n_l);
        for (p, &(from, to)) in pipe_ends.iter().enumerate() {
            if from == to {
                return Err(Error::InvalidNetwork(format!("pipe {p} is a self-loop")));
            }
            match from {
                Endpoint::Inner(i) => incidence[(i, p)] -= 1,
                Endpoint::Source(s) => source_incidence[(s, p)] += 1,
            }
            match to {
                Endpoint::Inner(i) => incidence[(i, p)] += 1,
                Endpoint::Source(s) => source_incidence[(s, p)] -= 1,
            }
        }

        let mut sensed = sensed;
        sensed.sort_unstable();
        sensed.dedup();
        if sensed.iter().any(|&i| i >= n_j) {
            return Err(Error::InvalidNetwork("sensor index out of range".into()));
        }
        let n_p = sensed.len();
        let unsensed: Vec<usize> = (0..n_j).filter(|i| !sensed.contains(i)).collect();
        let mut sensor_select = DMatrix::<i64>::zeros(n_p, n_j);
        for (r, &i) in sensed.iter().enumerate() {
            sensor_select[(r, i)] = 1;
        }
        let mut sensor_complement = DMatrix::<i64>::zeros(n_j - n_p, n_j);
        for (r, &i) in unsensed.iter().enumerate() {
            sensor_complement[(r, i)] = 1;
        }

        let cycle = fundamental_cycles(n_j, n_l, &pipe_ends)?;

        let a_f = incidence.map(|v| v as f64);
        let cs_f = source_incidence.map(|v| v as f64);
        let ch_f = sensor_select.map(|v| v as f64);
        let cbar_f = sensor_complement.map(|v| v as f64);
        let at_cbar_t = a_f.transpose() * cbar_f.transpose();

        let topo = Self {
            n_j,
            n_s,
            n_l,
            n_p,
            incidence,
            source_incidence,
            cycle,
            sensor_select,
            sensor_complement,
            elevations,
            sensed,
            unsensed,
            pipe_ends,
            node_names,
            source_names,
            pipe_names,
            a_f,
            cs_f,
            ch_f,
            cbar_f,
            at_cbar_t,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a_f
    }

    pub fn source_incidence_f(&self) -> &DMatrix<f64> {
        &self.cs_f
    }

    pub fn sensor_select_f(&self) -> &DMatrix<f64> {
        &self.ch_f
    }

    pub fn sensor_complement_f(&self) -> &DMatrix<f64> {
        &self.cbar_f
    }

    /// `Aᵀ C̄_hᵀ`; `∂Δh/∂h_N` is the negative of this constant matrix.
    pub fn at_cbar_t(&self) -> &DMatrix<f64> {
        &self.at_cbar_t
    }

    pub fn cycle_f(&self) -> DMatrix<f64> {
        self.cycle.map(|v| v as f64)
    }

    /// Minimal number of measurement sets for as many nodal equations as unknowns.
    pub fn n_m_min(&self) -> usize {
        self.n_l.div_ceil(self.n_p.max(1))
    }

    fn validate(&self) -> Result<()> {
        // connectivity over the full node set
        let mut seen = vec![false; self.n_j + self.n_s];
        let mut queue = VecDeque::new();
        seen[self.n_j] = true; // first source
        queue.push_back(self.n_j);
        let node_of = |e: Endpoint| match e {
            Endpoint::Inner(i) => i,
            Endpoint::Source(s) => self.n_j + s,
        };
        while let Some(u) = queue.pop_front() {
            for &(from, to) in &self.pipe_ends {
                let (a, b) = (node_of(from), node_of(to));
                for (x, y) in [(a, b), (b, a)] {
                    if x == u && !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidNetwork("graph is not connected".into()));
        }

        // every column of the complete incidence [−Aᵀ; C̃_s]ᵀ has exactly one
        // +1 and one −1: inner rows enter negated
        for p in 0..self.n_l {
            let mut plus = 0;
            let mut minus = 0;
            for j in 0..self.n_j {
                match -self.incidence[(j, p)] {
                    1 => plus += 1,
                    -1 => minus += 1,
                    0 => {}
                    v => {
                        return Err(Error::InvalidNetwork(format!(
                            "incidence entry {v} out of {{-1,0,1}}"
                        )))
                    }
                }
            }
            for s in 0..self.n_s {
                match self.source_incidence[(s, p)] {
                    1 => plus += 1,
                    -1 => minus += 1,
                    0 => {}
                    v => {
                        return Err(Error::InvalidNetwork(format!(
                            "source incidence entry {v} out of {{-1,0,1}}"
                        )))
                    }
                }
            }
            if plus != 1 || minus != 1 {
                return Err(Error::InvalidNetwork(format!(
                    "pipe {p} does not connect exactly two distinct nodes"
                )));
            }
        }

        // S·Aᵀ = 0 in integer arithmetic
        let prod = &self.cycle * self.incidence.transpose();
        if prod.iter().any(|&v| v != 0) {
            return Err(Error::InvalidNetwork("cycle matrix violates S·Aᵀ = 0".into()));
        }

        // rank checks
        let svd_a = self.a_f.clone().svd(false, false);
        let smax = svd_a.singular_values.max();
        let rank_a = svd_a
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * smax)
            .count();
        if rank_a != self.n_j {
            return Err(Error::InvalidNetwork(format!(
                "incidence matrix is rank deficient: rank {rank_a} < {}",
                self.n_j
            )));
        }
        if self.n_l > self.n_j {
            let s_f = self.cycle_f();
            let svd_s = s_f.svd(false, false);
            let smax = svd_s.singular_values.max();
            let rank_s = svd_s
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-10 * smax)
                .count();
            if rank_s != self.n_l - self.n_j {
                return Err(Error::InvalidNetwork(format!(
                    "cycle matrix is rank deficient: rank {rank_s} < {}",
                    self.n_l - self.n_j
                )));
            }
        }

        // C_hᵀC_h + C̄_hᵀC̄_h = I
        let ident = self.ch_f.transpose() * &self.ch_f + self.cbar_f.transpose() * &self.cbar_f;
        let eye = DMatrix::<f64>::identity(self.n_j, self.n_j);
        if (ident - eye).abs().max() != 0.0 {
            return Err(Error::InvalidNetwork("sensor selectors do not partition the nodes".into()));
        }
        Ok(())
    }

    /// Inner nodes adjacent to `node` through a pipe, together with adjacent sources.
    pub fn neighbours(&self, node: usize) -> (Vec<usize>, Vec<usize>) {
        let mut inner = Vec::new();
        let mut sources = Vec::new();
        for &(from, to) in &self.pipe_ends {
            let other = match (from, to) {
                (Endpoint::Inner(i), o) if i == node => Some(o),
                (o, Endpoint::Inner(i)) if i == node => Some(o),
                _ => None,
            };
            match other {
                Some(Endpoint::Inner(i)) => inner.push(i),
                Some(Endpoint::Source(s)) => sources.push(s),
                None => {}
            }
        }
        (inner, sources)
    }
}

/// Fundamental cycle basis from a BFS spanning tree. Sources are merged into
/// one virtual node so that source-to-source paths land in the kernel of `A`.
fn fundamental_cycles(
    n_j: usize,
    n_l: usize,
    pipe_ends: &[(Endpoint, Endpoint)],
) -> Result<DMatrix<i64>> {
    let node_of = |e: Endpoint| match e {
        Endpoint::Inner(i) => i,
        Endpoint::Source(_) => n_j, // merged virtual source node
    };
    let n_nodes = n_j + 1;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes]; // (neighbour, pipe)
    for (p, &(from, to)) in pipe_ends.iter().enumerate() {
        let (a, b) = (node_of(from), node_of(to));
        adj[a].push((b, p));
        adj[b].push((a, p));
    }

    // BFS tree rooted at the virtual source node
    let mut parent_edge: Vec<Option<(usize, usize)>> = vec![None; n_nodes]; // (parent node, pipe)
    let mut visited = vec![false; n_nodes];
    let mut in_tree = vec![false; n_l];
    let mut queue = VecDeque::new();
    visited[n_j] = true;
    queue.push_back(n_j);
    while let Some(u) = queue.pop_front() {
        for &(v, p) in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                parent_edge[v] = Some((u, p));
                in_tree[p] = true;
                queue.push_back(v);
            }
        }
    }
    if visited.iter().any(|&v| !v) {
        return Err(Error::InvalidNetwork("graph is not connected".into()));
    }

    let path_to_root = |mut u: usize| -> Vec<(usize, usize, usize)> {
        // (pipe, from-node, to-node) walking towards the root
        let mut path = Vec::new();
        while let Some((par, p)) = parent_edge[u] {
            path.push((p, u, par));
            u = par;
        }
        path
    };

    let n_cycles = n_l - n_j;
    let chords: Vec<usize> = (0..n_l).filter(|&p| !in_tree[p]).collect();
    if chords.len() != n_cycles {
        return Err(Error::InvalidNetwork(format!(
            "expected {n_cycles} chords, found {}",
            chords.len()
        )));
    }

    let mut cycle = DMatrix::<i64>::zeros(n_cycles, n_l);
    for (row, &chord) in chords.iter().enumerate() {
        let (from, to) = pipe_ends[chord];
        let (a, b) = (node_of(from), node_of(to));
        cycle[(row, chord)] = 1;
        // close the circulation: walk from the chord head back to its tail
        let pa = path_to_root(a);
        let pb = path_to_root(b);
        // drop the common tail of both root paths
        let mut la = pa.len();
        let mut lb = pb.len();
        while la > 0 && lb > 0 && pa[la - 1].0 == pb[lb - 1].0 {
            la -= 1;
            lb -= 1;
        }
        // b → meet, then meet → a (reversed edges of a's path)
        for &(p, u, v) in &pb[..lb] {
            // walking u → v along the path direction
            let oriented_forward = node_of(pipe_ends[p].0) == u && node_of(pipe_ends[p].1) == v;
            cycle[(row, p)] += if oriented_forward { 1 } else { -1 };
        }
        for &(p, u, v) in pa[..la].iter().rev() {
            // walking v → u (towards a)
            let oriented_forward = node_of(pipe_ends[p].0) == v && node_of(pipe_ends[p].1) == u;
            cycle[(row, p)] += if oriented_forward { 1 } else { -1 };
        }
    }
    Ok(cycle)
}

/// Per-pipe physical parameters and fluid constants.
#[derive(Debug, Clone)]
pub struct PipeCatalog {
    pub length: DVector<f64>,
    pub diameter: DVector<f64>,
    pub area: DVector<f64>,
    /// `k_j = l_j / (2 d_j g A_j²)`, the Darcy-Weisbach resistance scale (s²/m⁵).
    pub k: DVector<f64>,
    /// `c_l_j = g A_j / l_j`.
    pub c_l: DVector<f64>,
    pub gravity: f64,
    pub density: f64,
    pub viscosity: f64,
}

impl PipeCatalog {
    pub fn new(
        length: DVector<f64>,
        diameter: DVector<f64>,
        gravity: f64,
        density: f64,
        viscosity: f64,
    ) -> Result<Self> {
        if length.len() != diameter.len() {
            return Err(Error::Dimension("length/diameter size mismatch".into()));
        }
        if length.iter().chain(diameter.iter()).any(|&v| v <= 0.0) {
            return Err(Error::InvalidNetwork(
                "pipe lengths and diameters must be strictly positive".into(),
            ));
        }
        let area = diameter.map(|d| std::f64::consts::PI * d * d / 4.0);
        let k = DVector::from_fn(length.len(), |j, _| {
            length[j] / (2.0 * diameter[j] * gravity * area[j] * area[j])
        });
        let c_l = DVector::from_fn(length.len(), |j, _| gravity * area[j] / length[j]);
        Ok(Self {
            length,
            diameter,
            area,
            k,
            c_l,
            gravity,
            density,
            viscosity,
        })
    }

    pub fn n_pipes(&self) -> usize {
        self.length.len()
    }

    /// Scalar parameter bundle for pipe `j`.
    pub fn pipe(&self, j: usize) -> Pipe {
        Pipe {
            diameter: self.diameter[j],
            area: self.area[j],
            k: self.k[j],
            density: self.density,
            viscosity: self.viscosity,
        }
    }
}

/// Parameters of a single pipe, enough to evaluate the turbulent flow law.
#[derive(Debug, Clone, Copy)]
pub struct Pipe {
    pub diameter: f64,
    pub area: f64,
    pub k: f64,
    pub density: f64,
    pub viscosity: f64,
}

/// One steady-state snapshot.
///
/// `y_h` carries the sensed heads exactly as measured (elevation-inclusive,
/// matching the source-head convention); `q` is the full inner-node
/// consumption vector in m³/s.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub y_h: DVector<f64>,
    pub q: DVector<f64>,
    pub h_s: DVector<f64>,
    pub id: usize,
}

/// Head loss along every pipe for one measurement set.
///
/// `y_h` are elevation-inclusive sensed heads while `h_N` are pressure heads,
/// so the elevation term applies to unsensed nodes only:
/// `Δh = C̃_sᵀ h_s − Aᵀ C_hᵀ y_h − Aᵀ C̄_hᵀ h_N − Aᵀ C̄_hᵀ C̄_h z`.
pub fn head_loss(
    topo: &NetworkTopology,
    z: &DVector<f64>,
    h_s: &DVector<f64>,
    y_h: &DVector<f64>,
    h_n: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z.len() != topo.n_j
        || h_s.len() != topo.n_s
        || y_h.len() != topo.n_p
        || h_n.len() != topo.n_j - topo.n_p
    {
        return Err(Error::Dimension(format!(
            "head_loss arguments do not match topology ({}, {}, {}, {})",
            z.len(),
            h_s.len(),
            y_h.len(),
            h_n.len()
        )));
    }
    let cbar = topo.sensor_complement_f();
    let unsensed_total = h_n + cbar * z;
    Ok(topo.source_incidence_f().transpose() * h_s
        - topo.a().transpose() * (topo.sensor_select_f().transpose() * y_h)
        - topo.at_cbar_t() * unsensed_total)
}

/// Lower/upper pressure-head bounds for the unsensed nodes of one set, from
/// the surrounding known heads (adjacent sensed nodes and sources). With
/// fewer than two surrounding readings the window degenerates (a pinned head
/// would force a zero head loss), so those nodes fall back to the global
/// range of the set, padded to a minimum width of one metre.
pub fn head_bounds(topo: &NetworkTopology, set: &MeasurementSet) -> (DVector<f64>, DVector<f64>) {
    let known_global: Vec<f64> = set
        .y_h
        .iter()
        .copied()
        .chain(set.h_s.iter().copied())
        .collect();
    let global_min = known_global.iter().cloned().fold(f64::INFINITY, f64::min);
    let global_max = known_global.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let n = topo.unsensed.len();
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for (r, &node) in topo.unsensed.iter().enumerate() {
        let (inner, sources) = topo.neighbours(node);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut known = 0usize;
        for i in inner {
            if let Some(pos) = topo.sensed.iter().position(|&s| s == i) {
                lo = lo.min(set.y_h[pos]);
                hi = hi.max(set.y_h[pos]);
                known += 1;
            }
        }
        for s in sources {
            lo = lo.min(set.h_s[s]);
            hi = hi.max(set.h_s[s]);
            known += 1;
        }
        if known < 2 {
            lo = global_min;
            hi = global_max;
        }
        if hi - lo < 1.0 {
            let mid = 0.5 * (hi + lo);
            lo = mid - 0.5;
            hi = mid + 0.5;
        }
        let z = topo.elevations[node];
        lower[r] = (lo - z).max(0.0);
        upper[r] = hi - z;
    }
    (lower, upper)
}

// ---------------------------------------------------------------------------
// file formats

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<NodeEntry>,
    pipes: Vec<PipeEntry>,
    #[serde(default)]
    fluid: FluidEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    #[serde(default)]
    elevation_m: f64,
    #[serde(default)]
    source: bool,
    #[serde(default)]
    sensor: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PipeEntry {
    id: String,
    from: String,
    to: String,
    length_m: f64,
    diameter_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FluidEntry {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_g() -> f64 {
    DEFAULT_G
}

impl Default for FluidEntry {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            eta: DEFAULT_ETA,
            g: DEFAULT_G,
        }
    }
}

/// Load a network JSON file; see the README for the schema. Node ordering in
/// the file fixes index assignment.
pub fn load_network(path: impl AsRef<Path>) -> Result<(NetworkTopology, PipeCatalog)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    network_from_file(file).map_err(|e| match e {
        Error::InvalidNetwork(m) => Error::InvalidNetwork(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parse a network from its JSON text (same schema as [`load_network`]).
pub fn network_from_json(text: &str) -> Result<(NetworkTopology, PipeCatalog)> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<inline>".into(),
        message: e.to_string(),
    })?;
    network_from_file(file)
}

fn network_from_file(file: NetworkFile) -> Result<(NetworkTopology, PipeCatalog)> {
    let mut node_names = Vec::new();
    let mut source_names = Vec::new();
    let mut elevations = Vec::new();
    let mut sensed = Vec::new();
    // map file id → endpoint
    let mut lookup = std::collections::HashMap::new();
    for entry in &file.nodes {
        let ep = if entry.source {
            source_names.push(entry.id.clone());
            Endpoint::Source(source_names.len() - 1)
        } else {
            node_names.push(entry.id.clone());
            elevations.push(entry.elevation_m);
            if entry.sensor {
                sensed.push(node_names.len() - 1);
            }
            Endpoint::Inner(node_names.len() - 1)
        };
        if lookup.insert(entry.id.clone(), ep).is_some() {
            return Err(Error::InvalidNetwork(format!("duplicate node id {}", entry.id)));
        }
    }
    let mut pipe_ends = Vec::new();
    let mut pipe_names = Vec::new();
    let mut lengths = Vec::new();
    let mut diameters = Vec::new();
    for pipe in &file.pipes {
        let from = *lookup
            .get(&pipe.from)
            .ok_or_else(|| Error::InvalidNetwork(format!("pipe {} references unknown node {}", pipe.id, pipe.from)))?;
        let to = *lookup
            .get(&pipe.to)
            .ok_or_else(|| Error::InvalidNetwork(format!("pipe {} references unknown node {}", pipe.id, pipe.to)))?;
        pipe_ends.push((from, to));
        pipe_names.push(pipe.id.clone());
        lengths.push(pipe.length_m);
        diameters.push(pipe.diameter_m);
    }
    let n_j = node_names.len();
    let n_s = source_names.len();
    let topo = NetworkTopology::new(
        n_j,
        n_s,
        pipe_ends,
        sensed,
        DVector::from_vec(elevations),
        node_names,
        source_names,
        pipe_names,
    )?;
    let pipes = PipeCatalog::new(
        DVector::from_vec(lengths),
        DVector::from_vec(diameters),
        file.fluid.g,
        file.fluid.rho,
        file.fluid.eta,
    )?;
    Ok((topo, pipes))
}

#[derive(Debug, Deserialize, Serialize)]
struct MeasurementRow {
    set: usize,
    node: String,
    y_h_m: Option<f64>,
    q_lps: Option<f64>,
    h_s_m: Option<f64>,
}

/// Load measurement sets from CSV (`set,node,y_h_m,q_lps,h_s_m`); flows are
/// converted from l/s to m³/s. Emits a warning when fewer than
/// `⌈n_l/n_p⌉` sets are present.
pub fn load_measurements(
    path: impl AsRef<Path>,
    topo: &NetworkTopology,
) -> Result<Vec<MeasurementSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    measurements_from_csv(&text, topo).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.into(),
            message,
        },
        other => other,
    })
}

/// Parse measurement sets from CSV text (same format as [`load_measurements`]).
pub fn measurements_from_csv(text: &str, topo: &NetworkTopology) -> Result<Vec<MeasurementSet>> {
    let parse_err = |message: String| Error::Parse {
        path: "<inline>".into(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?;
        let expected = ["set", "node", "y_h_m", "q_lps", "h_s_m"];
        if headers.len() != expected.len() {
            return Err(parse_err(format!(
                "expected {} columns ({}), found {}",
                expected.len(),
                expected.join(","),
                headers.len()
            )));
        }
    }

    use std::collections::BTreeMap;
    struct Partial {
        y_h: Vec<Option<f64>>,
        q: DVector<f64>,
        h_s: Vec<Option<f64>>,
    }
    let mut sets: BTreeMap<usize, Partial> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: MeasurementRow = row.map_err(|e| parse_err(e.to_string()))?;
        let entry = sets.entry(row.set).or_insert_with(|| Partial {
            y_h: vec![None; topo.n_p],
            q: DVector::zeros(topo.n_j),
            h_s: vec![None; topo.n_s],
        });
        if let Some(s) = topo.source_names.iter().position(|n| *n == row.node) {
            if let Some(h) = row.h_s_m {
                entry.h_s[s] = Some(h);
            }
            continue;
        }
        let node = topo
            .node_names
            .iter()
            .position(|n| *n == row.node)
            .ok_or_else(|| parse_err(format!("unknown node id {}", row.node)))?;
        if let Some(y) = row.y_h_m {
            let pos = topo
                .sensed
                .iter()
                .position(|&s| s == node)
                .ok_or_else(|| parse_err(format!("node {} carries a head reading but no sensor", row.node)))?;
            entry.y_h[pos] = Some(y);
        }
        if let Some(q) = row.q_lps {
            entry.q[node] = q * 1e-3;
        }
    }
    if sets.is_empty() {
        return Err(parse_err("no measurement rows".into()));
    }
    let mut out = Vec::new();
    for (id, partial) in sets {
        let y_h = partial
            .y_h
            .iter()
            .enumerate()
            .map(|(r, v)| {
                v.ok_or_else(|| {
                    parse_err(format!(
                        "set {id}: missing head reading at sensed node {}",
                        topo.node_names[topo.sensed[r]]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let h_s = partial
            .h_s
            .iter()
            .enumerate()
            .map(|(s, v)| {
                v.ok_or_else(|| {
                    parse_err(format!(
                        "set {id}: missing source head at {}",
                        topo.source_names[s]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if y_h.iter().chain(h_s.iter()).any(|v| !v.is_finite()) {
            return Err(parse_err(format!("set {id}: non-finite head value")));
        }
        out.push(MeasurementSet {
            y_h: DVector::from_vec(y_h),
            q: partial.q,
            h_s: DVector::from_vec(h_s),
            id,
        });
    }
    if out.len() < topo.n_m_min() {
        log::warn!(
            "only {} measurement sets loaded; {} needed for identifiability",
            out.len(),
            topo.n_m_min()
        );
    }
    Ok(out)
}

/// Load demand patterns for simulation from the measurement CSV format; the
/// `y_h_m` column is ignored. Returns `(q̄, h_s)` per set in set order.
pub fn load_demands(
    path: impl AsRef<Path>,
    topo: &NetworkTopology,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    let parse_err = |message: String| Error::Parse {
        path: path.into(),
        message,
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    use std::collections::BTreeMap;
    let mut sets: BTreeMap<usize, (DVector<f64>, Vec<Option<f64>>)> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: MeasurementRow = row.map_err(|e| parse_err(e.to_string()))?;
        let entry = sets
            .entry(row.set)
            .or_insert_with(|| (DVector::zeros(topo.n_j), vec![None; topo.n_s]));
        if let Some(s) = topo.source_names.iter().position(|n| *n == row.node) {
            if let Some(h) = row.h_s_m {
                entry.1[s] = Some(h);
            }
            continue;
        }
        let node = topo
            .node_names
            .iter()
            .position(|n| *n == row.node)
            .ok_or_else(|| parse_err(format!("unknown node id {}", row.node)))?;
        if let Some(q) = row.q_lps {
            entry.0[node] = q * 1e-3;
        }
    }
    if sets.is_empty() {
        return Err(parse_err("no demand rows".into()));
    }
    sets.into_iter()
        .map(|(id, (q, h_s))| {
            let h_s = h_s
                .iter()
                .enumerate()
                .map(|(s, v)| {
                    v.ok_or_else(|| {
                        parse_err(format!("set {id}: missing source head at {}", topo.source_names[s]))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((q, DVector::from_vec(h_s)))
        })
        .collect()
}

/// Write measurement sets in the CSV format read by [`load_measurements`].
pub fn measurements_to_csv(topo: &NetworkTopology, sets: &[MeasurementSet]) -> String {
    let mut out = String::from("set,node,y_h_m,q_lps,h_s_m\n");
    use std::fmt::Write;
    for set in sets {
        for (r, &node) in topo.sensed.iter().enumerate() {
            let q = set.q[node] * 1e3;
            let q_field = if q != 0.0 { format!("{q:.10}") } else { String::new() };
            writeln!(
                out,
                "{},{},{:.10},{},",
                set.id, topo.node_names[node], set.y_h[r], q_field
            )
            .unwrap();
        }
        for &node in &topo.unsensed {
            let q = set.q[node] * 1e3;
            if q != 0.0 {
                writeln!(out, "{},{},,{q:.10},", set.id, topo.node_names[node]).unwrap();
            }
        }
        for (s, name) in topo.source_names.iter().enumerate() {
            writeln!(out, "{},{},,,{}", set.id, name, set.h_s[s]).unwrap();
        }
    }
    out
}
