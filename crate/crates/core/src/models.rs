//! Network-coupled dynamical systems, the forcing-slot layout and the fixed-step
//! Heun integrator.
//!
//! States are flat vectors of length `N·D`, node-major: node `i` occupies
//! `[i·D, (i+1)·D)`. External signals enter through a [`ChannelMap`] that says
//! which flat state index each signal channel drives.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::Signal;

/// A simulatable N-node system with a per-node forcing slot.
pub trait NetworkModel {
    /// Number of network nodes `N`.
    fn nodes(&self) -> usize;

    /// Per-node state dimension `D`.
    fn node_dim(&self) -> usize;

    fn state_len(&self) -> usize {
        self.nodes() * self.node_dim()
    }

    /// Evaluates the vector field at `(t, x)` with the flat external signal `g`
    /// (length `N·D`), writing the derivative into `out`.
    fn vector_field(&self, t: f64, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()>;

    /// Flat state indices that accept forcing, one per signal channel.
    fn channel_map(&self) -> ChannelMap;

    /// Undirected node adjacency used to build pseudo-parallel input slices.
    fn node_neighbors(&self) -> Vec<Vec<usize>>;
}

/// Sigmoidal response `K·x² / (σ² + x²)`.
pub fn sigmoid(x: f64, gain: f64, sigma: f64) -> f64 {
    let x2 = x * x;
    gain * x2 / (sigma * sigma + x2)
}

/// Maps signal channels onto flat state indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub state_len: usize,
    pub slots: Vec<usize>,
}

impl ChannelMap {
    pub fn identity(n: usize) -> Self {
        ChannelMap {
            state_len: n,
            slots: (0..n).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.slots.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.state_len];
        for &s in &self.slots {
            if s >= self.state_len {
                return Err(Error::invalid(
                    "channel_map",
                    format!("slot {s} outside state of length {}", self.state_len),
                ));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid(
                    "channel_map",
                    format!("slot {s} used by more than one channel"),
                ));
            }
        }
        Ok(())
    }

    /// Scatters per-channel values into a zeroed flat state-length buffer.
    pub fn expand_into(&self, values: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&slot, &v) in self.slots.iter().zip(values) {
            out[slot] = v;
        }
    }
}

// ---------------------------------------------------------------------------
// Generalized Lotka-Volterra
// ---------------------------------------------------------------------------

/// Generalized Lotka-Volterra food web
/// `ẋ_i = x_i (e_i − x_i/K_i + Σ_j P_ij x_j) + g_i(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotkaVolterraParams {
    /// Linear growth rates `e_i`.
    pub growth: Vec<f64>,
    /// Capacity parameters `K_i`.
    pub capacity: Vec<f64>,
    /// Interaction matrix `P`, row-major; `interactions[i][j]` is the effect of
    /// species `j` on species `i`.
    pub interactions: Vec<Vec<f64>>,
}

impl LotkaVolterraParams {
    pub fn species(&self) -> usize {
        self.growth.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.species();
        if n == 0 {
            return Err(Error::invalid("growth", "at least one species required"));
        }
        if self.capacity.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Lotka-Volterra capacities",
                expected: n,
                got: self.capacity.len(),
            });
        }
        if self.interactions.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Lotka-Volterra interaction rows",
                expected: n,
                got: self.interactions.len(),
            });
        }
        for row in &self.interactions {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "Lotka-Volterra interaction columns",
                    expected: n,
                    got: row.len(),
                });
            }
        }
        if let Some(k) = self.capacity.iter().find(|k| **k == 0.0 || !k.is_finite()) {
            return Err(Error::invalid("capacity", format!("capacity {k} must be finite and nonzero")));
        }
        Ok(())
    }

    /// Eight-species hierarchical food web with a stable, strictly positive
    /// coexistence point at [`Self::FOOD_WEB_EQUILIBRIUM`].
    ///
    /// Species 0–2 are basal prey, 3–5 intermediate consumers, 6–7 top
    /// predators. Every edge is predator-prey: the predator gains `a` and the
    /// prey loses `1.2·a`. Growth rates are fixed by requiring the equilibrium
    /// values, so they are exact consequences of the capacities and `P`.
    pub fn food_web_preset() -> Self {
        const N: usize = 8;
        // (predator, prey, benefit to predator)
        const EDGES: [(usize, usize, f64); 11] = [
            (3, 0, 0.4),
            (3, 1, 0.3),
            (4, 1, 0.4),
            (4, 2, 0.3),
            (5, 2, 0.4),
            (5, 0, 0.2),
            (6, 3, 0.3),
            (6, 4, 0.2),
            (6, 5, 0.15),
            (7, 4, 0.25),
            (7, 5, 0.3),
        ];
        let capacity = vec![1.0, 1.0, 1.0, 0.8, 0.8, 0.8, 0.7, 0.7];
        let mut p = vec![vec![0.0; N]; N];
        for &(pred, prey, a) in &EDGES {
            p[pred][prey] = a;
            p[prey][pred] = -1.2 * a;
        }
        let xs = Self::FOOD_WEB_EQUILIBRIUM;
        let growth = (0..N)
            .map(|i| {
                xs[i] / capacity[i] - (0..N).map(|j| p[i][j] * xs[j]).sum::<f64>()
            })
            .collect();
        LotkaVolterraParams {
            growth,
            capacity,
            interactions: p,
        }
    }

    pub const FOOD_WEB_EQUILIBRIUM: [f64; 8] = [3.0, 3.2, 2.8, 2.5, 2.6, 2.4, 2.0, 2.2];

    /// Undirected neighbor lists: `j` neighbors `i` when `P_ij ≠ 0` or `P_ji ≠ 0`.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.species();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && (self.interactions[i][j] != 0.0 || self.interactions[j][i] != 0.0))
                    .collect()
            })
            .collect()
    }
}

/// Vector field of the Lotka-Volterra system with an additive signal.
pub fn lv_vector_field(params: &LotkaVolterraParams, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
    let n = params.species();
    check_len("Lotka-Volterra state", n, x.len())?;
    check_len("Lotka-Volterra signal", n, g.len())?;
    check_len("Lotka-Volterra output", n, out.len())?;
    for i in 0..n {
        let row = &params.interactions[i];
        let coupling: f64 = row.iter().zip(x).map(|(p, xj)| p * xj).sum();
        out[i] = x[i] * (params.growth[i] - x[i] / params.capacity[i] + coupling) + g[i];
    }
    Ok(())
}

impl NetworkModel for LotkaVolterraParams {
    fn nodes(&self) -> usize {
        self.species()
    }

    fn node_dim(&self) -> usize {
        1
    }

    fn vector_field(&self, _t: f64, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
        lv_vector_field(self, x, g, out)
    }

    fn channel_map(&self) -> ChannelMap {
        ChannelMap::identity(self.species())
    }

    fn node_neighbors(&self) -> Vec<Vec<usize>> {
        self.neighbors()
    }
}

// ---------------------------------------------------------------------------
// Wilson-Cowan
// ---------------------------------------------------------------------------

/// Network of excitatory/inhibitory Wilson-Cowan pairs, state interleaved as
/// `[E_0, I_0, E_1, I_1, …]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WilsonCowanParams {
    pub tau: f64,
    pub w_ee: f64,
    pub w_ei: f64,
    pub w_ie: f64,
    pub w_ii: f64,
    pub w_net: f64,
    /// Saturation level `K` of the sigmoid.
    pub gain: f64,
    pub sigma: f64,
    /// Baseline stimulus `P_i` of each excitatory population.
    pub stimulus: Vec<f64>,
    /// Pair adjacency `B`, row-major, zero diagonal.
    pub adjacency: Vec<Vec<f64>>,
}

/// The two baseline-stimulus regimes of the four-pair preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StimulusRegime {
    Stationary,
    Oscillatory,
}

impl StimulusRegime {
    pub fn stimulus(self) -> [f64; 4] {
        match self {
            StimulusRegime::Stationary => [3.22, 3.02, 3.18, 3.33],
            StimulusRegime::Oscillatory => [1.52, 1.61, 1.57, 1.64],
        }
    }
}

impl WilsonCowanParams {
    pub fn pairs(&self) -> usize {
        self.stimulus.len()
    }

    /// Directed ring among pairs: `B[i][(i+1) mod n] = 1`.
    pub fn directed_ring(n: usize) -> Vec<Vec<f64>> {
        let mut b = vec![vec![0.0; n]; n];
        if n > 1 {
            for (i, row) in b.iter_mut().enumerate() {
                row[(i + 1) % n] = 1.0;
            }
        }
        b
    }

    /// Four coupled pairs on a directed ring in the requested regime.
    pub fn preset(regime: StimulusRegime) -> Self {
        WilsonCowanParams {
            tau: 10.0,
            w_ee: 6.4,
            w_ei: 6.0,
            w_ie: 4.8,
            w_ii: 1.2,
            w_net: 0.5,
            gain: 1.0,
            sigma: 1.0,
            stimulus: regime.stimulus().to_vec(),
            adjacency: Self::directed_ring(4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pairs();
        if n == 0 {
            return Err(Error::invalid("stimulus", "at least one pair required"));
        }
        for (name, w) in [
            ("w_ee", self.w_ee),
            ("w_ei", self.w_ei),
            ("w_ie", self.w_ie),
            ("w_ii", self.w_ii),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(name, format!("intra-pair coupling must be positive, got {w}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau", "time constant must be positive"));
        }
        if self.sigma == 0.0 {
            return Err(Error::invalid("sigma", "sigmoid half-saturation must be nonzero"));
        }
        if self.adjacency.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Wilson-Cowan adjacency rows",
                expected: n,
                got: self.adjacency.len(),
            });
        }
        for (i, row) in self.adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "Wilson-Cowan adjacency columns",
                    expected: n,
                    got: row.len(),
                });
            }
            if row[i] != 0.0 {
                return Err(Error::invalid("adjacency", format!("diagonal entry B[{i}][{i}] must be zero")));
            }
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.pairs();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && (self.adjacency[i][j] != 0.0 || self.adjacency[j][i] != 0.0))
                    .collect()
            })
            .collect()
    }
}

/// Vector field of the Wilson-Cowan network. Signals enter inside the
/// excitatory sigmoid; any nonzero inhibitory-slot entry of `g` is rejected.
pub fn wc_vector_field(params: &WilsonCowanParams, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
    let n = params.pairs();
    check_len("Wilson-Cowan state", 2 * n, x.len())?;
    check_len("Wilson-Cowan signal", 2 * n, g.len())?;
    check_len("Wilson-Cowan output", 2 * n, out.len())?;
    for i in 0..n {
        let gi = g[2 * i + 1];
        if gi != 0.0 {
            return Err(Error::InhibitorySlotForcing {
                index: 2 * i + 1,
                value: gi,
            });
        }
    }
    let s = |v: f64| sigmoid(v, params.gain, params.sigma);
    for i in 0..n {
        let e = x[2 * i];
        let inh = x[2 * i + 1];
        let network: f64 = params.adjacency[i]
            .iter()
            .enumerate()
            .map(|(j, b)| b * x[2 * j + 1])
            .sum();
        let drive_e = params.w_ee * e - params.w_ei * inh + params.stimulus[i] - params.w_net * network + g[2 * i];
        let drive_i = params.w_ie * e - params.w_ii * inh;
        out[2 * i] = (-e + s(drive_e)) / params.tau;
        out[2 * i + 1] = (-inh + s(drive_i)) / params.tau;
    }
    Ok(())
}

impl NetworkModel for WilsonCowanParams {
    fn nodes(&self) -> usize {
        self.pairs()
    }

    fn node_dim(&self) -> usize {
        2
    }

    fn vector_field(&self, _t: f64, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
        wc_vector_field(self, x, g, out)
    }

    fn channel_map(&self) -> ChannelMap {
        let n = self.pairs();
        ChannelMap {
            state_len: 2 * n,
            slots: (0..n).map(|i| 2 * i).collect(),
        }
    }

    fn node_neighbors(&self) -> Vec<Vec<usize>> {
        self.neighbors()
    }
}

// ---------------------------------------------------------------------------
// Model enum used by configuration and artifacts
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    LotkaVolterra(LotkaVolterraParams),
    WilsonCowan(WilsonCowanParams),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::LotkaVolterra(p) => p.validate(),
            Model::WilsonCowan(p) => p.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::LotkaVolterra(_) => "lotka-volterra",
            Model::WilsonCowan(_) => "wilson-cowan",
        }
    }

    /// Input state indices for each node's pseudo-parallel reservoir: the
    /// node's own components followed by those of its neighbors.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let d = self.node_dim();
        self.node_neighbors()
            .into_iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let mut nodes = vec![i];
                nodes.extend(nbrs);
                nodes.sort_unstable();
                nodes
                    .into_iter()
                    .flat_map(|j| (j * d)..((j + 1) * d))
                    .collect()
            })
            .collect()
    }
}

impl NetworkModel for Model {
    fn nodes(&self) -> usize {
        match self {
            Model::LotkaVolterra(p) => p.nodes(),
            Model::WilsonCowan(p) => p.nodes(),
        }
    }

    fn node_dim(&self) -> usize {
        match self {
            Model::LotkaVolterra(p) => p.node_dim(),
            Model::WilsonCowan(p) => p.node_dim(),
        }
    }

    fn vector_field(&self, t: f64, x: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Model::LotkaVolterra(p) => p.vector_field(t, x, g, out),
            Model::WilsonCowan(p) => p.vector_field(t, x, g, out),
        }
    }

    fn channel_map(&self) -> ChannelMap {
        match self {
            Model::LotkaVolterra(p) => p.channel_map(),
            Model::WilsonCowan(p) => p.channel_map(),
        }
    }

    fn node_neighbors(&self) -> Vec<Vec<usize>> {
        match self {
            Model::LotkaVolterra(p) => p.node_neighbors(),
            Model::WilsonCowan(p) => p.node_neighbors(),
        }
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Trajectories and integration
// ---------------------------------------------------------------------------

/// Uniformly sampled state sequence, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, dim: usize) -> Self {
        Trajectory {
            t0,
            dt,
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(t0: f64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut traj = Trajectory::new(t0, dt, dim);
        for r in rows {
            check_len("trajectory row", dim, r.len())?;
            traj.push(r);
        }
        Ok(traj)
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Smallest value over all components; negative biomasses show up here.
    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copies the given columns into a new trajectory.
    pub fn select_columns(&self, columns: &[usize]) -> Trajectory {
        let mut out = Trajectory::new(self.t0, self.dt, columns.len());
        out.data.reserve(self.len() * columns.len());
        for row in self.rows() {
            out.data.extend(columns.iter().map(|&c| row[c]));
        }
        out
    }

    /// Writes `t, x_0, …` with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x_{i}")).collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = String::new();
        writeln!(w, "t,{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for (k, row) in self.rows().enumerate() {
            line.clear();
            write!(line, "{:.16e}", self.time(k)).unwrap();
            for v in row {
                write!(line, ",{v:.16e}").unwrap();
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fixed-step Heun (explicit trapezoidal) integrator with reusable buffers.
pub struct Heun<'m, M: NetworkModel + ?Sized> {
    model: &'m M,
    k1: Vec<f64>,
    k2: Vec<f64>,
    predictor: Vec<f64>,
}

impl<'m, M: NetworkModel + ?Sized> Heun<'m, M> {
    pub fn new(model: &'m M) -> Self {
        let n = model.state_len();
        Heun {
            model,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            predictor: vec![0.0; n],
        }
    }

    /// Advances `x` in place by one step of size `dt` from time `t`, with the
    /// flat signal evaluated at both step endpoints.
    pub fn step(&mut self, t: f64, x: &mut [f64], g_start: &[f64], g_end: &[f64], dt: f64) -> Result<()> {
        self.model.vector_field(t, x, g_start, &mut self.k1)?;
        for ((p, xi), k) in self.predictor.iter_mut().zip(x.iter()).zip(&self.k1) {
            *p = xi + dt * k;
        }
        self.model.vector_field(t + dt, &self.predictor, g_end, &mut self.k2)?;
        let half = 0.5 * dt;
        for ((xi, a), b) in x.iter_mut().zip(&self.k1).zip(&self.k2) {
            *xi += half * (a + b);
        }
        Ok(())
    }
}

/// One Heun step. Returns an integration-divergence error tagged with
/// `step_index` if the new state is not finite.
pub fn heun_step<M: NetworkModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    g_start: &[f64],
    g_end: &[f64],
    dt: f64,
    step_index: usize,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("time step must be positive, got {dt}")));
    }
    check_len("heun_step state", model.state_len(), x.len())?;
    let mut next = x.to_vec();
    Heun::new(model).step(t, &mut next, g_start, g_end, dt)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationDiverged {
            step: step_index,
            time: t + dt,
        });
    }
    Ok(next)
}

/// Number of steps covering `[t0, t1]` at spacing `dt`.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", format!("time step must be positive, got {dt}")));
    }
    if !(t1 > t0) {
        return Err(Error::invalid("t1", format!("end time {t1} must exceed start time {t0}")));
    }
    let steps = ((t1 - t0) / dt).round();
    let mismatch = (steps * dt - (t1 - t0)).abs();
    if mismatch > 1e-6 * dt.max((t1 - t0).abs() * 1e-9) && mismatch > 1e-9 * (t1 - t0).abs() {
        log::warn!("interval [{t0}, {t1}] is not a multiple of dt = {dt}; using {steps} steps");
    }
    Ok(steps as usize)
}

/// Integrates `model` under `forcing` from `x0` on `[t0, t1]`, evaluating the
/// forcing analytically at every step boundary. The returned trajectory holds
/// `1 + round((t1 − t0)/dt)` states, the first being `x0`.
pub fn simulate<M: NetworkModel + ?Sized>(
    model: &M,
    forcing: &Signal,
    x0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    let map = model.channel_map();
    simulate_mapped(model, forcing, &map, x0, t0, t1, dt)
}

pub fn simulate_mapped<M: NetworkModel + ?Sized>(
    model: &M,
    forcing: &Signal,
    map: &ChannelMap,
    x0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = model.state_len();
    check_len("initial condition", n, x0.len())?;
    check_len("channel map state length", n, map.state_len)?;
    check_len("forcing channels", map.channels(), forcing.n_channels())?;
    let steps = step_count(t0, t1, dt)?;

    let mut traj = Trajectory::new(t0, dt, n);
    traj.data.reserve((steps + 1) * n);
    traj.push(x0);

    let mut x = x0.to_vec();
    let mut channel_vals = vec![0.0; forcing.n_channels()];
    let mut g_start = vec![0.0; n];
    let mut g_end = vec![0.0; n];
    forcing.eval_into(t0, &mut channel_vals);
    map.expand_into(&channel_vals, &mut g_start);

    let mut heun = Heun::new(model);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let t_next = t0 + (k + 1) as f64 * dt;
        forcing.eval_into(t_next, &mut channel_vals);
        map.expand_into(&channel_vals, &mut g_end);
        heun.step(t, &mut x, &g_start, &g_end, t_next - t)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { step: k, time: t_next });
        }
        traj.push(&x);
        std::mem::swap(&mut g_start, &mut g_end);
    }
    Ok(traj)
}
