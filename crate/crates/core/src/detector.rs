//! Two-phase disturbance detection: train reservoir readouts to recover known
//! forcings from observed trajectories, then apply them to trajectories under
//! an unknown disturbance.
//!
//! The standard architecture feeds the full state to one reservoir of size
//! `N·M`. The pseudo-parallel architecture gives every node its own reservoir
//! of size `M`, fed with the node's neighborhood and trained only on the
//! node's own channels.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::models::{simulate_mapped, ChannelMap, Model, NetworkModel, Trajectory};
use crate::reservoir::{build_reservoir, Readout, Reservoir, RidgeAccumulator};
use crate::seeds::{self, stream};
use crate::signals::Signal;

const ARTIFACT_FORMAT: &str = "netdisturb-detector/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Standard,
    PseudoParallel,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Standard => "standard",
            Architecture::PseudoParallel => "pseudo-parallel",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Architecture::Standard),
            "pseudo-parallel" | "pseudo_parallel" => Ok(Architecture::PseudoParallel),
            other => Err(Error::invalid(
                "architecture",
                format!("`{other}` is neither `standard` nor `pseudo-parallel`"),
            )),
        }
    }
}

/// Hyperparameters of a detector, as they appear in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    pub architecture: Architecture,
    /// Reservoir size per network node `M`.
    pub units_per_node: usize,
    /// Expected nonzeros per row of `A`; the density is this over the size.
    pub mean_degree: f64,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub leak: f64,
    pub lambda: f64,
    /// Steps discarded before regression and flagged at inference. Chosen
    /// from the run length and leak when absent.
    pub washout: Option<usize>,
    /// Localization threshold in multiples of the noise floor.
    pub kappa: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            architecture: Architecture::Standard,
            units_per_node: 125,
            mean_degree: 6.0,
            spectral_radius: 1.2,
            input_scale: 0.01,
            leak: 0.0,
            lambda: 1e-6,
            washout: None,
            kappa: 3.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.units_per_node == 0 {
            errs.push("detector.units_per_node: must be at least 1".into());
        }
        if !(self.mean_degree >= 1.0) {
            errs.push(format!("detector.mean_degree: {} must be at least 1", self.mean_degree));
        }
        if !(self.spectral_radius > 0.0) {
            errs.push(format!("detector.spectral_radius: {} must be positive", self.spectral_radius));
        }
        if !(self.input_scale >= 0.0) {
            errs.push(format!("detector.input_scale: {} must be nonnegative", self.input_scale));
        }
        if !(0.0..=1.0).contains(&self.leak) {
            errs.push(format!("detector.leak: {} not in [0, 1]", self.leak));
        } else if self.leak == 1.0 {
            errs.push("detector.leak: 1 freezes the reservoir state".into());
        }
        if !(self.lambda >= 0.0) {
            errs.push(format!("detector.lambda: {} must be nonnegative", self.lambda));
        }
        if !(self.kappa > 0.0) {
            errs.push(format!("detector.kappa: {} must be positive", self.kappa));
        }
        errs
    }
}

/// Default washout: at least 100 steps, 1% of the run, and long enough for
/// a leaky reservoir to forget its initial state.
pub fn default_washout(steps: usize, leak: f64) -> usize {
    let leak_term = if leak < 1.0 {
        (75.0 / (1.0 - leak)).ceil() as usize
    } else {
        usize::MAX
    };
    100.max(steps / 100).max(leak_term).min(steps)
}

/// Full detector configuration: hyperparameters plus the wiring between the
/// model state, the signal channels and the reservoirs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub params: DetectorParams,
    pub channel_map: ChannelMap,
    /// Per node, the flat state indices its pseudo-parallel reservoir reads.
    pub neighborhoods: Vec<Vec<usize>>,
    /// Per-node state dimension, used to assign channels to nodes.
    pub node_dim: usize,
}

impl DetectorConfig {
    pub fn for_model(model: &Model, params: DetectorParams) -> Self {
        DetectorConfig {
            params,
            channel_map: model.channel_map(),
            neighborhoods: model.neighborhoods(),
            node_dim: model.node_dim(),
        }
    }

    fn node_channels(&self, node: usize) -> Vec<usize> {
        (0..self.channel_map.channels())
            .filter(|&c| self.channel_map.slots[c] / self.node_dim == node)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.params.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        self.channel_map.validate()?;
        let n = self.channel_map.state_len;
        if self.node_dim == 0 || n % self.node_dim != 0 {
            return Err(Error::invalid("node_dim", "must divide the state length"));
        }
        if self.neighborhoods.len() != n / self.node_dim {
            return Err(Error::DimensionMismatch {
                context: "neighborhoods per node",
                expected: n / self.node_dim,
                got: self.neighborhoods.len(),
            });
        }
        if let Some(bad) = self.neighborhoods.iter().flatten().find(|&&i| i >= n) {
            return Err(Error::invalid("neighborhoods", format!("state index {bad} out of range")));
        }
        Ok(())
    }
}

/// One reservoir with its readout and wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorUnit {
    /// Node served by this unit; `None` for the standard architecture.
    pub node: Option<usize>,
    /// Flat state indices fed to the reservoir.
    pub inputs: Vec<usize>,
    /// Signal channels produced by the readout, in readout row order.
    pub channels: Vec<usize>,
    pub reservoir: Reservoir,
    pub readout: Readout,
}

/// Provenance of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingManifest {
    pub model: Model,
    pub forcing: Signal,
    pub dt: f64,
    pub training_horizon: f64,
    pub master_seed: u64,
    pub steps: usize,
    pub washout: usize,
    pub initial_state: Vec<f64>,
    pub final_state: Vec<f64>,
    /// Training channels that carried no forcing.
    pub unforced_channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFloor {
    /// RMS of the output under no disturbance.
    pub calm: Vec<f64>,
    /// Spurious output RMS on each channel while every other channel carries
    /// a held-out draw of the training forcing.
    pub crosstalk: Option<Vec<f64>>,
    /// Channelwise maximum of the two.
    pub floor: Vec<f64>,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedDetector {
    pub config: DetectorConfig,
    pub manifest: TrainingManifest,
    pub units: Vec<DetectorUnit>,
    pub noise_floor: Option<NoiseFloor>,
}

fn unit_seed(master: u64, node: Option<usize>) -> u64 {
    match node {
        Some(k) => seeds::derive(master, stream::NODE_BASE + k as u64),
        None => seeds::derive(master, stream::RESERVOIR),
    }
}

fn gather(row: &[f64], idx: &[usize], out: &mut [f64]) {
    for (o, &i) in out.iter_mut().zip(idx) {
        *o = row[i];
    }
}

/// Row-major `steps × channels` samples of `forcing` on the trajectory grid.
fn sample_signal(signal: &Signal, traj: &Trajectory) -> Vec<f64> {
    let n = signal.n_channels();
    let mut out = vec![0.0; traj.len() * n];
    for (k, chunk) in out.chunks_exact_mut(n.max(1)).enumerate().take(traj.len()) {
        signal.eval_into(traj.time(k), chunk);
    }
    out
}

struct UnitPlan {
    node: Option<usize>,
    inputs: Vec<usize>,
    channels: Vec<usize>,
    size: usize,
}

fn plan_units(config: &DetectorConfig) -> Vec<UnitPlan> {
    let m = config.params.units_per_node;
    let n_nodes = config.neighborhoods.len();
    match config.params.architecture {
        Architecture::Standard => vec![UnitPlan {
            node: None,
            inputs: (0..config.channel_map.state_len).collect(),
            channels: (0..config.channel_map.channels()).collect(),
            size: n_nodes * m,
        }],
        Architecture::PseudoParallel => (0..n_nodes)
            .filter_map(|k| {
                let channels = config.node_channels(k);
                (!channels.is_empty()).then(|| UnitPlan {
                    node: Some(k),
                    inputs: config.neighborhoods[k].clone(),
                    channels,
                    size: m,
                })
            })
            .collect(),
    }
}

fn fit_unit(
    plan: &UnitPlan,
    params: &DetectorParams,
    traj: &Trajectory,
    targets: &[f64],
    n_channels: usize,
    washout: usize,
    seed: u64,
) -> Result<DetectorUnit> {
    let density = (params.mean_degree / plan.size as f64).min(1.0);
    let mut reservoir = build_reservoir(
        plan.size,
        plan.inputs.len(),
        density,
        params.spectral_radius,
        params.input_scale,
        params.leak,
        seed,
    )?;
    let mut acc = RidgeAccumulator::new(plan.size, plan.channels.len());
    let mut x = vec![0.0; plan.inputs.len()];
    let mut y = vec![0.0; plan.channels.len()];
    for k in 0..traj.len() {
        gather(traj.row(k), &plan.inputs, &mut x);
        reservoir.step(&x);
        if k >= washout {
            gather(&targets[k * n_channels..(k + 1) * n_channels], &plan.channels, &mut y);
            acc.push(&reservoir.state, &y);
        }
    }
    let w_out = acc.solve(params.lambda)?;
    reservoir.reset();
    Ok(DetectorUnit {
        node: plan.node,
        inputs: plan.inputs.clone(),
        channels: plan.channels.clone(),
        reservoir,
        readout: Readout {
            w_out,
            lambda: params.lambda,
            washout,
        },
    })
}

/// Simulates the training system on `[−T̂, 0]` from `x0` under `forcing` and
/// fits the detector to it.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Model,
    forcing: &Signal,
    config: &DetectorConfig,
    x0: &[f64],
    training_horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<TrainedDetector> {
    check_forcing(config, forcing)?;
    let traj = simulate_mapped(model, forcing, &config.channel_map, x0, -training_horizon, 0.0, dt)?;
    train_on_trajectory(model, forcing, config, &traj, seed)
}

fn check_forcing(config: &DetectorConfig, forcing: &Signal) -> Result<()> {
    if forcing.n_channels() != config.channel_map.channels() {
        return Err(Error::DimensionMismatch {
            context: "forcing channels vs channel map",
            expected: config.channel_map.channels(),
            got: forcing.n_channels(),
        });
    }
    Ok(())
}

/// Fits the detector to an already simulated training trajectory whose
/// sample times are the ones `forcing` is evaluated at.
pub fn train_on_trajectory(
    model: &Model,
    forcing: &Signal,
    config: &DetectorConfig,
    traj: &Trajectory,
    seed: u64,
) -> Result<TrainedDetector> {
    config.validate()?;
    check_forcing(config, forcing)?;
    if traj.dim() != model.state_len() || config.channel_map.state_len != model.state_len() {
        return Err(Error::DimensionMismatch {
            context: "training trajectory width",
            expected: model.state_len(),
            got: traj.dim(),
        });
    }
    if traj.len() < 2 {
        return Err(Error::invalid("training_horizon", "training run needs at least one step"));
    }
    let unforced: Vec<usize> = forcing.identically_zero_channels().into_iter().collect();
    if !unforced.is_empty() {
        log::warn!(
            "training forcing is identically zero on channels {unforced:?}; \
             disturbances on those channels cannot be recovered"
        );
    }

    let steps = traj.len();
    let washout = config
        .params
        .washout
        .unwrap_or_else(|| default_washout(steps, config.params.leak))
        .min(steps - 1);
    let n_channels = forcing.n_channels();
    let targets = sample_signal(forcing, traj);
    let plans = plan_units(config);
    let units = plans
        .par_iter()
        .map(|p| {
            fit_unit(
                p,
                &config.params,
                traj,
                &targets,
                n_channels,
                washout,
                unit_seed(seed, p.node),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainedDetector {
        config: config.clone(),
        manifest: TrainingManifest {
            model: model.clone(),
            forcing: forcing.clone(),
            dt: traj.dt,
            training_horizon: traj.dt * (steps - 1) as f64,
            master_seed: seed,
            steps,
            washout,
            initial_state: traj.row(0).to_vec(),
            final_state: traj.last().unwrap().to_vec(),
            unforced_channels: unforced,
        },
        units,
        noise_floor: None,
    })
}

impl TrainedDetector {
    pub fn n_channels(&self) -> usize {
        self.config.channel_map.channels()
    }

    pub fn washout(&self) -> usize {
        self.manifest.washout
    }

    /// Total reservoir nodes across units.
    pub fn total_size(&self) -> usize {
        self.units.iter().map(|u| u.reservoir.size()).sum()
    }

    /// Re-simulates the training run recorded in the manifest.
    pub fn training_trajectory(&self) -> Result<Trajectory> {
        let m = &self.manifest;
        simulate_mapped(
            &m.model,
            &m.forcing,
            &self.config.channel_map,
            &m.initial_state,
            -m.training_horizon,
            0.0,
            m.dt,
        )
    }

    /// Redraws and refits the reservoir serving `node` from `seed`, leaving
    /// every other unit untouched.
    pub fn retrain_node(&mut self, node: usize, seed: u64) -> Result<()> {
        let idx = self
            .units
            .iter()
            .position(|u| u.node == Some(node))
            .ok_or_else(|| Error::invalid("node", format!("no pseudo-parallel unit serves node {node}")))?;
        let traj = self.training_trajectory()?;
        let targets = sample_signal(&self.manifest.forcing, &traj);
        let unit = &self.units[idx];
        let plan = UnitPlan {
            node: unit.node,
            inputs: unit.inputs.clone(),
            channels: unit.channels.clone(),
            size: unit.reservoir.size(),
        };
        self.units[idx] = fit_unit(
            &plan,
            &self.config.params,
            &traj,
            &targets,
            self.n_channels(),
            self.manifest.washout,
            seed,
        )?;
        self.noise_floor = None;
        Ok(())
    }

    fn check_compatible(&self, model: &Model, dt: f64) -> Result<()> {
        if model != &self.manifest.model {
            return Err(Error::ManifestMismatch(format!(
                "detector was trained on a {} model with state length {}, got a different {} model with state length {}",
                self.manifest.model.kind(),
                self.manifest.model.state_len(),
                model.kind(),
                model.state_len()
            )));
        }
        if (dt - self.manifest.dt).abs() > 1e-12 * self.manifest.dt.abs() {
            return Err(Error::ManifestMismatch(format!(
                "dt = {dt} differs from the training dt = {}",
                self.manifest.dt
            )));
        }
        Ok(())
    }

    /// Runs every unit over an observed trajectory, returning the recovered
    /// signals as row-major `steps × channels`.
    pub fn recover(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        if traj.dim() != self.config.channel_map.state_len {
            return Err(Error::DimensionMismatch {
                context: "observed trajectory width",
                expected: self.config.channel_map.state_len,
                got: traj.dim(),
            });
        }
        let n = self.n_channels();
        let outputs = self
            .units
            .par_iter()
            .map(|u| run_unit(u, traj))
            .collect::<Vec<_>>();
        let mut recovered = vec![0.0; traj.len() * n];
        for (unit, out) in self.units.iter().zip(outputs) {
            let d = unit.channels.len();
            for k in 0..traj.len() {
                for (j, &c) in unit.channels.iter().enumerate() {
                    recovered[k * n + c] = out[k * d + j];
                }
            }
        }
        Ok(recovered)
    }
}

fn run_unit(unit: &DetectorUnit, traj: &Trajectory) -> Vec<f64> {
    let mut reservoir = unit.reservoir.clone();
    reservoir.reset();
    let d = unit.channels.len();
    let mut x = vec![0.0; unit.inputs.len()];
    let mut out = vec![0.0; traj.len() * d];
    for k in 0..traj.len() {
        gather(traj.row(k), &unit.inputs, &mut x);
        reservoir.step(&x);
        unit.readout.apply_into(&reservoir.state, &mut out[k * d..(k + 1) * d]);
    }
    out
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub t0: f64,
    pub dt: f64,
    pub n_channels: usize,
    /// Leading steps computed before the reservoir forgot its initial state.
    pub washout: usize,
    /// Row-major `steps × channels`.
    pub recovered: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Channels the ground-truth disturbance acts on.
    pub true_support: Option<BTreeSet<usize>>,
    pub channel_mse: Option<Vec<f64>>,
    pub mse_disturbed: Option<f64>,
    pub mse_undisturbed: Option<f64>,
    pub localized: Option<BTreeSet<usize>>,
    pub noise_floor: Option<Vec<f64>>,
    pub kappa: f64,
}

/// Simulates the system on `[0, T]` under `disturbance`, starting from `x0`
/// or the final training state, and recovers the disturbance from the
/// observed trajectory. Returns the observed trajectory alongside.
pub fn detect(
    trained: &TrainedDetector,
    model: &Model,
    disturbance: &Signal,
    x0: Option<&[f64]>,
    horizon: f64,
    dt: f64,
) -> Result<(DetectionResult, Trajectory)> {
    trained.check_compatible(model, dt)?;
    if disturbance.n_channels() != trained.n_channels() {
        return Err(Error::DimensionMismatch {
            context: "disturbance channels vs detector outputs",
            expected: trained.n_channels(),
            got: disturbance.n_channels(),
        });
    }
    let x0 = x0.unwrap_or(&trained.manifest.final_state);
    let traj = simulate_mapped(model, disturbance, &trained.config.channel_map, x0, 0.0, horizon, dt)?;
    let result = detect_trajectory(trained, &traj, Some(disturbance))?;
    Ok((result, traj))
}

/// Recovers signals from an observed trajectory. With `truth`, also scores
/// the recovery.
pub fn detect_trajectory(
    trained: &TrainedDetector,
    traj: &Trajectory,
    truth: Option<&Signal>,
) -> Result<DetectionResult> {
    let recovered = trained.recover(traj)?;
    let n = trained.n_channels();
    let mut result = DetectionResult {
        t0: traj.t0,
        dt: traj.dt,
        n_channels: n,
        washout: trained.washout().min(traj.len().saturating_sub(1)),
        recovered,
        truth: None,
        true_support: None,
        channel_mse: None,
        mse_disturbed: None,
        mse_undisturbed: None,
        localized: None,
        noise_floor: None,
        kappa: trained.config.params.kappa,
    };
    if let Some(signal) = truth {
        let support = signal.support();
        result.truth = Some(sample_signal(signal, traj));
        result.channel_mse = Some((0..n).map(|c| result.channel_mse_of(c).unwrap()).collect());
        let (d, u) = mse_report(&result, &support)?;
        result.mse_disturbed = d;
        result.mse_undisturbed = u;
        result.true_support = Some(support);
    }
    if let Some(floor) = &trained.noise_floor {
        let policy = ThresholdPolicy::NoiseFloor {
            kappa: result.kappa,
            floors: floor.floor.clone(),
        };
        result.localized = Some(localize(&result, &policy));
        result.noise_floor = Some(floor.floor.clone());
    }
    Ok(result)
}

impl DetectionResult {
    pub fn steps(&self) -> usize {
        if self.n_channels == 0 {
            0
        } else {
            self.recovered.len() / self.n_channels
        }
    }

    pub fn retained(&self) -> std::ops::Range<usize> {
        self.washout..self.steps()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn recovered_at(&self, k: usize, c: usize) -> f64 {
        self.recovered[k * self.n_channels + c]
    }

    pub fn truth_at(&self, k: usize, c: usize) -> Option<f64> {
        self.truth.as_ref().map(|t| t[k * self.n_channels + c])
    }

    /// Recovered samples of channel `c` over the retained steps.
    pub fn recovered_channel(&self, c: usize) -> Vec<f64> {
        self.retained().map(|k| self.recovered_at(k, c)).collect()
    }

    pub fn truth_channel(&self, c: usize) -> Option<Vec<f64>> {
        self.truth.as_ref()?;
        Some(self.retained().map(|k| self.truth_at(k, c).unwrap()).collect())
    }

    /// Root mean square of the recovered channel over the retained steps.
    pub fn rms(&self, c: usize) -> f64 {
        rms(self.retained().map(|k| self.recovered_at(k, c)))
    }

    pub fn channel_rms(&self) -> Vec<f64> {
        (0..self.n_channels).map(|c| self.rms(c)).collect()
    }

    pub fn channel_mse_of(&self, c: usize) -> Option<f64> {
        self.truth.as_ref()?;
        Some(mean(
            self.retained()
                .map(|k| (self.recovered_at(k, c) - self.truth_at(k, c).unwrap()).powi(2)),
        ))
    }

    /// RMS of the recovery error over the retained steps.
    pub fn error_rms(&self, c: usize) -> Option<f64> {
        self.channel_mse_of(c).map(f64::sqrt)
    }

    /// Recovery error RMS over the truth RMS.
    pub fn nrmse(&self, c: usize) -> Option<f64> {
        let truth = rms(self.truth_channel(c)?.into_iter());
        Some(self.error_rms(c)? / truth)
    }

    /// Mean recovered and true value over the retained steps in `[t_on, t_off)`.
    pub fn window_means(&self, c: usize, t_on: f64, t_off: f64) -> (f64, Option<f64>) {
        let ks: Vec<usize> = self
            .retained()
            .filter(|&k| {
                let t = self.time(k);
                t >= t_on && t < t_off
            })
            .collect();
        let u = mean(ks.iter().map(|&k| self.recovered_at(k, c)));
        let g = self.truth.as_ref().map(|_| mean(ks.iter().map(|&k| self.truth_at(k, c).unwrap())));
        (u, g)
    }

    /// Writes `t, retained, u_0, …, u_{n−1}` followed by `g_0, …` when the
    /// ground truth is known.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = String::from("t,retained");
        for c in 0..self.n_channels {
            write!(line, ",u_{c}").unwrap();
        }
        if self.truth.is_some() {
            for c in 0..self.n_channels {
                write!(line, ",g_{c}").unwrap();
            }
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        for k in 0..self.steps() {
            line.clear();
            write!(line, "{:.16e},{}", self.time(k), u8::from(k >= self.washout)).unwrap();
            for c in 0..self.n_channels {
                write!(line, ",{:.16e}", self.recovered_at(k, c)).unwrap();
            }
            if self.truth.is_some() {
                for c in 0..self.n_channels {
                    write!(line, ",{:.16e}", self.truth_at(k, c).unwrap()).unwrap();
                }
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn metrics(&self) -> DetectionMetrics {
        DetectionMetrics {
            mse_convention: "mean over retained steps and channels of (u - g)^2".into(),
            steps: self.steps(),
            washout: self.washout,
            channel_rms: self.channel_rms(),
            channel_mse: self.channel_mse.clone(),
            mse_disturbed: self.mse_disturbed,
            mse_undisturbed: self.mse_undisturbed,
            true_support: self.true_support.as_ref().map(|s| s.iter().copied().collect()),
            localized: self.localized.as_ref().map(|s| s.iter().copied().collect()),
            noise_floor: self.noise_floor.clone(),
            kappa: self.kappa,
        }
    }
}

/// Structured summary of a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionMetrics {
    pub mse_convention: String,
    pub steps: usize,
    pub washout: usize,
    pub channel_rms: Vec<f64>,
    pub channel_mse: Option<Vec<f64>>,
    pub mse_disturbed: Option<f64>,
    pub mse_undisturbed: Option<f64>,
    pub true_support: Option<Vec<usize>>,
    pub localized: Option<Vec<usize>>,
    pub noise_floor: Option<Vec<f64>>,
    pub kappa: f64,
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    mean(it.map(|v| v * v)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdPolicy {
    /// Flag channels whose RMS exceeds `kappa` times their floor.
    NoiseFloor { kappa: f64, floors: Vec<f64> },
    /// Flag channels whose RMS exceeds a fixed level.
    Absolute(f64),
}

/// Channels whose recovered RMS over the retained steps exceeds the policy
/// threshold.
pub fn localize(result: &DetectionResult, policy: &ThresholdPolicy) -> BTreeSet<usize> {
    (0..result.n_channels)
        .filter(|&c| {
            let threshold = match policy {
                ThresholdPolicy::NoiseFloor { kappa, floors } => kappa * floors[c],
                ThresholdPolicy::Absolute(level) => *level,
            };
            result.rms(c) > threshold
        })
        .collect()
}

/// Mean squared recovery error over the retained steps and the channels in
/// `disturbed`, and over the remaining channels. A set without channels
/// yields `None`.
pub fn mse_report(result: &DetectionResult, disturbed: &BTreeSet<usize>) -> Result<(Option<f64>, Option<f64>)> {
    if result.truth.is_none() {
        return Err(Error::MissingGroundTruth);
    }
    let over = |set: Vec<usize>| -> Option<f64> {
        if set.is_empty() || result.retained().is_empty() {
            return None;
        }
        Some(mean(set.iter().map(|&c| result.channel_mse_of(c).unwrap())))
    };
    let inside: Vec<usize> = disturbed.iter().copied().filter(|&c| c < result.n_channels).collect();
    let outside: Vec<usize> = (0..result.n_channels).filter(|c| !disturbed.contains(c)).collect();
    Ok((over(inside), over(outside)))
}

/// Measures the detector's spurious output and stores the resulting
/// per-channel floor for localization.
///
/// The calm part is the output RMS on an undisturbed run of length
/// `horizon`. When the training forcing came from a seeded family, each
/// channel is also left unforced while all others carry a fresh draw of that
/// family over the training window, and the output RMS on the silent channel
/// is recorded. The floor is the larger of the two per channel, so crosstalk
/// from busy neighbours does not read as a disturbance.
pub fn calibrate_noise_floor(
    trained: &mut TrainedDetector,
    model: &Model,
    x0: Option<&[f64]>,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let n = trained.n_channels();
    trained.noise_floor = None;
    let (calm_run, _) = detect(trained, model, &Signal::zero(n), x0, horizon, dt)?;
    let calm = calm_run.channel_rms();

    let m = &trained.manifest;
    let crosstalk = match m.forcing.reseeded(seeds::derive(m.master_seed, stream::HOLDOUT)) {
        Some(signal) => {
            let runs: Result<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|c| {
                    let others = signal
                        .silenced(c)
                        .ok_or_else(|| Error::invalid("forcing", "cannot silence a channel"))?;
                    let traj = simulate_mapped(
                        model,
                        &others,
                        &trained.config.channel_map,
                        &m.initial_state,
                        -m.training_horizon,
                        0.0,
                        dt,
                    )?;
                    let run = detect_trajectory(trained, &traj, None)?;
                    Ok(run.channel_rms()[c])
                })
                .collect();
            Some(runs?)
        }
        None => None,
    };
    let floor: Vec<f64> = match &crosstalk {
        Some(h) => calm.iter().zip(h).map(|(a, b)| a.max(*b)).collect(),
        None => calm.clone(),
    };
    trained.noise_floor = Some(NoiseFloor {
        calm,
        crosstalk,
        floor: floor.clone(),
        horizon,
    });
    Ok(floor)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactManifest {
    format: String,
    config: DetectorConfig,
    training: TrainingManifest,
    noise_floor: Option<NoiseFloor>,
    units: Vec<UnitRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitRecord {
    node: Option<usize>,
    inputs: Vec<usize>,
    channels: Vec<usize>,
    size: usize,
    seed: u64,
    resamples: usize,
    leak: f64,
    lambda: f64,
    washout: usize,
    internal: String,
    input: String,
    readout: String,
}

impl TrainedDetector {
    /// Writes `manifest.toml` and one set of matrix blobs per unit into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        let mut records = Vec::with_capacity(self.units.len());
        for (i, u) in self.units.iter().enumerate() {
            let rec = UnitRecord {
                node: u.node,
                inputs: u.inputs.clone(),
                channels: u.channels.clone(),
                size: u.reservoir.size(),
                seed: u.reservoir.seed,
                resamples: u.reservoir.resamples,
                leak: u.reservoir.leak,
                lambda: u.readout.lambda,
                washout: u.readout.washout,
                internal: format!("unit-{i}-internal.csr"),
                input: format!("unit-{i}-input.mat"),
                readout: format!("unit-{i}-readout.mat"),
            };
            io::write_sparse(&dir.join(&rec.internal), &u.reservoir.internal)?;
            io::write_dense(&dir.join(&rec.input), &u.reservoir.input)?;
            io::write_dense(&dir.join(&rec.readout), &u.readout.w_out)?;
            records.push(rec);
        }
        let manifest = ArtifactManifest {
            format: ARTIFACT_FORMAT.into(),
            config: self.config.clone(),
            training: self.manifest.clone(),
            noise_floor: self.noise_floor.clone(),
            units: records,
        };
        io::write_toml(&dir.join("manifest.toml"), &manifest, "detector manifest")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let manifest: ArtifactManifest = io::read_toml(&path, "detector manifest")?;
        let malformed = |reason: String| Error::MalformedArtifact {
            path: path.clone(),
            reason,
        };
        if manifest.format != ARTIFACT_FORMAT {
            return Err(malformed(format!("unsupported format `{}`", manifest.format)));
        }
        manifest.config.validate()?;
        let mut units = Vec::with_capacity(manifest.units.len());
        for rec in manifest.units {
            let internal = io::read_sparse(&dir.join(&rec.internal))?;
            let input = io::read_dense(&dir.join(&rec.input))?;
            let w_out: DMatrix<f64> = io::read_dense(&dir.join(&rec.readout))?;
            if internal.n_rows != rec.size
                || input.ncols() != rec.inputs.len()
                || w_out.nrows() != rec.channels.len()
                || w_out.ncols() != rec.size
            {
                return Err(malformed(format!("unit blobs do not match the recorded shape of {}", rec.internal)));
            }
            let mut reservoir = Reservoir::from_parts(internal, input, rec.leak)?;
            reservoir.seed = rec.seed;
            reservoir.resamples = rec.resamples;
            units.push(DetectorUnit {
                node: rec.node,
                inputs: rec.inputs,
                channels: rec.channels,
                reservoir,
                readout: Readout {
                    w_out,
                    lambda: rec.lambda,
                    washout: rec.washout,
                },
            });
        }
        let mut covered = vec![0usize; manifest.config.channel_map.channels()];
        for c in units.iter().flat_map(|u| &u.channels) {
            match covered.get_mut(*c) {
                Some(n) => *n += 1,
                None => return Err(malformed(format!("readout channel {c} out of range"))),
            }
        }
        if covered.iter().any(|&n| n != 1) {
            return Err(malformed("readout channels do not cover each channel exactly once".into()));
        }
        Ok(TrainedDetector {
            config: manifest.config,
            manifest: manifest.training,
            units,
            noise_floor: manifest.noise_floor,
        })
    }
}
