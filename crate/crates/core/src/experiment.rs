//! Configuration-driven experiments and the scaling study.
//!
//! An [`ExperimentConfig`] names a model, a training forcing, a disturbance,
//! detector hyperparameters and the time grid. Every random choice is seeded
//! from the config's master seed, so an experiment directory's
//! `manifest.toml` reruns to bit-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    calibrate_noise_floor, detect, train_on_trajectory, Architecture, DetectionMetrics, DetectionResult,
    DetectorConfig, DetectorParams, TrainedDetector,
};
use crate::error::{Error, Result};
use crate::io;
use crate::models::{
    simulate, simulate_mapped, ChannelMap, LotkaVolterraParams, Model, NetworkModel, StimulusRegime, Trajectory,
    WilsonCowanParams,
};
use crate::netgen;
use crate::seeds::{self, stream};
use crate::signals::{self, ChannelPulse, Signal};

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// One of [`MODEL_PRESETS`].
    Preset { name: String },
    /// A random Lotka-Volterra system from the network generator.
    Generated { nodes: usize, seed: Option<u64> },
    Inline { model: Model },
}

pub const MODEL_PRESETS: &[&str] = &["lv-food-web", "wc-stationary", "wc-oscillatory"];

pub fn model_preset(name: &str) -> Result<Model> {
    match name {
        "lv-food-web" => Ok(Model::LotkaVolterra(LotkaVolterraParams::food_web_preset())),
        "wc-stationary" => Ok(Model::WilsonCowan(WilsonCowanParams::preset(StimulusRegime::Stationary))),
        "wc-oscillatory" => Ok(Model::WilsonCowan(WilsonCowanParams::preset(StimulusRegime::Oscillatory))),
        other => Err(Error::UnknownPreset(other.into())),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Uniform in `[0.5, 1.5]` per species (Lotka-Volterra) or `[0, 0.5]`
    /// per population (Wilson-Cowan).
    #[default]
    Random,
    /// The model's known coexistence point.
    Equilibrium,
    Explicit { values: Vec<f64> },
}

/// Signal recipes in configuration terms. Seeds default to streams derived
/// from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    SinusoidBank {
        amplitude: f64,
        freq_low: f64,
        freq_high: f64,
        seed: Option<u64>,
    },
    /// Intervals start at `start`, by default the beginning of the window the
    /// signal is used on.
    RandomSteps {
        n_intervals: usize,
        interval_length: f64,
        level_low: f64,
        level_high: f64,
        start: Option<f64>,
        seed: Option<u64>,
    },
    Heaviside { pulses: Vec<ChannelPulse> },
    LvPseudoSinusoids,
    ComposedSigmoid {
        #[serde(default)]
        channel: usize,
    },
    RandomEnsemble { fraction: f64, seed: Option<u64> },
    /// A fully specified signal.
    Explicit { signal: Signal },
}

impl SignalSpec {
    pub fn build(&self, n_channels: usize, window_start: f64, default_seed: u64) -> Result<Signal> {
        let s = match self {
            SignalSpec::Zero => Signal::zero(n_channels),
            SignalSpec::SinusoidBank {
                amplitude,
                freq_low,
                freq_high,
                seed,
            } => signals::sinusoid_bank(
                n_channels,
                *amplitude,
                *freq_low,
                *freq_high,
                seed.unwrap_or(default_seed),
            )?,
            SignalSpec::RandomSteps {
                n_intervals,
                interval_length,
                level_low,
                level_high,
                start,
                seed,
            } => signals::random_steps(
                n_channels,
                *n_intervals,
                *interval_length,
                start.unwrap_or(window_start),
                *level_low,
                *level_high,
                seed.unwrap_or(default_seed),
            )?,
            SignalSpec::Heaviside { pulses } => {
                let active: Vec<_> = pulses.iter().map(|p| (p.channel, p.pulse)).collect();
                signals::heaviside(n_channels, &active)?
            }
            SignalSpec::LvPseudoSinusoids => {
                if n_channels != 8 {
                    return Err(Error::invalid(
                        "type",
                        format!("lv-pseudo-sinusoids needs 8 channels, the model has {n_channels}"),
                    ));
                }
                signals::lv_pseudo_sinusoids()
            }
            SignalSpec::ComposedSigmoid { channel } => Signal {
                n_channels,
                kind: signals::SignalKind::ComposedSigmoid { channel: *channel },
            },
            SignalSpec::RandomEnsemble { fraction, seed } => {
                signals::random_disturbance_ensemble(n_channels, *fraction, seed.unwrap_or(default_seed))?
            }
            SignalSpec::Explicit { signal } => {
                if signal.n_channels() != n_channels {
                    return Err(Error::DimensionMismatch {
                        context: "explicit signal channels",
                        expected: n_channels,
                        got: signal.n_channels(),
                    });
                }
                signal.clone()
            }
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Free-form note on what the experiment reproduces and where its
    /// numbers come from.
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub dt: f64,
    /// Training runs on `[−training_horizon, 0]`.
    pub training_horizon: f64,
    /// Detection runs on `[0, inference_horizon]`.
    pub inference_horizon: f64,
    /// Length of the undisturbed run used for the noise floor; defaults to
    /// the inference horizon.
    #[serde(default)]
    pub calibration_horizon: Option<f64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    /// Inference start state; defaults to the final training state.
    #[serde(default)]
    pub inference_initial: Option<Vec<f64>>,
    /// Flat state index driven by each signal channel; defaults to the
    /// model's own map.
    #[serde(default)]
    pub channel_slots: Option<Vec<usize>>,
    pub forcing: SignalSpec,
    pub disturbance: SignalSpec,
    #[serde(default)]
    pub detector: DetectorParams,
}

macro_rules! experiment_presets {
    ($($name:literal => $file:literal),* $(,)?) => {
        /// Built-in experiment configurations as `(name, TOML text)`.
        pub const EXPERIMENT_PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../presets/", $file)))),*
        ];
    };
}

experiment_presets! {
    "lv-sinusoid" => "lv-sinusoid.toml",
    "lv-steps" => "lv-steps.toml",
    "wc-steps" => "wc-steps.toml",
    "wc-oscillatory-leak0" => "wc-oscillatory-leak0.toml",
    "wc-oscillatory-leak65" => "wc-oscillatory-leak65.toml",
    "wc-oscillatory-leak95" => "wc-oscillatory-leak95.toml",
}

/// Short aliases for the experiment presets.
pub const PRESET_ALIASES: &[(&str, &str)] = &[
    ("fig3", "lv-sinusoid"),
    ("fig4", "lv-steps"),
    ("fig7", "wc-steps"),
    ("fig8-leak0", "wc-oscillatory-leak0"),
    ("fig8-leak65", "wc-oscillatory-leak65"),
    ("fig8-leak95", "wc-oscillatory-leak95"),
];

pub fn preset_names() -> Vec<&'static str> {
    EXPERIMENT_PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn experiment_preset(name: &str) -> Result<ExperimentConfig> {
    let canonical = PRESET_ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map_or(name, |(_, target)| *target);
    let text = EXPERIMENT_PRESETS
        .iter()
        .find(|(n, _)| *n == canonical)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::UnknownPreset(name.into()))?;
    ExperimentConfig::from_toml(text)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "experiment config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize {
            what: "experiment config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                what: format!("experiment config {}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// A preset name or alias, else a path to a TOML file.
    pub fn resolve_source(source: &str) -> Result<Self> {
        match experiment_preset(source) {
            Err(Error::UnknownPreset(_)) if Path::new(source).exists() => Self::load(Path::new(source)),
            other => other,
        }
    }
}

fn steps_for(name: &str, horizon: f64, dt: f64, errs: &mut Vec<String>) {
    if !(horizon > 0.0 && horizon.is_finite()) {
        errs.push(format!("{name}: must be positive, got {horizon}"));
    } else if dt > 0.0 {
        let ratio = horizon / dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            errs.push(format!("{name}: {horizon} is not a whole number of steps of dt = {dt}"));
        }
    }
}

/// Every schema and cross-field problem in `config`, in a stable order.
pub fn validate_config(config: &ExperimentConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if config.name.trim().is_empty() {
        errs.push("name: must not be empty".into());
    }
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        errs.push(format!("dt: time step must be positive and finite, got {}", config.dt));
    }
    steps_for("training_horizon", config.training_horizon, config.dt, &mut errs);
    steps_for("inference_horizon", config.inference_horizon, config.dt, &mut errs);
    if let Some(h) = config.calibration_horizon {
        steps_for("calibration_horizon", h, config.dt, &mut errs);
    }
    errs.extend(config.detector.validate());

    let model = match build_model(&config.model, config.seed) {
        Ok((m, _)) => m,
        Err(e) => {
            errs.push(format!("model: {e}"));
            return errs;
        }
    };
    let n = model.state_len();

    match &config.initial {
        InitialSpec::Equilibrium if matches!(model, Model::WilsonCowan(_)) => {
            errs.push("initial: no closed-form equilibrium for Wilson-Cowan models".into())
        }
        InitialSpec::Explicit { values } => check_state("initial.values", &model, values, &mut errs),
        _ => {}
    }
    if let Some(values) = &config.inference_initial {
        check_state("inference_initial", &model, values, &mut errs);
    }

    let map = match channel_map(&model, config.channel_slots.as_deref()) {
        Ok(m) => m,
        Err(msgs) => {
            errs.extend(msgs);
            return errs;
        }
    };
    debug_assert_eq!(map.state_len, n);
    let k = map.channels();
    let start = -config.training_horizon;
    for (field, spec, window) in [
        ("forcing", &config.forcing, start),
        ("disturbance", &config.disturbance, 0.0),
    ] {
        if let Err(e) = spec.build(k, window, 0) {
            errs.push(format!("{field}: {e}"));
        }
        if let (Model::WilsonCowan(_), Some(bad)) = (&model, out_of_range_channel(spec, k)) {
            errs.push(format!(
                "{field}: channel {bad} does not exist; Wilson-Cowan signals drive only the {k} excitatory populations"
            ));
        }
    }
    errs.dedup();
    errs
}

fn out_of_range_channel(spec: &SignalSpec, k: usize) -> Option<usize> {
    match spec {
        SignalSpec::Heaviside { pulses } => pulses.iter().map(|p| p.channel).find(|&c| c >= k),
        SignalSpec::ComposedSigmoid { channel } => (*channel >= k).then_some(*channel),
        _ => None,
    }
}

fn check_state(field: &str, model: &Model, values: &[f64], errs: &mut Vec<String>) {
    if values.len() != model.state_len() {
        errs.push(format!(
            "{field}: {} values given, the model state has {}",
            values.len(),
            model.state_len()
        ));
    } else if values.iter().any(|v| !v.is_finite()) {
        errs.push(format!("{field}: values must be finite"));
    } else if matches!(model, Model::LotkaVolterra(_)) && values.iter().any(|v| *v < 0.0) {
        errs.push(format!("{field}: biomasses must be nonnegative"));
    }
}

fn channel_map(model: &Model, slots: Option<&[usize]>) -> std::result::Result<ChannelMap, Vec<String>> {
    let Some(slots) = slots else {
        return Ok(model.channel_map());
    };
    let mut errs = Vec::new();
    let map = ChannelMap {
        state_len: model.state_len(),
        slots: slots.to_vec(),
    };
    if let Err(e) = map.validate() {
        errs.push(format!("channel_slots: {e}"));
    }
    if let Model::WilsonCowan(_) = model {
        for (c, &s) in slots.iter().enumerate() {
            if s % 2 == 1 {
                errs.push(format!(
                    "channel_slots[{c}]: slot {s} is the inhibitory population of pair {}; \
                     Wilson-Cowan disturbances act only on excitatory populations",
                    s / 2
                ));
            }
        }
    }
    if errs.is_empty() {
        Ok(map)
    } else {
        Err(errs)
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

/// Builds the model and, when known, its coexistence point.
fn build_model(spec: &ModelSpec, master: u64) -> Result<(Model, Option<Vec<f64>>)> {
    match spec {
        ModelSpec::Preset { name } => {
            let model = model_preset(name)?;
            let eq = match &model {
                Model::LotkaVolterra(_) => Some(LotkaVolterraParams::FOOD_WEB_EQUILIBRIUM.to_vec()),
                Model::WilsonCowan(_) => None,
            };
            Ok((model, eq))
        }
        ModelSpec::Generated { nodes, seed } => {
            let sys = netgen::generate(*nodes, seed.unwrap_or_else(|| seeds::derive(master, stream::SYSTEM)))?;
            Ok((Model::LotkaVolterra(sys.params), Some(sys.equilibrium)))
        }
        ModelSpec::Inline { model } => {
            model.validate()?;
            let eq = match model {
                Model::LotkaVolterra(p) => netgen::solve_equilibrium(p).ok(),
                Model::WilsonCowan(_) => None,
            };
            Ok((model.clone(), eq))
        }
    }
}

fn random_initial(model: &Model, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    let (lo, hi) = match model {
        Model::LotkaVolterra(_) => (0.5, 1.5),
        Model::WilsonCowan(_) => (0.0, 0.5),
    };
    (0..model.state_len()).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Everything an experiment run needs, with all seeds filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub model: Model,
    pub initial_state: Vec<f64>,
    pub forcing: Signal,
    pub disturbance: Signal,
    pub detector: DetectorConfig,
}

pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedExperiment> {
    let errs = validate_config(config);
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let master = config.seed;
    let (model, equilibrium) = build_model(&config.model, master)?;
    let initial_state = match &config.initial {
        InitialSpec::Random => random_initial(&model, seeds::derive(master, stream::INITIAL)),
        InitialSpec::Equilibrium => equilibrium.ok_or_else(|| {
            Error::invalid("initial", "the model has no positive coexistence equilibrium")
        })?,
        InitialSpec::Explicit { values } => values.clone(),
    };
    let map = channel_map(&model, config.channel_slots.as_deref()).map_err(Error::InvalidConfig)?;
    let k = map.channels();
    let forcing = config
        .forcing
        .build(k, -config.training_horizon, seeds::derive(master, stream::FORCING))?;
    let disturbance = config
        .disturbance
        .build(k, 0.0, seeds::derive(master, stream::DISTURBANCE))?;
    let mut detector = DetectorConfig::for_model(&model, config.detector.clone());
    detector.channel_map = map;
    Ok(ResolvedExperiment {
        config: config.clone(),
        model,
        initial_state,
        forcing,
        disturbance,
        detector,
    })
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStats {
    pub steps: usize,
    pub min_state: f64,
    pub max_state: f64,
    /// For Wilson-Cowan runs: whether every component stayed in `[−K, 2K]`.
    pub bounded: Option<bool>,
}

fn stats(model: &Model, traj: &Trajectory) -> TrajectoryStats {
    let (lo, hi) = (traj.min_value(), traj.max_value());
    let bounded = match model {
        Model::WilsonCowan(p) => Some(lo >= -p.gain && hi <= 2.0 * p.gain),
        Model::LotkaVolterra(_) => None,
    };
    if bounded == Some(false) {
        log::error!("Wilson-Cowan state left [-K, 2K]: range [{lo}, {hi}]");
    }
    TrajectoryStats {
        steps: traj.len(),
        min_state: lo,
        max_state: hi,
        bounded,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMetrics {
    pub name: String,
    pub model: String,
    pub architecture: Architecture,
    pub master_seed: u64,
    pub reservoir_seeds: Vec<u64>,
    pub reservoir_resamples: usize,
    pub total_reservoir_size: usize,
    pub initial_state: Vec<f64>,
    pub forcing: String,
    pub disturbance: String,
    pub training: TrajectoryStats,
    pub inference: TrajectoryStats,
    /// Recovery error RMS over truth RMS, for disturbed channels.
    pub nrmse: BTreeMap<String, f64>,
    /// Largest undisturbed-channel RMS over smallest disturbed-channel RMS.
    pub separation: Option<f64>,
    pub detection: DetectionMetrics,
}

pub struct ExperimentOutcome {
    pub resolved: ResolvedExperiment,
    pub trained: TrainedDetector,
    pub training: Trajectory,
    pub inference: Trajectory,
    pub result: DetectionResult,
    pub metrics: ExperimentMetrics,
}

/// Trains, calibrates and detects, without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let r = resolve(config)?;
    let c = &r.config;
    log::info!("experiment `{}`: simulating training run", c.name);
    let training = simulate_mapped(
        &r.model,
        &r.forcing,
        &r.detector.channel_map,
        &r.initial_state,
        -c.training_horizon,
        0.0,
        c.dt,
    )?;
    log::info!("experiment `{}`: fitting {:?} detector", c.name, c.detector.architecture);
    let mut trained = train_on_trajectory(&r.model, &r.forcing, &r.detector, &training, c.seed)?;
    let x_inf = c.inference_initial.as_deref();
    calibrate_noise_floor(
        &mut trained,
        &r.model,
        x_inf,
        c.calibration_horizon.unwrap_or(c.inference_horizon),
        c.dt,
    )?;
    log::info!("experiment `{}`: detecting", c.name);
    let (result, inference) = detect(&trained, &r.model, &r.disturbance, x_inf, c.inference_horizon, c.dt)?;

    let support = r.disturbance.support();
    let nrmse = support
        .iter()
        .filter_map(|&ch| result.nrmse(ch).map(|v| (ch.to_string(), v)))
        .collect();
    let rms = result.channel_rms();
    let min_disturbed = support.iter().map(|&ch| rms[ch]).fold(f64::INFINITY, f64::min);
    let max_undisturbed = (0..rms.len())
        .filter(|ch| !support.contains(ch))
        .map(|ch| rms[ch])
        .fold(0.0, f64::max);
    let separation = (!support.is_empty()).then(|| max_undisturbed / min_disturbed);

    let metrics = ExperimentMetrics {
        name: c.name.clone(),
        model: r.model.kind().into(),
        architecture: c.detector.architecture,
        master_seed: c.seed,
        reservoir_seeds: trained.units.iter().map(|u| u.reservoir.seed).collect(),
        reservoir_resamples: trained.units.iter().map(|u| u.reservoir.resamples).sum(),
        total_reservoir_size: trained.total_size(),
        initial_state: r.initial_state.clone(),
        forcing: r.forcing.description(),
        disturbance: r.disturbance.description(),
        training: stats(&r.model, &training),
        inference: stats(&r.model, &inference),
        nrmse,
        separation,
        detection: result.metrics(),
    };
    Ok(ExperimentOutcome {
        resolved: r,
        trained,
        training,
        inference,
        result,
        metrics,
    })
}

impl ExperimentOutcome {
    /// Writes the experiment directory: trajectories, recovered signals,
    /// metrics, the rerunnable manifest and the trained detector.
    pub fn write(&self, out: &Path) -> Result<()> {
        io::ensure_dir(out)?;
        self.training.write_csv(&out.join("training_trajectory.csv"))?;
        self.inference.write_csv(&out.join("inference_trajectory.csv"))?;
        self.result.write_csv(&out.join("signals.csv"))?;
        io::write_toml(&out.join("metrics.toml"), &self.metrics, "experiment metrics")?;
        io::write_toml(
            &out.join("signals.toml"),
            &ResolvedSignals {
                forcing: self.resolved.forcing.clone(),
                disturbance: self.resolved.disturbance.clone(),
            },
            "resolved signals",
        )?;
        io::write_toml(&out.join("manifest.toml"), &self.resolved.config, "experiment manifest")?;
        self.trained.save(&out.join("detector"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolvedSignals {
    forcing: Signal,
    disturbance: Signal,
}

pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let outcome = execute(config)?;
    outcome.write(out)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Scaling study
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingStudyConfig {
    pub sizes: Vec<usize>,
    pub realizations: usize,
    pub units_per_node: usize,
    pub architectures: Vec<Architecture>,
    pub fraction: f64,
    pub training_horizon: f64,
    pub inference_horizon: f64,
    pub dt: f64,
    pub amplitude: f64,
    pub freq_low: f64,
    pub freq_high: f64,
    pub seed: u64,
    /// Shared reservoir hyperparameters; the architecture and size fields
    /// are overridden per run.
    pub detector: DetectorParams,
}

impl Default for ScalingStudyConfig {
    fn default() -> Self {
        ScalingStudyConfig {
            sizes: vec![5, 10, 20, 40],
            realizations: 5,
            units_per_node: 100,
            architectures: vec![Architecture::Standard, Architecture::PseudoParallel],
            fraction: 0.2,
            training_horizon: 100.0,
            inference_horizon: 50.0,
            dt: 0.005,
            amplitude: 0.8,
            freq_low: 1.0,
            freq_high: 9.0,
            seed: 1,
            detector: DetectorParams::default(),
        }
    }
}

impl ScalingStudyConfig {
    /// The full grid: sizes 5 to 120 with 20 realizations each.
    pub fn full() -> Self {
        ScalingStudyConfig {
            sizes: vec![5, 10, 20, 40, 60, 80, 100, 120],
            realizations: 20,
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "scaling study config".into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sizes.is_empty() {
            errs.push("sizes: at least one network size required".into());
        }
        if let Some(n) = self.sizes.iter().find(|&&n| n < 5) {
            errs.push(format!("sizes: {n} is below the generator minimum of 5"));
        }
        if self.realizations == 0 {
            errs.push("realizations: must be at least 1".into());
        }
        if self.units_per_node == 0 {
            errs.push("units_per_node: must be at least 1".into());
        }
        if self.architectures.is_empty() {
            errs.push("architectures: at least one architecture required".into());
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            errs.push(format!("fraction: {} not in [0, 1]", self.fraction));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt: time step must be positive and finite, got {}", self.dt));
        }
        steps_for("training_horizon", self.training_horizon, self.dt, &mut errs);
        steps_for("inference_horizon", self.inference_horizon, self.dt, &mut errs);
        if !(self.freq_low < self.freq_high) {
            errs.push(format!("freq_low: [{}, {}] is empty", self.freq_low, self.freq_high));
        }
        errs.extend(self.detector.validate());
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub nodes: usize,
    pub realization: usize,
    pub architecture: Architecture,
    pub system_seed: u64,
    /// Generated systems rejected because the integrator diverged on them.
    pub system_redraws: usize,
    pub mse_disturbed: Option<f64>,
    pub mse_undisturbed: Option<f64>,
    /// `None` on success, else the failure message.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummaryRow {
    pub nodes: usize,
    pub architecture: Architecture,
    pub completed: usize,
    pub failed: usize,
    pub mean_mse_disturbed: Option<f64>,
    pub median_mse_disturbed: Option<f64>,
    pub mean_mse_undisturbed: Option<f64>,
}

struct Realization {
    model: Model,
    equilibrium: Vec<f64>,
    system_seed: u64,
    system_redraws: usize,
    forcing: Signal,
    disturbance: Signal,
    reservoir_seed: u64,
}

/// Redraw budget for generated systems that the fixed-step integrator cannot
/// follow at the study's time step.
const REALIZATION_REDRAWS: usize = 100;

fn realization(config: &ScalingStudyConfig, n: usize, r: usize) -> Result<Realization> {
    let path = |s: u64| seeds::derive_path(config.seed, &[s, n as u64, r as u64]);
    let forcing = signals::sinusoid_bank(n, config.amplitude, config.freq_low, config.freq_high, path(stream::FORCING))?;
    let disturbance = signals::random_disturbance_ensemble(n, config.fraction, path(stream::DISTURBANCE))?;
    let mut seed = path(stream::SYSTEM);
    for redraws in 0..=REALIZATION_REDRAWS {
        let sys = netgen::generate(n, seed)?;
        let model = Model::LotkaVolterra(sys.params);
        match integrable(&model, &sys.equilibrium, &forcing, &disturbance, config) {
            Ok(()) => {
                return Ok(Realization {
                    model,
                    equilibrium: sys.equilibrium,
                    system_seed: sys.seed,
                    system_redraws: redraws,
                    forcing,
                    disturbance,
                    reservoir_seed: path(stream::RESERVOIR),
                })
            }
            Err(Error::IntegrationDiverged { .. }) => {
                log::debug!("N = {n}, realization {r}: system seed {} diverges at dt = {}; redrawing", sys.seed, config.dt);
                seed = sys.seed.wrapping_add(1);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RetryBudgetExhausted {
        budget: REALIZATION_REDRAWS,
        diagnostics: format!("every generated system with N = {n} diverged at dt = {}", config.dt),
    })
}

/// Runs the training and disturbed simulations once to reject systems too
/// stiff for the explicit integrator.
fn integrable(model: &Model, x0: &[f64], forcing: &Signal, disturbance: &Signal, config: &ScalingStudyConfig) -> Result<()> {
    let train = simulate(model, forcing, x0, -config.training_horizon, 0.0, config.dt)?;
    simulate(model, disturbance, train.last().unwrap(), 0.0, config.inference_horizon, config.dt)?;
    Ok(())
}

fn run_one(config: &ScalingStudyConfig, real: &Realization, arch: Architecture) -> Result<(f64, f64)> {
    let params = DetectorParams {
        architecture: arch,
        units_per_node: config.units_per_node,
        ..config.detector.clone()
    };
    let det_config = DetectorConfig::for_model(&real.model, params);
    let trained = crate::detector::train(
        &real.model,
        &real.forcing,
        &det_config,
        &real.equilibrium,
        config.training_horizon,
        config.dt,
        real.reservoir_seed,
    )?;
    let (result, _) = detect(&trained, &real.model, &real.disturbance, None, config.inference_horizon, config.dt)?;
    let d = result.mse_disturbed.unwrap_or(f64::NAN);
    let u = result.mse_undisturbed.unwrap_or(f64::NAN);
    Ok((d, u))
}

/// Runs every (size, realization, architecture) cell. Failures are recorded
/// in their rows rather than dropped. Rows come back in grid order whatever
/// the degree of parallelism.
pub fn run_scaling_study(config: &ScalingStudyConfig) -> Result<Vec<ScalingRow>> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let cells: Vec<(usize, usize)> = config
        .sizes
        .iter()
        .flat_map(|&n| (0..config.realizations).map(move |r| (n, r)))
        .collect();
    let rows: Vec<Vec<ScalingRow>> = cells
        .par_iter()
        .map(|&(n, r)| {
            let real = realization(config, n, r);
            config
                .architectures
                .iter()
                .map(|&arch| {
                    let outcome = real.as_ref().map_err(|e| e.to_string()).and_then(|real| {
                        run_one(config, real, arch)
                            .map(|v| ((real.system_seed, real.system_redraws), v))
                            .map_err(|e| e.to_string())
                    });
                    match outcome {
                        Ok(((seed, redraws), (d, u))) => {
                            log::info!("N = {n}, realization {r}, {}: mse {d:.3e} / {u:.3e}", arch.name());
                            ScalingRow {
                                nodes: n,
                                realization: r,
                                architecture: arch,
                                system_seed: seed,
                                system_redraws: redraws,
                                mse_disturbed: Some(d),
                                mse_undisturbed: Some(u),
                                error: None,
                            }
                        }
                        Err(msg) => {
                            log::warn!("N = {n}, realization {r}, {} failed: {msg}", arch.name());
                            ScalingRow {
                                nodes: n,
                                realization: r,
                                architecture: arch,
                                system_seed: 0,
                                system_redraws: 0,
                                mse_disturbed: None,
                                mse_undisturbed: None,
                                error: Some(msg),
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(config: &ScalingStudyConfig, rows: &[ScalingRow]) -> Vec<ScalingSummaryRow> {
    let mut out = Vec::new();
    for &n in &config.sizes {
        for &arch in &config.architectures {
            let cell: Vec<&ScalingRow> = rows
                .iter()
                .filter(|r| r.nodes == n && r.architecture == arch)
                .collect();
            let ok: Vec<&ScalingRow> = cell.iter().copied().filter(|r| r.error.is_none()).collect();
            let d: Vec<f64> = ok.iter().filter_map(|r| r.mse_disturbed).filter(|v| v.is_finite()).collect();
            let u: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.mse_undisturbed)
                .filter(|v| v.is_finite())
                .collect();
            out.push(ScalingSummaryRow {
                nodes: n,
                architecture: arch,
                completed: ok.len(),
                failed: cell.len() - ok.len(),
                mean_mse_disturbed: mean_of(&d),
                median_mse_disturbed: median(d),
                mean_mse_undisturbed: mean_of(&u),
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.16e}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `results.csv` (one row per cell), `summary.csv` and the config.
pub fn write_scaling_outputs(
    dir: &Path,
    config: &ScalingStudyConfig,
    rows: &[ScalingRow],
    summary: &[ScalingSummaryRow],
) -> Result<()> {
    io::ensure_dir(dir)?;
    let mut text = String::from("N,realization,architecture,mse_disturbed,mse_undisturbed,system_seed,system_redraws,error\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.nodes,
            r.realization,
            r.architecture.name(),
            opt(r.mse_disturbed),
            opt(r.mse_undisturbed),
            r.system_seed,
            r.system_redraws,
            csv_field(r.error.as_deref().unwrap_or(""))
        )
        .unwrap();
    }
    let path = dir.join("results.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let mut text = String::from(
        "N,architecture,completed,failed,mean_mse_disturbed,median_mse_disturbed,mean_mse_undisturbed\n",
    );
    for s in summary {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            s.nodes,
            s.architecture.name(),
            s.completed,
            s.failed,
            opt(s.mean_mse_disturbed),
            opt(s.median_mse_disturbed),
            opt(s.mean_mse_undisturbed)
        )
        .unwrap();
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    io::write_toml(&dir.join("manifest.toml"), config, "scaling study config")
}

/// Default output directory for an experiment.
pub fn default_output_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(&config.name)
}
