use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netdisturb::detector::{
    calibrate_noise_floor, detect, train_on_trajectory, Architecture, TrainedDetector,
};
use netdisturb::experiment::{
    self, default_output_dir, resolve, run_scaling_study, summarize, validate_config, write_scaling_outputs,
    ExperimentConfig, ScalingStudyConfig,
};
use netdisturb::models::simulate_mapped;
use netdisturb::netgen;
use netdisturb::signals::Signal;
use netdisturb::{io, Error};

/// Reservoir-computing detection of disturbances in network dynamical systems.
#[derive(Parser)]
#[command(name = "netdisturb", version)]
struct Cli {
    /// Worker threads for parallel training and the scaling study.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Master seed; every random draw is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Reservoir architecture: `standard` or `pseudo-parallel`.
    #[arg(long)]
    arch: Option<Architecture>,
    /// Reservoir leak parameter in [0, 1).
    #[arg(long)]
    leak: Option<f64>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(a) = self.arch {
            c.detector.architecture = a;
        }
        if let Some(l) = self.leak {
            c.detector.leak = l;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a complete experiment from a preset name or a config file.
    Experiment {
        /// Preset name (see `presets`) or path to a TOML config.
        source: String,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory; defaults to runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and calibrate a detector and save it as a directory artifact.
    Train {
        /// Preset name or config path describing model, forcing and detector.
        source: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved detector to a disturbed run.
    Detect {
        /// Directory written by `train`.
        #[arg(long)]
        detector: PathBuf,
        /// Take the disturbance, horizon and initial state from this preset or config.
        #[arg(long, conflicts_with = "signal")]
        config: Option<String>,
        /// Signal TOML with the disturbance.
        #[arg(long, requires = "horizon")]
        signal: Option<PathBuf>,
        /// Inference horizon when using `--signal`.
        #[arg(long)]
        horizon: Option<f64>,
        /// Master seed used to resolve the config's disturbance.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random Lotka-Volterra system with a stable coexistence point.
    Netgen {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output TOML file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare architectures across network sizes.
    ScalingStudy {
        /// TOML scaling-study config; the desk-scale grid when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the full grid (sizes 5 to 120, 20 realizations).
        #[arg(long, conflicts_with = "config")]
        full: bool,
        /// Comma-separated network sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one architecture.
        #[arg(long)]
        arch: Option<Architecture>,
        #[arg(long)]
        leak: Option<f64>,
        #[arg(long, default_value = "runs/scaling-study")]
        out: PathBuf,
    },
    /// Check a config without running it.
    Validate {
        /// Preset name or config path.
        source: String,
        /// Treat the file as a scaling-study config.
        #[arg(long)]
        scaling: bool,
    },
    /// List built-in experiment presets.
    Presets,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(errs) => Failure::Validation(errs.join("\n")),
            e @ (Error::Parse { .. }
            | Error::UnknownPreset(_)
            | Error::InvalidParameter { .. }
            | Error::InhibitorySlotForcing { .. }
            | Error::ManifestMismatch(_)
            | Error::DimensionMismatch { .. }) => Failure::Validation(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("invalid input:\n{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_experiment(source: &str, overrides: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut c = ExperimentConfig::resolve_source(source)?;
    overrides.apply(&mut c);
    let errs = validate_config(&c);
    if !errs.is_empty() {
        return Err(Failure::Validation(errs.join("\n")));
    }
    Ok(c)
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Experiment { source, overrides, out } => {
            let config = load_experiment(&source, &overrides)?;
            let out = out.unwrap_or_else(|| default_output_dir(&config));
            let outcome = experiment::run_experiment(&config, &out)?;
            let m = &outcome.metrics;
            println!("experiment `{}` written to {}", m.name, out.display());
            if let Some(l) = &m.detection.localized {
                println!("localized channels: {l:?}");
            }
            if let Some(s) = &m.detection.true_support {
                println!("disturbed channels: {s:?}");
            }
            println!(
                "mse disturbed {} / undisturbed {}",
                fmt_opt(m.detection.mse_disturbed),
                fmt_opt(m.detection.mse_undisturbed)
            );
            Ok(())
        }
        Command::Train { source, overrides, out } => {
            let config = load_experiment(&source, &overrides)?;
            let r = resolve(&config)?;
            let training = simulate_mapped(
                &r.model,
                &r.forcing,
                &r.detector.channel_map,
                &r.initial_state,
                -config.training_horizon,
                0.0,
                config.dt,
            )?;
            let mut trained = train_on_trajectory(&r.model, &r.forcing, &r.detector, &training, config.seed)?;
            calibrate_noise_floor(
                &mut trained,
                &r.model,
                config.inference_initial.as_deref(),
                config.calibration_horizon.unwrap_or(config.inference_horizon),
                config.dt,
            )?;
            trained.save(&out)?;
            training.write_csv(&out.join("training_trajectory.csv"))?;
            println!(
                "trained {} detector ({} reservoir nodes) written to {}",
                config.detector.architecture.name(),
                trained.total_size(),
                out.display()
            );
            Ok(())
        }
        Command::Detect {
            detector,
            config,
            signal,
            horizon,
            seed,
            out,
        } => run_detect(&detector, config, signal, horizon, seed, &out),
        Command::Netgen { nodes, seed, out } => {
            let sys = netgen::generate(nodes, seed)?;
            let text = sys.to_toml()?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                    println!(
                        "system with {nodes} nodes (seed {}, {} rejections) written to {}",
                        sys.seed,
                        sys.rejections,
                        path.display()
                    );
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::ScalingStudy {
            config,
            full,
            sizes,
            realizations,
            units,
            seed,
            arch,
            leak,
            out,
        } => {
            let mut c = match (config, full) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    ScalingStudyConfig::from_toml(&text)?
                }
                (None, true) => ScalingStudyConfig::full(),
                (None, false) => ScalingStudyConfig::default(),
            };
            if let Some(s) = sizes {
                c.sizes = s;
            }
            if let Some(r) = realizations {
                c.realizations = r;
            }
            if let Some(u) = units {
                c.units_per_node = u;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(a) = arch {
                c.architectures = vec![a];
            }
            if let Some(l) = leak {
                c.detector.leak = l;
            }
            let errs = c.validate();
            if !errs.is_empty() {
                return Err(Failure::Validation(errs.join("\n")));
            }
            let rows = run_scaling_study(&c)?;
            let summary = summarize(&c, &rows);
            write_scaling_outputs(&out, &c, &rows, &summary)?;
            println!("{:>5}  {:<16} {:>4} {:>6}  {:>12}  {:>12}", "N", "architecture", "ok", "failed", "mse dist.", "mse undist.");
            for s in &summary {
                println!(
                    "{:>5}  {:<16} {:>4} {:>6}  {:>12}  {:>12}",
                    s.nodes,
                    s.architecture.name(),
                    s.completed,
                    s.failed,
                    fmt_opt(s.mean_mse_disturbed),
                    fmt_opt(s.mean_mse_undisturbed)
                );
            }
            println!("results written to {}", out.display());
            Ok(())
        }
        Command::Validate { source, scaling } => {
            let errs = if scaling {
                let path = Path::new(&source);
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                ScalingStudyConfig::from_toml(&text)?.validate()
            } else {
                validate_config(&ExperimentConfig::resolve_source(&source)?)
            };
            if errs.is_empty() {
                println!("{source}: valid");
                Ok(())
            } else {
                Err(Failure::Validation(errs.join("\n")))
            }
        }
        Command::Presets => {
            for name in experiment::preset_names() {
                let alias = experiment::PRESET_ALIASES
                    .iter()
                    .find(|(_, target)| *target == name)
                    .map(|(a, _)| format!(" (alias {a})"))
                    .unwrap_or_default();
                println!("{name}{alias}");
            }
            Ok(())
        }
    }
}

fn run_detect(
    detector: &Path,
    config: Option<String>,
    signal: Option<PathBuf>,
    horizon: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> CliResult {
    let trained = TrainedDetector::load(detector)?;
    let (model, dt, disturbance, horizon, x0) = match (config, signal) {
        (Some(source), None) => {
            let overrides = Overrides {
                seed,
                ..Default::default()
            };
            let c = load_experiment(&source, &overrides)?;
            let r = resolve(&c)?;
            (r.model, c.dt, r.disturbance, horizon.unwrap_or(c.inference_horizon), c.inference_initial)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            (
                trained.manifest.model.clone(),
                trained.manifest.dt,
                Signal::from_toml(&text)?,
                horizon.expect("clap enforces --horizon"),
                None,
            )
        }
        _ => {
            return Err(Failure::Validation(
                "detect needs either --config or --signal".into(),
            ))
        }
    };
    let (result, traj) = detect(&trained, &model, &disturbance, x0.as_deref(), horizon, dt)?;
    io::ensure_dir(out)?;
    traj.write_csv(&out.join("inference_trajectory.csv"))?;
    result.write_csv(&out.join("signals.csv"))?;
    io::write_toml(&out.join("metrics.toml"), &result.metrics(), "detection metrics")?;
    if let Some(l) = &result.localized {
        println!("localized channels: {l:?}");
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4e}"))
}
