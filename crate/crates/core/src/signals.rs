//! Closed-form, seedable forcing and disturbance signals.
//!
//! A [`Signal`] is fully described by its serializable [`SignalKind`]: random
//! parameters are drawn once at construction and stored, so a signal rebuilt
//! from its metadata evaluates identically.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signal {
    pub n_channels: usize,
    pub kind: SignalKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalKind {
    Zero,
    /// `amplitude · sin(ω_i t)` per channel.
    SinusoidBank {
        amplitude: f64,
        freq_low: f64,
        freq_high: f64,
        seed: Option<u64>,
        frequencies: Vec<f64>,
    },
    /// Independent piecewise-constant schedules per channel.
    RandomSteps {
        level_low: f64,
        level_high: f64,
        seed: Option<u64>,
        schedules: Vec<StepSchedule>,
    },
    /// Rectangular pulses on the listed channels; unlisted channels are zero.
    Heaviside { pulses: Vec<ChannelPulse> },
    /// Eight channels; channel 2 carries `0.3 sin 2t + 0.3 sin πt`, channel 4
    /// carries `sin(2π sin(t/2))`.
    LvPseudoSinusoids,
    /// `−½ σ((t−150)/30) + σ((t−300)/30)` on one channel, `σ` the logistic.
    ComposedSigmoid { channel: usize },
    /// Random sparse disturbance over a fraction of channels.
    RandomEnsemble {
        fraction: f64,
        seed: u64,
        terms: Vec<ChannelTerm>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPulse {
    pub channel: usize,
    pub pulse: Pulse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTerm {
    pub channel: usize,
    pub term: EnsembleTerm,
}

/// Piecewise-constant schedule on right-open intervals
/// `[breakpoints[k], breakpoints[k+1])` with value `levels[k]`. Before the
/// first breakpoint the first level applies; after the last, the last level
/// is held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl StepSchedule {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || breakpoints.len() != levels.len() + 1 {
            return Err(Error::invalid(
                "step schedule",
                format!(
                    "{} breakpoints cannot bound {} intervals",
                    breakpoints.len(),
                    levels.len()
                ),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("step schedule", "breakpoints must be strictly increasing"));
        }
        Ok(StepSchedule { breakpoints, levels })
    }

    /// Evenly spaced intervals starting at `start`.
    pub fn uniform(start: f64, interval_length: f64, levels: Vec<f64>) -> Result<Self> {
        let breakpoints = (0..=levels.len())
            .map(|k| start + k as f64 * interval_length)
            .collect();
        Self::new(breakpoints, levels)
    }

    pub fn eval(&self, t: f64) -> f64 {
        // index of the first breakpoint strictly greater than t
        let k = self.breakpoints.partition_point(|&b| b <= t);
        let idx = k.saturating_sub(1).min(self.levels.len() - 1);
        self.levels[idx]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub t_on: f64,
    pub t_off: Option<f64>,
    pub level: f64,
}

impl Pulse {
    pub fn eval(&self, t: f64) -> f64 {
        let on = t >= self.t_on && self.t_off.is_none_or(|off| t < off);
        if on {
            self.level
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnsembleTerm {
    /// `u1 sin(u2 t) + u1 sin(u3 t)`
    SumOfSines { u1: f64, u2: f64, u3: f64 },
    /// `u1 sin(u4 sin(u2 t))`
    NestedSine { u1: f64, u2: f64, u4: f64 },
}

impl EnsembleTerm {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            EnsembleTerm::SumOfSines { u1, u2, u3 } => u1 * (u2 * t).sin() + u1 * (u3 * t).sin(),
            EnsembleTerm::NestedSine { u1, u2, u4 } => u1 * (u4 * (u2 * t).sin()).sin(),
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn lv_g3(t: f64) -> f64 {
    0.3 * (2.0 * t).sin() + 0.3 * (PI * t).sin()
}

pub fn lv_g5(t: f64) -> f64 {
    (2.0 * PI * (t / 2.0).sin()).sin()
}

pub fn composed_sigmoid(t: f64) -> f64 {
    -0.5 * logistic((t - 150.0) / 30.0) + logistic((t - 300.0) / 30.0)
}

impl Signal {
    pub fn zero(n_channels: usize) -> Self {
        Signal {
            n_channels,
            kind: SignalKind::Zero,
        }
    }

    /// Sinusoid bank with explicitly chosen frequencies.
    pub fn sinusoids(amplitude: f64, frequencies: Vec<f64>) -> Self {
        Signal {
            n_channels: frequencies.len(),
            kind: SignalKind::SinusoidBank {
                amplitude,
                freq_low: frequencies.iter().copied().fold(f64::INFINITY, f64::min),
                freq_high: frequencies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                seed: None,
                frequencies,
            },
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_channels];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_channels);
        match &self.kind {
            SignalKind::Zero => out.fill(0.0),
            SignalKind::SinusoidBank {
                amplitude,
                frequencies,
                ..
            } => {
                for (o, w) in out.iter_mut().zip(frequencies) {
                    *o = amplitude * (w * t).sin();
                }
            }
            SignalKind::RandomSteps { schedules, .. } => {
                for (o, s) in out.iter_mut().zip(schedules) {
                    *o = s.eval(t);
                }
            }
            SignalKind::Heaviside { pulses } => {
                out.fill(0.0);
                for p in pulses {
                    out[p.channel] += p.pulse.eval(t);
                }
            }
            SignalKind::LvPseudoSinusoids => {
                out.fill(0.0);
                out[2] = lv_g3(t);
                out[4] = lv_g5(t);
            }
            SignalKind::ComposedSigmoid { channel } => {
                out.fill(0.0);
                out[*channel] = composed_sigmoid(t);
            }
            SignalKind::RandomEnsemble { terms, .. } => {
                out.fill(0.0);
                for ct in terms {
                    out[ct.channel] += ct.term.eval(t);
                }
            }
        }
    }

    /// Channels that carry a structurally nonzero signal.
    pub fn support(&self) -> BTreeSet<usize> {
        let zero = self.identically_zero_channels();
        (0..self.n_channels).filter(|c| !zero.contains(c)).collect()
    }

    /// Channels whose value is zero for every `t`, decided from parameters.
    pub fn identically_zero_channels(&self) -> BTreeSet<usize> {
        let all = || (0..self.n_channels).collect::<BTreeSet<_>>();
        match &self.kind {
            SignalKind::Zero => all(),
            SignalKind::SinusoidBank {
                amplitude,
                frequencies,
                ..
            } => {
                if *amplitude == 0.0 {
                    all()
                } else {
                    frequencies
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w == 0.0)
                        .map(|(c, _)| c)
                        .collect()
                }
            }
            SignalKind::RandomSteps { schedules, .. } => schedules
                .iter()
                .enumerate()
                .filter(|(_, s)| s.levels.iter().all(|l| *l == 0.0))
                .map(|(c, _)| c)
                .collect(),
            SignalKind::Heaviside { pulses } => all()
                .into_iter()
                .filter(|c| !pulses.iter().any(|p| p.channel == *c && p.pulse.level != 0.0))
                .collect(),
            SignalKind::LvPseudoSinusoids => all().into_iter().filter(|c| *c != 2 && *c != 4).collect(),
            SignalKind::ComposedSigmoid { channel } => all().into_iter().filter(|c| c != channel).collect(),
            SignalKind::RandomEnsemble { terms, .. } => all()
                .into_iter()
                .filter(|c| !terms.iter().any(|t| t.channel == *c))
                .collect(),
        }
    }

    /// A fresh draw from the same random family under `seed`, if this signal
    /// was produced by a seeded generator.
    pub fn reseeded(&self, seed: u64) -> Option<Signal> {
        match &self.kind {
            SignalKind::SinusoidBank {
                amplitude,
                freq_low,
                freq_high,
                seed: Some(_),
                ..
            } => sinusoid_bank(self.n_channels, *amplitude, *freq_low, *freq_high, seed).ok(),
            SignalKind::RandomSteps {
                level_low,
                level_high,
                seed: Some(_),
                schedules,
            } => {
                let s = schedules.first()?;
                let n_intervals = s.levels.len();
                let start = s.breakpoints[0];
                let length = (s.breakpoints[n_intervals] - start) / n_intervals as f64;
                random_steps(self.n_channels, n_intervals, length, start, *level_low, *level_high, seed).ok()
            }
            SignalKind::RandomEnsemble { fraction, .. } => {
                Some(random_disturbance_ensemble(self.n_channels, *fraction, seed).ok()?)
            }
            _ => None,
        }
    }

    /// The same signal with `channel` held at zero, or `None` when the kind
    /// cannot express that.
    pub fn silenced(&self, channel: usize) -> Option<Signal> {
        let mut out = self.clone();
        match &mut out.kind {
            SignalKind::Zero => {}
            SignalKind::SinusoidBank { frequencies, .. } => frequencies[channel] = 0.0,
            SignalKind::RandomSteps { schedules, .. } => schedules[channel].levels.fill(0.0),
            SignalKind::Heaviside { pulses } => pulses.retain(|p| p.channel != channel),
            SignalKind::LvPseudoSinusoids => {
                if channel == 2 || channel == 4 {
                    return None;
                }
            }
            SignalKind::ComposedSigmoid { channel: c } => {
                if *c == channel {
                    out.kind = SignalKind::Zero;
                }
            }
            SignalKind::RandomEnsemble { terms, .. } => terms.retain(|t| t.channel != channel),
        }
        Some(out)
    }

    pub fn description(&self) -> String {
        match &self.kind {
            SignalKind::Zero => format!("zero signal on {} channels", self.n_channels),
            SignalKind::SinusoidBank {
                amplitude,
                freq_low,
                freq_high,
                seed,
                ..
            } => format!(
                "sinusoid bank: {} channels, amplitude {amplitude}, frequencies in [{freq_low}, {freq_high}]{}",
                self.n_channels,
                seed.map_or(String::new(), |s| format!(", seed {s}"))
            ),
            SignalKind::RandomSteps {
                level_low,
                level_high,
                seed,
                schedules,
            } => format!(
                "random steps: {} channels, {} intervals, levels in [{level_low}, {level_high}]{}",
                self.n_channels,
                schedules.first().map_or(0, |s| s.levels.len()),
                seed.map_or(String::new(), |s| format!(", seed {s}"))
            ),
            SignalKind::Heaviside { pulses } => {
                let parts: Vec<String> = pulses
                    .iter()
                    .map(|ChannelPulse { channel: c, pulse: p }| match p.t_off {
                        Some(off) => format!("ch{c}: {} on [{}, {off})", p.level, p.t_on),
                        None => format!("ch{c}: {} from {}", p.level, p.t_on),
                    })
                    .collect();
                format!("heaviside: {}", parts.join("; "))
            }
            SignalKind::LvPseudoSinusoids => {
                "pseudo-sinusoids: ch2 = 0.3 sin(2t) + 0.3 sin(pi t), ch4 = sin(2 pi sin(t/2))".to_string()
            }
            SignalKind::ComposedSigmoid { channel } => format!(
                "composed sigmoid on ch{channel}: -0.5/(1+exp(-(t-150)/30)) + 1/(1+exp(-(t-300)/30))"
            ),
            SignalKind::RandomEnsemble { fraction, seed, terms } => format!(
                "random ensemble: {} of {} channels disturbed (fraction {fraction}, seed {seed})",
                terms.len(),
                self.n_channels
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = |len: usize, what: &'static str| {
            if len == self.n_channels {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: self.n_channels,
                    got: len,
                })
            }
        };
        match &self.kind {
            SignalKind::Zero => Ok(()),
            SignalKind::SinusoidBank { frequencies, .. } => expect(frequencies.len(), "sinusoid frequencies"),
            SignalKind::RandomSteps { schedules, .. } => {
                expect(schedules.len(), "step schedules")?;
                for s in schedules {
                    StepSchedule::new(s.breakpoints.clone(), s.levels.clone())?;
                }
                Ok(())
            }
            SignalKind::Heaviside { pulses } => {
                for ChannelPulse { channel, pulse: p } in pulses {
                    if *channel >= self.n_channels {
                        return Err(Error::invalid("channel", format!("{channel} out of range")));
                    }
                    if let Some(off) = p.t_off {
                        if !(p.t_on < off) {
                            return Err(Error::invalid("t_off", format!("t_on {} must precede t_off {off}", p.t_on)));
                        }
                    }
                }
                Ok(())
            }
            SignalKind::LvPseudoSinusoids => expect(8, "pseudo-sinusoid channels"),
            SignalKind::ComposedSigmoid { channel } => {
                if *channel >= self.n_channels {
                    Err(Error::invalid("channel", format!("{channel} out of range")))
                } else {
                    Ok(())
                }
            }
            SignalKind::RandomEnsemble { terms, .. } => {
                if let Some(t) = terms.iter().find(|t| t.channel >= self.n_channels) {
                    return Err(Error::invalid("channel", format!("{} out of range", t.channel)));
                }
                Ok(())
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize {
            what: "signal".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Signal> {
        let s: Signal = toml::from_str(text).map_err(|e| Error::Parse {
            what: "signal".into(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }
}

/// `amplitude · sin(ω_i t)` with `ω_i ~ U[freq_low, freq_high]`, drawn once.
pub fn sinusoid_bank(n_channels: usize, amplitude: f64, freq_low: f64, freq_high: f64, seed: u64) -> Result<Signal> {
    if !(freq_low < freq_high) {
        return Err(Error::invalid(
            "freq_low",
            format!("frequency range [{freq_low}, {freq_high}] is empty"),
        ));
    }
    let mut rng = seeds::rng(seed);
    let frequencies = (0..n_channels)
        .map(|_| rng.random_range(freq_low..freq_high))
        .collect();
    Ok(Signal {
        n_channels,
        kind: SignalKind::SinusoidBank {
            amplitude,
            freq_low,
            freq_high,
            seed: Some(seed),
            frequencies,
        },
    })
}

/// Independent random step schedules: `n_intervals` intervals of
/// `interval_length` starting at `start`, levels `~ U[level_low, level_high]`.
pub fn random_steps(
    n_channels: usize,
    n_intervals: usize,
    interval_length: f64,
    start: f64,
    level_low: f64,
    level_high: f64,
    seed: u64,
) -> Result<Signal> {
    if n_intervals == 0 {
        return Err(Error::invalid("n_intervals", "at least one interval required"));
    }
    if !(interval_length > 0.0) {
        return Err(Error::invalid("interval_length", "must be positive"));
    }
    if !(level_low <= level_high) {
        return Err(Error::invalid("level_low", "must not exceed level_high"));
    }
    let mut rng = seeds::rng(seed);
    let schedules = (0..n_channels)
        .map(|_| {
            let levels = (0..n_intervals)
                .map(|_| {
                    if level_low == level_high {
                        level_low
                    } else {
                        rng.random_range(level_low..level_high)
                    }
                })
                .collect();
            StepSchedule::uniform(start, interval_length, levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Signal {
        n_channels,
        kind: SignalKind::RandomSteps {
            level_low,
            level_high,
            seed: Some(seed),
            schedules,
        },
    })
}

/// Rectangular pulses on the listed channels; other channels stay zero.
pub fn heaviside(n_channels: usize, active: &[(usize, Pulse)]) -> Result<Signal> {
    let pulses = active
        .iter()
        .map(|&(channel, pulse)| ChannelPulse { channel, pulse })
        .collect();
    let s = Signal {
        n_channels,
        kind: SignalKind::Heaviside { pulses },
    };
    s.validate()?;
    Ok(s)
}

pub fn lv_pseudo_sinusoids() -> Signal {
    Signal {
        n_channels: 8,
        kind: SignalKind::LvPseudoSinusoids,
    }
}

/// Composed-sigmoid disturbance on channel 0 of a `n_channels` signal.
pub fn composed_sigmoid_disturbance(n_channels: usize) -> Signal {
    Signal {
        n_channels,
        kind: SignalKind::ComposedSigmoid { channel: 0 },
    }
}

/// Disturbs `round(fraction · n)` channels chosen without replacement. Each
/// gets, with equal probability, `u1 sin(u2 t) + u1 sin(u3 t)` or
/// `u1 sin(u4 sin(u2 t))` with `u1 ∈ [0.2, 0.4]`, `u2 ∈ [1, 2]`,
/// `u3 ∈ [π/2, π]`, `u4 ∈ [π, 2π]`.
pub fn random_disturbance_ensemble(n: usize, fraction: f64, seed: u64) -> Result<Signal> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", format!("{fraction} not in [0, 1]")));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut rng = seeds::rng(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    chosen.sort_unstable();
    let mut terms = Vec::with_capacity(chosen.len());
    for channel in chosen {
        let u1 = rng.random_range(0.2..0.4);
        let u2 = rng.random_range(1.0..2.0);
        let u3 = rng.random_range(PI / 2.0..PI);
        let u4 = rng.random_range(PI..2.0 * PI);
        let term = if rng.random_bool(0.5) {
            EnsembleTerm::SumOfSines { u1, u2, u3 }
        } else {
            EnsembleTerm::NestedSine { u1, u2, u4 }
        };
        terms.push(ChannelTerm { channel, term });
    }
    Ok(Signal {
        n_channels: n,
        kind: SignalKind::RandomEnsemble { fraction, seed, terms },
    })
}
