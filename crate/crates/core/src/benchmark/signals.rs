//! Excitation signals, all functions of time in seconds.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed time interval `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

fn active(windows: &[Interval], t: f64) -> bool {
    windows.is_empty() || windows.iter().any(|w| w.contains(t))
}

/// Exponential chirp `sin(base^(t / horizon) * t + phase)`, zero after `horizon`.
pub fn chirp(t: f64, base: f64, horizon: f64, phase: f64) -> f64 {
    if !(0.0..=horizon).contains(&t) {
        return 0.0;
    }
    (base.powf(t / horizon) * t + phase).sin()
}

/// Step of `amplitude` on `window`.
pub fn step(t: f64, amplitude: f64, window: Interval) -> f64 {
    if window.contains(t) {
        amplitude
    } else {
        0.0
    }
}

pub fn sine(t: f64, amplitude: f64, frequency_hz: f64, phase: f64) -> f64 {
    amplitude * (2.0 * PI * frequency_hz * t + phase).sin()
}

/// Random-phase multisine on a regular frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Multisine {
    amplitude: f64,
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    windows: Vec<Interval>,
}

impl Multisine {
    /// Components at every multiple of `resolution` (Hz) in `(low, high)`
    /// excluding DC; `high` itself is excluded. Phases are uniform on
    /// `[0, 2 pi)`, drawn from `seed`. An empty `windows` means always on.
    pub fn new(amplitude: f64, resolution: f64, low: f64, high: f64, seed: u64, windows: Vec<Interval>) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidArgument(format!("frequency resolution must be positive, got {resolution}")));
        }
        let first = ((low / resolution).floor() as i64 + 1).max(1);
        let frequencies: Vec<f64> = (first..)
            .map(|j| j as f64 * resolution)
            .take_while(|f| *f < high - 1e-9 * resolution)
            .collect();
        Self::with_frequencies(amplitude, frequencies, seed, windows)
    }

    pub fn with_frequencies(amplitude: f64, frequencies: Vec<f64>, seed: u64, windows: Vec<Interval>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidArgument("multisine band contains no grid frequency".into()));
        }
        if !amplitude.is_finite() {
            return Err(Error::InvalidArgument("multisine amplitude must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = frequencies.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self {
            amplitude,
            frequencies,
            phases,
            windows,
        })
    }

    pub fn with_phases(amplitude: f64, frequencies: Vec<f64>, phases: Vec<f64>, windows: Vec<Interval>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() != phases.len() {
            return Err(Error::InvalidArgument("multisine needs one phase per frequency".into()));
        }
        Ok(Self {
            amplitude,
            frequencies,
            phases,
            windows,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn value(&self, t: f64) -> f64 {
        if !active(&self.windows, t) {
            return 0.0;
        }
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(f, p)| self.amplitude * (2.0 * PI * f * t + p).sin())
            .sum()
    }
}

/// Serializable description of a scalar excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Chirp {
        amplitude: f64,
        base: f64,
        horizon: f64,
        phase: f64,
    },
    Multisine {
        amplitude: f64,
        resolution: f64,
        low: f64,
        high: f64,
        seed: u64,
        windows: Vec<Interval>,
    },
    Step {
        amplitude: f64,
        window: Interval,
    },
    Sine {
        amplitude: f64,
        frequency_hz: f64,
        phase: f64,
    },
    Sum {
        terms: Vec<SignalSpec>,
    },
}

/// Evaluable form of a [`SignalSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Chirp { amplitude: f64, base: f64, horizon: f64, phase: f64 },
    Multisine(Multisine),
    Step { amplitude: f64, window: Interval },
    Sine { amplitude: f64, frequency_hz: f64, phase: f64 },
    Sum(Vec<Signal>),
}

impl SignalSpec {
    pub fn build(&self) -> Result<Signal> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidArgument(format!("{what} must be finite")))
            }
        };
        Ok(match self {
            SignalSpec::Chirp { amplitude, base, horizon, phase } => {
                if !(*horizon > 0.0) {
                    return Err(Error::InvalidArgument("chirp horizon must be positive".into()));
                }
                Signal::Chirp {
                    amplitude: finite(*amplitude, "chirp amplitude")?,
                    base: finite(*base, "chirp base")?,
                    horizon: *horizon,
                    phase: finite(*phase, "chirp phase")?,
                }
            }
            SignalSpec::Multisine {
                amplitude,
                resolution,
                low,
                high,
                seed,
                windows,
            } => Signal::Multisine(Multisine::new(*amplitude, *resolution, *low, *high, *seed, windows.clone())?),
            SignalSpec::Step { amplitude, window } => Signal::Step {
                amplitude: finite(*amplitude, "step amplitude")?,
                window: *window,
            },
            SignalSpec::Sine {
                amplitude,
                frequency_hz,
                phase,
            } => Signal::Sine {
                amplitude: finite(*amplitude, "sine amplitude")?,
                frequency_hz: finite(*frequency_hz, "sine frequency")?,
                phase: finite(*phase, "sine phase")?,
            },
            SignalSpec::Sum { terms } => Signal::Sum(terms.iter().map(SignalSpec::build).collect::<Result<_>>()?),
        })
    }
}

impl Signal {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Chirp { amplitude, base, horizon, phase } => amplitude * chirp(t, *base, *horizon, *phase),
            Signal::Multisine(m) => m.value(t),
            Signal::Step { amplitude, window } => step(t, *amplitude, *window),
            Signal::Sine {
                amplitude,
                frequency_hz,
                phase,
            } => sine(t, *amplitude, *frequency_hz, *phase),
            Signal::Sum(terms) => terms.iter().map(|s| s.value(t)).sum(),
        }
    }
}
