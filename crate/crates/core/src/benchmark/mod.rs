//! Nonlinear mass-spring-damper benchmark: grid dynamics, excitation design
//! and measurement noise.
//!
//! The chirp argument is evaluated in seconds, `t = k * Ts`: read with `k` as
//! a sample index the instantaneous frequency would be far beyond Nyquist
//! long before the chirp ends.

mod msd;
mod signals;

pub use msd::{msd_dynamics, rk4_step, MsdGrid};
pub use signals::{chirp, sine, step, Interval, Multisine, Signal, SignalSpec};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::series::Series;

pub const TRAIN_SAMPLES: usize = 3461;
pub const TEST_SAMPLES: usize = 600;

/// Chirp and multisine windows of the training input.
pub const TRAIN_CHIRP_END: f64 = 90.0;
pub const TRAIN_WINDOWS_X: [Interval; 2] = [Interval::new(96.0, 116.0), Interval::new(148.0, 168.0)];
pub const TRAIN_WINDOWS_Y: [Interval; 2] = [Interval::new(122.0, 142.0), Interval::new(148.0, 168.0)];

/// Signal specifications for the two training input channels. Multisine
/// phases for channel `c` are drawn from stream `seed * 2 + c`.
pub fn training_input_specs(seed: u64) -> [SignalSpec; 2] {
    let channel = |phase: f64, windows: &[Interval], c: u64| SignalSpec::Sum {
        terms: vec![
            SignalSpec::Chirp {
                amplitude: 2.0,
                base: 1.4 * PI,
                horizon: TRAIN_CHIRP_END,
                phase,
            },
            SignalSpec::Multisine {
                amplitude: 0.1,
                resolution: 0.05,
                low: 0.0,
                high: 0.7,
                seed: seed.wrapping_mul(2).wrapping_add(c),
                windows: windows.to_vec(),
            },
        ],
    };
    [channel(0.0, &TRAIN_WINDOWS_X, 0), channel(PI / 2.0, &TRAIN_WINDOWS_Y, 1)]
}

pub fn test_input_specs() -> [SignalSpec; 2] {
    [
        SignalSpec::Sum {
            terms: vec![
                SignalSpec::Sine {
                    amplitude: 2.0,
                    frequency_hz: 0.8,
                    phase: PI / 3.0,
                },
                SignalSpec::Step {
                    amplitude: 2.0,
                    window: Interval::new(1.0, 4.0),
                },
            ],
        },
        SignalSpec::Sum {
            terms: vec![
                SignalSpec::Sine {
                    amplitude: 1.0,
                    frequency_hz: 0.1,
                    phase: PI / 2.0,
                },
                SignalSpec::Sine {
                    amplitude: -2.0,
                    frequency_hz: 0.05,
                    phase: PI / 7.0,
                },
            ],
        },
    ]
}

/// Samples `specs` at `t = k * ts` for `k = 0..len`.
pub fn sample_signals(specs: &[SignalSpec], ts: f64, len: usize) -> Result<Series> {
    let signals = specs.iter().map(SignalSpec::build).collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(len * signals.len());
    for k in 0..len {
        let t = k as f64 * ts;
        data.extend(signals.iter().map(|s| s.value(t)));
    }
    Series::new(signals.len(), data)
}

pub fn make_training_input(seed: u64, ts: f64) -> Result<Series> {
    sample_signals(&training_input_specs(seed), ts, TRAIN_SAMPLES)
}

pub fn make_test_input(ts: f64) -> Result<Series> {
    sample_signals(&test_input_specs(), ts, TEST_SAMPLES)
}

/// Noise-free response from rest: `w_k` is the output-node position at
/// `x_k`, then `x_{k+1}` follows by one RK4 step with `u_k` held.
pub fn simulate_grid(grid: &MsdGrid, u: &Series, ts: f64) -> Result<Series> {
    grid.validate()?;
    check_dim("grid input channels", 2, u.dim())?;
    let mut x = vec![0.0; grid.state_dim()];
    let mut w = Vec::with_capacity(2 * u.len());
    for k in 0..u.len() {
        w.extend_from_slice(&grid.output(&x));
        x = rk4_step(|x, u, d| grid.dynamics_into(x, u, d), &x, u.row(k), ts)?;
        if x.iter().any(|v| !v.is_finite() || v.abs() > crate::model::DEFAULT_DIVERGENCE_BOUND) {
            let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Err(Error::Divergence { step: k, norm });
        }
    }
    Series::new(2, w)
}

/// Adds white Gaussian noise with per-channel variance
/// `var(w) * 10^(-snr_db / 10)`; returns the noisy series and that variance.
/// `snr_db = +inf` adds nothing.
pub fn add_noise_snr(w: &Series, snr_db: f64, seed: u64) -> Result<(Series, Vec<f64>)> {
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("snr must not be NaN".into()));
    }
    let var = w.variance();
    if let Some(c) = var.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ZeroVariance { channel: c });
    }
    if snr_db == f64::INFINITY {
        return Ok((w.clone(), vec![0.0; w.dim()]));
    }
    let noise_var: Vec<f64> = var.iter().map(|v| v * 10f64.powf(-snr_db / 10.0)).collect();
    let sd: Vec<f64> = noise_var.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = w.map_rows(|_, src, dst| {
        for ((d, s), sd) in dst.iter_mut().zip(src).zip(&sd) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *d = s + sd * e;
        }
    });
    Ok((y, noise_var))
}

/// Settings of the benchmark data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub grid: MsdGrid,
    pub ts: f64,
    /// Signal-to-noise ratio; `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            grid: MsdGrid::default(),
            ts: 0.05,
            snr_db: 35.0,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::Config(format!("sampling time must be positive, got {}", self.ts)));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db must be a number or +inf, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// Generated train and test data with the realized noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_noise_var: Vec<f64>,
    pub test_noise_var: Vec<f64>,
}

/// Simulates the grid under the training and test inputs and adds noise.
///
/// Seed streams: multisine phases use `2 * seed` and `2 * seed + 1`; noise
/// uses independent generators derived from `seed`.
pub fn generate_benchmark_datasets(cfg: &BenchmarkConfig) -> Result<BenchmarkData> {
    cfg.validate()?;
    let snr = cfg.snr_db;
    let make = |u: Series, stream: u64| -> Result<(Dataset, Vec<f64>)> {
        let w = simulate_grid(&cfg.grid, &u, cfg.ts)?;
        let (y, var) = add_noise_snr(&w, snr, noise_seed(cfg.seed, stream))?;
        Ok((Dataset::new(cfg.ts, u, y)?.with_truth(w)?, var))
    };
    let (train, train_noise_var) = make(make_training_input(cfg.seed, cfg.ts)?, 0)?;
    let (test, test_noise_var) = make(make_test_input(cfg.ts)?, 1)?;
    Ok(BenchmarkData {
        train,
        test,
        train_noise_var,
        test_noise_var,
    })
}

fn noise_seed(seed: u64, stream: u64) -> u64 {
    // keep noise generators apart from the phase generators
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x5EED_0000 + stream)
}
