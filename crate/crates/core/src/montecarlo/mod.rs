//! Monte-Carlo engine.
//!
//! Every trial owns a ChaCha8 stream selected by `(seed, purpose, trial index)`,
//! trials are summed in fixed-size chunks, and chunk sums are folded in chunk
//! order. Results are therefore bit-identical for a given seed whatever the
//! number of worker threads.

mod oracles;
mod outage;

pub use oracles::{
    estimate_nu_c, estimate_nu_c_all, moments_window_radius, nu_c_table, verify_delta_count,
    verify_interference_moments, DeltaCountReport, MomentsReport, NuCEstimate,
};
pub use outage::{
    estimate_caot, estimate_etc, estimate_q_all, estimate_qbar, estimate_qk, find_max_intensity,
    find_max_intensity_caot, EtcEstimate, MaxIntensity, OutageEstimates, SearchConfig,
};

use crate::bounds::BoundsError;
use crate::fsmc::ChannelModel;
use crate::sir::SirError;
use crate::spatial::{window_for_tail_fraction, DEFAULT_TAIL_FRACTION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("outage constraint still met at lambda_max = {lambda_max:e} (q̄ = {qbar:.4}, upper CI {ci_high:.4} < ε)")]
    BracketFailure { lambda_max: f64, qbar: f64, ci_high: f64 },
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Sir(#[from] SirError),
    #[error("could not build worker pool: {0}")]
    ThreadPool(String),
}

/// How the simulation window is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Radius(f64),
    /// Window whose tail mean interference is this fraction of the in-window mean.
    TailFraction(f64),
}

impl Default for Window {
    fn default() -> Self {
        Window::TailFraction(DEFAULT_TAIL_FRACTION)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trials: u64,
    pub seed: u64,
    pub window: Window,
    /// Chain steps run from state 0 to draw each interferer mark; 0 samples Φ directly.
    pub burn_in: usize,
    /// Multiplier for reported confidence intervals.
    pub confidence_z: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 1,
            window: Window::default(),
            burn_in: 0,
            confidence_z: 3.0,
        }
    }
}

impl ExperimentConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        if self.trials == 0 {
            return Err(MonteCarloError::InvalidConfig("trials must be at least 1".into()));
        }
        match self.window {
            Window::Radius(r) if !(r.is_finite() && r >= 1.0) => {
                return Err(MonteCarloError::InvalidConfig(format!(
                    "window radius {r} must be finite and >= 1"
                )))
            }
            Window::TailFraction(f) if !(f > 0.0 && f <= 0.05) => {
                return Err(MonteCarloError::InvalidConfig(format!(
                    "tail_fraction {f} must lie in (0, 0.05]"
                )))
            }
            _ => {}
        }
        if !(self.confidence_z.is_finite() && self.confidence_z > 0.0) {
            return Err(MonteCarloError::InvalidConfig("confidence_z must be positive".into()));
        }
        Ok(())
    }

    pub fn window_radius(&self, alpha: f64) -> f64 {
        match self.window {
            Window::Radius(r) => r,
            Window::TailFraction(f) => window_for_tail_fraction(f, alpha),
        }
    }
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
    /// The value was clamped (e.g. a probability pushed back into [0, 1]).
    pub clamped: bool,
}

impl Estimate {
    /// Binomial proportion `hits/n` with `sqrt(p(1−p)/n)`.
    pub fn proportion(hits: f64, n: u64) -> Self {
        let p = hits / n as f64;
        Self {
            mean: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            trials: n,
            clamped: false,
        }
    }

    /// Sample mean from `Σx` and `Σx²`.
    pub fn from_sums(sum: f64, sum_sq: f64, n: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / nf).sqrt(),
            trials: n,
            clamped: false,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            stderr: self.stderr * factor.abs(),
            ..self
        }
    }

    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.stderr, self.mean + z * self.stderr)
    }
}

// purpose tags keep streams of different experiments apart
pub(crate) const TAG_OUTAGE: u64 = 0x6f75_7461_6765;
pub(crate) const TAG_NU_C: u64 = 0x6e75_5f63;
pub(crate) const TAG_MOMENTS: u64 = 0x6d6f_6d65_6e74;
pub(crate) const TAG_DELTA: u64 = 0x6465_6c74_61;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one experiment; trial `t` uses stream `t` of it.
#[derive(Clone)]
pub(crate) struct TrialStreams {
    base: ChaCha8Rng,
}

impl TrialStreams {
    pub fn new(seed: u64, purpose: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose))),
        }
    }

    pub fn trial(&self, t: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(t);
        rng
    }
}

/// Public form of the per-trial generator, for reproducing single trials.
pub fn trial_rng(seed: u64, purpose: u64, trial: u64) -> ChaCha8Rng {
    TrialStreams::new(seed, purpose).trial(trial)
}

const CHUNK: u64 = 512;

/// Sums `width` per-trial statistics over `n` trials. `f(t, rng, acc)` adds
/// trial `t`'s contribution into `acc`.
pub(crate) fn sum_trials(
    n: u64,
    width: usize,
    streams: &TrialStreams,
    f: impl Fn(u64, &mut ChaCha8Rng, &mut [f64]) + Sync,
) -> Vec<f64> {
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for t in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut rng = streams.trial(t);
                f(t, &mut rng, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for acc in partial {
        for (x, y) in total.iter_mut().zip(acc) {
            *x += y;
        }
    }
    total
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, MonteCarloError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| MonteCarloError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Interferer mark distribution used by a trial.
#[derive(Debug, Clone)]
pub(crate) struct MarkSampler<'a> {
    model: &'a ChannelModel,
    cdf: Vec<f64>,
    burn_in: usize,
}

impl<'a> MarkSampler<'a> {
    /// Marks from Φ restricted to states `g..m` (all states for `g = 0`).
    pub fn new(model: &'a ChannelModel, g: usize, burn_in: usize) -> Self {
        let phi = model.invariant();
        let mass = model.tail_mass(g);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = phi
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i >= g {
                    acc += p / mass;
                }
                acc
            })
            .collect();
        if let Some(last) = phi.iter().rposition(|&p| p > 0.0) {
            cdf[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
        }
        Self { model, cdf, burn_in }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.burn_in > 0 {
            // conditioning on ≥ g by rejection
            loop {
                let k = self.model.sample_after_burn_in(self.burn_in, rng);
                if self.cdf[k] > 0.0 {
                    return k;
                }
            }
        }
        if self.cdf.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }
}
