//! Interference, SIR and outage at the typical receiver, the δ-level
//! interfering set, and interference management (suppression + cancellation).

use crate::fsmc::ChannelModel;
use crate::spatial::{MarkedPattern, NetworkParams, PathLoss};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SirError {
    #[error("cancellation is disabled in this policy")]
    PolicyDisabled,
    #[error("invalid interference-management policy: {0}")]
    InvalidPolicy(String),
    #[error("state index {index} out of range for a {states}-state chain")]
    BadStateIndex { index: usize, states: usize },
}

/// Desired-link outcome at the typical receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirSample {
    pub desired_gain: f64,
    pub interference: f64,
    pub sir: f64,
    pub outage: bool,
}

impl SirSample {
    pub fn new(desired_gain: f64, interference: f64, beta: f64) -> Self {
        let sir = sir_ratio(desired_gain, interference);
        Self {
            desired_gain,
            interference,
            sir,
            outage: sir < beta,
        }
    }
}

/// Per-state interference management.
///
/// Every interferer's received power is scaled by `γ_k` (suppression /
/// avoidance); when cancellation is on, interferers in the cancellation
/// coverage are removed as well.
#[derive(Debug, Clone, PartialEq)]
pub struct ImPolicy {
    pub gammas: Vec<f64>,
    pub gamma_mins: Vec<f64>,
    pub cancellation_enabled: bool,
    /// Mean cancellation-coverage areas `ν^c_k`, thinned representation.
    pub nu_c: Option<Vec<f64>>,
}

impl ImPolicy {
    pub fn new(
        gammas: Vec<f64>,
        gamma_mins: Vec<f64>,
        cancellation_enabled: bool,
        nu_c: Option<Vec<f64>>,
    ) -> Result<Self, SirError> {
        let policy = Self {
            gammas,
            gamma_mins,
            cancellation_enabled,
            nu_c,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// γ = 1 everywhere, no cancellation.
    pub fn identity(m: usize) -> Self {
        Self {
            gammas: vec![1.0; m],
            gamma_mins: vec![1.0; m],
            cancellation_enabled: false,
            nu_c: Some(vec![0.0; m]),
        }
    }

    pub fn validate(&self) -> Result<(), SirError> {
        let m = self.gammas.len();
        if m == 0 {
            return Err(SirError::InvalidPolicy("gamma list is empty".into()));
        }
        if self.gamma_mins.len() != m {
            return Err(SirError::InvalidPolicy(format!(
                "gamma_min has {} entries, gamma has {m}",
                self.gamma_mins.len()
            )));
        }
        for (k, (&g, &gmin)) in self.gammas.iter().zip(&self.gamma_mins).enumerate() {
            if !(gmin > 0.0 && gmin <= g && g <= 1.0) {
                return Err(SirError::InvalidPolicy(format!(
                    "state {k}: need 0 < gamma_min ({gmin}) <= gamma ({g}) <= 1"
                )));
            }
        }
        if let Some(nu_c) = &self.nu_c {
            if nu_c.len() != m {
                return Err(SirError::InvalidPolicy(format!(
                    "nu_c has {} entries, gamma has {m}",
                    nu_c.len()
                )));
            }
            if let Some(k) = nu_c.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(SirError::InvalidPolicy(format!(
                    "state {k}: nu_c must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.gammas.len()
    }

    pub fn with_gammas(&self, gammas: Vec<f64>) -> Self {
        Self { gammas, ..self.clone() }
    }

    pub fn with_nu_c(&self, nu_c: Vec<f64>) -> Self {
        Self {
            nu_c: Some(nu_c),
            ..self.clone()
        }
    }
}

/// `I = Σ_j s_{mark_j} ℓ(|X_j|)`.
pub fn aggregate_interference(pattern: &MarkedPattern, model: &ChannelModel, path_loss: &PathLoss) -> f64 {
    pattern
        .points
        .iter()
        .map(|p| model.state(p.mark) * path_loss.eval_sq(p.norm_sq()))
        .sum()
}

fn sir_ratio(desired_gain: f64, interference: f64) -> f64 {
    if interference > 0.0 {
        desired_gain / interference
    } else {
        f64::INFINITY
    }
}

/// `s_k d^{-α} / I`; `+∞` without interference.
pub fn sir(s_k: f64, params: &NetworkParams, interference: f64) -> f64 {
    sir_ratio(params.desired_gain(s_k), interference)
}

/// Radius `r* = d(δβh̃/s_k)^{1/α}` of the δ-level interfering coverage for an
/// interferer of gain `h̃`.
pub fn delta_radius(s_k: f64, interferer_gain: f64, params: &NetworkParams) -> f64 {
    params.d * (params.delta * params.beta * interferer_gain / s_k).powf(1.0 / params.alpha)
}

/// Interferers with `1 ≤ |X| < r*(h̃)`: each alone, amplified by δ, causes outage.
pub fn delta_level_set(
    pattern: &MarkedPattern,
    s_k: f64,
    model: &ChannelModel,
    params: &NetworkParams,
) -> MarkedPattern {
    let radii_sq: Vec<f64> = model
        .states()
        .iter()
        .map(|&h| delta_radius(s_k, h, params).powi(2))
        .collect();
    pattern.filter(|p| {
        let r2 = p.norm_sq();
        r2 >= 1.0 && r2 < radii_sq[p.mark]
    })
}

/// Decodability test for a single interferer:
/// `γ h̃ ℓ / (s_k d^{-α} + γ I_0) ≥ β/(β+1)`, with `suppressed_power = γ h̃ ℓ`
/// and `suppressed_total = γ I_0`.
#[inline]
pub fn in_cancellation_coverage(suppressed_power: f64, desired_gain: f64, suppressed_total: f64, beta: f64) -> bool {
    suppressed_power > 0.0 && suppressed_power * (beta + 1.0) >= beta * (desired_gain + suppressed_total)
}

/// Single-pass cancellation over raw received powers `h̃_j ℓ(|X_j|)`.
///
/// Returns the raw (unsuppressed) power of the interferers that survive and
/// the number cancelled. `I_0` includes every interferer, candidates too.
pub(crate) fn cancel_powers(raw_powers: &[f64], desired_gain: f64, gamma: f64, beta: f64) -> (f64, usize) {
    let total: f64 = raw_powers.iter().sum();
    let suppressed_total = gamma * total;
    let mut kept = 0.0;
    let mut cancelled = 0;
    for &p in raw_powers {
        if in_cancellation_coverage(gamma * p, desired_gain, suppressed_total, beta) {
            cancelled += 1;
        } else {
            kept += p;
        }
    }
    (kept, cancelled)
}

fn check_state(k: usize, model: &ChannelModel) -> Result<(), SirError> {
    if k < model.num_states() {
        Ok(())
    } else {
        Err(SirError::BadStateIndex {
            index: k,
            states: model.num_states(),
        })
    }
}

/// Interferers of `pattern` inside the cancellation coverage of a receiver in state `k`.
pub fn cancellation_set(
    pattern: &MarkedPattern,
    k: usize,
    model: &ChannelModel,
    policy: &ImPolicy,
    params: &NetworkParams,
) -> Result<MarkedPattern, SirError> {
    if !policy.cancellation_enabled {
        return Err(SirError::PolicyDisabled);
    }
    check_state(k, model)?;
    let pl = PathLoss::new(params.alpha);
    let gamma = policy.gammas[k];
    let desired = params.desired_gain(model.state(k));
    let total = aggregate_interference(pattern, model, &pl);
    Ok(pattern.filter(|p| {
        let raw = model.state(p.mark) * pl.eval_sq(p.norm_sq());
        in_cancellation_coverage(gamma * raw, desired, gamma * total, params.beta)
    }))
}

/// SIR of a receiver in state `k` after suppression by `γ_k` and, if enabled,
/// removal of its cancellation set.
pub fn sir_with_im(
    pattern: &MarkedPattern,
    k: usize,
    model: &ChannelModel,
    policy: &ImPolicy,
    params: &NetworkParams,
) -> Result<SirSample, SirError> {
    check_state(k, model)?;
    let pl = PathLoss::new(params.alpha);
    let gamma = policy.gammas[k];
    let desired = params.desired_gain(model.state(k));
    let powers: Vec<f64> = pattern
        .points
        .iter()
        .map(|p| model.state(p.mark) * pl.eval_sq(p.norm_sq()))
        .collect();
    let kept = if policy.cancellation_enabled {
        cancel_powers(&powers, desired, gamma, params.beta).0
    } else {
        powers.iter().sum()
    };
    Ok(SirSample::new(desired, gamma * kept, params.beta))
}
