//! Maximum contention intensity and ergodic transmission capacity bounds,
//! their CAOT variant, scaling laws and the CAOT-benefit test.

use super::solve::{bisect_decreasing, is_nonincreasing_on};
use super::{check_threshold, constants, BoundConstants, BoundsError, StateTerms};
use crate::fsmc::ChannelModel;
use crate::spatial::NetworkParams;
use std::f64::consts::PI;

/// Result of the per-state infimum search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaEps {
    pub value: f64,
    /// No λ > 0 in the bracket met the condition; `value` is 0.
    pub empty_set: bool,
}

/// Bounds on `λ̄_E` and the matching capacity `b·λ·(1−ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtcResult {
    pub lambda_lower: f64,
    /// Absent when the regime provides no upper bound.
    pub lambda_upper: Option<f64>,
    pub etc_lower: f64,
    pub etc_upper: Option<f64>,
    pub per_state_lambda_eps: Vec<f64>,
    /// States whose infimum search came back empty.
    pub empty_states: Vec<usize>,
}

/// Which form of the ETC upper bound to evaluate.
///
/// `Statement` sums `s_k^{2/α}φ_k/(ν − s_k^{2/α}π)`. `Proof` keeps the per-state
/// factor `−ln(1−ε)/(s_k^{−2/α}ν − π)` inside the sum over `φ_k s_k^{2/α}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProofVariant {
    #[default]
    Statement,
    Proof,
}

/// Generic infimum `inf{λ > 0 : (1 − Λ(λ))⁺ e^{−λ·rhs} ≤ 1 − ε}` where `Λ`
/// is evaluated at `cap_scale·λ`. Bracketed on `[0, λ_crit/cap_scale]`, where
/// the factor `(1−Λ)⁺` is already 0.
pub(crate) fn solve_lambda_eps(
    t: &StateTerms,
    epsilon: f64,
    rhs: f64,
    cap_scale: f64,
) -> Result<LambdaEps, BoundsError> {
    let boundary = |lambda: f64| t.survival_factor(cap_scale * lambda).0 * (-lambda * rhs).exp() - (1.0 - epsilon);
    let hi = t.lambda_crit / cap_scale;
    if !is_nonincreasing_on(boundary, 0.0, hi) {
        return Err(BoundsError::NonMonotoneBoundary { k: t.k });
    }
    Ok(match bisect_decreasing(boundary, 0.0, hi) {
        Some(value) => LambdaEps {
            value,
            empty_set: false,
        },
        None => LambdaEps {
            value: 0.0,
            empty_set: true,
        },
    })
}

/// `λ̄^ε_k = inf{λ > 0 : (1/λ) ln[(1 − Λ_k(λ))⁺/(1 − ε)] ≤ νs_k^{−2/α} − π}`.
pub fn lambda_eps_k(
    epsilon: f64,
    k: usize,
    params: &NetworkParams,
    model: &ChannelModel,
) -> Result<LambdaEps, BoundsError> {
    super::check_state(k, model)?;
    check_epsilon(epsilon)?;
    let consts = constants(params, model);
    let t = StateTerms::new(k, params, model, &consts);
    t.check_geometry(consts.nu)?;
    solve_lambda_eps(&t, epsilon, t.c, 1.0)
}

/// The defining condition of [`lambda_eps_k`], evaluated as written
/// (`ln 0 = −∞`, and `Λ = ∞` from the singularity on).
pub fn lambda_eps_k_holds(lambda: f64, epsilon: f64, k: usize, params: &NetworkParams, model: &ChannelModel) -> bool {
    let consts = constants(params, model);
    let t = StateTerms::new(k, params, model, &consts);
    let (factor, _) = t.survival_factor(lambda);
    let lhs = (factor / (1.0 - epsilon)).ln() / lambda;
    lhs <= t.c
}

fn check_epsilon(epsilon: f64) -> Result<(), BoundsError> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(BoundsError::Invalid(format!("epsilon = {epsilon} must lie in (0, 1)")))
    }
}

fn all_terms(params: &NetworkParams, model: &ChannelModel) -> (BoundConstants, Vec<StateTerms>) {
    let consts = constants(params, model);
    let terms = (0..model.num_states())
        .map(|k| StateTerms::new(k, params, model, &consts))
        .collect();
    (consts, terms)
}

fn upper_term(t: &StateTerms, nu: f64, variant: ProofVariant) -> f64 {
    match variant {
        ProofVariant::Statement => t.s2a / (nu - t.s2a * PI),
        ProofVariant::Proof => t.s2a / (nu / t.s2a - PI),
    }
}

/// Bounds on `λ̄_E` over states `g..m`, scaled by `1/φ_g` (`g = 0` gives the
/// plain network). Capacity uses `active_fraction·λ`.
fn etc_core(
    epsilon: f64,
    g: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    variant: ProofVariant,
) -> Result<EtcResult, BoundsError> {
    check_epsilon(epsilon)?;
    check_threshold(g, model)?;
    let (consts, terms) = all_terms(params, model);
    for t in &terms {
        t.check_geometry(consts.nu)?;
    }
    let phi = model.invariant();
    let phi_g = model.tail_mass(g);
    if phi_g <= 0.0 {
        return Err(BoundsError::Invalid(format!("no invariant mass at or above state {g}")));
    }
    let mut per_state = Vec::with_capacity(terms.len());
    let mut empty_states = Vec::new();
    for t in &terms {
        let le = solve_lambda_eps(t, epsilon, t.c, 1.0)?;
        if le.empty_set {
            empty_states.push(t.k);
        }
        per_state.push(le.value);
    }
    let lower: f64 = terms[g..]
        .iter()
        .map(|t| t.s2a * phi[t.k] * per_state[t.k])
        .sum::<f64>()
        / phi_g;
    let upper: f64 = -(1.0 - epsilon).ln()
        * terms[g..]
            .iter()
            .map(|t| phi[t.k] * upper_term(t, consts.nu, variant))
            .sum::<f64>()
        / phi_g;
    let scale = params.b * phi_g * (1.0 - epsilon);
    Ok(EtcResult {
        lambda_lower: lower,
        lambda_upper: Some(upper),
        etc_lower: scale * lower,
        etc_upper: Some(scale * upper),
        per_state_lambda_eps: per_state,
        empty_states,
    })
}

/// Bounds on the maximum contention intensity and ETC without scheduling.
pub fn etc_bounds(epsilon: f64, params: &NetworkParams, model: &ChannelModel) -> Result<EtcResult, BoundsError> {
    etc_core(epsilon, 0, params, model, ProofVariant::Statement)
}

/// [`etc_bounds`] with a choice of upper-bound form.
pub fn etc_bounds_variant(
    epsilon: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    variant: ProofVariant,
) -> Result<EtcResult, BoundsError> {
    etc_core(epsilon, 0, params, model, variant)
}

/// Bounds under CAOT with threshold state `g`.
///
/// `lambda_*` bound the total intensity `λ̄_E` (transmitters in every state);
/// only the fraction `φ_g = Σ_{k≥g}φ_k` of them transmit, so the capacity is
/// `b·φ_g·λ·(1−ε)`.
pub fn etc_bounds_caot(
    epsilon: f64,
    g: usize,
    params: &NetworkParams,
    model: &ChannelModel,
) -> Result<EtcResult, BoundsError> {
    etc_core(epsilon, g, params, model, ProofVariant::Statement)
}

/// Small-ε scaling of `λ̄_E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingLaw {
    /// `(ε/ν)Σφ_k s_k^{2/α}/(1 − πs_k^{2/α}/ν)`
    pub value: f64,
    /// Large-ν limit `ε/(πd²(δβ)^{2/α})`.
    pub large_nu_limit: f64,
}

pub fn scaling_lambda(epsilon: f64, params: &NetworkParams, model: &ChannelModel) -> Result<ScalingLaw, BoundsError> {
    check_epsilon(epsilon)?;
    let (consts, terms) = all_terms(params, model);
    let nu = consts.nu;
    let mut sum = 0.0;
    for t in &terms {
        t.check_geometry(nu)?;
        sum += model.invariant()[t.k] * t.s2a / (1.0 - PI * t.s2a / nu);
    }
    let NetworkParams {
        d, alpha, beta, delta, ..
    } = *params;
    Ok(ScalingLaw {
        value: epsilon / nu * sum,
        large_nu_limit: epsilon / (PI * d * d * (delta * beta).powf(2.0 / alpha)),
    })
}

/// Outcome of the CAOT-benefit comparison between the two upper bounds on `λ̄_E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaotVerdict {
    /// CAOT does not lose: the no-scheduling bound does not exceed the CAOT bound.
    pub beneficial: bool,
    /// `(1/φ_g − 1)Σ_{k≥g}T_k`, gain in the good states.
    pub gain: f64,
    /// `Σ_{k<g}T_k`, loss from silencing the bad states.
    pub loss: f64,
    /// Right-hand side of `φ_g ≤ εΣ_{k≥g}T_k / Φᵀs_ε`.
    pub threshold: f64,
    pub phi_g: f64,
}

/// Compares `(1/φ_g − 1)Σ_{k≥g}T_k` against `Σ_{k<g}T_k` with
/// `T_k = s_k^{2/α}φ_k/(ν − πs_k^{2/α})`; CAOT is not beneficial when the
/// former is smaller.
pub fn caot_beneficial(
    g: usize,
    epsilon: f64,
    params: &NetworkParams,
    model: &ChannelModel,
) -> Result<CaotVerdict, BoundsError> {
    check_threshold(g, model)?;
    if g == 0 {
        return Err(BoundsError::BadThreshold {
            g,
            states: model.num_states(),
        });
    }
    check_epsilon(epsilon)?;
    let (consts, terms) = all_terms(params, model);
    let phi = model.invariant();
    let mut t_k = Vec::with_capacity(terms.len());
    for t in &terms {
        t.check_geometry(consts.nu)?;
        t_k.push(t.s2a * phi[t.k] / (consts.nu - PI * t.s2a));
    }
    let phi_g = model.tail_mass(g);
    let good: f64 = t_k[g..].iter().sum();
    let bad: f64 = t_k[..g].iter().sum();
    let gain = (1.0 / phi_g - 1.0) * good;
    // εΣ_{k≥g}T_k / Φᵀs_ε; ε cancels but is kept to mirror the inner-product form
    let inner: f64 = epsilon * (good + bad);
    let threshold = epsilon * good / inner;
    Ok(CaotVerdict {
        beneficial: !(gain < bad),
        gain,
        loss: bad,
        threshold,
        phi_g,
    })
}
