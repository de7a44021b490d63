//! Outage probabilities, maximum contention intensity and empirical ETC.

use super::{sum_trials, Estimate, ExperimentConfig, MarkSampler, MonteCarloError, TrialStreams, TAG_OUTAGE};
use crate::bounds::BoundsError;
use crate::fsmc::ChannelModel;
use crate::sir::{cancel_powers, ImPolicy};
use crate::spatial::{NetworkParams, PathLoss, RadialStream};

/// Per-state outage estimates from one batch of trials, plus the
/// Φ-weighted average computed trial by trial (so its standard error accounts
/// for the states sharing patterns).
#[derive(Debug, Clone, PartialEq)]
pub struct OutageEstimates {
    pub lambda: f64,
    pub per_state: Vec<Estimate>,
    pub qbar: Estimate,
}

/// Which transmitters are active and how desired states are weighted.
struct Scenario<'a> {
    marks: MarkSampler<'a>,
    /// Fraction of transmitters that are active.
    active_fraction: f64,
    /// Weights of each desired state in the averaged outage.
    weights: Vec<f64>,
}

impl<'a> Scenario<'a> {
    fn plain(model: &'a ChannelModel, cfg: &ExperimentConfig) -> Self {
        Self::caot(model, 0, cfg)
    }

    /// Only states `g..m` transmit; interferers are the marks ≥ g and the
    /// desired state is drawn from Φ conditioned on ≥ g.
    fn caot(model: &'a ChannelModel, g: usize, cfg: &ExperimentConfig) -> Self {
        let active_fraction = model.tail_mass(g);
        let weights = model
            .invariant()
            .iter()
            .enumerate()
            .map(|(k, p)| if k >= g { p / active_fraction } else { 0.0 })
            .collect();
        Self {
            marks: MarkSampler::new(model, g, cfg.burn_in),
            active_fraction,
            weights,
        }
    }
}

fn check_inputs(
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
) -> Result<(), MonteCarloError> {
    cfg.validate()?;
    if let Some(p) = policy {
        p.validate()?;
        if p.num_states() != model.num_states() {
            return Err(MonteCarloError::InvalidConfig(format!(
                "policy covers {} states, channel has {}",
                p.num_states(),
                model.num_states()
            )));
        }
    }
    if !(params.alpha > 2.0 && params.beta > 0.0) {
        return Err(MonteCarloError::InvalidConfig(
            "alpha must exceed 2 and beta be positive".into(),
        ));
    }
    Ok(())
}

fn run_outage(
    lambda: f64,
    scenario: &Scenario,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
    trials: u64,
) -> OutageEstimates {
    let m = model.num_states();
    let radius = cfg.window_radius(params.alpha);
    let pl = PathLoss::new(params.alpha);
    let beta = params.beta;
    let gains = model.states();
    let desired: Vec<f64> = gains.iter().map(|&s| params.desired_gain(s)).collect();
    let gammas = policy.map_or_else(|| vec![1.0; m], |p| p.gammas.clone());
    let cancel = policy.is_some_and(|p| p.cancellation_enabled);
    // outage ⇔ desired/(γ I) < β
    let outage = |k: usize, raw: f64| {
        let i = gammas[k] * raw;
        i > 0.0 && desired[k] / i < beta
    };
    // raw interference beyond which every state is in outage
    let all_out = (0..m).map(|k| desired[k] / (beta * gammas[k])).fold(0.0, f64::max) * (1.0 + 1e-12);
    let active = lambda * scenario.active_fraction;
    let streams = TrialStreams::new(cfg.seed, TAG_OUTAGE);
    let marks = &scenario.marks;

    let sums = sum_trials(trials, m + 2, &streams, |_, rng, acc| {
        let mut out = [false; 16];
        let mut out_vec;
        let flags: &mut [bool] = if m <= 16 {
            &mut out[..m]
        } else {
            out_vec = vec![false; m];
            &mut out_vec
        };
        if cancel {
            let powers: Vec<f64> = RadialStream::new(active, radius, rng, |r| marks.sample(r))
                .map(|(r2, mark)| gains[mark] * pl.eval_sq(r2))
                .collect();
            for (k, flag) in flags.iter_mut().enumerate() {
                let (kept, _) = cancel_powers(&powers, desired[k], gammas[k], beta);
                *flag = outage(k, kept);
            }
        } else {
            let mut total = 0.0;
            for (r2, mark) in RadialStream::new(active, radius, rng, |r| marks.sample(r)) {
                total += gains[mark] * pl.eval_sq(r2);
                if total > all_out {
                    break;
                }
            }
            for (k, flag) in flags.iter_mut().enumerate() {
                *flag = outage(k, total);
            }
        }
        let mut y = 0.0;
        for (k, &o) in flags.iter().enumerate() {
            if o {
                acc[k] += 1.0;
                y += scenario.weights[k];
            }
        }
        acc[m] += y;
        acc[m + 1] += y * y;
    });

    let per_state = (0..m).map(|k| Estimate::proportion(sums[k], trials)).collect();
    let mut qbar = Estimate::from_sums(sums[m], sums[m + 1], trials);
    if qbar.mean > 1.0 {
        // weights sum to 1, so this is only round-off
        qbar.mean = 1.0;
        qbar.clamped = true;
    }
    OutageEstimates {
        lambda,
        per_state,
        qbar,
    }
}

/// Outage estimates for every desired state at intensity `lambda`, with
/// optional interference management.
pub fn estimate_q_all(
    lambda: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
) -> Result<OutageEstimates, MonteCarloError> {
    check_inputs(params, model, policy, cfg)?;
    let scenario = Scenario::plain(model, cfg);
    Ok(run_outage(lambda, &scenario, params, model, policy, cfg, cfg.trials))
}

/// Empirical `q_k(λ)`: fraction of trials with SIR below β when the desired
/// link is in state `k`.
pub fn estimate_qk(
    lambda: f64,
    k: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
) -> Result<Estimate, MonteCarloError> {
    if k >= model.num_states() {
        return Err(BoundsError::BadStateIndex {
            index: k,
            states: model.num_states(),
        }
        .into());
    }
    Ok(estimate_q_all(lambda, params, model, policy, cfg)?.per_state[k])
}

/// Empirical `Σ_k φ_k q_k(λ)`.
pub fn estimate_qbar(
    lambda: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
) -> Result<Estimate, MonteCarloError> {
    Ok(estimate_q_all(lambda, params, model, policy, cfg)?.qbar)
}

/// Controls for the intensity search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Upper end of the search; the constraint must be violated here.
    pub lambda_max: f64,
    /// Trials for a first look at each probe point.
    pub initial_trials: u64,
    /// Trial cap per probe point; ambiguous points are re-run with 4× trials up to this.
    pub max_trials: u64,
    pub max_evaluations: usize,
    /// Stop once `λ_hi/λ_lo − 1` falls below this.
    pub rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda_max: 0.1,
            initial_trials: 4_000,
            max_trials: 100_000,
            max_evaluations: 60,
            rel_tol: 0.01,
        }
    }
}

/// Bracket on the largest intensity meeting the averaged outage constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxIntensity {
    pub lambda_hat: f64,
    /// Largest probe whose q̄ interval lies entirely below ε (0 if none).
    pub lambda_lo: f64,
    /// Smallest probe whose q̄ interval does not lie below ε.
    pub lambda_hi: f64,
    pub evaluations: usize,
    pub trials_used: u64,
}

impl MaxIntensity {
    /// Half the bracket width expressed as a standard error.
    pub fn stderr(&self, z: f64) -> f64 {
        (self.lambda_hi - self.lambda_lo) / (2.0 * z)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    Below,
    Above,
    Ambiguous,
}

fn search_root(
    epsilon: f64,
    z: f64,
    search: &SearchConfig,
    eval: impl Fn(f64, u64) -> Estimate,
) -> Result<MaxIntensity, MonteCarloError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "epsilon = {epsilon} must lie in (0, 1)"
        )));
    }
    if !(search.lambda_max > 0.0 && search.initial_trials > 0 && search.max_trials >= search.initial_trials) {
        return Err(MonteCarloError::InvalidConfig(
            "search needs lambda_max > 0 and max_trials >= initial_trials > 0".into(),
        ));
    }
    let mut evaluations = 0;
    let mut trials_used = 0;
    let mut probe = |lambda: f64| {
        let mut n = search.initial_trials;
        loop {
            let e = eval(lambda, n);
            evaluations += 1;
            trials_used += n;
            let (lo, hi) = e.ci(z);
            let side = if hi < epsilon {
                Side::Below
            } else if lo > epsilon {
                Side::Above
            } else {
                Side::Ambiguous
            };
            if side != Side::Ambiguous || n >= search.max_trials {
                return (side, e);
            }
            n = (n * 4).min(search.max_trials);
        }
    };

    let (side, top) = probe(search.lambda_max);
    if side == Side::Below {
        return Err(MonteCarloError::BracketFailure {
            lambda_max: search.lambda_max,
            qbar: top.mean,
            ci_high: top.ci(z).1,
        });
    }
    let (mut lo, mut hi) = (0.0f64, search.lambda_max);
    // a probe statistically indistinguishable from the root; once found,
    // the bracket is tightened from both sides towards it
    let mut center = (side == Side::Ambiguous).then_some(search.lambda_max);
    let (mut left_done, mut right_done) = (false, center.is_some());
    let narrow = |a: f64, b: f64| a > 0.0 && b / a - 1.0 <= search.rel_tol;
    let between = |a: f64, b: f64| if a == 0.0 { b / 8.0 } else { (a * b).sqrt() };

    for _ in 0..search.max_evaluations {
        let mid = match center {
            None if narrow(lo, hi) => break,
            None => between(lo, hi),
            Some(c) => {
                if !left_done && !narrow(lo, c) {
                    between(lo, c)
                } else if !right_done && !narrow(c, hi) {
                    between(c, hi)
                } else {
                    break;
                }
            }
        };
        match probe(mid).0 {
            Side::Below => lo = mid,
            Side::Above => hi = mid,
            Side::Ambiguous => match center {
                None => center = Some(mid),
                Some(c) if mid < c => left_done = true,
                Some(_) => right_done = true,
            },
        }
    }
    let lambda_hat = center.unwrap_or(if lo > 0.0 { (lo * hi).sqrt() } else { hi / 2.0 });
    Ok(MaxIntensity {
        lambda_hat,
        lambda_lo: lo,
        lambda_hi: hi,
        evaluations,
        trials_used,
    })
}

fn search_scenario(
    epsilon: f64,
    scenario: &Scenario,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> Result<MaxIntensity, MonteCarloError> {
    search_root(epsilon, cfg.confidence_z, search, |lambda, n| {
        run_outage(lambda, scenario, params, model, policy, cfg, n).qbar
    })
}

/// Bisection for the largest λ with `Σφ_k q_k(λ) ≤ ε`, deciding each step
/// from confidence intervals. Assumes the averaged outage grows with λ.
pub fn find_max_intensity(
    epsilon: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> Result<MaxIntensity, MonteCarloError> {
    check_inputs(params, model, policy, cfg)?;
    search_scenario(
        epsilon,
        &Scenario::plain(model, cfg),
        params,
        model,
        policy,
        cfg,
        search,
    )
}

/// [`find_max_intensity`] under CAOT with threshold state `g`; λ is the total
/// transmitter intensity, of which the fraction `Σ_{k≥g}φ_k` is active.
pub fn find_max_intensity_caot(
    epsilon: f64,
    g: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> Result<MaxIntensity, MonteCarloError> {
    check_inputs(params, model, None, cfg)?;
    check_g(g, model)?;
    search_scenario(
        epsilon,
        &Scenario::caot(model, g, cfg),
        params,
        model,
        None,
        cfg,
        search,
    )
}

fn check_g(g: usize, model: &ChannelModel) -> Result<(), MonteCarloError> {
    if g < model.num_states() {
        Ok(())
    } else {
        Err(BoundsError::BadThreshold {
            g,
            states: model.num_states(),
        }
        .into())
    }
}

/// Empirical ETC in both forms.
#[derive(Debug, Clone, PartialEq)]
pub struct EtcEstimate {
    pub search: MaxIntensity,
    /// Outage estimates at `lambda_hat`, with the search's trial cap.
    pub at_hat: OutageEstimates,
    /// Fraction of transmitters that are active.
    pub active_fraction: f64,
    /// `b·a·λ̂(1 − ε)`, `a` the active fraction.
    pub etc_definition: Estimate,
    /// `b·a·λ̂·Σ_k w_k(1 − q̂_k(λ̂))`.
    pub etc_success: Estimate,
}

fn etc_from_search(
    epsilon: f64,
    search_result: MaxIntensity,
    scenario: &Scenario,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> EtcEstimate {
    let lambda = search_result.lambda_hat;
    let se_lambda = search_result.stderr(cfg.confidence_z);
    let at_hat = run_outage(lambda, scenario, params, model, policy, cfg, search.max_trials);
    let scale = params.b * scenario.active_fraction;
    let success = 1.0 - at_hat.qbar.mean;
    let trials = search_result.trials_used;
    let etc_definition = Estimate {
        mean: scale * lambda * (1.0 - epsilon),
        stderr: scale * (1.0 - epsilon) * se_lambda,
        trials,
        clamped: false,
    };
    let etc_success = Estimate {
        mean: scale * lambda * success,
        stderr: scale
            * (success * success * se_lambda * se_lambda + lambda * lambda * at_hat.qbar.stderr.powi(2)).sqrt(),
        trials,
        clamped: at_hat.qbar.clamped,
    };
    EtcEstimate {
        search: search_result,
        at_hat,
        active_fraction: scenario.active_fraction,
        etc_definition,
        etc_success,
    }
}

/// Empirical ETC with optional interference management.
pub fn estimate_etc(
    epsilon: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> Result<EtcEstimate, MonteCarloError> {
    check_inputs(params, model, policy, cfg)?;
    let scenario = Scenario::plain(model, cfg);
    let found = search_scenario(epsilon, &scenario, params, model, policy, cfg, search)?;
    Ok(etc_from_search(
        epsilon, found, &scenario, params, model, policy, cfg, search,
    ))
}

/// Empirical ETC under CAOT with threshold state `g`.
///
/// Interferers are the transmitters in states `≥ g` (intensity `λφ_g`), the
/// desired link is conditioned on a state `≥ g`, and capacity counts only the
/// active fraction `φ_g` of the total intensity.
pub fn estimate_caot(
    epsilon: f64,
    g: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
    search: &SearchConfig,
) -> Result<EtcEstimate, MonteCarloError> {
    check_inputs(params, model, None, cfg)?;
    check_g(g, model)?;
    let scenario = Scenario::caot(model, g, cfg);
    let found = search_scenario(epsilon, &scenario, params, model, None, cfg, search)?;
    Ok(etc_from_search(
        epsilon, found, &scenario, params, model, None, cfg, search,
    ))
}
