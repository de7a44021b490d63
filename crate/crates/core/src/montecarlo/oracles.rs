//! Brute-force checks of the closed-form intermediate quantities, and
//! estimation of the mean cancellation coverage `ν^c_k`.

use super::{
    sum_trials, Estimate, ExperimentConfig, MarkSampler, MonteCarloError, TrialStreams, Window, TAG_DELTA, TAG_MOMENTS,
    TAG_NU_C,
};
use crate::bounds::{constants, BoundsError, NuCTable};
use crate::fsmc::ChannelModel;
use crate::sir::{cancel_powers, delta_level_set, delta_radius, ImPolicy, SirError};
use crate::spatial::{poisson_count, sample_ppp, NetworkParams, PathLoss, RadialStream};
use rand::Rng;
use std::f64::consts::PI;

fn check_k(k: usize, model: &ChannelModel) -> Result<(), MonteCarloError> {
    if k < model.num_states() {
        Ok(())
    } else {
        Err(BoundsError::BadStateIndex {
            index: k,
            states: model.num_states(),
        }
        .into())
    }
}

fn check_lambda(lambda: f64) -> Result<(), MonteCarloError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(MonteCarloError::InvalidConfig(format!(
            "lambda = {lambda} must be finite and >= 0"
        )))
    }
}

/// `ν^c_k` in both bookkeepings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuCEstimate {
    /// `E[#C^c_k]/λ`: interferers kept at intensity λ with powers scaled by γ_k.
    pub power: Estimate,
    /// `E[#C^c_k]/(γ_k^{2/α}λ)`: the same count seen as a γ^{2/α}λ-thinned process.
    /// This is the `ν^c_k` consumed by the bounds.
    pub thinned: Estimate,
}

fn policy_with_cancellation(policy: &ImPolicy, model: &ChannelModel) -> Result<(), MonteCarloError> {
    policy.validate()?;
    if !policy.cancellation_enabled {
        return Err(SirError::PolicyDisabled.into());
    }
    if policy.num_states() != model.num_states() {
        return Err(MonteCarloError::InvalidConfig(format!(
            "policy covers {} states, channel has {}",
            policy.num_states(),
            model.num_states()
        )));
    }
    Ok(())
}

/// Cancellation-set counts for several `(desired gain, γ)` pairs on common patterns.
/// Returns `(Σ count, Σ count²)` per pair.
fn cancellation_counts(
    lambda: f64,
    pairs: &[(f64, f64)],
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
) -> Vec<(f64, f64)> {
    let radius = cfg.window_radius(params.alpha);
    let pl = PathLoss::new(params.alpha);
    let marks = MarkSampler::new(model, 0, cfg.burn_in);
    let gains = model.states();
    let streams = TrialStreams::new(cfg.seed, TAG_NU_C);
    let sums = sum_trials(cfg.trials, 2 * pairs.len(), &streams, |_, rng, acc| {
        let powers: Vec<f64> = RadialStream::new(lambda, radius, rng, |r| marks.sample(r))
            .map(|(r2, mark)| gains[mark] * pl.eval_sq(r2))
            .collect();
        for (i, &(desired, gamma)) in pairs.iter().enumerate() {
            let c = cancel_powers(&powers, desired, gamma, params.beta).1 as f64;
            acc[2 * i] += c;
            acc[2 * i + 1] += c * c;
        }
    });
    sums.chunks(2).map(|c| (c[0], c[1])).collect()
}

fn nu_c_from_sums(sum: f64, sum_sq: f64, lambda: f64, gamma: f64, alpha: f64, trials: u64) -> NuCEstimate {
    let count = Estimate::from_sums(sum, sum_sq, trials);
    let power = count.scaled(1.0 / lambda);
    NuCEstimate {
        power,
        thinned: power.scaled(gamma.powf(-2.0 / alpha)),
    }
}

/// `ν^c_k` for every state, from one set of patterns at intensity `lambda`.
pub fn estimate_nu_c_all(
    lambda: f64,
    policy: &ImPolicy,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
) -> Result<Vec<NuCEstimate>, MonteCarloError> {
    cfg.validate()?;
    policy_with_cancellation(policy, model)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    let pairs: Vec<(f64, f64)> = (0..model.num_states())
        .map(|k| (params.desired_gain(model.state(k)), policy.gammas[k]))
        .collect();
    Ok(cancellation_counts(lambda, &pairs, params, model, cfg)
        .into_iter()
        .zip(&pairs)
        .map(|((s, s2), &(_, gamma))| nu_c_from_sums(s, s2, lambda, gamma, params.alpha, cfg.trials))
        .collect())
}

/// Mean cancellation coverage of state `k` under `policy`.
pub fn estimate_nu_c(
    lambda: f64,
    k: usize,
    policy: &ImPolicy,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
) -> Result<NuCEstimate, MonteCarloError> {
    check_k(k, model)?;
    Ok(estimate_nu_c_all(lambda, policy, params, model, cfg)?[k])
}

/// `ν^c_k(γ)` (thinned form) on `points` equally spaced γ from `γ_min,k` to 1,
/// all γ sharing the same patterns.
pub fn nu_c_table(
    lambda: f64,
    k: usize,
    policy: &ImPolicy,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
    points: usize,
) -> Result<NuCTable, MonteCarloError> {
    check_k(k, model)?;
    policy_with_cancellation(policy, model)?;
    cfg.validate()?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    let gmin = policy.gamma_mins[k];
    let gammas: Vec<f64> = match points {
        0 => return Err(MonteCarloError::InvalidConfig("table needs at least one point".into())),
        1 => vec![gmin],
        n => (0..n)
            .map(|i| gmin + (1.0 - gmin) * i as f64 / (n - 1) as f64)
            .collect(),
    };
    let mut gammas = gammas;
    gammas.dedup();
    let desired = params.desired_gain(model.state(k));
    let pairs: Vec<(f64, f64)> = gammas.iter().map(|&g| (desired, g)).collect();
    let est: Vec<NuCEstimate> = cancellation_counts(lambda, &pairs, params, model, cfg)
        .into_iter()
        .zip(&gammas)
        .map(|((s, s2), &g)| nu_c_from_sums(s, s2, lambda, g, params.alpha, cfg.trials))
        .collect();
    Ok(NuCTable::new(
        gammas,
        est.iter().map(|e| e.thinned.mean).collect(),
        est.iter().map(|e| e.thinned.stderr).collect(),
    )?)
}

/// Radius beyond which the residual interference of state `k` has mean at
/// most `tail_fraction` times its predicted mean; never inside the δ-level
/// coverage.
pub fn moments_window_radius(k: usize, params: &NetworkParams, model: &ChannelModel, tail_fraction: f64) -> f64 {
    let a = params.alpha;
    let s = model.state(k);
    let consts = constants(params, model);
    let mean_gain = model.stationary_mean(|h| h);
    // tail mean per unit λ beyond R: 2πE[H̃]R^{2−α}/(α−2)
    let predicted = s.powf(1.0 - 2.0 / a) * consts.eta;
    let r = (2.0 * PI * mean_gain / ((a - 2.0) * tail_fraction * predicted)).powf(1.0 / (a - 2.0));
    let r_star = model
        .states()
        .iter()
        .map(|&h| delta_radius(s, h, params))
        .fold(1.0, f64::max);
    r.max(r_star)
}

/// Residual interference (outside the δ-level coverage) compared with its
/// predicted mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsReport {
    pub lambda: f64,
    pub k: usize,
    pub window_radius: f64,
    pub trials: u64,
    pub empirical_mean: Estimate,
    pub empirical_var: f64,
    /// `λ s_k^{1−2/α} η`
    pub predicted_mean: f64,
    /// `λ s_k^{1−1/α} σ²`
    pub predicted_var: f64,
    /// Direct Campbell integrals over `|x| ≥ max(1, r*)` without truncation.
    pub exact_mean: f64,
    pub exact_var: f64,
    pub mean_rel_error: f64,
    pub var_rel_error: f64,
    /// Empirical variance against `exact_var`.
    pub exact_var_rel_error: f64,
}

impl MomentsReport {
    pub fn passes(&self, mean_tol: f64, var_tol: f64) -> bool {
        self.mean_rel_error <= mean_tol && self.var_rel_error <= var_tol
    }
}

fn rel_error(empirical: f64, predicted: f64) -> f64 {
    if predicted == 0.0 {
        if empirical == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (empirical / predicted - 1.0).abs()
    }
}

/// Samples the interference from interferers outside the δ-level coverage of
/// a receiver in state `k`. With a tail-fraction window the radius comes from
/// [`moments_window_radius`]; an explicit radius is used as given.
pub fn verify_interference_moments(
    lambda: f64,
    k: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
) -> Result<MomentsReport, MonteCarloError> {
    cfg.validate()?;
    check_k(k, model)?;
    check_lambda(lambda)?;
    let a = params.alpha;
    let s = model.state(k);
    let radius = match cfg.window {
        Window::Radius(r) => r,
        Window::TailFraction(f) => moments_window_radius(k, params, model, f),
    };
    let pl = PathLoss::new(a);
    let phi = model.invariant();
    let gains = model.states();
    // interferers of each mark count only beyond max(1, r*)
    let cut_sq: Vec<f64> = gains
        .iter()
        .map(|&h| delta_radius(s, h, params).powi(2).max(1.0))
        .collect();
    let r2 = radius * radius;
    let means: Vec<f64> = phi.iter().map(|p| lambda * p * PI * r2).collect();
    let streams = TrialStreams::new(cfg.seed, TAG_MOMENTS);
    let sums = sum_trials(cfg.trials, 2, &streams, |_, rng, acc| {
        let mut total = 0.0;
        for (j, &mean) in means.iter().enumerate() {
            for _ in 0..poisson_count(mean, rng) {
                let d2 = r2 * rng.random::<f64>();
                if d2 >= cut_sq[j] {
                    total += gains[j] * pl.eval_sq(d2);
                }
            }
        }
        acc[0] += total;
        acc[1] += total * total;
    });
    let n = cfg.trials as f64;
    let empirical_mean = Estimate::from_sums(sums[0], sums[1], cfg.trials);
    let empirical_var = if cfg.trials > 1 {
        ((sums[1] - n * empirical_mean.mean.powi(2)) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let consts = constants(params, model);
    let predicted_mean = lambda * s.powf(1.0 - 2.0 / a) * consts.eta;
    let predicted_var = lambda * s.powf(1.0 - 1.0 / a) * consts.sigma2;
    let (mut exact_mean, mut exact_var) = (0.0, 0.0);
    for (j, &h) in gains.iter().enumerate() {
        let c = cut_sq[j];
        exact_mean += phi[j] * h * 2.0 * PI * c.powf(1.0 - a / 2.0) / (a - 2.0);
        exact_var += phi[j] * h * h * PI * c.powf(1.0 - a) / (a - 1.0);
    }
    exact_mean *= lambda;
    exact_var *= lambda;
    Ok(MomentsReport {
        lambda,
        k,
        window_radius: radius,
        trials: cfg.trials,
        empirical_mean,
        empirical_var,
        predicted_mean,
        predicted_var,
        exact_mean,
        exact_var,
        mean_rel_error: rel_error(empirical_mean.mean, predicted_mean),
        var_rel_error: rel_error(empirical_var, predicted_var),
        exact_var_rel_error: rel_error(empirical_var, exact_var),
    })
}

/// Number of interferers in the δ-level coverage compared with `λ(νs_k^{−2/α} − π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCountReport {
    pub lambda: f64,
    pub k: usize,
    pub empirical: Estimate,
    pub predicted: f64,
    pub rel_error: f64,
    /// `νs_k^{−2/α} ≤ π`: the closed form is not a valid mean here.
    pub negative_prediction: bool,
}

impl DeltaCountReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.negative_prediction && self.rel_error <= tol
    }
}

/// Counts `Π^δ_k` on full patterns drawn in a disk just covering every
/// state's δ-level radius.
pub fn verify_delta_count(
    lambda: f64,
    k: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    cfg: &ExperimentConfig,
) -> Result<DeltaCountReport, MonteCarloError> {
    cfg.validate()?;
    check_k(k, model)?;
    check_lambda(lambda)?;
    let s = model.state(k);
    let radius = model
        .states()
        .iter()
        .map(|&h| delta_radius(s, h, params))
        .fold(1.0, f64::max);
    let streams = TrialStreams::new(cfg.seed, TAG_DELTA);
    let sums = sum_trials(cfg.trials, 2, &streams, |_, rng, acc| {
        let pattern = sample_ppp(lambda, radius, model, rng);
        let c = delta_level_set(&pattern, s, model, params).len() as f64;
        acc[0] += c;
        acc[1] += c * c;
    });
    let empirical = Estimate::from_sums(sums[0], sums[1], cfg.trials);
    let consts = constants(params, model);
    let area = consts.nu * s.powf(-2.0 / params.alpha) - PI;
    let predicted = lambda * area;
    Ok(DeltaCountReport {
        lambda,
        k,
        empirical,
        predicted,
        rel_error: rel_error(empirical.mean, predicted),
        negative_prediction: area <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_link(delta: f64) -> (NetworkParams, ChannelModel) {
        (
            NetworkParams::new(0.01, 5.0, 3.0, 2.0, delta, 0.1, 1.0).unwrap(),
            ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.5, 0.5]).unwrap(),
        )
    }

    fn im_net() -> (NetworkParams, ChannelModel, ImPolicy) {
        (
            NetworkParams::new(0.02, 10.0, 3.0, 2.0, 2.0, 0.1, 1.0).unwrap(),
            ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.5, 0.5]).unwrap(),
            ImPolicy::new(vec![0.6, 0.6], vec![0.6, 0.6], true, None).unwrap(),
        )
    }

    #[test]
    fn zero_intensity_oracles() {
        let (p, m) = short_link(1.0);
        let c = ExperimentConfig::new(200, 1);
        let r = verify_interference_moments(0.0, 0, &p, &m, &c).unwrap();
        assert_eq!((r.empirical_mean.mean, r.empirical_var), (0.0, 0.0));
        assert_eq!(r.mean_rel_error, 0.0);
        let d = verify_delta_count(0.0, 0, &p, &m, &c).unwrap();
        assert_eq!(d.empirical.mean, 0.0);
    }

    #[test]
    fn delta_count_matches_closed_form() {
        let (p, m) = short_link(1.0);
        let c = ExperimentConfig::new(10_000, 3);
        for k in 0..2 {
            let r = verify_delta_count(0.01, k, &p, &m, &c).unwrap();
            assert!(!r.negative_prediction);
            assert!(r.rel_error < 0.03, "{r:?}");
        }
    }

    #[test]
    fn negative_prediction_flagged() {
        // short link and low threshold: ν s^{−2/α} < π for the good state
        let p = NetworkParams::new(0.01, 1.1, 3.0, 0.5, 1.0, 0.1, 1.0).unwrap();
        let m = ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.5, 0.5]).unwrap();
        let r = verify_delta_count(0.01, 1, &p, &m, &ExperimentConfig::new(100, 1)).unwrap();
        assert!(r.negative_prediction && !r.passes(1.0));
    }

    #[test]
    fn exact_mean_equals_closed_form_when_coverage_exceeds_unit_disk() {
        let (p, m) = short_link(1.0);
        let r = verify_interference_moments(0.01, 0, &p, &m, &ExperimentConfig::new(10, 1)).unwrap();
        assert!((r.exact_mean / r.predicted_mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_window_tail_is_small() {
        let (p, m) = short_link(1.0);
        let r = moments_window_radius(0, &p, &m, 0.01);
        let tail = crate::spatial::truncation_tail_mean(1.0, r, &m, 3.0);
        let pred = 0.5f64.powf(1.0 / 3.0) * constants(&p, &m).eta;
        assert!(tail <= 0.01 * pred * (1.0 + 1e-9));
    }

    #[test]
    fn nu_c_conversion_and_policy_check() {
        let (p, m, pol) = im_net();
        let c = ExperimentConfig::new(4000, 2);
        let e = estimate_nu_c(0.02, 0, &pol, &p, &m, &c).unwrap();
        let f = 0.6f64.powf(-2.0 / 3.0);
        assert!((e.thinned.mean - f * e.power.mean).abs() < 1e-12 * e.thinned.mean.max(1.0));
        let off = ImPolicy {
            cancellation_enabled: false,
            ..pol
        };
        assert!(estimate_nu_c(0.02, 0, &off, &p, &m, &c).is_err());
    }

    #[test]
    fn nu_c_below_nu_at_im_net() {
        let (p, m, pol) = im_net();
        let nu = constants(&p, &m).nu;
        for e in estimate_nu_c_all(0.02, &pol, &p, &m, &ExperimentConfig::new(20_000, 4)).unwrap() {
            assert!(e.thinned.mean < nu);
        }
    }

    #[test]
    fn larger_beta_shrinks_cancellation_coverage() {
        let (p, m, pol) = im_net();
        let c = ExperimentConfig::new(10_000, 5);
        let a = estimate_nu_c(0.02, 1, &pol, &p, &m, &c).unwrap().power.mean;
        let p8 = NetworkParams { beta: 8.0, ..p };
        let b = estimate_nu_c(0.02, 1, &pol, &p8, &m, &c).unwrap().power.mean;
        assert!(b < a, "{b} !< {a}");
    }

    #[test]
    fn small_gamma_empties_power_form() {
        let (p, m, _) = im_net();
        let pol = ImPolicy::new(vec![1e-6, 1e-6], vec![1e-6, 1e-6], true, None).unwrap();
        let e = estimate_nu_c(0.02, 0, &pol, &p, &m, &ExperimentConfig::new(2000, 6)).unwrap();
        assert!(e.power.mean < 1e-2 && e.thinned.mean.is_finite());
    }

    #[test]
    fn table_is_on_requested_grid_and_roughly_nonincreasing() {
        let (p, m, pol) = im_net();
        let t = nu_c_table(0.02, 0, &pol, &p, &m, &ExperimentConfig::new(5000, 7), 16).unwrap();
        assert_eq!(t.gammas.len(), 16);
        assert_eq!(t.gammas[0], 0.6);
        assert!((t.gammas[15] - 1.0).abs() < 1e-15);
        assert!(t.check_monotone(0, 3.0).is_ok());
    }
}
