//! TOML experiment description and its validation.
//!
//! Every error names the offending field as a dotted path
//! (`network.alpha`, `channel.transition`, …).

use adhoc_etc::fsmc::{ChannelModel, FsmcError};
use adhoc_etc::montecarlo::{ExperimentConfig, SearchConfig, Window};
use adhoc_etc::sir::ImPolicy;
use adhoc_etc::spatial::{NetworkParams, SpatialError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

fn field(path: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub lambda: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub b: f64,
}

fn one() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.1
}

/// Either a transition matrix or, for i.i.d. state draws, the invariant
/// distribution directly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub states: Vec<f64>,
    pub transition: Option<Vec<Vec<f64>>>,
    pub invariant: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ImSection {
    pub gammas: Vec<f64>,
    /// Defaults to `gammas`.
    pub gamma_mins: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub cancellation: bool,
    /// Estimated by simulation at `network.lambda` when absent.
    pub nu_c: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaotSection {
    /// Lowest transmitting state, 1-based.
    pub g: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "one_u64")]
    pub seed: u64,
    pub window_radius: Option<f64>,
    pub tail_fraction: Option<f64>,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_z")]
    pub confidence_z: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_initial_trials")]
    pub search_initial_trials: u64,
    /// Defaults to `trials`.
    pub search_max_trials: Option<u64>,
    #[serde(default = "default_rel_tol")]
    pub search_rel_tol: f64,
    #[serde(default = "default_max_evaluations")]
    pub search_max_evaluations: usize,
    /// Window rule for the residual-interference moment check.
    #[serde(default = "default_moments_tail")]
    pub moments_tail_fraction: f64,
    #[serde(default = "default_nu_c_points")]
    pub nu_c_points: usize,
}

fn default_trials() -> u64 {
    100_000
}
fn one_u64() -> u64 {
    1
}
fn default_z() -> f64 {
    3.0
}
fn default_lambda_max() -> f64 {
    0.1
}
fn default_initial_trials() -> u64 {
    4_000
}
fn default_rel_tol() -> f64 {
    0.01
}
fn default_max_evaluations() -> usize {
    60
}
fn default_moments_tail() -> f64 {
    0.01
}
fn default_nu_c_points() -> usize {
    16
}

impl Default for McSection {
    fn default() -> Self {
        toml::from_str("").expect("all mc fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    pub dir: Option<String>,
    /// Prepended to every CSV file name.
    #[serde(default)]
    pub prefix: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub network: NetworkSection,
    pub channel: ChannelSection,
    pub im: Option<ImSection>,
    pub caot: Option<CaotSection>,
    #[serde(default)]
    pub mc: McSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub outputs: OutputsSection,
}

pub const SWEEP_AXES: [&str; 7] = ["lambda", "d", "alpha", "beta", "delta", "epsilon", "b"];

/// Validated, ready-to-use experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub params: NetworkParams,
    pub model: ChannelModel,
    pub policy: Option<ImPolicy>,
    /// 0-based CAOT threshold.
    pub caot_g: Option<usize>,
    pub mc: ExperimentConfig,
    pub search: SearchConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(self) -> Result<Experiment, ConfigError> {
        let n = &self.network;
        let params =
            NetworkParams::new(n.lambda, n.d, n.alpha, n.beta, n.delta, n.epsilon, n.b).map_err(|e| match e {
                SpatialError::InvalidParam { field: f, .. } => field(format!("network.{f}"), e),
                other => field("network", other),
            })?;

        let c = &self.channel;
        let model = match (&c.transition, &c.invariant) {
            (Some(p), None) => ChannelModel::new(c.states.clone(), p.clone()),
            (None, Some(phi)) => ChannelModel::from_invariant(c.states.clone(), phi.clone()),
            (Some(_), Some(_)) => return Err(field("channel", "give either transition or invariant, not both")),
            (None, None) => return Err(field("channel", "one of transition or invariant is required")),
        }
        .map_err(|e| {
            let which = if c.transition.is_some() {
                "transition"
            } else {
                "invariant"
            };
            let path = if matches!(
                e,
                FsmcError::Empty | FsmcError::NonPositiveState { .. } | FsmcError::NotOrdered { .. }
            ) {
                "channel.states".to_string()
            } else {
                format!("channel.{which}")
            };
            field(path, e)
        })?;
        let m = model.num_states();

        let policy = match &self.im {
            None => None,
            Some(im) => {
                let check_len = |name: &str, v: &[f64]| {
                    if v.len() == m {
                        Ok(())
                    } else {
                        Err(field(
                            format!("im.{name}"),
                            format!("expected {m} entries, got {}", v.len()),
                        ))
                    }
                };
                check_len("gammas", &im.gammas)?;
                let mins = im.gamma_mins.clone().unwrap_or_else(|| im.gammas.clone());
                check_len("gamma_mins", &mins)?;
                if let Some(v) = &im.nu_c {
                    check_len("nu_c", v)?;
                }
                Some(
                    ImPolicy::new(im.gammas.clone(), mins, im.cancellation, im.nu_c.clone())
                        .map_err(|e| field("im", e))?,
                )
            }
        };

        let caot_g = match &self.caot {
            None => None,
            Some(c) if (1..=m).contains(&c.g) => Some(c.g - 1),
            Some(c) => return Err(field("caot.g", format!("{} is outside 1..={m}", c.g))),
        };

        let s = &self.mc;
        let window = match (s.window_radius, s.tail_fraction) {
            (Some(_), Some(_)) => return Err(field("mc", "give either window_radius or tail_fraction, not both")),
            (Some(r), None) => Window::Radius(r),
            (None, Some(f)) => Window::TailFraction(f),
            (None, None) => Window::default(),
        };
        let mc = ExperimentConfig {
            trials: s.trials,
            seed: s.seed,
            window,
            burn_in: s.burn_in,
            confidence_z: s.confidence_z,
        };
        mc.validate().map_err(|e| {
            let path = match window {
                _ if s.trials == 0 => "mc.trials",
                Window::Radius(_) if e.to_string().contains("radius") => "mc.window_radius",
                Window::TailFraction(_) if e.to_string().contains("tail_fraction") => "mc.tail_fraction",
                _ => "mc.confidence_z",
            };
            field(path, e)
        })?;
        if !(s.moments_tail_fraction > 0.0 && s.moments_tail_fraction <= 0.05) {
            return Err(field("mc.moments_tail_fraction", "must lie in (0, 0.05]"));
        }
        if s.nu_c_points < 2 {
            return Err(field("mc.nu_c_points", "need at least 2 grid points"));
        }
        let search = SearchConfig {
            lambda_max: s.lambda_max,
            initial_trials: s.search_initial_trials.min(s.search_max_trials.unwrap_or(s.trials)),
            max_trials: s.search_max_trials.unwrap_or(s.trials),
            max_evaluations: s.search_max_evaluations,
            rel_tol: s.search_rel_tol,
        };
        if !(search.lambda_max > 0.0 && search.lambda_max.is_finite()) {
            return Err(field("mc.lambda_max", "must be positive"));
        }
        if search.max_trials == 0 {
            return Err(field("mc.search_max_trials", "must be at least 1"));
        }
        if search.initial_trials == 0 {
            return Err(field("mc.search_initial_trials", "must be at least 1"));
        }
        if !(search.rel_tol > 0.0) {
            return Err(field("mc.search_rel_tol", "must be positive"));
        }

        if let Some(sw) = &self.sweep {
            if !SWEEP_AXES.contains(&sw.axis.as_str()) {
                return Err(field(
                    "sweep.axis",
                    format!("unknown parameter '{}'; expected one of {SWEEP_AXES:?}", sw.axis),
                ));
            }
            for (i, &v) in sw.values.iter().enumerate() {
                params
                    .with_axis(&sw.axis, v)
                    .validate()
                    .map_err(|e| field(format!("sweep.values[{i}]"), e))?;
            }
        }

        Ok(Experiment {
            spec: self,
            params,
            model,
            policy,
            caot_g,
            mc,
            search,
        })
    }
}

/// Setting a network parameter by name.
pub trait WithAxis {
    fn with_axis(&self, axis: &str, value: f64) -> NetworkParams;
    fn axis(&self, axis: &str) -> f64;
}

impl WithAxis for NetworkParams {
    fn with_axis(&self, axis: &str, value: f64) -> NetworkParams {
        let mut p = *self;
        match axis {
            "lambda" => p.lambda = value,
            "d" => p.d = value,
            "alpha" => p.alpha = value,
            "beta" => p.beta = value,
            "delta" => p.delta = value,
            "epsilon" => p.epsilon = value,
            "b" => p.b = value,
            _ => unreachable!("axis names are validated"),
        }
        p
    }

    fn axis(&self, axis: &str) -> f64 {
        match axis {
            "lambda" => self.lambda,
            "d" => self.d,
            "alpha" => self.alpha,
            "beta" => self.beta,
            "delta" => self.delta,
            "epsilon" => self.epsilon,
            "b" => self.b,
            _ => unreachable!("axis names are validated"),
        }
    }
}

impl Experiment {
    /// Sweep axis and its points. Without a sweep, or with an empty value
    /// list, the single point is the configured value of `default_axis`.
    pub fn sweep_points(&self, default_axis: &str) -> (String, Vec<NetworkParams>) {
        let axis = self
            .spec
            .sweep
            .as_ref()
            .map_or(default_axis.to_string(), |s| s.axis.clone());
        let values = match &self.spec.sweep {
            Some(s) if !s.values.is_empty() => s.values.clone(),
            _ => vec![self.params.axis(&axis)],
        };
        let points = values.iter().map(|&v| self.params.with_axis(&axis, v)).collect();
        (axis, points)
    }
}
