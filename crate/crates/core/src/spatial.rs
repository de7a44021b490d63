//! Geometry: network parameters, marked PPP sampling in a disk window,
//! path loss and window-truncation control.
//!
//! The typical receiver sits at the origin and every statistic is measured
//! there, so only distances matter; point angles are still sampled so that
//! patterns are genuine planar point sets.

use crate::fsmc::ChannelModel;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use std::f64::consts::PI;
use thiserror::Error;

/// Default ratio of tail mean interference to in-window mean used to pick the window.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("invalid network parameter `{field}` = {value}: {reason}")]
    InvalidParam {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("state index {index} out of range for a {states}-state chain")]
    BadStateIndex { index: usize, states: usize },
}

/// Network-level parameters shared by the bounds and the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    /// Transmitter intensity (nodes per unit area).
    pub lambda: f64,
    /// Transmitter–receiver distance, `d > 1`.
    pub d: f64,
    /// Path-loss exponent, `α > 2`.
    pub alpha: f64,
    /// SIR threshold.
    pub beta: f64,
    /// Interfering-coverage level, `δ ≥ 1`.
    pub delta: f64,
    /// Outage constraint in `(0, 1)`.
    pub epsilon: f64,
    /// Supportable rate (bps/Hz).
    pub b: f64,
}

impl NetworkParams {
    pub fn new(
        lambda: f64,
        d: f64,
        alpha: f64,
        beta: f64,
        delta: f64,
        epsilon: f64,
        b: f64,
    ) -> Result<Self, SpatialError> {
        let p = Self {
            lambda,
            d,
            alpha,
            beta,
            delta,
            epsilon,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        let bad = |field, value, reason| Err(SpatialError::InvalidParam { field, value, reason });
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda", self.lambda, "must be positive and finite");
        }
        if !(self.d.is_finite() && self.d > 1.0) {
            return bad("d", self.d, "must be finite and greater than 1");
        }
        if !(self.alpha.is_finite() && self.alpha > 2.0) {
            return bad("alpha", self.alpha, "must be finite and greater than 2");
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta", self.beta, "must be positive and finite");
        }
        if !(self.delta.is_finite() && self.delta >= 1.0) {
            return bad("delta", self.delta, "must be finite and at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon", self.epsilon, "must lie strictly between 0 and 1");
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return bad("b", self.b, "must be positive and finite");
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    /// Received desired power `s_k d^{-α}` (unit transmit power).
    pub fn desired_gain(&self, s_k: f64) -> f64 {
        s_k * self.d.powf(-self.alpha)
    }
}

/// One interferer: planar location and fading-state mark (zero-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub mark: usize,
}

impl Point {
    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// A realization of the marked PPP inside a disk window centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPattern {
    pub points: Vec<Point>,
    pub window_radius: f64,
    pub intensity: f64,
}

impl MarkedPattern {
    pub fn empty(window_radius: f64, intensity: f64) -> Self {
        Self {
            points: Vec::new(),
            window_radius,
            intensity,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-pattern of the points satisfying `keep`.
    pub fn filter(&self, keep: impl Fn(&Point) -> bool) -> Self {
        Self {
            points: self.points.iter().copied().filter(|p| keep(p)).collect(),
            window_radius: self.window_radius,
            intensity: self.intensity,
        }
    }
}

/// Homogeneous PPP of intensity `lambda` in the disk of radius `window_radius`,
/// each point carrying a mark drawn from the invariant distribution.
pub fn sample_ppp<R: Rng + ?Sized>(
    lambda: f64,
    window_radius: f64,
    model: &ChannelModel,
    rng: &mut R,
) -> MarkedPattern {
    sample_ppp_with(lambda, window_radius, rng, |rng| model.sample_stationary(rng))
}

/// As [`sample_ppp`] but with a caller-supplied mark sampler.
pub fn sample_ppp_with<R: Rng + ?Sized>(
    lambda: f64,
    window_radius: f64,
    rng: &mut R,
    mut mark: impl FnMut(&mut R) -> usize,
) -> MarkedPattern {
    let n = poisson_count(lambda * PI * window_radius * window_radius, rng);
    let points = (0..n)
        .map(|_| {
            let r = window_radius * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            Point {
                x: r * theta.cos(),
                y: r * theta.sin(),
                mark: mark(rng),
            }
        })
        .collect();
    MarkedPattern {
        points,
        window_radius,
        intensity: lambda,
    }
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means
    let draw: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    draw as u64
}

/// Path-loss law `ℓ(r) = r^{-α}·1(r ≥ r0)`, with `r0 = 1` in the network model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    alpha: f64,
    exclusion: f64,
    // α as an integer when it is one, which makes r^{-α} a couple of multiplies
    int_alpha: Option<i32>,
}

impl PathLoss {
    pub fn new(alpha: f64) -> Self {
        Self::with_exclusion(alpha, 1.0)
    }

    /// Path loss with a different exclusion radius. Only the suppression/thinning
    /// duality check uses anything other than 1.
    pub fn with_exclusion(alpha: f64, exclusion: f64) -> Self {
        let int_alpha = (alpha.fract() == 0.0 && alpha.abs() < 64.0).then_some(alpha as i32);
        Self {
            alpha,
            exclusion,
            int_alpha,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn exclusion(&self) -> f64 {
        self.exclusion
    }

    pub fn eval(&self, distance: f64) -> f64 {
        if distance < self.exclusion {
            0.0
        } else {
            distance.powf(-self.alpha)
        }
    }

    /// Same as [`eval`](Self::eval) but from the squared distance.
    #[inline]
    pub fn eval_sq(&self, dist_sq: f64) -> f64 {
        if dist_sq < self.exclusion * self.exclusion {
            return 0.0;
        }
        match self.int_alpha {
            Some(a) if a % 2 == 0 => dist_sq.powi(-a / 2),
            Some(a) => dist_sq.powi(-(a - 1) / 2) / dist_sq.sqrt(),
            None => dist_sq.powf(-0.5 * self.alpha),
        }
    }
}

/// `ℓ(distance)` with unit exclusion radius.
pub fn path_loss(distance: f64, alpha: f64) -> f64 {
    PathLoss::new(alpha).eval(distance)
}

/// Points of `pattern` carrying mark `k`.
pub fn thin_by_state(pattern: &MarkedPattern, k: usize, m: usize) -> Result<MarkedPattern, SpatialError> {
    if k >= m {
        return Err(SpatialError::BadStateIndex { index: k, states: m });
    }
    Ok(pattern.filter(|p| p.mark == k))
}

/// Mean interference contributed by interferers beyond radius `window_radius`:
/// `2πλ·E[H̃]·R^{2−α}/(α−2)`.
pub fn truncation_tail_mean(lambda: f64, window_radius: f64, model: &ChannelModel, alpha: f64) -> f64 {
    let mean_gain = model.stationary_mean(|s| s);
    2.0 * PI * lambda * mean_gain * window_radius.powf(2.0 - alpha) / (alpha - 2.0)
}

/// Mean interference from interferers with `1 ≤ |X| ≤ R`.
pub fn in_window_mean(lambda: f64, window_radius: f64, model: &ChannelModel, alpha: f64) -> f64 {
    let mean_gain = model.stationary_mean(|s| s);
    2.0 * PI * lambda * mean_gain * (1.0 - window_radius.powf(2.0 - alpha)) / (alpha - 2.0)
}

/// Smallest window radius whose tail mean is at most `tail_fraction` of the
/// in-window mean. The ratio does not depend on λ or the marks.
pub fn window_for_tail_fraction(tail_fraction: f64, alpha: f64) -> f64 {
    ((1.0 + tail_fraction) / tail_fraction).powf(1.0 / (alpha - 2.0))
}

/// Interferer distances generated in increasing order.
///
/// Squared distances of a PPP seen from the origin form a 1-D Poisson process
/// of rate `λπ`, so `r_j² = T_j/(λπ)` with `T_j` the arrival times of a unit-rate
/// process. Sorted output lets outage tests stop as soon as the accumulated
/// interference crosses the threshold, and because the `T_j` do not depend on
/// λ, reusing the stream across intensities couples the patterns monotonically.
pub struct RadialStream<'a, R: Rng + ?Sized, M: FnMut(&mut R) -> usize> {
    rng: &'a mut R,
    scale: f64,
    max_sq: f64,
    t: f64,
    mark: M,
}

impl<'a, R: Rng + ?Sized, M: FnMut(&mut R) -> usize> RadialStream<'a, R, M> {
    pub fn new(lambda: f64, window_radius: f64, rng: &'a mut R, mark: M) -> Self {
        let scale = if lambda > 0.0 {
            1.0 / (lambda * PI)
        } else {
            f64::INFINITY
        };
        Self {
            rng,
            scale,
            max_sq: window_radius * window_radius,
            t: 0.0,
            mark,
        }
    }
}

impl<R: Rng + ?Sized, M: FnMut(&mut R) -> usize> Iterator for RadialStream<'_, R, M> {
    /// `(squared distance, mark)`
    type Item = (f64, usize);

    fn next(&mut self) -> Option<Self::Item> {
        let e: f64 = Exp1.sample(self.rng);
        self.t += e;
        let r_sq = self.t * self.scale;
        if r_sq > self.max_sq {
            return None;
        }
        let mark = (self.mark)(self.rng);
        Some((r_sq, mark))
    }
}
