//! Finite-state Markov chain fading model.
//!
//! A [`ChannelModel`] holds the ordered fading gains `s_1 < … < s_m`, the
//! row-stochastic transition matrix and its invariant distribution. Models
//! are validated once on construction and are immutable afterwards, so they
//! can be shared freely between worker threads.
//!
//! State indices are zero-based throughout the crate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Row sums must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Residual allowed on `ΦᵀP = Φᵀ` after solving.
pub const INVARIANT_TOL: f64 = 1e-10;
/// Largest chain solved by a direct linear solve; bigger chains use power iteration.
pub const DIRECT_SOLVE_MAX_STATES: usize = 64;
/// Iteration cap for the power-iteration path.
pub const POWER_ITERATION_MAX: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmcError {
    #[error("channel model needs at least one state")]
    Empty,
    #[error("state gain s[{index}] = {value} must be positive and finite")]
    NonPositiveState { index: usize, value: f64 },
    #[error("states must be strictly increasing: s[{index}] = {current} is not greater than s[{prev_index}] = {previous}", prev_index = .index - 1)]
    NotOrdered { index: usize, previous: f64, current: f64 },
    #[error("transition matrix must be {expected}x{expected}, row {row} has {got} entries")]
    DimensionMismatch { expected: usize, row: usize, got: usize },
    #[error("transition row {row} is not stochastic: {reason}")]
    NotStochastic { row: usize, reason: String },
    #[error("chain is reducible: state {to} is not reachable from state {from}")]
    Reducible { from: usize, to: usize },
    #[error("invariant distribution did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("state index {index} out of range for a {states}-state chain")]
    BadStateIndex { index: usize, states: usize },
    #[error("invariant vector is not a probability vector: {0}")]
    BadInvariant(String),
}

/// Validated finite-state Markov fading channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    states: Vec<f64>,
    transition: Vec<Vec<f64>>,
    invariant: Vec<f64>,
    // cumulative rows / invariant, used for inverse-cdf sampling
    transition_cdf: Vec<Vec<f64>>,
    invariant_cdf: Vec<f64>,
}

impl ChannelModel {
    /// Validates `states` and `transition` and computes the invariant distribution.
    pub fn new(states: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self, FsmcError> {
        validate_states(&states)?;
        check_stochastic(&transition, states.len())?;
        let invariant = invariant_distribution(&transition)?;
        Ok(Self::assemble(states, transition, invariant))
    }

    /// Builds a model from the invariant distribution alone.
    ///
    /// The synthesized chain has every row equal to `invariant` (i.i.d. states),
    /// which is reversible with respect to `invariant`. All entries must be
    /// positive for the chain to be irreducible.
    pub fn from_invariant(states: Vec<f64>, invariant: Vec<f64>) -> Result<Self, FsmcError> {
        validate_states(&states)?;
        if invariant.len() != states.len() {
            return Err(FsmcError::DimensionMismatch {
                expected: states.len(),
                row: 0,
                got: invariant.len(),
            });
        }
        let sum: f64 = invariant.iter().sum();
        if invariant.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(FsmcError::BadInvariant(format!(
                "entries must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        let transition = vec![invariant.clone(); states.len()];
        Self::new(states, transition)
    }

    fn assemble(states: Vec<f64>, transition: Vec<Vec<f64>>, invariant: Vec<f64>) -> Self {
        let transition_cdf = transition.iter().map(|row| cumulative(row)).collect();
        let invariant_cdf = cumulative(&invariant);
        Self {
            states,
            transition,
            invariant,
            transition_cdf,
            invariant_cdf,
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, k: usize) -> f64 {
        self.states[k]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn invariant(&self) -> &[f64] {
        &self.invariant
    }

    pub fn check_index(&self, k: usize) -> Result<(), FsmcError> {
        if k < self.num_states() {
            Ok(())
        } else {
            Err(FsmcError::BadStateIndex {
                index: k,
                states: self.num_states(),
            })
        }
    }

    /// Stationary expectation `Σ φ_k f(s_k)`.
    pub fn stationary_mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.states.iter().zip(&self.invariant).map(|(&s, &p)| p * f(s)).sum()
    }

    /// Sum of invariant mass over states `g..m`.
    pub fn tail_mass(&self, g: usize) -> f64 {
        self.invariant[g.min(self.num_states())..].iter().sum()
    }

    /// One transition of the chain from `current`.
    pub fn step<R: Rng + ?Sized>(&self, current: usize, rng: &mut R) -> usize {
        sample_cdf(&self.transition_cdf[current], rng)
    }

    /// Draws a state index with probability `φ_k`.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_cdf(&self.invariant_cdf, rng)
    }

    /// Runs the chain `burn_in` steps from state 0 and returns the final state.
    ///
    /// Used to check that drawing marks straight from `Φ` matches a chain that
    /// has actually been run towards steady state.
    pub fn sample_after_burn_in<R: Rng + ?Sized>(&self, burn_in: usize, rng: &mut R) -> usize {
        let mut state = 0;
        for _ in 0..burn_in {
            state = self.step(state, rng);
        }
        state
    }

    /// Trajectory of `len` states starting at `start` (the start state is included).
    pub fn simulate<R: Rng + ?Sized>(&self, start: usize, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut state = start;
        for _ in 0..len {
            out.push(state);
            state = self.step(state, rng);
        }
        out
    }
}

fn validate_states(states: &[f64]) -> Result<(), FsmcError> {
    if states.is_empty() {
        return Err(FsmcError::Empty);
    }
    for (index, &value) in states.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(FsmcError::NonPositiveState { index, value });
        }
        if index > 0 && states[index - 1] >= value {
            return Err(FsmcError::NotOrdered {
                index,
                previous: states[index - 1],
                current: value,
            });
        }
    }
    Ok(())
}

fn check_stochastic(transition: &[Vec<f64>], m: usize) -> Result<(), FsmcError> {
    if m == 0 {
        return Err(FsmcError::Empty);
    }
    if transition.len() != m {
        return Err(FsmcError::DimensionMismatch {
            expected: m,
            row: transition.len(),
            got: 0,
        });
    }
    for (row, entries) in transition.iter().enumerate() {
        if entries.len() != m {
            return Err(FsmcError::DimensionMismatch {
                expected: m,
                row,
                got: entries.len(),
            });
        }
        if let Some((col, p)) = entries
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(FsmcError::NotStochastic {
                row,
                reason: format!("entry {col} = {p} outside [0, 1]"),
            });
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(FsmcError::NotStochastic {
                row,
                reason: format!("row sums to {sum}"),
            });
        }
    }
    Ok(())
}

/// Checks strong connectivity of the positive-entry transition graph.
fn check_irreducible(transition: &[Vec<f64>]) -> Result<(), FsmcError> {
    let m = transition.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let p = if forward { transition[i][j] } else { transition[j][i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    if let Some(to) = reach(true).iter().position(|s| !s) {
        return Err(FsmcError::Reducible { from: 0, to });
    }
    if let Some(from) = reach(false).iter().position(|s| !s) {
        return Err(FsmcError::Reducible { from, to: 0 });
    }
    Ok(())
}

/// Invariant distribution of an irreducible stochastic matrix.
///
/// Chains with at most [`DIRECT_SOLVE_MAX_STATES`] states are solved directly
/// from `(Pᵀ − I)Φ = 0` with the last equation replaced by `Σφ = 1`. Larger
/// chains use power iteration on the lazy chain `(P + I)/2`, which has the
/// same invariant vector and is aperiodic.
pub fn invariant_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>, FsmcError> {
    let m = transition.len();
    check_stochastic(transition, m)?;
    check_irreducible(transition)?;

    let mut phi = if m <= DIRECT_SOLVE_MAX_STATES {
        direct_solve(transition)?
    } else {
        power_iteration(transition)?
    };
    for p in phi.iter_mut() {
        // round-off can leave tiny negatives
        *p = p.max(0.0);
    }
    let sum: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|p| *p /= sum);

    let residual = invariant_residual(transition, &phi);
    if residual > INVARIANT_TOL {
        return Err(FsmcError::NoConvergence {
            iterations: 0,
            residual,
        });
    }
    Ok(phi)
}

fn direct_solve(transition: &[Vec<f64>]) -> Result<Vec<f64>, FsmcError> {
    let m = transition.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    a.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or(FsmcError::NoConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })
}

fn power_iteration(transition: &[Vec<f64>]) -> Result<Vec<f64>, FsmcError> {
    let m = transition.len();
    let mut phi = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let mut change = f64::INFINITY;
    for _ in 0..POWER_ITERATION_MAX {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in transition.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += phi[i] * p;
            }
        }
        change = 0.0;
        for j in 0..m {
            let lazy = 0.5 * (next[j] + phi[j]);
            change = f64::max(change, (lazy - phi[j]).abs());
            phi[j] = lazy;
        }
        if change < 1e-15 {
            return Ok(phi);
        }
    }
    Err(FsmcError::NoConvergence {
        iterations: POWER_ITERATION_MAX,
        residual: change,
    })
}

/// `‖ΦᵀP − Φᵀ‖∞`.
pub fn invariant_residual(transition: &[Vec<f64>], phi: &[f64]) -> f64 {
    let m = phi.len();
    (0..m)
        .map(|j| {
            let flow: f64 = (0..m).map(|i| phi[i] * transition[i][j]).sum();
            (flow - phi[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Per-state visit frequencies of a trajectory over an `m`-state chain.
pub fn empirical_occupancy(trajectory: &[usize], m: usize) -> Result<Vec<f64>, FsmcError> {
    if trajectory.is_empty() {
        return Err(FsmcError::EmptyTrajectory);
    }
    let mut counts = vec![0u64; m];
    for &state in trajectory {
        if state >= m {
            return Err(FsmcError::BadStateIndex {
                index: state,
                states: m,
            });
        }
        counts[state] += 1;
    }
    let len = trajectory.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / len).collect())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    // make the last bucket absorb round-off; zero-mass tail states keep cdf < 1
    if let Some(last_pos) = p.iter().rposition(|&x| x > 0.0) {
        for c in &mut out[last_pos..] {
            *c = f64::INFINITY;
        }
    }
    out
}

fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    if cdf.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn single_state_model() {
        let model = ChannelModel::new(vec![1.0], vec![vec![1.0]]).unwrap();
        assert_eq!(model.invariant(), &[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| model.step(0, &mut rng) == 0));
        assert!((0..100).all(|_| model.sample_stationary(&mut rng) == 0));
    }

    #[test]
    fn symmetric_rows_give_uniform_invariant() {
        let model = ChannelModel::new(vec![0.5, 2.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(close(model.invariant(), &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn balance_equation_solution() {
        // φ1·0.1 = φ2·0.3, φ1 + φ2 = 1
        let phi = invariant_distribution(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        assert!(close(&phi, &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn periodic_chain_is_allowed() {
        let phi = invariant_distribution(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(close(&phi, &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(ChannelModel::new(vec![], vec![]), Err(FsmcError::Empty));
        assert!(matches!(
            ChannelModel::new(vec![2.0, 1.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
            Err(FsmcError::NotOrdered { index: 1, .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![1.0, 1.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
            Err(FsmcError::NotOrdered { .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![0.0, 1.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
            Err(FsmcError::NonPositiveState { index: 0, .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![0.5, 2.0], vec![vec![0.5, 0.6], vec![0.5, 0.5]]),
            Err(FsmcError::NotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![0.5, 2.0], vec![vec![1.2, -0.2], vec![0.5, 0.5]]),
            Err(FsmcError::NotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![0.5, 2.0], vec![vec![1.0, 0.0], vec![0.5, 0.5]]),
            Err(FsmcError::Reducible { .. })
        ));
        assert!(matches!(
            ChannelModel::new(vec![0.5, 2.0], vec![vec![1.0, 0.0]]),
            Err(FsmcError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn error_messages_name_the_invariant() {
        let err = ChannelModel::new(vec![2.0, 1.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap_err()
            .to_string();
        assert!(err.contains("strictly increasing"), "{err}");
        let err = ChannelModel::new(vec![0.5, 2.0], vec![vec![1.0, 0.0], vec![0.5, 0.5]])
            .unwrap_err()
            .to_string();
        assert!(err.contains("reducible"), "{err}");
    }

    #[test]
    fn power_iteration_matches_direct_solve() {
        // birth-death chain, large enough to take the iterative path
        let m = 80;
        let mut p = vec![vec![0.0; m]; m];
        for i in 0..m {
            let up = if i + 1 < m { 0.3 } else { 0.0 };
            let down = if i > 0 { 0.2 } else { 0.0 };
            if i + 1 < m {
                p[i][i + 1] = up;
            }
            if i > 0 {
                p[i][i - 1] = down;
            }
            p[i][i] = 1.0 - up - down;
        }
        let phi = invariant_distribution(&p).unwrap();
        // detailed balance: φ_{i+1}/φ_i = 0.3/0.2
        for i in 0..m - 1 {
            assert!((phi[i + 1] / phi[i] - 1.5).abs() < 1e-6);
        }
        let direct = direct_solve(&p).unwrap();
        let sum: f64 = direct.iter().sum();
        assert!(close(&phi, &direct.iter().map(|x| x / sum).collect::<Vec<_>>(), 1e-9));
    }

    #[test]
    fn from_invariant_synthesizes_reversible_chain() {
        let model = ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.8, 0.2]).unwrap();
        assert!(close(model.invariant(), &[0.8, 0.2], 1e-12));
        let p = model.transition();
        let phi = model.invariant();
        for i in 0..2 {
            for j in 0..2 {
                assert!((phi[i] * p[i][j] - phi[j] * p[j][i]).abs() < 1e-15);
            }
        }
        assert!(matches!(
            ChannelModel::from_invariant(vec![0.5, 2.0], vec![1.0, 0.0]),
            Err(FsmcError::Reducible { .. })
        ));
        assert!(ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.7, 0.2]).is_err());
    }

    #[test]
    fn deterministic_row_step() {
        let model = ChannelModel::new(vec![0.5, 2.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| model.step(0, &mut rng) == 1));
    }

    #[test]
    fn step_frequencies_follow_row() {
        let model = ChannelModel::new(vec![0.5, 2.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| model.step(0, &mut rng) == 0).count() as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((zeros / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn stationary_sampling_frequencies() {
        for phi in [[0.5, 0.5], [0.8, 0.2]] {
            let model = ChannelModel::from_invariant(vec![0.5, 2.0], phi.to_vec()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n = 1_000_000;
            let draws: Vec<usize> = (0..n).map(|_| model.sample_stationary(&mut rng)).collect();
            let occ = empirical_occupancy(&draws, 2).unwrap();
            let se = (phi[0] * phi[1] / n as f64).sqrt();
            assert!((occ[0] - phi[0]).abs() < 3.0 * se, "{occ:?} vs {phi:?}");
        }
    }

    #[test]
    fn occupancy_counts() {
        assert_eq!(empirical_occupancy(&[0, 0, 0], 1).unwrap(), vec![1.0]);
        assert_eq!(empirical_occupancy(&[0, 1, 0, 1], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(empirical_occupancy(&[], 2), Err(FsmcError::EmptyTrajectory));
        assert!(matches!(
            empirical_occupancy(&[0, 2], 2),
            Err(FsmcError::BadStateIndex { .. })
        ));
    }

    #[test]
    fn long_trajectory_converges_to_invariant() {
        let model = ChannelModel::new(vec![0.5, 2.0], vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let traj = model.simulate(0, 1_000_000, &mut rng);
        let occ = empirical_occupancy(&traj, 2).unwrap();
        assert!(close(&occ, &[0.75, 0.25], 1e-2));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = ChannelModel::new(
            vec![0.5, 1.0, 2.0],
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.4, 0.5]],
        )
        .unwrap();
        let a = model.simulate(0, 500, &mut ChaCha8Rng::seed_from_u64(9));
        let b = model.simulate(0, 500, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
