//! Outage and ergodic transmission capacity of Poisson ad hoc networks whose
//! links fade according to a finite-state Markov chain.
//!
//! - [`fsmc`]: the channel chain, its invariant distribution and trajectories.
//! - [`spatial`]: network parameters, marked Poisson patterns, path loss.
//! - [`sir`]: interference, SIR, δ-level and cancellation coverages.
//! - [`bounds`]: closed-form outage and capacity bounds.
//! - [`montecarlo`]: simulation estimators and oracle checks.

pub mod bounds;
pub mod fsmc;
pub mod montecarlo;
pub mod sir;
pub mod spatial;
