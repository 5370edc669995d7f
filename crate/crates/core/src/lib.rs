//! Sequential social learning with privately drawn signal qualities.
//!
//! Agents receive a binary signal whose quality is itself private and drawn
//! from a commonly known distribution. Collapsing (signal, quality) into the
//! agent's posterior at a flat prior gives a *type* with state-conditional
//! densities `g0`, `g1`. This crate builds those type distributions, runs the
//! public-belief recursion they induce, classifies action cascades, and
//! estimates the upper quality bound from observed action sequences by
//! two-step GMM.
//!
//! Modules:
//! - [`signal`]: quality specifications and the induced [`SignalStructure`].
//! - [`belief`]: thresholds, Bayesian updates, trajectories and simulation.
//! - [`cascade`]: cascade regions, the action-cascade conditions, hazard
//!   ratios and time-to-cascade sweeps.
//! - [`gmm`]: moment construction and the two-step efficient estimator.
//! - [`reproduce`]: the reference tables and figure series.

pub mod belief;
pub mod cascade;
mod error;
pub mod gmm;
pub mod optimize;
pub mod par;
#[cfg(test)]
mod properties;
pub mod reproduce;
pub mod signal;

pub use belief::{
    action_prob, evaluate_history, simulate_sequence, threshold, update_after_action, Action,
    BeliefState, History, Trajectory, Update, Weighting,
};
pub use cascade::{
    down_cascade_condition, hazard_ratio, in_cascade_region, is_ihrp, sweep_time_to_cascade,
    time_to_cascade, up_cascade_condition, CascadeReport, Direction, IhrpReport, Region,
    SweepResult,
};
pub use error::{Error, Result};
pub use gmm::{
    empirical_moments, gmm_estimate, gmm_estimate_moments, model_moment, moment_jacobian,
    GmmEstimate, GmmOptions, MomentSet, ProbabilityVariant, SequenceDataset,
};
pub use signal::{QualitySpec, SignalStructure, State};
