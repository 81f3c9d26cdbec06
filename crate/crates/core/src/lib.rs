//! Robbins-Monro root finding with prior information.
//!
//! The crate provides the standard, prior-informed and iterative Bayesian
//! (IBRM) sequences, a multi-dimensional IBRM engine, a surrogate TMS subject
//! model and a seeded Monte-Carlo harness.

pub mod belief;
pub mod error;
pub mod harness;
pub mod map;
pub mod multidim;
pub mod prior;
pub mod sequence;
pub mod solver;
pub mod subject;
pub mod trace;

pub use belief::{CDecay, GaussianBelief};
pub use error::{Error, Result};
pub use map::map_solve;
pub use multidim::{mv_map_solve, step_mv_ibrm, MvConfig, MvState, VectorBelief, VectorPrior};
pub use prior::{Prior, PriorFamily};
pub use sequence::{
    equivalent_step_size, replay, run_sequence, step, step_ibrm, step_prior_informed, step_standard, Method,
    Observation, Outcome, Responder, ResponseMode, ScriptedResponder, SequenceConfig, SequenceState, StepReport,
    Variant,
};
pub use subject::{sample_subject, Curve, NoiseKind, PopulationSpec, VirtualSubject};
pub use trace::{StepRecord, TrialTrace};
