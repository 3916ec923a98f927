//! Maximum hands-off control for linear time-invariant plants.
//!
//! The crate computes the sparsest admissible control that steers a linear
//! plant to a target state in fixed time. Sparsity is obtained through the
//! convex L1 (and mixed L1/L2) relaxation on an exact zero-order-hold grid,
//! solved by a dense primal-dual interior-point method. An exhaustive
//! support enumeration serves as an l0 oracle for small instances, and a
//! self-triggered feedback loop re-plans the control from sampled states
//! under bounded disturbances.

pub mod error;
pub mod io;
pub mod jobs;
pub mod lti;
pub mod oracle_1d;
pub mod self_triggered;
pub mod signals;
pub mod solver;
pub mod sparse_control;
pub mod transcription;

pub use error::{Error, Result};
pub use lti::{DiscretizedSystem, LtiSystem, Normality};
pub use signals::{ControlSignal, StateTrajectory};
pub use sparse_control::{ControlSolution, FiniteHorizonProblem, Objective};
pub use solver::{ConvexProgram, SolveOptions, SolveResult, SolveStatus};

pub use oracle_1d::{PlantKind, ScalarPlant};
pub use self_triggered::{Disturbance, EpisodeLog, Plant, SelfTriggeredConfig, StabilityReport};
