//! Safe-navigation control synthesis built on analytic density fields.
//!
//! The pieces, bottom up:
//!
//! * [`density`] — inverse-bump density fields over obstacle environments,
//!   with analytic gradients and a grid exporter;
//! * [`dynamics`] — control-affine models (integrator, gyre flow, kinematic
//!   bicycle, lane keeping) with analytic divergences, plus bounded
//!   perturbation fields;
//! * [`qp`] — a dense strictly convex QP solver (closed-form single
//!   constraint path and a primal active-set method);
//! * [`controller`] — the per-step density QP controllers (basic, discrete
//!   stepper, robust margin, scenario sampling) and the scenario
//!   sample-count bound;
//! * [`cbf`] — a barrier/Lyapunov QP baseline for comparison;
//! * [`tracking`] — backstepping bridges from velocity commands to vehicle
//!   inputs and the lane-keeping steering clamp;
//! * [`sim`] — closed-loop integration, batches, verification, CSV export.

pub mod cbf;
pub mod controller;
pub mod density;
pub mod dynamics;
pub mod qp;
pub mod sim;
pub mod tracking;

pub use controller::{ControlError, ControllerConfig, ControllerMode, StepResult};
pub use density::{DensityConfig, DensityError, DensityEval, ObstacleSpec, Region};
pub use dynamics::{ControlAffineModel, LkParams, PerturbationSpec};
pub use qp::{QpError, QpProblem, QpSolution};
pub use sim::{Outcome, Pipeline, RunSpec, SimConfig, Trajectory};
