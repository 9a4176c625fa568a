//! One-dimensional compressible Navier-Stokes in Lagrangian mass
//! coordinates, with vacuum regions bounded by stress-free interfaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod harness;
pub mod material;
pub mod solver;
pub mod state;
pub mod tridiag;

pub use diagnostics::{DecayFit, DiagnosticsFrame, DiagnosticsSettings, Recorder};
pub use harness::{oracle_step, refinement_study, run_acceptance_suite, AcceptanceReport, CriterionResult, HarnessError, RefinementQuantity, RefinementReport};
pub use material::{MaterialError, MaterialLaw};
pub use solver::{advance_to, cell_stress, stable_dt, step, ContactPolicy, Observer, SolverError, StepControl, StepEvent, StepOutcome};
pub use state::{BoundaryKind, GasComponent, ScenarioKind, ScenarioSpec, SimState, SmoothProfile, StateError};
