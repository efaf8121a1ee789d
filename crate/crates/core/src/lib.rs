//! Rigid-body contact simulation with analytic gradients through the
//! contact solver, collision response and time of impact.

pub mod collision;
pub mod dantzig;
pub mod diffsim;
pub mod dual;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod lcp;
pub mod linalg;
pub mod mechanics;
pub mod shape;

pub use dantzig::{DantzigOptions, MaxStepRule, PivotTrace, WorkingSets};
pub use dual::{Dual, Scalar};
pub use error::{Error, Result};
pub use lcp::{Class, FrictionPair, LcpProblem, LcpSolution, ValidationReport};
pub use diffsim::GradientBundle;
pub use flow::{FlowOptions, StepResult, StepTape};
pub use mechanics::{Fixture, LinkSpec, Material, MechanismModel, SystemState};
pub use shape::Shape;
