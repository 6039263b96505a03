//! Simulation of separation-apparatus experiments: two-slit and
//! Mach-Zehnder interferometers, analyzer and Stern-Gerlach loops, quantum
//! erasers and delayed-choice coincidence counting.
//!
//! States are pure vectors over named discrete degrees of freedom. Elements
//! act on them as unitaries or projective filters, detectors read them out by
//! the Born rule, and the [`events`] module turns the resulting distributions
//! into timestamped detection streams.

pub mod circuit;
pub mod edl;
pub mod elements;
pub mod error;
pub mod events;
pub mod matrix;
pub mod measure;
pub mod qstate;
pub mod scenarios;
pub mod screen;

pub use circuit::{Accounting, Circuit, CircuitBuilder, Detector, Measured, Settings, Stage, Step};
pub use elements::{Condition, Conventions, Element, ElementOp, Evolution};
pub use error::{Error, Result};
pub use measure::{Basis, OutcomeDistribution};
pub use qstate::{Dof, StateVector};
pub use screen::{Pattern, SlitGeometry};
