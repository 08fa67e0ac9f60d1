//! Trajectory reconstruction and dual-outcome survival analysis for student
//! administrative records.
//!
//! The pipeline runs in stages:
//!
//! 1. [`ingest`] parses event-level CSV into per-student histories with
//!    baseline covariates fixed at first enrolment.
//! 2. [`trajectory`] rebuilds each history as enrolment spells and types the
//!    transitions between consecutive spells.
//! 3. [`outcomes`] turns trajectories into right-censored subject records for
//!    time to definitive dropout (outcome A) and time to first major switch
//!    (outcome B).
//! 4. [`estimator`] fits Kaplan-Meier curves, Greenwood bands and the
//!    K-group log-rank test.
//! 5. [`sensitivity`] re-runs the pipeline under alternative definitions.
//! 6. [`report`] renders tables, curve exports and SVG plots.
//!
//! [`synth`] generates seeded synthetic cohorts with known piecewise-constant
//! hazards, which is what most of the test-suite checks against.
//!
//! Per-student work fans out over rayon when the `parallel` feature is on
//! (the default). Output is identical to a sequential run either way.

pub mod estimator;
pub mod exec;
pub mod ingest;
pub mod outcomes;
pub mod pipeline;
pub mod report;
pub mod sensitivity;
pub mod synth;
pub mod trajectory;

mod error;

pub use error::{Error, Result};
pub use exec::Execution;
