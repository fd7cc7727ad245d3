//! Behavior generation by online maximization of time-local predictive
//! information (TiPI) for a differential-drive sphere on a walled table.
//!
//! The crate is split along the perception-action loop:
//!
//! - [`controller`]: the two networks (controller and forward model), the
//!   two-step loop window, covariance tracking and the one-shot gradient step.
//! - [`sim`]: fixed-step planar physics of the sphere, sensor synthesis and
//!   scripted perturbations.
//! - [`baseline`]: the frozen, pre-adapted reactive condition driving a
//!   speed/heading balancing loop.
//! - [`metrics`]: mutual-information oracles and trajectory statistics.
//! - [`harness`]: session configuration, batch runs, logs and reports.
//! - [`live`]: the step-stamped command queue behind the interactive server.

pub mod baseline;
pub mod controller;
pub mod error;
pub mod harness;
pub mod live;
pub mod metrics;
pub mod sim;

pub use error::{Error, Result};
