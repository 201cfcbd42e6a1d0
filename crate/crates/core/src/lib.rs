//! Sensor anomaly detection and recovery for a car-following vehicle.
//!
//! The follower's position and speed sensors are filtered with an adaptive
//! extended Kalman filter whose motion model is the Intelligent Driver Model
//! driven by the (delayed) state of the leading vehicle. Innovations from the
//! filter are screened either by a chi-square gate or by a bank of one-class
//! SVMs; flagged measurements are replaced by the filter's prediction.
//!
//! Module map:
//!
//! - [`motion`]: IDM dynamics with perception-reaction delay, history buffer,
//!   fixed-step integration and synthetic trajectory generation.
//! - [`filter`]: continuous-discrete adaptive EKF with signal recovery.
//! - [`detect`]: chi-square gate, one-class SVM training/scoring, threshold
//!   calibration and model switching.
//! - [`anomaly`]: ground-truth anomaly injection with exact labels.
//! - [`eval`]: scenario runner, ROC/AUC, and the scenario × setting × delay grid.
//! - [`app`]: configuration, CSV ingestion/export, SVG plots and the CLI.

pub mod anomaly;
pub mod app;
pub mod detect;
pub mod eval;
pub mod filter;
pub mod motion;

mod error;
mod linalg;

pub use error::{Error, Result};
pub use motion::{IdmParams, LeaderInput, MotionModel, VehicleState};
