//! Desk-scale NALM experimentation toolkit.
//!
//! The crate covers the full loop of a synthetic load-monitoring experiment:
//!
//! * [`schedule`] — balanced Gray-code switching schedules with grouped
//!   randomization, so every appliance accumulates the same number of ON and
//!   OFF events while the visited state combinations stay diverse.
//! * [`simulate`] — labeled aggregate-current trace synthesis from a catalog
//!   of appliance harmonic models, with transients, jitter and noise.
//! * [`syncsim`] — Monte-Carlo comparison of zero-crossing ("shared
//!   perceptible time") alignment against a WiFi-TSF style baseline.
//! * [`pipeline`] — streaming steady-state differential extraction and
//!   harmonic feature computation, plus training-set preparation.
//! * [`model`] — a small gradient-boosted decision tree classifier and the
//!   popularity-voting report stage.
//! * [`eval`] — event matching, F1/balance/diversity metrics, SINR
//!   estimation and per-cycle state identification.

pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod schedule;
pub mod simulate;
pub mod syncsim;

pub use error::{HawkError, Result};
