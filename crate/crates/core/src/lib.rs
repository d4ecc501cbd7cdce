//! Event-triggered state estimation and event-triggered learning (ETL) for
//! cyclically excited discrete-time systems.
//!
//! A sender observes a noisy state whose increments repeat over a cycle
//! (e.g. a joint angle during walking). Both sender and receiver run the
//! same cycle-indexed predictor; the sender transmits the measured state
//! only when the shared prediction drifts by at least `delta` (send-on-delta),
//! which bounds the receiver-side error by construction. The statistics of
//! the times between such state updates reveal model mismatch: a one-sided
//! two-sample Kolmogorov-Smirnov test against a Monte-Carlo reference
//! distribution triggers re-learning, and a fit-error threshold decides
//! between a cheap deformation update (new cycle length + phase shift) and
//! a full re-identification compressed by polynomial regression.
//!
//! The crate is organized along the data path:
//! [`dynamics`] (system class + scenario generation) → [`predictor`] →
//! [`triggers`] → [`kstats`] (inter-communication statistics + KS test) →
//! [`learning`] (deformation, identification, compression) → [`protocol`]
//! (wire codec + communication ledger) → [`agents`] (sender/receiver state
//! machines) → [`harness`] (strategy comparison).

pub mod agents;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod kstats;
pub mod learning;
pub mod predictor;
pub mod protocol;
pub mod triggers;

pub use error::{Error, Result};
