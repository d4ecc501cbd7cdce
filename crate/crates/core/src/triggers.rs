//! The three trigger laws: state (send-on-delta), learning (KS p-value held
//! below a level), and update type (small deformation vs full re-fit).

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};

/// Send-on-delta threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateTriggerConfig {
    delta: f64,
}

impl StateTriggerConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::Config(format!("delta must be finite and > 0, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Fire iff the prediction error reaches `delta`. Returns `(fired, error)`.
/// The boundary counts as a hit, so the receiver-side error stays strictly
/// below `delta` between updates.
pub fn state_trigger(sys: &SystemModel, x: f64, x_pred: f64, cfg: &StateTriggerConfig) -> (bool, f64) {
    let d = sys.metric(x, x_pred);
    (d >= cfg.delta, d)
}

/// Learning trigger: fires once the KS p-value has stayed below `eta` for
/// `t_min + 1` consecutive samples (a single streak longer than `t_min`
/// robustifies against isolated small p-values). The streak counter resets
/// whenever `p >= eta` and when the trigger fires.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnTriggerState {
    eta: f64,
    t_min: usize,
    below_count: usize,
}

impl LearnTriggerState {
    pub fn new(eta: f64, t_min: usize) -> Result<Self> {
        if !(eta.is_finite() && (0.0..=1.0).contains(&eta)) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self { eta, t_min, below_count: 0 })
    }

    /// Record this sample's p-value; returns the learning trigger.
    pub fn observe(&mut self, p: f64) -> bool {
        if p < self.eta {
            self.below_count += 1;
        } else {
            self.below_count = 0;
        }
        if self.below_count > self.t_min {
            self.below_count = 0;
            true
        } else {
            false
        }
    }

    pub fn reset(&mut self) {
        self.below_count = 0;
    }

    pub fn below_count(&self) -> usize {
        self.below_count
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Fit-error threshold deciding between a small (deformation) update and a
/// full re-identification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TypeTriggerConfig {
    alpha: f64,
}

impl TypeTriggerConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Full update iff learning fired and the best small-update fit error still
/// exceeds `alpha`.
pub fn type_trigger(gamma_learn: bool, fit_error: f64, cfg: &TypeTriggerConfig) -> bool {
    gamma_learn && fit_error > cfg.alpha
}
