//! Cycle-indexed predictor shared by sender and receiver.
//!
//! Both sides hold the same excitation model (one learned cycle of input
//! increments) and step through it with a 1-based index. As long as they
//! see the same trigger decisions and model updates, their states stay
//! bit-identical — that mirror property is what makes send-on-delta sound.

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};

/// One learned excitation cycle: column `j` (1-based) is the input applied
/// when the cycle index is `j`. `version` counts accepted model updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationModel {
    trajectory: Vec<f64>,
    version: u64,
}

impl ExcitationModel {
    /// The bootstrap model: a single zero column. Predictions hold the last
    /// committed state until something better is learned.
    pub fn initial() -> Self {
        Self { trajectory: vec![0.0], version: 0 }
    }

    pub fn new(trajectory: Vec<f64>, version: u64) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(Error::Config("excitation model needs at least one column".into()));
        }
        if trajectory.iter().any(|u| !u.is_finite()) {
            return Err(Error::Config("excitation model contains non-finite values".into()));
        }
        Ok(Self { trajectory, version })
    }

    /// Samples per cycle.
    pub fn cycle_len(&self) -> usize {
        self.trajectory.len()
    }

    /// Input for 1-based cycle index `j`.
    pub fn column(&self, j: usize) -> f64 {
        self.trajectory[j - 1]
    }

    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Advance the cycle index: wrap from `n_hat` back to 1, and restart at 1
/// unconditionally when a model update fired on the previous sample.
pub fn advance_index(j: usize, n_hat: usize, gamma_learn: bool) -> Result<usize> {
    if n_hat == 0 {
        return Err(Error::StateCorruption("cycle length is zero".into()));
    }
    if j < 1 || j > n_hat {
        return Err(Error::StateCorruption(format!("cycle index {j} outside 1..={n_hat}")));
    }
    if gamma_learn || j == n_hat {
        Ok(1)
    } else {
        Ok(j + 1)
    }
}

/// Predictor state: last committed estimate, current cycle index and model.
/// `x_hat` is `None` until the first measurement is committed, so the very
/// first sample of a run always triggers a state update.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    x_hat: Option<f64>,
    index: usize,
    pending_reset: bool,
    model: ExcitationModel,
}

impl Default for PredictorState {
    fn default() -> Self {
        Self::new()
    }
}

impl PredictorState {
    pub fn new() -> Self {
        Self { x_hat: None, index: 1, pending_reset: false, model: ExcitationModel::initial() }
    }

    /// Construct a mid-run state with a known model, the previous committed
    /// estimate, and the index used on the previous sample. Useful when a
    /// run starts from an already-converged predictor.
    pub fn with_model(model: ExcitationModel, x_hat_prev: f64, last_index: usize) -> Result<Self> {
        if last_index < 1 || last_index > model.cycle_len() {
            return Err(Error::StateCorruption(format!(
                "start index {last_index} outside 1..={}",
                model.cycle_len()
            )));
        }
        Ok(Self { x_hat: Some(x_hat_prev), index: last_index, pending_reset: false, model })
    }

    /// Advance the index for the next sample; must run exactly once per
    /// sample, before prediction.
    pub fn begin_sample(&mut self) -> Result<()> {
        let reset = std::mem::take(&mut self.pending_reset);
        self.index = advance_index(self.index, self.model.cycle_len(), reset)?;
        Ok(())
    }

    /// Noise-free one-step prediction `f(x_hat, u_hat[index], 0)`; `None`
    /// until an estimate exists. Pure: does not change state.
    pub fn predict(&self, sys: &SystemModel) -> Option<f64> {
        self.x_hat.map(|x| sys.step(x, self.model.column(self.index), 0.0))
    }

    /// Commit this sample's estimate: the measurement if the state trigger
    /// fired, otherwise the prediction. Returns the committed value.
    pub fn commit(&mut self, predicted: Option<f64>, measurement: Option<f64>, gamma_state: bool) -> Result<f64> {
        let value = if gamma_state {
            measurement.ok_or_else(|| Error::Protocol("state trigger fired but no measurement supplied".into()))?
        } else {
            predicted.ok_or_else(|| Error::StateCorruption("commit without prediction or measurement".into()))?
        };
        self.x_hat = Some(value);
        Ok(value)
    }

    /// Accept a new excitation model: bump the version and restart the cycle
    /// on the next sample (both sides apply this on the same sample, so the
    /// mirror property is preserved).
    pub fn apply_model(&mut self, trajectory: Vec<f64>) -> Result<()> {
        let version = self.model.version() + 1;
        self.model = ExcitationModel::new(trajectory, version)?;
        // keep the stored index valid for the new length; the flag forces
        // the next begin_sample to restart at 1 regardless
        self.index = self.model.cycle_len();
        self.pending_reset = true;
        Ok(())
    }

    pub fn model(&self) -> &ExcitationModel {
        &self.model
    }

    pub fn x_hat(&self) -> Option<f64> {
        self.x_hat
    }

    /// Current 1-based cycle index.
    pub fn index(&self) -> usize {
        self.index
    }
}
