//! Sender and receiver state machines: the closed event-triggered loop.
//!
//! Per sample the sender advances the shared predictor, transmits the
//! measurement iff the prediction drifted by `delta`, feeds the resulting
//! spacing statistics to the KS-based learning trigger, and on a learning
//! event estimates a deformation of the current model — escalating to a
//! full re-identification when the deformation cannot explain the window.
//! The receiver replays the same predictor from the message stream alone;
//! after every sample both predictors are bit-identical.

use std::collections::VecDeque;


use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::kstats::{ks_one_sided_sorted, mc_hypothetical_cdf_seeded, HypotheticalCdf, InterCommBuffer};
use crate::learning::{
    compress, deform, estimate_cycle_length, estimate_shift, identify_full, reconstruct,
    refine_params, DeformParams, LearningConfig,
};
use crate::predictor::{ExcitationModel, PredictorState};
use crate::protocol::{CommLedger, UpdateMessage};
use crate::triggers::{
    state_trigger, type_trigger, LearnTriggerState, StateTriggerConfig, TypeTriggerConfig,
};

/// All tuning parameters of the event-triggered loop. Defaults follow the
/// 50 Hz joint-angle setup: `delta` 2 degrees, level 0.05, holding time 18
/// samples, fit-error threshold 5 degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct EtlParams {
    /// State-trigger threshold (same unit as the state).
    pub delta: f64,
    /// KS level below which a sample counts toward the learning trigger.
    pub eta: f64,
    /// Samples the p-value must stay below `eta` beyond the first.
    pub t_min: usize,
    /// Fit-error threshold separating small from full model updates.
    pub alpha: f64,
    pub learning: LearningConfig,
    /// Trials for the Monte-Carlo spacing pool.
    pub mc_trials: usize,
    /// Capacity of the measurement window (must cover the estimation span).
    pub window_capacity: usize,
}

impl Default for EtlParams {
    fn default() -> Self {
        Self {
            delta: 2.0,
            eta: 0.05,
            t_min: 18,
            alpha: 5.0,
            learning: LearningConfig::default(),
            mc_trials: 1000,
            window_capacity: 512,
        }
    }
}

impl EtlParams {
    fn validate(&self) -> Result<()> {
        StateTriggerConfig::new(self.delta)?;
        LearnTriggerState::new(self.eta, self.t_min)?;
        TypeTriggerConfig::new(self.alpha)?;
        self.learning.validate()?;
        let min_window = 2 * self.learning.lag_min + 1;
        if self.window_capacity < min_window {
            return Err(Error::Config(format!(
                "window capacity {} cannot cover the minimum estimation span {min_window}",
                self.window_capacity
            )));
        }
        Ok(())
    }
}

/// Per-sample diagnostics mirroring the quantities the trigger laws see.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub k: u32,
    pub x: f64,
    /// Sender-side estimate after commit (equals the receiver's).
    pub x_hat: f64,
    /// Prediction error the state trigger saw (infinite on the very first
    /// sample, before any estimate exists).
    pub error: f64,
    pub p_value: f64,
    pub gamma_state: bool,
    pub gamma_learn: bool,
    pub gamma_full: bool,
    /// Small-update fit error when estimation ran this sample.
    pub fit_error: Option<f64>,
    /// Cumulative transmitted values.
    pub values_sent: u64,
    /// Learning fired but the window could not support estimation.
    pub learning_skipped: bool,
}

struct LearnedUpdate {
    message: UpdateMessage,
    fit_error: Option<f64>,
    full: bool,
}

/// Sender state machine.
pub struct SenderState {
    sys: SystemModel,
    params: EtlParams,
    trigger_cfg: StateTriggerConfig,
    type_cfg: TypeTriggerConfig,
    predictor: PredictorState,
    buffer: InterCommBuffer,
    learn: LearnTriggerState,
    window: VecDeque<f64>,
    hypothetical: Option<HypotheticalCdf>,
    ledger: CommLedger,
    started: bool,
    // sample index and resulting cycle length of the last small update,
    // used to detect smalls that failed to hold the learning trigger off
    last_small: Option<(u32, usize)>,
    // consecutive same-length small updates that each arrived within two
    // holding periods of the previous learn event
    stuck_smalls: u32,
    // the model was identified without a trusted cycle-length estimate
    // (cold boot); it has no timing worth deforming, so the first trusted
    // estimate must replace it wholesale
    provisional: bool,
}

impl SenderState {
    /// Full event-triggered learning sender. The Monte-Carlo reference pool
    /// is drawn once from `mc_seed`; zero process noise yields no spacing
    /// statistics, so learning is disabled in that case.
    pub fn new_etl(sys: SystemModel, params: EtlParams, mc_seed: u64) -> Result<Self> {
        params.validate()?;
        if params.mc_trials == 0 {
            return Err(Error::Config("monte-carlo pool needs at least one trial".into()));
        }
        let hypothetical = if sys.noise_sigma() == 0.0 {
            log::warn!("zero process noise: spacing statistics are degenerate, learning disabled");
            None
        } else {
            Some(mc_hypothetical_cdf_seeded(&sys, params.delta, params.mc_trials, mc_seed)?)
        };
        Self::build(sys, params, hypothetical)
    }

    /// Estimation-only sender: state trigger over a fixed, never-updated
    /// model; no spacing statistics, no learning.
    pub fn new_etse(sys: SystemModel, params: EtlParams) -> Result<Self> {
        params.validate()?;
        Self::build(sys, params, None)
    }

    fn build(sys: SystemModel, params: EtlParams, hypothetical: Option<HypotheticalCdf>) -> Result<Self> {
        let trigger_cfg = StateTriggerConfig::new(params.delta)?;
        let type_cfg = TypeTriggerConfig::new(params.alpha)?;
        let learn = LearnTriggerState::new(params.eta, params.t_min)?;
        let window = VecDeque::with_capacity(params.window_capacity + 1);
        let ledger = CommLedger::new(sys.state_dim());
        Ok(Self {
            sys,
            trigger_cfg,
            type_cfg,
            predictor: PredictorState::new(),
            buffer: InterCommBuffer::new(),
            learn,
            window,
            hypothetical,
            ledger,
            params,
            started: false,
            last_small: None,
            stuck_smalls: 0,
            provisional: false,
        })
    }

    /// Start mid-run with a known model, previous estimate and previous
    /// cycle index (e.g. an already-converged predictor). The receiver must
    /// be primed identically to keep the mirror invariant.
    pub fn prime(&mut self, trajectory: Vec<f64>, x_hat_prev: f64, last_index: usize) -> Result<()> {
        let model = ExcitationModel::new(trajectory, 1)?;
        self.predictor = PredictorState::with_model(model, x_hat_prev, last_index)?;
        self.started = true;
        self.last_small = None;
        self.stuck_smalls = 0;
        self.provisional = false;
        Ok(())
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn expected_tau(&self) -> Option<f64> {
        self.hypothetical.as_ref().map(|h| h.expected_tau())
    }

    /// Process one measurement; returns the outgoing messages (at most a
    /// state update followed by one model message) and the diagnostics row.
    pub fn sender_step(&mut self, k: u32, x: f64) -> Result<(Vec<UpdateMessage>, Diagnostics)> {
        self.ledger.tick();
        self.predictor.begin_sample()?;
        let pred = self.predictor.predict(&self.sys);
        let (gamma_state, error) = match pred {
            Some(p) => state_trigger(&self.sys, x, p, &self.trigger_cfg),
            // no estimate yet: always transmit to initialize both sides
            None => (true, f64::INFINITY),
        };
        let mut messages = Vec::with_capacity(2);
        self.predictor.commit(pred, gamma_state.then_some(x), gamma_state)?;
        if gamma_state {
            messages.push(UpdateMessage::StateUpdate { sample_index: k, x: vec![x] });
        }

        // spacing statistics + learning trigger; the bootstrap update opens
        // interval tracking but records no spacing (nothing precedes it)
        let (p_value, gamma_learn) = if let Some(hyp) = &self.hypothetical {
            if self.started {
                self.buffer.record_sample(gamma_state);
            } else if gamma_state {
                self.started = true;
            }
            let (_, p) = ks_one_sided_sorted(self.buffer.times(), hyp.pool());
            (p, self.learn.observe(p))
        } else {
            (1.0, false)
        };

        self.window.push_back(x);
        if self.window.len() > self.params.window_capacity {
            self.window.pop_front();
        }

        let mut gamma_full = false;
        let mut fit_error = None;
        let mut learning_skipped = false;
        if gamma_learn {
            match self.learn_event(k)? {
                Some(update) => {
                    gamma_full = update.full;
                    fit_error = update.fit_error;
                    messages.push(update.message);
                }
                None => learning_skipped = true,
            }
        }
        for m in &messages {
            self.ledger.record(m);
        }
        let diag = Diagnostics {
            k,
            x,
            x_hat: self.predictor.x_hat().expect("estimate exists after commit"),
            error,
            p_value,
            gamma_state,
            gamma_learn,
            gamma_full,
            fit_error,
            values_sent: self.ledger.values_sent(),
            learning_skipped,
        };
        Ok((messages, diag))
    }

    /// Run the estimation pipeline after the learning trigger fired.
    /// Returns `None` when the window cannot support any estimate yet (the
    /// documented fallback: no message, buffer kept).
    fn learn_event(&mut self, k: u32) -> Result<Option<LearnedUpdate>> {
        let window: Vec<f64> = self.window.iter().copied().collect();
        let cfg = self.params.learning;
        let cur_len = self.predictor.model().cycle_len();
        let widest = cfg.cycles_in_window * cfg.lag_max + 1;
        // estimate over the last few believed cycles; while the model is
        // still the bootstrap stub, over the widest span the knobs allow
        let narrow = if cur_len >= cfg.lag_min {
            (cfg.cycles_in_window * cur_len + 1).min(widest)
        } else {
            widest
        };
        let tail = |span: usize| &window[window.len().saturating_sub(span)..];

        let mut est = estimate_cycle_length(tail(narrow), &cfg);
        if narrow < widest
            && matches!(est, Err(Error::NoCycle) | Err(Error::InsufficientData { .. }))
        {
            // the incumbent-sized view may be too short to contain the true
            // cycle twice; look wider before concluding anything
            est = estimate_cycle_length(tail(widest), &cfg);
        }
        match est {
            Ok(n_plus) => self.small_then_full(&window, n_plus, k),
            Err(Error::NoCycle) | Err(Error::InsufficientData { .. })
                if cur_len < cfg.lag_min =>
            {
                // still on the bootstrap stub: its predictions are
                // near-worthless, so once the estimator has had a real
                // window to search and still found nothing, an imperfect
                // identification over whatever is there beats waiting
                if window.len() > 2 * cfg.lag_min {
                    let n_boot = (window.len() - 1).min(cfg.lag_max);
                    let message = self.full_update(&window, n_boot, k)?;
                    self.provisional = true;
                    Ok(Some(LearnedUpdate { message, fit_error: None, full: true }))
                } else {
                    Ok(None)
                }
            }
            Err(Error::NoCycle) => {
                // genuinely aperiodic recent data (e.g. standstill):
                // re-identify at the current length so the model tracks
                // what the signal actually does. Trust the aperiodicity
                // verdict only when the search covered the whole lag range
                // — a truncated search saying "no cycle" may just mean the
                // cycle lives beyond what the window can show twice.
                if window.len() >= 2 * cfg.lag_max {
                    let message = self.full_update(&window, cur_len, k)?;
                    Ok(Some(LearnedUpdate { message, fit_error: None, full: true }))
                } else {
                    Ok(None)
                }
            }
            Err(Error::InsufficientData { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn small_then_full(&mut self, window: &[f64], n_plus: usize, k: u32) -> Result<Option<LearnedUpdate>> {
        if window.len() < n_plus + 1 {
            return Ok(None);
        }
        let cur_len = self.predictor.model().cycle_len();
        let shift = estimate_shift(window, self.predictor.model(), n_plus);
        let theta = DeformParams::new(n_plus, shift)?;
        let report = match refine_params(window, self.predictor.model(), theta, &self.sys) {
            Ok(r) => r,
            Err(Error::InsufficientData { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        // small updates that keep the cycle length yet cannot hold the
        // trigger off for even one holding period are not fixing anything;
        // after two such failures in a row, deforming the same model a
        // third time would only thrash, so escalate to a fresh
        // identification
        let chained = report.theta.cycle_len() == cur_len
            && self.last_small.is_some_and(|(prev_k, prev_len)| {
                prev_len == cur_len && k.saturating_sub(prev_k) as usize <= 2 * self.params.t_min
            });
        let stuck = chained && self.stuck_smalls >= 1;
        // a provisional (boot) model has no trusted timing worth deforming
        let full = type_trigger(true, report.error, &self.type_cfg) || stuck || self.provisional;
        if full {
            // identify at the estimator's length: refine's length is tuned
            // for deforming the old model and inherits its defects
            let message = self.full_update(window, n_plus, k)?;
            Ok(Some(LearnedUpdate { message, fit_error: Some(report.error), full }))
        } else {
            self.accept(report.candidate.trajectory().to_vec())?;
            self.stuck_smalls = if chained { self.stuck_smalls + 1 } else { 0 };
            self.last_small = Some((k, self.predictor.model().cycle_len()));
            let message = UpdateMessage::SmallModelUpdate { sample_index: k, theta: report.theta };
            Ok(Some(LearnedUpdate { message, fit_error: Some(report.error), full }))
        }
    }

    /// Re-identify the last cycle verbatim and compress it when long enough;
    /// an ill-conditioned fit falls back to the raw cycle.
    fn full_update(&mut self, window: &[f64], n_star: usize, k: u32) -> Result<UpdateMessage> {
        self.last_small = None;
        self.stuck_smalls = 0;
        self.provisional = false;
        let ident = identify_full(window, n_star)?;
        if n_star >= self.params.learning.compress_min_len() {
            match compress(&ident, self.params.learning.degree) {
                Ok(cm) => {
                    // both sides run the reconstruction, not the raw fit
                    let shared = reconstruct(&cm);
                    self.accept(shared.trajectory().to_vec())?;
                    return Ok(UpdateMessage::FullModelUpdate { sample_index: k, model: cm });
                }
                Err(Error::Degenerate(msg)) => {
                    log::warn!("compression fell back to raw transmission: {msg}");
                }
                Err(e) => return Err(e),
            }
        }
        self.accept(ident.trajectory().to_vec())?;
        Ok(UpdateMessage::RawModelUpdate { sample_index: k, trajectory: ident.trajectory().to_vec() })
    }

    fn accept(&mut self, trajectory: Vec<f64>) -> Result<()> {
        self.predictor.apply_model(trajectory)?;
        self.buffer.clear();
        Ok(())
    }
}

/// Receiver state machine: replays the predictor from messages alone.
pub struct ReceiverState {
    sys: SystemModel,
    predictor: PredictorState,
    last_sample: Option<u32>,
}

impl ReceiverState {
    pub fn new(sys: SystemModel) -> Self {
        Self { sys, predictor: PredictorState::new(), last_sample: None }
    }

    /// Mirror of [`SenderState::prime`].
    pub fn prime(&mut self, trajectory: Vec<f64>, x_hat_prev: f64, last_index: usize) -> Result<()> {
        let model = ExcitationModel::new(trajectory, 1)?;
        self.predictor = PredictorState::with_model(model, x_hat_prev, last_index)?;
        Ok(())
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    /// Consume the messages for sample `k` (possibly none) and produce the
    /// estimate. Messages must belong to `k`, arrive in send order (state
    /// update first), and samples must be processed in order.
    pub fn receiver_step(&mut self, k: u32, messages: &[UpdateMessage]) -> Result<f64> {
        if let Some(last) = self.last_sample {
            if k <= last {
                return Err(Error::Protocol(format!("sample {k} arrived after sample {last}")));
            }
        }

        let mut measurement = None;
        let mut model_msg = None;
        for msg in messages {
            if msg.sample_index() != k {
                return Err(Error::Protocol(format!(
                    "message for sample {} processed at sample {k}",
                    msg.sample_index()
                )));
            }
            match msg {
                UpdateMessage::StateUpdate { x, .. } => {
                    if measurement.is_some() || model_msg.is_some() {
                        return Err(Error::Protocol("state update out of send order".into()));
                    }
                    if x.len() != self.sys.state_dim() {
                        return Err(Error::Protocol(format!(
                            "state update carries {} values for a {}-dimensional state",
                            x.len(),
                            self.sys.state_dim()
                        )));
                    }
                    measurement = Some(x[0]);
                }
                other => {
                    if model_msg.is_some() {
                        return Err(Error::Protocol("more than one model message in a sample".into()));
                    }
                    model_msg = Some(other);
                }
            }
        }
        // inputs are valid from here on; only now may state change
        self.last_sample = Some(k);

        self.predictor.begin_sample()?;
        let pred = self.predictor.predict(&self.sys);
        let gamma_state = measurement.is_some();
        let x_hat = self.predictor.commit(pred, measurement, gamma_state)?;

        if let Some(msg) = model_msg {
            let trajectory = match msg {
                UpdateMessage::SmallModelUpdate { theta, .. } => {
                    deform(self.predictor.model(), *theta).trajectory().to_vec()
                }
                UpdateMessage::FullModelUpdate { model, .. } => {
                    reconstruct(model).trajectory().to_vec()
                }
                UpdateMessage::RawModelUpdate { trajectory, .. } => trajectory.clone(),
                UpdateMessage::StateUpdate { .. } => unreachable!("filtered above"),
            };
            self.predictor.apply_model(trajectory)?;
        }
        Ok(x_hat)
    }
}

/// Bit-level equality of two predictors (mirror invariant): estimate bits,
/// cycle index, model version and every model column must agree.
pub fn predictors_mirror(a: &PredictorState, b: &PredictorState) -> bool {
    let est = match (a.x_hat(), b.x_hat()) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    };
    est && a.index() == b.index()
        && a.model().version() == b.model().version()
        && a.model().cycle_len() == b.model().cycle_len()
        && a.model()
            .trajectory()
            .iter()
            .zip(b.model().trajectory())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}
