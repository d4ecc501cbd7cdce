//! Run a measurement signal through alternative transmission strategies and
//! compare communication cost against receiver-side accuracy.

use std::time::Instant;

use crate::agents::{predictors_mirror, EtlParams, ReceiverState, SenderState};
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::protocol::{CommLedger, UpdateMessage};

/// Transmission strategies under comparison:
/// send everything, send every n-th sample (receiver holds the last value),
/// event-triggered estimation with a fixed all-zero model, and full
/// event-triggered learning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Full,
    Decimate(u32),
    Etse,
    Etl,
}

impl Strategy {
    pub fn id(&self) -> String {
        match self {
            Strategy::Full => "full".into(),
            Strategy::Decimate(f) => format!("decimate({f})"),
            Strategy::Etse => "etse".into(),
            Strategy::Etl => "etl".into(),
        }
    }
}

/// Aggregate outcome of one strategy over one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyResult {
    pub strategy: String,
    pub comm_ratio: f64,
    /// Root-mean-square receiver error over every sample, trigger samples
    /// included.
    pub rmse: f64,
    pub state_updates: u64,
    pub small_updates: u64,
    pub full_updates: u64,
    pub raw_updates: u64,
    pub runtime_s: f64,
}

/// Per-sample trace row (one line of the exported trace CSV).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub k: u32,
    pub x: f64,
    pub x_hat_sender: f64,
    pub x_hat_receiver: f64,
    pub error: f64,
    pub p_value: f64,
    pub gamma_state: bool,
    pub gamma_learn: bool,
    pub gamma_full: bool,
    pub fit_error: Option<f64>,
    pub values_sent: u64,
    pub mirror_ok: bool,
    pub learning_skipped: bool,
}

fn result_from_ledger(
    strategy: &Strategy,
    ledger: &CommLedger,
    sq_err_sum: f64,
    samples: usize,
    started: Instant,
) -> Result<StrategyResult> {
    Ok(StrategyResult {
        strategy: strategy.id(),
        comm_ratio: ledger.ratio()?,
        rmse: (sq_err_sum / samples as f64).sqrt(),
        state_updates: ledger.state_updates(),
        small_updates: ledger.small_updates(),
        full_updates: ledger.full_updates(),
        raw_updates: ledger.raw_updates(),
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Replay `signal` under `strategy`. `mc_seed` feeds the learning sender's
/// Monte-Carlo pool and is ignored by the other strategies.
pub fn run_strategy(
    signal: &[f64],
    strategy: Strategy,
    sys: &SystemModel,
    params: &EtlParams,
    mc_seed: u64,
) -> Result<(StrategyResult, Vec<TraceRow>)> {
    if signal.is_empty() {
        return Err(Error::Config("cannot run a strategy over an empty signal".into()));
    }
    let started = Instant::now();
    let mut trace = Vec::with_capacity(signal.len());
    match strategy {
        Strategy::Full => {
            let mut ledger = CommLedger::new(sys.state_dim());
            for (k, &x) in signal.iter().enumerate() {
                let k = k as u32;
                ledger.tick();
                ledger.record(&UpdateMessage::StateUpdate { sample_index: k, x: vec![x] });
                trace.push(TraceRow {
                    k,
                    x,
                    x_hat_sender: x,
                    x_hat_receiver: x,
                    error: 0.0,
                    p_value: 1.0,
                    gamma_state: true,
                    gamma_learn: false,
                    gamma_full: false,
                    fit_error: None,
                    values_sent: ledger.values_sent(),
                    mirror_ok: true,
                    learning_skipped: false,
                });
            }
            let result = result_from_ledger(&strategy, &ledger, 0.0, signal.len(), started)?;
            Ok((result, trace))
        }
        Strategy::Decimate(factor) => {
            if factor == 0 {
                return Err(Error::Config("decimation factor must be >= 1".into()));
            }
            let mut ledger = CommLedger::new(sys.state_dim());
            let mut held = signal[0];
            let mut sq = 0.0;
            for (k, &x) in signal.iter().enumerate() {
                let k = k as u32;
                ledger.tick();
                let sent = k.is_multiple_of(factor);
                if sent {
                    ledger.record(&UpdateMessage::StateUpdate { sample_index: k, x: vec![x] });
                    held = x;
                }
                let err = sys.metric(x, held);
                sq += err * err;
                trace.push(TraceRow {
                    k,
                    x,
                    x_hat_sender: held,
                    x_hat_receiver: held,
                    error: err,
                    p_value: 1.0,
                    gamma_state: sent,
                    gamma_learn: false,
                    gamma_full: false,
                    fit_error: None,
                    values_sent: ledger.values_sent(),
                    mirror_ok: true,
                    learning_skipped: false,
                });
            }
            let result = result_from_ledger(&strategy, &ledger, sq, signal.len(), started)?;
            Ok((result, trace))
        }
        Strategy::Etse | Strategy::Etl => {
            let mut sender = match strategy {
                Strategy::Etse => SenderState::new_etse(sys.clone(), params.clone())?,
                _ => SenderState::new_etl(sys.clone(), params.clone(), mc_seed)?,
            };
            let mut receiver = ReceiverState::new(sys.clone());
            let mut sq = 0.0;
            for (k, &x) in signal.iter().enumerate() {
                let k = k as u32;
                let (messages, diag) = sender.sender_step(k, x)?;
                let x_hat_receiver = receiver.receiver_step(k, &messages)?;
                let err = sys.metric(x, x_hat_receiver);
                sq += err * err;
                trace.push(TraceRow {
                    k,
                    x,
                    x_hat_sender: diag.x_hat,
                    x_hat_receiver,
                    error: diag.error,
                    p_value: diag.p_value,
                    gamma_state: diag.gamma_state,
                    gamma_learn: diag.gamma_learn,
                    gamma_full: diag.gamma_full,
                    fit_error: diag.fit_error,
                    values_sent: diag.values_sent,
                    mirror_ok: predictors_mirror(sender.predictor(), receiver.predictor()),
                    learning_skipped: diag.learning_skipped,
                });
            }
            let result = result_from_ledger(&strategy, sender.ledger(), sq, signal.len(), started)?;
            Ok((result, trace))
        }
    }
}

/// Run the standard strategy line-up over one signal, in the fixed order
/// full, decimate, estimation-only, learning. Deterministic for fixed
/// inputs and seed.
pub fn compare(
    signal: &[f64],
    sys: &SystemModel,
    params: &EtlParams,
    mc_seed: u64,
    decimate_factor: u32,
) -> Result<Vec<StrategyResult>> {
    let strategies = [
        Strategy::Full,
        Strategy::Decimate(decimate_factor),
        Strategy::Etse,
        Strategy::Etl,
    ];
    strategies
        .iter()
        .map(|&s| run_strategy(signal, s, sys, params, mc_seed).map(|(r, _)| r))
        .collect()
}
