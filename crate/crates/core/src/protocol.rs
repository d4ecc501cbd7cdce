//! Update messages, their byte-level codec, and the communication ledger
//! that tracks the transmitted-value budget.
//!
//! Frame layout: 1 tag byte, then the sample index as a 4-byte little-endian
//! unsigned integer, then the payload. Reals are 8-byte IEEE-754 little-
//! endian; cycle lengths are 4-byte unsigned and trail the frame. Payload
//! sizes are implied by the frame length, so frames need no internal length
//! fields.

use crate::error::{Error, Result};
use crate::learning::{CompressedModel, DeformParams};

const TAG_STATE: u8 = 0x01;
const TAG_SMALL: u8 = 0x02;
const TAG_FULL: u8 = 0x03;
const TAG_RAW: u8 = 0x04;

/// Everything the sender may put on the channel. `sample_index` is the
/// sample the message belongs to; the receiver applies it on that sample.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateMessage {
    /// Measured state (one real per state dimension).
    StateUpdate { sample_index: u32, x: Vec<f64> },
    /// Deformation of the model the receiver already holds.
    SmallModelUpdate { sample_index: u32, theta: DeformParams },
    /// Polynomial-compressed re-identified cycle.
    FullModelUpdate { sample_index: u32, model: CompressedModel },
    /// Uncompressed cycle (used when the cycle is too short to compress or
    /// the fit degenerates).
    RawModelUpdate { sample_index: u32, trajectory: Vec<f64> },
}

impl UpdateMessage {
    pub fn sample_index(&self) -> u32 {
        match self {
            UpdateMessage::StateUpdate { sample_index, .. }
            | UpdateMessage::SmallModelUpdate { sample_index, .. }
            | UpdateMessage::FullModelUpdate { sample_index, .. }
            | UpdateMessage::RawModelUpdate { sample_index, .. } => *sample_index,
        }
    }

    /// Number of transmitted values this message costs in the budget:
    /// states count their dimension, a deformation counts its two
    /// parameters, compressed models their coefficients plus the cycle
    /// length, raw models every column plus the cycle length.
    pub fn value_count(&self) -> u64 {
        match self {
            UpdateMessage::StateUpdate { x, .. } => x.len() as u64,
            UpdateMessage::SmallModelUpdate { .. } => 2,
            UpdateMessage::FullModelUpdate { model, .. } => model.coefficients().len() as u64 + 1,
            UpdateMessage::RawModelUpdate { trajectory, .. } => trajectory.len() as u64 + 1,
        }
    }

    pub fn is_model_update(&self) -> bool {
        !matches!(self, UpdateMessage::StateUpdate { .. })
    }
}

/// Serialize a message to its frame.
pub fn encode(msg: &UpdateMessage) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        UpdateMessage::StateUpdate { sample_index, x } => {
            out.push(TAG_STATE);
            out.extend_from_slice(&sample_index.to_le_bytes());
            for v in x {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        UpdateMessage::SmallModelUpdate { sample_index, theta } => {
            out.push(TAG_SMALL);
            out.extend_from_slice(&sample_index.to_le_bytes());
            out.extend_from_slice(&(theta.cycle_len() as f64).to_le_bytes());
            out.extend_from_slice(&(theta.shift() as f64).to_le_bytes());
        }
        UpdateMessage::FullModelUpdate { sample_index, model } => {
            out.push(TAG_FULL);
            out.extend_from_slice(&sample_index.to_le_bytes());
            for c in model.coefficients() {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&(model.cycle_len() as u32).to_le_bytes());
        }
        UpdateMessage::RawModelUpdate { sample_index, trajectory } => {
            out.push(TAG_RAW);
            out.extend_from_slice(&sample_index.to_le_bytes());
            for v in trajectory {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(trajectory.len() as u32).to_le_bytes());
        }
    }
    out
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn decode_shift_param(v: f64, what: &str) -> Result<usize> {
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::Frame(format!("{what} must be a small non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

/// Parse a frame back into a message. Unknown tags are protocol errors;
/// anything structurally wrong with the payload is a frame error.
pub fn decode(bytes: &[u8]) -> Result<UpdateMessage> {
    if bytes.len() < 5 {
        return Err(Error::Frame(format!("frame of {} bytes is shorter than its header", bytes.len())));
    }
    let tag = bytes[0];
    let sample_index = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
    let payload = &bytes[5..];
    match tag {
        TAG_STATE => {
            if payload.is_empty() || !payload.len().is_multiple_of(8) {
                return Err(Error::Frame(format!(
                    "state update payload of {} bytes is not a whole number of reals",
                    payload.len()
                )));
            }
            Ok(UpdateMessage::StateUpdate { sample_index, x: read_f64s(payload) })
        }
        TAG_SMALL => {
            if payload.len() != 16 {
                return Err(Error::Frame(format!(
                    "deformation payload must be 16 bytes, got {}",
                    payload.len()
                )));
            }
            let vals = read_f64s(payload);
            let cycle_len = decode_shift_param(vals[0], "cycle length")?;
            let shift = decode_shift_param(vals[1], "shift")?;
            let theta = DeformParams::new(cycle_len, shift)
                .map_err(|e| Error::Frame(format!("invalid deformation: {e}")))?;
            Ok(UpdateMessage::SmallModelUpdate { sample_index, theta })
        }
        TAG_FULL => {
            if payload.len() < 12 || !(payload.len() - 4).is_multiple_of(8) {
                return Err(Error::Frame(format!(
                    "compressed model payload of {} bytes is inconsistent",
                    payload.len()
                )));
            }
            let (coeff_bytes, tail) = payload.split_at(payload.len() - 4);
            let cycle_len = u32::from_le_bytes(tail.try_into().unwrap()) as usize;
            let model = CompressedModel::new(read_f64s(coeff_bytes), cycle_len)
                .map_err(|e| Error::Frame(format!("invalid compressed model: {e}")))?;
            Ok(UpdateMessage::FullModelUpdate { sample_index, model })
        }
        TAG_RAW => {
            if payload.len() < 12 || !(payload.len() - 4).is_multiple_of(8) {
                return Err(Error::Frame(format!(
                    "raw model payload of {} bytes is inconsistent",
                    payload.len()
                )));
            }
            let (traj_bytes, tail) = payload.split_at(payload.len() - 4);
            let cycle_len = u32::from_le_bytes(tail.try_into().unwrap()) as usize;
            let trajectory = read_f64s(traj_bytes);
            if trajectory.len() != cycle_len {
                return Err(Error::Frame(format!(
                    "raw model carries {} columns but declares {cycle_len}",
                    trajectory.len()
                )));
            }
            if trajectory.iter().any(|v| !v.is_finite()) {
                return Err(Error::Frame("raw model has non-finite columns".into()));
            }
            Ok(UpdateMessage::RawModelUpdate { sample_index, trajectory })
        }
        other => Err(Error::Protocol(format!("unknown message tag 0x{other:02x}"))),
    }
}

/// Running account of transmitted values versus elapsed samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommLedger {
    state_dim: u64,
    samples_elapsed: u64,
    values_sent: u64,
    state_updates: u64,
    small_updates: u64,
    full_updates: u64,
    raw_updates: u64,
}

impl CommLedger {
    pub fn new(state_dim: usize) -> Self {
        Self { state_dim: state_dim as u64, ..Self::default() }
    }

    /// Count one elapsed sample; call exactly once per sample.
    pub fn tick(&mut self) {
        self.samples_elapsed += 1;
    }

    /// Account for one transmitted message.
    pub fn record(&mut self, msg: &UpdateMessage) {
        self.values_sent += msg.value_count();
        match msg {
            UpdateMessage::StateUpdate { .. } => self.state_updates += 1,
            UpdateMessage::SmallModelUpdate { .. } => self.small_updates += 1,
            UpdateMessage::FullModelUpdate { .. } => self.full_updates += 1,
            UpdateMessage::RawModelUpdate { .. } => self.raw_updates += 1,
        }
    }

    /// Transmitted values per (state dimension x elapsed sample): 1.0 means
    /// "might as well send everything".
    pub fn ratio(&self) -> Result<f64> {
        if self.samples_elapsed == 0 {
            return Err(Error::Config("communication ratio is undefined before any sample elapsed".into()));
        }
        Ok(self.values_sent as f64 / (self.state_dim * self.samples_elapsed) as f64)
    }

    pub fn samples_elapsed(&self) -> u64 {
        self.samples_elapsed
    }

    pub fn values_sent(&self) -> u64 {
        self.values_sent
    }

    pub fn state_updates(&self) -> u64 {
        self.state_updates
    }

    pub fn small_updates(&self) -> u64 {
        self.small_updates
    }

    pub fn full_updates(&self) -> u64 {
        self.full_updates
    }

    pub fn raw_updates(&self) -> u64 {
        self.raw_updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_msg() -> UpdateMessage {
        UpdateMessage::SmallModelUpdate {
            sample_index: 812,
            theta: DeformParams::new(55, 7).unwrap(),
        }
    }

    fn full_msg() -> UpdateMessage {
        let coeffs: Vec<f64> = (0..19).map(|i| (i as f64) * 0.25 - 2.0).collect();
        UpdateMessage::FullModelUpdate {
            sample_index: 4242,
            model: CompressedModel::new(coeffs, 55).unwrap(),
        }
    }

    #[test]
    fn frame_sizes_match_the_layout() {
        let state = UpdateMessage::StateUpdate { sample_index: 3, x: vec![12.5] };
        assert_eq!(encode(&state).len(), 13);
        assert_eq!(encode(&small_msg()).len(), 21);
        assert_eq!(encode(&full_msg()).len(), 161);
        let raw = UpdateMessage::RawModelUpdate { sample_index: 9, trajectory: vec![0.5; 12] };
        assert_eq!(encode(&raw).len(), 1 + 4 + 96 + 4);
    }

    #[test]
    fn value_counts_follow_the_budget_rules() {
        assert_eq!(UpdateMessage::StateUpdate { sample_index: 0, x: vec![1.0] }.value_count(), 1);
        assert_eq!(small_msg().value_count(), 2);
        assert_eq!(full_msg().value_count(), 20);
        let raw = UpdateMessage::RawModelUpdate { sample_index: 9, trajectory: vec![0.5; 12] };
        assert_eq!(raw.value_count(), 13);
    }

    #[test]
    fn codec_round_trips_every_kind() {
        let msgs = [
            UpdateMessage::StateUpdate { sample_index: 77, x: vec![-3.25] },
            small_msg(),
            full_msg(),
            UpdateMessage::RawModelUpdate { sample_index: 1, trajectory: vec![1.5, -0.5, 0.25] },
        ];
        for msg in msgs {
            assert_eq!(decode(&encode(&msg)).unwrap(), msg);
        }
    }

    #[test]
    fn unknown_tag_is_a_protocol_error() {
        let mut frame = encode(&small_msg());
        frame[0] = 0xff;
        assert!(matches!(decode(&frame), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncated_frames_are_frame_errors() {
        let frame = encode(&full_msg());
        assert!(matches!(decode(&frame[..4]), Err(Error::Frame(_))));
        assert!(matches!(decode(&frame[..frame.len() - 3]), Err(Error::Frame(_))));
    }

    #[test]
    fn raw_frame_with_wrong_count_is_rejected() {
        let raw = UpdateMessage::RawModelUpdate { sample_index: 9, trajectory: vec![0.5; 12] };
        let mut frame = encode(&raw);
        let len = frame.len();
        frame[len - 4..].copy_from_slice(&11u32.to_le_bytes());
        assert!(matches!(decode(&frame), Err(Error::Frame(_))));
    }

    #[test]
    fn ledger_ratio_counts_values_per_sample() {
        let mut ledger = CommLedger::new(1);
        for _ in 0..800 {
            ledger.tick();
        }
        for k in 0..100 {
            ledger.record(&UpdateMessage::StateUpdate { sample_index: k, x: vec![1.0] });
        }
        assert_eq!(ledger.ratio().unwrap(), 0.125);
        for _ in 0..5 {
            ledger.record(&full_msg());
        }
        assert_eq!(ledger.ratio().unwrap(), 0.25);
        assert_eq!(ledger.state_updates(), 100);
        assert_eq!(ledger.full_updates(), 5);
    }

    #[test]
    fn ledger_without_messages_has_zero_ratio() {
        let mut ledger = CommLedger::new(1);
        ledger.tick();
        assert_eq!(ledger.ratio().unwrap(), 0.0);
    }

    #[test]
    fn ledger_before_any_sample_is_undefined() {
        let ledger = CommLedger::new(1);
        assert!(matches!(ledger.ratio(), Err(Error::Config(_))));
    }
}
