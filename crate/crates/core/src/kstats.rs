//! Inter-communication-time statistics: gap recording, empirical CDFs, the
//! Monte-Carlo reference distribution and the one-sided two-sample
//! Kolmogorov-Smirnov test that drives the learning trigger.
//!
//! Counting convention: the trigger loop counts, for each state update, the
//! number of non-triggering samples since the previous update (so two
//! back-to-back updates record a raw gap of 0). All distribution work uses
//! the spacing between consecutive updates instead, `tau = raw + 1 >= 1`,
//! measured in samples and inclusive of the triggering sample; the
//! Monte-Carlo pool below uses the same convention, so the comparison is
//! unbiased.

use rand::Rng;

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::predictor::{ExcitationModel, PredictorState};
use crate::triggers::{state_trigger, StateTriggerConfig};

/// Record of gaps between transmitted state updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterCommBuffer {
    raw_gaps: Vec<u32>,
    sorted_times: Vec<u32>,
    current_gap: u32,
}

impl InterCommBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one sample's trigger decision: non-triggering samples extend the
    /// running gap, a trigger closes it and stores it.
    pub fn record_sample(&mut self, gamma_state: bool) {
        if gamma_state {
            let tau = self.current_gap + 1;
            self.raw_gaps.push(self.current_gap);
            let pos = self.sorted_times.partition_point(|&t| t <= tau);
            self.sorted_times.insert(pos, tau);
            self.current_gap = 0;
        } else {
            self.current_gap += 1;
        }
    }

    /// Closed gaps in arrival order, exclusive counts (0 means back-to-back
    /// triggers).
    pub fn raw_gaps(&self) -> &[u32] {
        &self.raw_gaps
    }

    /// Inter-communication times (spacing view, `raw + 1`), sorted ascending.
    pub fn times(&self) -> &[u32] {
        &self.sorted_times
    }

    pub fn len(&self) -> usize {
        self.raw_gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_gaps.is_empty()
    }

    /// Drop stored gaps (after a model update made them stale). The running
    /// gap keeps counting from the last state update.
    pub fn clear(&mut self) {
        self.raw_gaps.clear();
        self.sorted_times.clear();
    }
}

/// Step CDF of a finite sample; `None`-free by construction (use
/// [`EmpiricalCdf::new`] which refuses empty input).
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<u32>,
}

impl EmpiricalCdf {
    /// `None` marks the defined-empty case (no observations yet).
    pub fn new(times: &[u32]) -> Option<Self> {
        if times.is_empty() {
            return None;
        }
        let mut sorted = times.to_vec();
        sorted.sort_unstable();
        Some(Self { sorted })
    }

    /// Fraction of observations `<= tau`.
    pub fn value(&self, tau: u32) -> f64 {
        self.sorted.partition_point(|&t| t <= tau) as f64 / self.sorted.len() as f64
    }
}

/// Monte-Carlo distribution of inter-communication times under a correct
/// model, plus its mean (the expected spacing used for budget estimates).
#[derive(Clone, Debug, PartialEq)]
pub struct HypotheticalCdf {
    pool: Vec<u32>,
    expected_tau: f64,
}

impl HypotheticalCdf {
    /// Sorted pool of simulated spacings.
    pub fn pool(&self) -> &[u32] {
        &self.pool
    }

    pub fn expected_tau(&self) -> f64 {
        self.expected_tau
    }

    /// Fraction of pool values `<= tau`.
    pub fn value(&self, tau: u32) -> f64 {
        self.pool.partition_point(|&t| t <= tau) as f64 / self.pool.len() as f64
    }
}

const MC_TRIAL_CAP: u32 = 1_000_000;

/// Simulate the closed trigger loop under a correct model: the prediction
/// error is then a pure noise walk and each trial yields one first-passage
/// spacing across `delta`. Independent of the excitation, so one pool
/// serves a whole run.
pub fn mc_hypothetical_cdf<R: Rng + ?Sized>(
    sys: &SystemModel,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<HypotheticalCdf> {
    let cfg = StateTriggerConfig::new(delta)?;
    if trials == 0 {
        return Err(Error::Config("monte-carlo pool needs at least one trial".into()));
    }
    if sys.noise_sigma() == 0.0 {
        return Err(Error::Degenerate(
            "zero process noise never crosses the threshold; spacing distribution is undefined".into(),
        ));
    }
    let mut pool = Vec::with_capacity(trials);
    for _ in 0..trials {
        // correct model == zero residual excitation: hold model, aligned state
        let mut state = PredictorState::with_model(ExcitationModel::initial(), 0.0, 1)?;
        let mut x = 0.0;
        let mut tau: u32 = 0;
        loop {
            state.begin_sample()?;
            x = sys.step(x, 0.0, sys.sample_noise(rng));
            let pred = state
                .predict(sys)
                .ok_or_else(|| Error::StateCorruption("monte-carlo predictor lost its estimate".into()))?;
            let (fired, _) = state_trigger(sys, x, pred, &cfg);
            tau += 1;
            if fired {
                pool.push(tau);
                break;
            }
            state.commit(Some(pred), None, false)?;
            if tau >= MC_TRIAL_CAP {
                return Err(Error::Degenerate(format!(
                    "no threshold crossing within {MC_TRIAL_CAP} samples (delta {delta} vs sigma {})",
                    sys.noise_sigma()
                )));
            }
        }
    }
    pool.sort_unstable();
    let expected_tau = pool.iter().map(|&t| t as f64).sum::<f64>() / pool.len() as f64;
    Ok(HypotheticalCdf { pool, expected_tau })
}

/// Same pool from a fixed seed. The learning sender builds its pool through
/// this exact path, so exporting a CDF with the sender's seed reproduces the
/// sender's pool bit for bit.
pub fn mc_hypothetical_cdf_seeded(
    sys: &SystemModel,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<HypotheticalCdf> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    mc_hypothetical_cdf(sys, delta, trials, &mut rng)
}

/// One-sided two-sample KS statistic and asymptotic p-value.
///
/// `d_plus` is the largest excess of the empirical CDF over the hypothetical
/// one across the merged support (clamped at 0): only *shorter-than-expected*
/// spacings count as evidence of model mismatch. The p-value is the
/// asymptotic bound `exp(-2 d^2 i h / (i + h))`; it is conservative and
/// increasingly unreliable below roughly five empirical observations, which
/// the holding counter in the learning trigger compensates for.
///
/// An empty empirical sample carries no evidence: `(0, 1)`.
pub fn ks_one_sided(empirical: &[u32], hypothetical: &[u32]) -> (f64, f64) {
    let mut emp = empirical.to_vec();
    emp.sort_unstable();
    let mut hyp = hypothetical.to_vec();
    hyp.sort_unstable();
    ks_one_sided_sorted(&emp, &hyp)
}

/// Same as [`ks_one_sided`] for pre-sorted inputs (the hot path: the buffer
/// keeps its spacing view sorted and the pool is sorted once).
pub fn ks_one_sided_sorted(empirical: &[u32], hypothetical: &[u32]) -> (f64, f64) {
    if empirical.is_empty() {
        return (0.0, 1.0);
    }
    assert!(!hypothetical.is_empty(), "hypothetical sample must be non-empty");
    let i_n = empirical.len() as f64;
    let h_n = hypothetical.len() as f64;
    let mut ie = 0;
    let mut ih = 0;
    let mut d_plus = 0.0f64;
    while ie < empirical.len() || ih < hypothetical.len() {
        let v = match (empirical.get(ie), hypothetical.get(ih)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while ie < empirical.len() && empirical[ie] == v {
            ie += 1;
        }
        while ih < hypothetical.len() && hypothetical[ih] == v {
            ih += 1;
        }
        let diff = ie as f64 / i_n - ih as f64 / h_n;
        if diff > d_plus {
            d_plus = diff;
        }
    }
    let p = (-2.0 * d_plus * d_plus * i_n * h_n / (i_n + h_n)).exp();
    (d_plus, p.min(1.0))
}
