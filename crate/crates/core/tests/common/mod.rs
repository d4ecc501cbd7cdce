//! Independent oracles and scenario builders shared by the integration
//! suites. Every oracle recomputes its quantity from first principles and
//! deliberately avoids the library's own code paths, so agreement means two
//! separate derivations landed on the same number.

#![allow(dead_code)]

use etl_core::agents::{Diagnostics, EtlParams, ReceiverState, SenderState};
use etl_core::dynamics::{
    generate_scenario, ExcitationShape, ScenarioConfig, ScenarioSample, SegmentSpec, SystemModel,
};
use etl_core::protocol::UpdateMessage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One-sided two-sample KS statistic and exhaustive permutation p-value.
///
/// `d_plus` walks the merged sorted support counting CDF excess directly;
/// the p-value enumerates every assignment of the pooled values to the two
/// groups (positions, so ties are handled naturally) and reports the
/// fraction whose statistic reaches the observed one.
pub fn perm_ks(empirical: &[u32], hypothetical: &[u32]) -> (f64, f64) {
    let i = empirical.len();
    let h = hypothetical.len();
    assert!(i >= 1 && h >= 1 && i + h <= 20, "exhaustive oracle is for tiny samples");

    let mut merged: Vec<(u32, bool)> = empirical
        .iter()
        .map(|&v| (v, true))
        .chain(hypothetical.iter().map(|&v| (v, false)))
        .collect();
    merged.sort_by_key(|&(v, _)| v);

    let d_of = |is_emp: &dyn Fn(usize) -> bool| -> f64 {
        let mut e_cnt = 0usize;
        let mut h_cnt = 0usize;
        let mut d = 0.0f64;
        let total = merged.len();
        for idx in 0..total {
            if is_emp(idx) {
                e_cnt += 1;
            } else {
                h_cnt += 1;
            }
            // evaluate only at the last copy of each distinct value
            if idx + 1 < total && merged[idx + 1].0 == merged[idx].0 {
                continue;
            }
            let excess = e_cnt as f64 / i as f64 - h_cnt as f64 / h as f64;
            if excess > d {
                d = excess;
            }
        }
        d
    };

    let observed = d_of(&|idx| merged[idx].1);

    let total = i + h;
    let mut at_least = 0u64;
    let mut count = 0u64;
    for mask in 0u32..(1u32 << total) {
        if mask.count_ones() as usize != i {
            continue;
        }
        count += 1;
        if d_of(&|idx| mask & (1 << idx) != 0) >= observed - 1e-12 {
            at_least += 1;
        }
    }
    (observed, at_least as f64 / count as f64)
}

/// Mean first-passage time of a plain Gaussian random walk across `±delta`,
/// counting the crossing step itself. Pure `rand`, no library code.
pub fn first_passage_expected_tau(sigma: f64, delta: f64, walks: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, sigma).unwrap();
    let mut total: u64 = 0;
    for _ in 0..walks {
        let mut s = 0.0f64;
        loop {
            s += step.sample(&mut rng);
            total += 1;
            if s.abs() >= delta {
                break;
            }
        }
    }
    total as f64 / walks as f64
}

/// Brute-force dominant-lag search: plain autocovariance of the mean-centered
/// increment sequence, largest sum wins, smallest lag wins ties, `None` when
/// no lag scores positive.
pub fn brute_force_lag(window: &[f64], lag_lo: usize, lag_hi: usize) -> Option<usize> {
    let d: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let d: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let mut best: Option<(usize, f64)> = None;
    for lag in lag_lo..=lag_hi.min(d.len().saturating_sub(1)) {
        let c: f64 = (0..d.len() - lag).map(|t| d[t] * d[t + lag]).sum();
        if c > 0.0 && best.is_none_or(|(_, b)| c > b) {
            best = Some((lag, c));
        }
    }
    best.map(|(lag, _)| lag)
}

/// Exhaustive circular-shift search: cross-covariance between the window's
/// last cycle of increments and the right-rotated model columns, both
/// mean-centered. Smallest shift wins ties.
pub fn brute_force_shift(window: &[f64], model: &[f64]) -> usize {
    let n = model.len();
    assert!(window.len() > n);
    let base = window.len() - n - 1;
    let center = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let mut meas: Vec<f64> = (0..n).map(|j| window[base + j + 1] - window[base + j]).collect();
    center(&mut meas);
    let mut tmpl = model.to_vec();
    center(&mut tmpl);
    let mut best = (0usize, f64::NEG_INFINITY);
    for s in 0..n {
        let score: f64 = (0..n).map(|j| meas[j] * tmpl[(j + n - s) % n]).sum();
        if score > best.1 {
            best = (s, score);
        }
    }
    best.0
}

/// Least-squares polynomial fit by explicit normal equations on the plain
/// monomial basis over `[-1, 1]`; returns the RMSE of the fitted values.
pub fn polyfit_rmse(values: &[f64], degree: usize) -> f64 {
    let n = values.len();
    let cols = degree + 1;
    let mut a = nalgebra::DMatrix::zeros(n, cols);
    for j in 0..n {
        let s = 2.0 * j as f64 / (n - 1) as f64 - 1.0;
        let mut pow = 1.0;
        for c in 0..cols {
            a[(j, c)] = pow;
            pow *= s;
        }
    }
    let y = nalgebra::DVector::from_column_slice(values);
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &y;
    let coeffs = ata.lu().solve(&aty).expect("normal equations are solvable");
    let fitted = a * coeffs;
    let sq: f64 = (0..n).map(|j| (values[j] - fitted[j]).powi(2)).sum();
    (sq / n as f64).sqrt()
}

/// Cycle warp recomputed from scratch: rebuild the cumulative (angle)
/// trajectory, linearly resample it onto the new grid, difference it back
/// into increments. Preserves the per-cycle sum by construction.
pub fn warp_oracle(u: &[f64], new_len: usize) -> Vec<f64> {
    let n = u.len();
    let mut cum = vec![0.0];
    for &v in u {
        cum.push(cum.last().unwrap() + v);
    }
    let at = |pos: f64| -> f64 {
        let i = pos.floor() as usize;
        if i >= n {
            cum[n]
        } else {
            cum[i] + (pos - i as f64) * (cum[i + 1] - cum[i])
        }
    };
    (0..new_len)
        .map(|j| {
            let a = j as f64 * n as f64 / new_len as f64;
            let b = (j + 1) as f64 * n as f64 / new_len as f64;
            at(b) - at(a)
        })
        .collect()
}

// --- builders ---------------------------------------------------------

pub fn segment(shape: ExcitationShape, cycle_len: usize, amplitude: f64, duration: usize) -> SegmentSpec {
    SegmentSpec { duration, cycle_len, shape, amplitude, phase: 0 }
}

pub fn scenario(segments: Vec<SegmentSpec>, sigma: f64, seed: u64) -> Vec<ScenarioSample> {
    let cfg = ScenarioConfig { segments, sample_rate_hz: 50.0, noise_sigma: sigma, seed };
    generate_scenario(&cfg).expect("scenario generates")
}

/// Random multi-segment walking-style scenario for the randomized suites:
/// 2-4 segments mixing shapes, cycle lengths and amplitudes at sigma 0.9.
pub fn random_mixed_config(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_1234_8765);
    let n_segs = rng.gen_range(2..=4);
    let shapes = [ExcitationShape::Stride, ExcitationShape::Sway, ExcitationShape::Gait];
    let mut segments = Vec::with_capacity(n_segs);
    for i in 0..n_segs {
        // at most one standstill stretch, never the opener
        let flat = i > 0 && rng.gen_bool(0.15);
        let shape = if flat { ExcitationShape::Flat } else { shapes[rng.gen_range(0..shapes.len())] };
        segments.push(SegmentSpec {
            duration: rng.gen_range(250..=600),
            cycle_len: rng.gen_range(30..=90),
            shape,
            amplitude: if flat { 0.0 } else { rng.gen_range(40.0..=130.0) },
            phase: 0,
        });
    }
    ScenarioConfig { segments, sample_rate_hz: 50.0, noise_sigma: 0.9, seed: seed.wrapping_mul(0x9e37_79b9) }
}

pub fn x_values(samples: &[ScenarioSample]) -> Vec<f64> {
    samples.iter().map(|s| s.x).collect()
}

/// Noise-free state sequence driven by tiling `cycle`: starts at the rest
/// state 0, so consecutive differences reproduce the cycle in phase.
pub fn states_from_cycle(cycle: &[f64], samples: usize) -> Vec<f64> {
    let mut x = 0.0;
    let mut out = Vec::with_capacity(samples);
    out.push(0.0);
    for k in 1..samples {
        x += cycle[(k - 1) % cycle.len()];
        out.push(x);
    }
    out
}

// --- closed-loop runner -----------------------------------------------

pub struct StepRecord {
    pub k: u32,
    pub x: f64,
    pub x_hat_receiver: f64,
    pub messages: Vec<UpdateMessage>,
    pub diag: Diagnostics,
    pub mirror: bool,
}

pub struct PairRun {
    pub steps: Vec<StepRecord>,
    pub sender: SenderState,
    pub receiver: ReceiverState,
}

/// Drive a sender/receiver pair over a signal, optionally starting both from
/// an already-converged model (trajectory, previous estimate, previous
/// cycle index).
pub fn run_pair(
    signal: &[f64],
    params: &EtlParams,
    sigma: f64,
    mc_seed: u64,
    prime: Option<(&[f64], f64, usize)>,
) -> PairRun {
    let sys = SystemModel::scalar(sigma).expect("valid system");
    let mut sender = SenderState::new_etl(sys.clone(), params.clone(), mc_seed).expect("sender builds");
    let mut receiver = ReceiverState::new(sys);
    if let Some((traj, x_prev, idx)) = prime {
        sender.prime(traj.to_vec(), x_prev, idx).expect("sender primes");
        receiver.prime(traj.to_vec(), x_prev, idx).expect("receiver primes");
    }
    let mut steps = Vec::with_capacity(signal.len());
    for (k, &x) in signal.iter().enumerate() {
        let k = k as u32;
        let (messages, diag) = sender.sender_step(k, x).expect("sender step");
        let x_hat_receiver = receiver.receiver_step(k, &messages).expect("receiver step");
        let mirror = etl_core::agents::predictors_mirror(sender.predictor(), receiver.predictor());
        steps.push(StepRecord { k, x, x_hat_receiver, messages, diag, mirror });
    }
    PairRun { steps, sender, receiver }
}

impl PairRun {
    pub fn model_messages(&self) -> impl Iterator<Item = &UpdateMessage> {
        self.steps.iter().flat_map(|s| s.messages.iter()).filter(|m| m.is_model_update())
    }

    pub fn state_updates(&self) -> usize {
        self.steps.iter().filter(|s| s.diag.gamma_state).count()
    }

    pub fn learn_fires(&self) -> usize {
        self.steps.iter().filter(|s| s.diag.gamma_learn).count()
    }
}
