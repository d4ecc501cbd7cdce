//! System class, cyclic excitation templates, scenario generation and
//! measurement-log ingestion.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete-time system `x[k] = f(x[k-1], u[k], eps[k])` with additive
/// zero-mean Gaussian noise of standard deviation `noise_sigma`.
///
/// The shipped instance is the scalar integrator `f(x, u, eps) = x + u + eps`
/// with error metric `|a - b|`; all dimensions are 1. The dimension fields
/// exist so configurations state their shape explicitly and get rejected
/// early if they ask for anything the implementation does not provide.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    state_dim: usize,
    input_dim: usize,
    noise_dim: usize,
    noise_sigma: f64,
}

impl SystemModel {
    pub fn new(state_dim: usize, input_dim: usize, noise_dim: usize, noise_sigma: f64) -> Result<Self> {
        if (state_dim, input_dim, noise_dim) != (1, 1, 1) {
            return Err(Error::Config(format!(
                "dimension mismatch: only the scalar system (1, 1, 1) is implemented, got ({state_dim}, {input_dim}, {noise_dim})"
            )));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
        }
        Ok(Self { state_dim, input_dim, noise_dim, noise_sigma })
    }

    /// The scalar integrator instance.
    pub fn scalar(noise_sigma: f64) -> Result<Self> {
        Self::new(1, 1, 1, noise_sigma)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// One step of the dynamics: `x + u + eps`.
    pub fn step(&self, x_prev: f64, u: f64, eps: f64) -> f64 {
        x_prev + u + eps
    }

    /// Error metric between two states.
    pub fn metric(&self, a: f64, b: f64) -> f64 {
        (a - b).abs()
    }

    /// Draw one noise sample. `sigma = 0` yields exactly `0.0` (the rng is
    /// still advanced so seed-aligned runs stay comparable across sigmas).
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // unwrap is safe: sigma was validated finite and non-negative
        let normal = Normal::new(0.0, self.noise_sigma).unwrap();
        normal.sample(rng)
    }
}

/// Shape of one excitation cycle, as a periodic unit-amplitude angle
/// trajectory `theta(phi)`, `phi in [0, 1)`. Generated inputs are the
/// per-sample increments of `amplitude * theta`, so each full cycle sums
/// to zero by telescoping and the state returns to its cycle-start value
/// in the noise-free case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcitationShape {
    /// Zero input everywhere.
    Flat,
    /// Dominant first harmonic with a mild second-harmonic overtone.
    Stride,
    /// Pure second harmonic (its half-period is a true period).
    Sway,
    /// Asymmetric bump-and-dip profile, first harmonic plus two Gaussian lobes.
    Gait,
}

impl ExcitationShape {
    fn angle(self, phi: f64) -> f64 {
        use std::f64::consts::PI;
        // wrap to [0, 1) so the profile is exactly periodic; without this
        // the Gaussian lobes leave a residual drift across cycle boundaries
        let phi = phi - phi.floor();
        match self {
            ExcitationShape::Flat => 0.0,
            ExcitationShape::Stride => (2.0 * PI * phi).sin() + 0.12 * (4.0 * PI * phi + 0.8).sin(),
            ExcitationShape::Sway => (4.0 * PI * phi + 0.4).sin(),
            ExcitationShape::Gait => {
                let lobe = |c: f64, w: f64| (-((phi - c) / w).powi(2)).exp();
                0.35 * (2.0 * PI * phi).sin() + 1.1 * (lobe(0.72, 0.09) - 0.55 * lobe(0.30, 0.16))
            }
        }
    }

    /// One cycle of input increments at `n` samples per cycle, scaled by
    /// `amplitude` and started `phase` samples into the cycle.
    pub fn cycle(self, n: usize, amplitude: f64, phase: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let a = (j + phase) as f64 / n as f64;
                let b = (j + phase + 1) as f64 / n as f64;
                amplitude * (self.angle(b) - self.angle(a))
            })
            .collect()
    }
}

/// One homogeneous stretch of a scenario: a fixed shape repeated at a fixed
/// cycle length for `duration` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// Number of samples this segment lasts.
    pub duration: usize,
    /// Samples per excitation cycle within the segment.
    pub cycle_len: usize,
    pub shape: ExcitationShape,
    /// Peak angle scale in the same unit as the state (degrees in the tests).
    pub amplitude: f64,
    /// Integer sample offset into the cycle at segment start.
    #[serde(default)]
    pub phase: usize,
}

/// Full scenario: segment list plus sampling and noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub segments: Vec<SegmentSpec>,
    pub sample_rate_hz: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("scenario has no segments".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.duration == 0 {
                return Err(Error::Config(format!("segment {i}: duration must be >= 1")));
            }
            if seg.cycle_len == 0 {
                return Err(Error::Config(format!("segment {i}: cycle length must be >= 1")));
            }
            if !seg.amplitude.is_finite() {
                return Err(Error::Config(format!("segment {i}: amplitude must be finite")));
            }
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// One generated sample: index, state, the true input that produced it and
/// the segment it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioSample {
    pub k: u32,
    pub x: f64,
    pub true_u: f64,
    pub segment: usize,
}

/// Simulate the scalar system over the configured segments, starting from
/// `x = 0`. Within a segment the input tiles one precomputed cycle, so
/// `u[k + N] == u[k]` holds bit-exactly. Identical configs produce
/// bit-identical outputs.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Vec<ScenarioSample>> {
    cfg.validate()?;
    let sys = SystemModel::scalar(cfg.noise_sigma)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.total_samples());
    let mut x = 0.0;
    let mut k: u32 = 0;
    for (segment, seg) in cfg.segments.iter().enumerate() {
        let cycle = seg.shape.cycle(seg.cycle_len, seg.amplitude, seg.phase);
        for i in 0..seg.duration {
            let u = cycle[i % seg.cycle_len];
            let eps = sys.sample_noise(&mut rng);
            x = sys.step(x, u, eps);
            out.push(ScenarioSample { k, x, true_u: u, segment });
            k = k.checked_add(1).ok_or_else(|| Error::Config("scenario exceeds u32 sample indices".into()))?;
        }
    }
    Ok(out)
}

/// Read a measurement log: CSV with two numeric columns `k,x`, optional
/// header, strictly increasing integer `k`. Returns `(k, x)` pairs; an
/// empty file yields an empty vector with a warning.
pub fn ingest_csv(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_row(trimmed) {
            Some(pair) => out.push(pair),
            None if line_no == 1 => continue, // header row
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected two numeric columns, got {trimmed:?}"),
                })
            }
        }
    }
    if out.is_empty() {
        log::warn!("measurement log {} contains no samples", path.display());
        return Ok(out);
    }
    for w in out.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::Format(format!(
                "sample indices must increase monotonically, got {} after {}",
                w[1].0, w[0].0
            )));
        }
    }
    Ok(out)
}

fn parse_row(line: &str) -> Option<(u64, f64)> {
    let mut cols = line.split(',');
    let k = cols.next()?.trim().parse::<u64>().ok()?;
    let x = cols.next()?.trim().parse::<f64>().ok()?;
    if cols.next().map(str::trim).is_some_and(|c| !c.is_empty()) {
        return None;
    }
    x.is_finite().then_some((k, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("etl-core-{name}-{}", std::process::id()));
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn step_moves_by_input_and_noise() {
        let sys = SystemModel::scalar(0.9).unwrap();
        assert_eq!(sys.step(10.0, 0.5, 0.0), 10.5);
        assert_eq!(sys.step(10.0, 0.0, 0.0), 10.0);
        assert!((sys.step(1.0, -0.3, 0.1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_dimensions_rejected() {
        assert!(matches!(SystemModel::new(2, 1, 1, 0.9), Err(Error::Config(_))));
        assert!(matches!(SystemModel::new(1, 3, 2, 0.9), Err(Error::Config(_))));
        assert!(matches!(SystemModel::new(1, 1, 1, -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_sigma_noise_is_exactly_zero() {
        let sys = SystemModel::scalar(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sys.sample_noise(&mut rng), 0.0);
        }
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let sys = SystemModel::scalar(0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sys.sample_noise(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.9).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn noise_draws_are_deterministic() {
        let sys = SystemModel::scalar(0.9).unwrap();
        let a: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..64).map(|_| sys.sample_noise(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..64).map(|_| sys.sample_noise(&mut rng)).collect()
        };
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn cycle_increments_sum_to_zero() {
        for shape in [ExcitationShape::Stride, ExcitationShape::Sway, ExcitationShape::Gait] {
            for n in [20usize, 50, 55, 60] {
                let cycle = shape.cycle(n, 40.0, 0);
                let sum: f64 = cycle.iter().sum();
                assert!(sum.abs() < 1e-9, "{shape:?} n={n} sum={sum}");
            }
        }
    }

    #[test]
    fn empty_segment_list_rejected() {
        let cfg = ScenarioConfig { segments: vec![], sample_rate_hz: 50.0, noise_sigma: 0.9, seed: 1 };
        assert!(matches!(generate_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn noise_free_cycle_returns_to_start() {
        let cfg = ScenarioConfig {
            segments: vec![SegmentSpec {
                duration: 200,
                cycle_len: 50,
                shape: ExcitationShape::Stride,
                amplitude: 40.0,
                phase: 0,
            }],
            sample_rate_hz: 50.0,
            noise_sigma: 0.0,
            seed: 5,
        };
        let samples = generate_scenario(&cfg).unwrap();
        for k in 0..150 {
            let diff = samples[k + 50].x - samples[k].x;
            assert!(diff.abs() < 1e-9, "k={k} diff={diff}");
        }
    }

    #[test]
    fn input_is_exactly_periodic_within_segment() {
        let cfg = ScenarioConfig {
            segments: vec![SegmentSpec {
                duration: 173,
                cycle_len: 50,
                shape: ExcitationShape::Gait,
                amplitude: 40.0,
                phase: 3,
            }],
            sample_rate_hz: 50.0,
            noise_sigma: 0.9,
            seed: 5,
        };
        let samples = generate_scenario(&cfg).unwrap();
        for k in 0..123 {
            assert_eq!(samples[k].true_u.to_bits(), samples[k + 50].true_u.to_bits());
        }
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let cfg = ScenarioConfig {
            segments: vec![SegmentSpec {
                duration: 300,
                cycle_len: 50,
                shape: ExcitationShape::Stride,
                amplitude: 40.0,
                phase: 0,
            }],
            sample_rate_hz: 50.0,
            noise_sigma: 0.9,
            seed: 42,
        };
        let a = generate_scenario(&cfg).unwrap();
        let b = generate_scenario(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(s, t)| s.x.to_bits() == t.x.to_bits()));
    }

    #[test]
    fn ingest_parses_plain_rows() {
        let path = write_temp("plain", "0,12.5\n1,12.7");
        let rows = ingest_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(rows, vec![(0, 12.5), (1, 12.7)]);
    }

    #[test]
    fn ingest_skips_header() {
        let path = write_temp("header", "k,x\n0,12.5\n1,12.7");
        let rows = ingest_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(rows, vec![(0, 12.5), (1, 12.7)]);
    }

    #[test]
    fn ingest_empty_file_returns_empty() {
        let path = write_temp("empty", "");
        let rows = ingest_csv(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert!(rows.is_empty());
    }

    #[test]
    fn ingest_reports_bad_row_with_line_number() {
        let path = write_temp("badrow", "0,12.5\n1,12.7\n2,abc");
        let err = ingest_csv(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_non_monotone_index() {
        let path = write_temp("order", "0,12.5\n2,12.7\n1,12.9");
        let err = ingest_csv(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Format(_)));
    }
}
