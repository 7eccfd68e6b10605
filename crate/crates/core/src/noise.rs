//! Randomness: a seeded ChaCha20 stream, the Laplace sampler built on it,
//! and a zero-noise test double.
//!
//! The generator is `ChaCha20Rng` (counter-based, value-stable across
//! platforms and `rand_chacha` releases) seeded through
//! [`rand::SeedableRng::seed_from_u64`]. Per-trial streams are derived with
//! [`subseed`], a SplitMix64 finaliser over `(seed, index)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Result};

/// SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent stream under a master seed:
/// `splitmix64(seed ^ splitmix64(index))`.
pub fn subseed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

enum Mode {
    Seeded(Box<ChaCha20Rng>),
    Zero,
}

/// Source of all randomness consumed by mechanisms. Single owner; build
/// one per concurrent task.
pub struct NoiseSource {
    mode: Mode,
}

impl std::fmt::Debug for NoiseSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mode {
            Mode::Seeded(_) => f.write_str("NoiseSource::Seeded"),
            Mode::Zero => f.write_str("NoiseSource::Zero"),
        }
    }
}

impl NoiseSource {
    pub fn seeded(seed: u64) -> Self {
        NoiseSource {
            mode: Mode::Seeded(Box::new(ChaCha20Rng::seed_from_u64(seed))),
        }
    }

    /// Stream for trial/party `index` under `seed`.
    pub fn for_index(seed: u64, index: u64) -> Self {
        Self::seeded(subseed(seed, index))
    }

    /// Test double: every Laplace draw is 0 and selections are argmax.
    ///
    /// NOT differentially private. Never use outside tests and replays.
    pub fn zero() -> Self {
        NoiseSource { mode: Mode::Zero }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.mode, Mode::Zero)
    }

    /// Sibling stream with the same mode, derived from this one.
    pub fn fork(&mut self) -> Self {
        match &mut self.mode {
            Mode::Seeded(rng) => Self::seeded(rng.next_u64()),
            Mode::Zero => Self::zero(),
        }
    }

    /// Family of independent streams derived from this one.
    pub fn family(&mut self) -> StreamFamily {
        match &mut self.mode {
            Mode::Seeded(rng) => StreamFamily::seeded(rng.next_u64()),
            Mode::Zero => StreamFamily::zero(),
        }
    }

    /// Uniform draw in the open interval (0, 1); 0.5 in zero mode.
    pub fn uniform(&mut self) -> f64 {
        match &mut self.mode {
            Mode::Seeded(rng) => ((rng.next_u64() >> 11) as f64 + 0.5) * f64::powi(2.0, -53),
            Mode::Zero => 0.5,
        }
    }

    /// Raw 64-bit draw (0 in zero mode).
    pub fn next_u64(&mut self) -> u64 {
        match &mut self.mode {
            Mode::Seeded(rng) => rng.next_u64(),
            Mode::Zero => 0,
        }
    }

    /// Sample from `Lap(scale)`, density `exp(-|x|/scale) / (2 scale)`.
    pub fn laplace(&mut self, scale: f64) -> Result<f64> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(self.laplace_unchecked(scale))
    }

    /// Inverse-CDF Laplace draw from `u` uniform on (-1/2, 1/2):
    /// `x = -scale * sgn(u) * ln(1 - 2|u|)`.
    pub(crate) fn laplace_unchecked(&mut self, scale: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let u = self.uniform() - 0.5;
        -scale * u.signum() * (-2.0 * u.abs()).ln_1p()
    }

    /// Index drawn with probability proportional to `exp(scores[i])`
    /// (log-weights). Zero mode returns the highest-scoring index, ties
    /// going to the largest index.
    pub fn select_log_weights(&mut self, scores: &[f64]) -> Option<usize> {
        if scores.is_empty() {
            return None;
        }
        let argmax = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s >= scores[best] { i } else { best });
        if self.is_zero() {
            return Some(argmax);
        }
        let top = scores[argmax];
        let weights: Vec<f64> = scores.iter().map(|&s| (s - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return Some(i);
            }
            target -= w;
        }
        Some(argmax)
    }
}

/// Independent per-party (or per-trial) streams sharing one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFamily(Option<u64>);

impl StreamFamily {
    pub fn seeded(seed: u64) -> Self {
        StreamFamily(Some(seed))
    }

    pub fn zero() -> Self {
        StreamFamily(None)
    }

    /// Stream number `index`; zero-mode families yield zero-mode streams.
    pub fn stream(&self, index: u64) -> NoiseSource {
        match self.0 {
            Some(seed) => NoiseSource::for_index(seed, index),
            None => NoiseSource::zero(),
        }
    }
}

/// `scale * ln(1/beta)`: with probability at least `1 - beta`, a
/// `Lap(scale)` draw has magnitude below this.
pub fn tail_radius(scale: f64, beta: f64) -> Result<f64> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(scale > 0.0) {
        return Err(invalid("scale must be positive"));
    }
    check_beta(beta)?;
    Ok(scale * (1.0 / beta).ln())
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("failure rate beta must be in (0, 1), got {beta}")))
    }
}
