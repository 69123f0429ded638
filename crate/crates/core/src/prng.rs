//! Deterministic, labelled random streams and the samplers built on them.
//!
//! Every stochastic component (context draws, demand noise, privacy noise) owns
//! its own [`RngStream`], derived from a root seed and a slash-separated label
//! such as `rep/7/cppq/noise/j/3/k/1/reward`. Two streams with the same
//! `(root_seed, label)` replay bit-identical sequences, so replications can run
//! on any number of workers without changing results.
//!
//! Noise is drawn with plain floating-point inverse-CDF sampling. This is fine
//! for simulation but is not hardened against floating-point side channels.

use rand::distributions::{Distribution, Open01};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// 256-bit ChaCha key from `(root_seed, label)`.
fn stream_key(root_seed: u64, label: &str) -> [u8; 32] {
    let mut state = root_seed ^ fnv1a(label.as_bytes()).rotate_left(17);
    // Mix the label length in as well so that prefix-related labels with
    // colliding FNV values still separate.
    state ^= (label.len() as u64).wrapping_mul(GOLDEN_GAMMA);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A named, reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    root_seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

/// Builds the stream identified by `(root_seed, label)`.
pub fn derive_stream(root_seed: u64, label: impl Into<String>) -> RngStream {
    let label = label.into();
    let rng = ChaCha8Rng::from_seed(stream_key(root_seed, &label));
    RngStream {
        root_seed,
        label,
        rng,
    }
}

impl RngStream {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Derives an independent stream whose label extends this one.
    ///
    /// The child depends only on the labels, never on how many values the
    /// parent has already produced.
    pub fn child(&self, suffix: &str) -> RngStream {
        derive_stream(self.root_seed, format!("{}/{}", self.label, suffix))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn next_open01(&mut self) -> f64 {
        Open01.sample(&mut self.rng)
    }

    /// Uniform draw on [0, 1).
    pub fn next_unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Scale `b` of a zero-mean Laplace law with density `exp(-|x|/b) / (2b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceParams {
    scale: f64,
}

impl LaplaceParams {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parameter(format!(
                "Laplace scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    /// Scale calibrated for sensitivity `sensitivity` under budget `epsilon`.
    pub fn for_mechanism(sensitivity: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "privacy budget must be positive, got {epsilon}"
            )));
        }
        Self::new(sensitivity / epsilon)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale
    }

    /// Log of the density at `v` of `loc + Lap(b)` over that of `loc_alt + Lap(b)`.
    pub fn log_density_ratio(&self, v: f64, loc: f64, loc_alt: f64) -> f64 {
        ((v - loc_alt).abs() - (v - loc).abs()) / self.scale
    }
}

/// Inverse CDF of `Lap(0, scale)` evaluated at `u` in (0, 1).
pub fn laplace_quantile(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    if centered == 0.0 {
        return 0.0;
    }
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

pub fn laplace_sample(stream: &mut RngStream, params: LaplaceParams) -> f64 {
    laplace_quantile(stream.next_open01(), params.scale)
}

/// Affine map of a unit draw onto `[lo, hi)`.
pub fn uniform_from_unit(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

pub fn uniform_sample(stream: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Parameter(format!(
            "uniform range requires lo < hi, got [{lo}, {hi})"
        )));
    }
    let v = uniform_from_unit(stream.next_unit(), lo, hi);
    // Rounding in the affine map can land exactly on `hi` for tiny ranges.
    Ok(if v >= hi {
        lo.max(hi - (hi - lo) * f64::EPSILON)
    } else {
        v
    })
}
