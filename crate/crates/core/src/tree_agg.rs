//! Binary-tree (dyadic) noisy counter for private continual release of running sums.
//!
//! After `n` updates the released value is the sum of the noisy partial sums
//! for the set bits of `n`. Each stored partial covers a dyadic block of the
//! history and gets its own Laplace draw, so any single update is included in
//! at most `L + 1` noisy partials over the whole horizon, with
//! `L = floor(log2 capacity)`. The per-partial scale is `2 (L + 1) / eps`.
//!
//! Levels are indexed by the aggregator's own update counter, not by a global
//! clock: a caller that feeds the counter only on some periods still gets
//! contiguous dyadic blocks.

use crate::error::{Error, Result};
use crate::prng::{laplace_sample, LaplaceParams, RngStream};

#[derive(Clone, Debug)]
pub struct TreeAggregator {
    capacity: u64,
    /// Exact partial sums `alpha_l`.
    alpha: Vec<f64>,
    /// Noisy partial sums `alpha_hat_l`.
    alpha_hat: Vec<f64>,
    n: u64,
    eps_branch: f64,
    noise: Option<LaplaceParams>,
    stream: RngStream,
    last_release: f64,
}

/// `floor(log2 capacity)` for `capacity >= 1`.
pub fn max_level(capacity: u64) -> u32 {
    63 - capacity.leading_zeros()
}

impl TreeAggregator {
    /// Counter for at most `capacity` updates under budget `eps_branch`.
    ///
    /// `f64::INFINITY` disables noise and the counter releases exact prefix sums.
    pub fn new(eps_branch: f64, capacity: u64, stream: RngStream) -> Result<Self> {
        Self::with_sensitivity(eps_branch, capacity, 1.0, stream)
    }

    /// As [`TreeAggregator::new`] with every noise scale multiplied by `sensitivity`.
    pub fn with_sensitivity(
        eps_branch: f64,
        capacity: u64,
        sensitivity: f64,
        stream: RngStream,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter(
                "aggregator capacity must be at least 1".into(),
            ));
        }
        if !(eps_branch > 0.0) {
            return Err(Error::Parameter(format!(
                "aggregator budget must be positive, got {eps_branch}"
            )));
        }
        if !(sensitivity > 0.0) || !sensitivity.is_finite() {
            return Err(Error::Parameter(format!(
                "sensitivity must be positive and finite, got {sensitivity}"
            )));
        }
        let levels = max_level(capacity) as usize + 1;
        let noise = if eps_branch.is_infinite() {
            None
        } else {
            Some(LaplaceParams::new(
                2.0 * sensitivity * levels as f64 / eps_branch,
            )?)
        };
        Ok(Self {
            capacity,
            alpha: vec![0.0; levels],
            alpha_hat: vec![0.0; levels],
            n: 0,
            eps_branch,
            noise,
            stream,
            last_release: 0.0,
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// `L = floor(log2 capacity)`.
    pub fn max_level(&self) -> u32 {
        (self.alpha.len() - 1) as u32
    }

    pub fn updates(&self) -> u64 {
        self.n
    }

    pub fn eps_branch(&self) -> f64 {
        self.eps_branch
    }

    /// Scale of each Laplace draw, `None` when noise is disabled.
    pub fn noise_scale(&self) -> Option<f64> {
        self.noise.map(|p| p.scale())
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise.is_some()
    }

    pub fn exact_partials(&self) -> &[f64] {
        &self.alpha
    }

    pub fn noisy_partials(&self) -> &[f64] {
        &self.alpha_hat
    }

    /// Feeds one value and returns the new privatized running sum.
    pub fn update(&mut self, u: f64) -> Result<f64> {
        if self.n >= self.capacity {
            return Err(Error::Capacity {
                capacity: self.capacity,
            });
        }
        self.n += 1;
        let lowest = self.n.trailing_zeros() as usize;

        let carried: f64 = self.alpha[..lowest].iter().sum();
        self.alpha[lowest] = carried + u;
        self.alpha[..lowest].fill(0.0);
        self.alpha_hat[..lowest].fill(0.0);

        let w = match self.noise {
            Some(params) => laplace_sample(&mut self.stream, params),
            None => 0.0,
        };
        self.alpha_hat[lowest] = self.alpha[lowest] + w;

        let mut release = 0.0;
        let mut bits = self.n;
        let mut level = 0;
        while bits != 0 {
            if bits & 1 == 1 {
                release += self.alpha_hat[level];
            }
            bits >>= 1;
            level += 1;
        }
        self.last_release = release;
        Ok(release)
    }

    /// Most recent release; 0 before the first update.
    pub fn snapshot(&self) -> f64 {
        self.last_release
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::derive_stream;

    fn quiet(capacity: u64) -> TreeAggregator {
        TreeAggregator::new(f64::INFINITY, capacity, derive_stream(0, "quiet")).unwrap()
    }

    #[test]
    fn construction_examples() {
        let a = TreeAggregator::new(1.0, 8, derive_stream(1, "a")).unwrap();
        assert_eq!(a.max_level(), 3);
        assert_eq!(a.noise_scale(), Some(8.0));
        let a = quiet(1024);
        assert_eq!(a.max_level(), 10);
        assert!(!a.noise_enabled());
        let a = TreeAggregator::new(0.5, 500, derive_stream(1, "a")).unwrap();
        assert_eq!(a.max_level(), 8);
        assert_eq!(a.noise_scale(), Some(36.0));
    }

    #[test]
    fn construction_errors() {
        let s = || derive_stream(1, "e");
        assert!(TreeAggregator::new(1.0, 0, s()).is_err());
        assert!(TreeAggregator::new(0.0, 8, s()).is_err());
        assert!(TreeAggregator::new(-1.0, 8, s()).is_err());
        assert!(TreeAggregator::new(f64::NAN, 8, s()).is_err());
    }

    #[test]
    fn exact_examples() {
        let mut a = quiet(8);
        assert_eq!(a.snapshot(), 0.0);
        let out: Vec<f64> = (0..3).map(|_| a.update(1.0).unwrap()).collect();
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
        assert_eq!(a.snapshot(), 3.0);

        let mut a = quiet(8);
        for u in [5.0, -2.0, 0.0, 7.0, 1.0, 1.0] {
            a.update(u).unwrap();
        }
        assert_eq!(a.noisy_partials()[1], 2.0);
        assert_eq!(a.noisy_partials()[2], 10.0);
        assert_eq!(a.snapshot(), 12.0);

        let mut a = quiet(4);
        a.update(0.2).unwrap();
        a.update(0.3).unwrap();
        assert!((a.snapshot() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut a = quiet(3);
        for _ in 0..3 {
            a.update(1.0).unwrap();
        }
        assert!(matches!(
            a.update(1.0),
            Err(Error::Capacity { capacity: 3 })
        ));
        assert_eq!(a.snapshot(), 3.0);
    }

    #[test]
    fn noise_off_partials_match_binary_layout() {
        let mut a = quiet(1024);
        for n in 1..=1024u64 {
            a.update(1.0).unwrap();
            for (level, (&exact, &noisy)) in a
                .exact_partials()
                .iter()
                .zip(a.noisy_partials())
                .enumerate()
            {
                assert_eq!(exact, noisy);
                let expected = if n >> level & 1 == 1 {
                    (1u64 << level) as f64
                } else {
                    0.0
                };
                assert_eq!(exact, expected, "n={n} level={level}");
            }
        }
    }

    #[test]
    fn zero_signal_release_is_sum_of_few_laplace_draws() {
        let mut a = TreeAggregator::new(1.0, 64, derive_stream(3, "z")).unwrap();
        for n in 1..=64u64 {
            let release = a.update(0.0).unwrap();
            let nonzero = a.noisy_partials().iter().filter(|v| **v != 0.0).count();
            assert!(nonzero as u32 <= n.count_ones());
            assert!(nonzero as u32 <= a.max_level() + 1);
            assert!(release.is_finite());
        }
    }

    /// Counts how many distinct stored partials ever contain a given item by
    /// feeding an indicator of that item with noise off.
    #[test]
    fn each_item_touches_at_most_l_plus_one_partials() {
        let capacity = 300u64;
        let bound = max_level(capacity) + 1;
        for item in 1..=capacity {
            let mut a = quiet(capacity);
            let mut touched = 0;
            for n in 1..=capacity {
                a.update(if n == item { 1.0 } else { 0.0 }).unwrap();
                let rebuilt = n.trailing_zeros() as usize;
                if a.exact_partials()[rebuilt] == 1.0 {
                    touched += 1;
                }
            }
            assert!(touched <= bound, "item {item} touched {touched} partials");
        }
    }

    #[test]
    fn noise_on_is_unbiased() {
        let capacity = 64u64;
        let stream: Vec<f64> = (0..capacity).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let truth: Vec<f64> = stream
            .iter()
            .scan(0.0, |acc, u| {
                *acc += u;
                Some(*acc)
            })
            .collect();
        let runs = 10_000;
        let mut means = vec![0.0; capacity as usize];
        let mut scale = 0.0;
        for r in 0..runs {
            let mut a =
                TreeAggregator::new(2.0, capacity, derive_stream(77, format!("run/{r}"))).unwrap();
            scale = a.noise_scale().unwrap();
            for (i, u) in stream.iter().enumerate() {
                means[i] += a.update(*u).unwrap() / runs as f64;
            }
        }
        let levels = (max_level(capacity) + 1) as f64;
        for (m, t) in means.iter().zip(&truth) {
            assert!(
                (m - t).abs() <= 4.0 * levels * scale / 100.0,
                "mean {m} vs {t}"
            );
        }
    }
}
