//! Locally private parallel quadrisection (LPPQ).
//!
//! Each customer's contribution is privatized before the platform stores
//! anything: the recorder maps `(x_t, p_t, y_t)` to
//! `z_t = p_t y_t e_{j_t} + w_t`, with `w_t` a vector of `J` i.i.d.
//! `Lap(2/eps)` draws. The policy state is a function of `z_1, ..., z_t` only.
//! Because noisy counts carry too little signal under local privacy, the shrink
//! test uses the number of periods `n_j` since the cube's last reset.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::{
    phase_index, quadrisection_cut, CutDirection, HypercubePartition, PriceGrid, PHASES,
};
use crate::policy::{ceil_count, Preset, PricingPolicy, QuadrisectionState, ShrinkEvent};
use crate::prng::{laplace_sample, LaplaceParams, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LppqConfig {
    pub horizon: u64,
    pub eps: f64,
    pub j_request: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub preset: Preset,
}

/// `ceil((eps sqrt(T))^(d/(d+2)))`; undefined without a finite budget.
pub fn theorem_cube_count(horizon: u64, eps: f64, dim: usize) -> Result<usize> {
    if !eps.is_finite() {
        return Err(Error::Config(
            "the LPPQ cube-count schedule needs a finite eps; set J explicitly".into(),
        ));
    }
    let base = eps * (horizon as f64).sqrt();
    Ok(ceil_count(base.powf(dim as f64 / (dim as f64 + 2.0))))
}

fn check_common(horizon: u64, eps: f64, dim: usize) -> Result<()> {
    if horizon < 2 {
        return Err(Error::Parameter(format!(
            "horizon must be at least 2, got {horizon}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!(
            "privacy budget must be positive, got {eps}"
        )));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    Ok(())
}

impl LppqConfig {
    /// `kappa1 = 1.7 sqrt(ln 2T)`, `kappa2 = 31 ln T`.
    pub fn theorem(horizon: u64, eps: f64, dim: usize) -> Result<Self> {
        check_common(horizon, eps, dim)?;
        let t = horizon as f64;
        Ok(Self {
            horizon,
            eps,
            j_request: theorem_cube_count(horizon, eps, dim)?,
            kappa1: 1.7 * (2.0 * t).ln().sqrt(),
            kappa2: 31.0 * t.ln(),
            preset: Preset::Theorem,
        })
    }

    /// `kappa1 = 0.001 sqrt(ln T)`, `kappa2 = 0.1 ln T`, theorem cube count.
    pub fn experiment(horizon: u64, eps: f64, dim: usize) -> Result<Self> {
        check_common(horizon, eps, dim)?;
        let log = (horizon as f64).ln();
        Ok(Self {
            horizon,
            eps,
            j_request: theorem_cube_count(horizon, eps, dim)?,
            kappa1: 0.001 * log.sqrt(),
            kappa2: 0.1 * log,
            preset: Preset::Experiment,
        })
    }

    pub fn custom(
        horizon: u64,
        eps: f64,
        j_request: usize,
        kappa1: f64,
        kappa2: f64,
    ) -> Result<Self> {
        let cfg = Self {
            horizon,
            eps,
            j_request,
            kappa1,
            kappa2,
            preset: Preset::Custom,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.j_request == 0 {
            return Err(Error::Parameter(
                "horizon and cube count must be positive".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Parameter(format!(
                "privacy budget must be positive, got {}",
                self.eps
            )));
        }
        for (name, v) in [("kappa1", self.kappa1), ("kappa2", self.kappa2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The local randomizer: one privatized coordinate per cube.
///
/// Holds no customer data; only the noise law and its stream.
#[derive(Clone, Debug)]
pub struct LocalRecorder {
    cubes: usize,
    noise: Option<LaplaceParams>,
    stream: RngStream,
    draws: u64,
}

impl LocalRecorder {
    /// Recorder with `Lap(2 * revenue_scale / eps)` noise, none when `eps` is infinite.
    pub fn new(cubes: usize, eps: f64, revenue_scale: f64, stream: RngStream) -> Result<Self> {
        let noise = if eps.is_infinite() {
            None
        } else {
            Some(LaplaceParams::for_mechanism(2.0 * revenue_scale, eps)?)
        };
        Ok(Self {
            cubes,
            noise,
            stream,
            draws: 0,
        })
    }

    pub fn noise(&self) -> Option<LaplaceParams> {
        self.noise
    }

    /// Total Laplace draws consumed.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// `z_j = 1{j = cube} * signal + w_j` for every cube `j`.
    pub fn privatize(&mut self, cube: usize, signal: f64) -> Vec<f64> {
        (0..self.cubes)
            .map(|j| {
                let w = match self.noise {
                    Some(params) => {
                        self.draws += 1;
                        laplace_sample(&mut self.stream, params)
                    }
                    None => 0.0,
                };
                if j == cube {
                    signal + w
                } else {
                    w
                }
            })
            .collect()
    }
}

/// Log-density ratio of the released vector at `z` between true signals `a` and `a_alt`.
pub fn release_log_ratio(z: &[f64], a: &[f64], a_alt: &[f64], params: LaplaceParams) -> f64 {
    z.iter()
        .zip(a.iter().zip(a_alt))
        .map(|(&zj, (&aj, &bj))| params.log_density_ratio(zj, aj, bj))
        .sum()
}

#[derive(Clone, Debug)]
pub struct Lppq {
    config: LppqConfig,
    state: QuadrisectionState,
    recorder: LocalRecorder,
    /// Running privatized sums `r_{j,k}`.
    sums: Vec<[f64; PHASES]>,
    /// `r_{j,k}` at the cube's last reset.
    snapshots: Vec<[f64; PHASES]>,
    trace: Option<Vec<Vec<f64>>>,
}

impl Lppq {
    pub fn new(
        config: LppqConfig,
        dim: usize,
        bounds: (f64, f64),
        revenue_scale: f64,
        noise: RngStream,
    ) -> Result<Self> {
        config.validate()?;
        let partition = HypercubePartition::build(dim, config.j_request)?;
        let state = QuadrisectionState::new(partition, config.horizon, bounds)?;
        let j = state.partition.cube_count();
        let recorder = LocalRecorder::new(j, config.eps, revenue_scale, noise)?;
        Ok(Self {
            config,
            state,
            recorder,
            sums: vec![[0.0; PHASES]; j],
            snapshots: vec![[0.0; PHASES]; j],
            trace: None,
        })
    }

    /// Keep every privatized vector for later export.
    pub fn keep_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &LppqConfig {
        &self.config
    }

    pub fn partition(&self) -> &HypercubePartition {
        &self.state.partition
    }

    pub fn recorder(&self) -> &LocalRecorder {
        &self.recorder
    }

    pub fn running_sums(&self) -> &[[f64; PHASES]] {
        &self.sums
    }

    pub fn snapshots(&self) -> &[[f64; PHASES]] {
        &self.snapshots
    }

    /// Privatizes the outcome of period `t` and folds it into the state.
    ///
    /// Returns `z_t`, the only artifact of `(x_t, p_t, y_t)` the state retains.
    pub fn record(&mut self, x: &[f64], price: f64, demand: f64, t: u64) -> Result<Vec<f64>> {
        let cube = self.state.check_feedback(x, price, t)?;
        let z = self.recorder.privatize(cube, price * demand);
        self.absorb(&z, t)?;
        Ok(z)
    }

    /// Adds a privatized vector to the phase-`k_t` sums of every cube.
    pub fn absorb(&mut self, z: &[f64], t: u64) -> Result<()> {
        if z.len() != self.sums.len() {
            return Err(Error::Input(format!(
                "privatized vector has {} entries for {} cubes",
                z.len(),
                self.sums.len()
            )));
        }
        if t != self.state.next_t {
            return Err(Error::Protocol(format!(
                "privatized vector for period {t} but period {} was expected",
                self.state.next_t
            )));
        }
        let k = phase_index(t) - 1;
        for (sums, zj) in self.sums.iter_mut().zip(z) {
            sums[k] += zj;
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(z.to_vec());
        }
        self.state.next_t += 1;
        Ok(())
    }

    /// Shrink decision for cube `j` at period `t` (the last recorded period).
    fn decide(&self, j: usize, t: u64) -> Option<CutDirection> {
        let n = t - self.state.grids[j].pointer();
        if n == 0 || (n as f64) < self.config.kappa2 {
            return None;
        }
        let n = n as f64;
        let vol = self.state.partition.cube_volume();
        let threshold = 3.0 * self.config.kappa1 / (self.config.eps * vol * n.sqrt());
        let est: [f64; PHASES] =
            std::array::from_fn(|k| (self.sums[j][k] - self.snapshots[j][k]) / (5.0 * vol * n));
        quadrisection_cut(&est, Some(threshold), Some(threshold))
    }

    /// Runs the shrink test on every cube after period `t` has been recorded.
    pub fn maybe_shrink(&mut self, t: u64) -> Result<Vec<ShrinkEvent>> {
        if t + 1 != self.state.next_t {
            return Err(Error::Protocol(format!(
                "shrink check for period {t} but the last recorded period is {}",
                self.state.next_t - 1
            )));
        }
        let mut events = Vec::new();
        for j in 0..self.sums.len() {
            if let Some(direction) = self.decide(j, t) {
                events.push(self.state.shrink(j, direction, t));
                self.snapshots[j] = self.sums[j];
            }
        }
        Ok(events)
    }
}

impl PricingPolicy for Lppq {
    fn name(&self) -> &'static str {
        "lppq"
    }

    fn eps(&self) -> f64 {
        self.config.eps
    }

    fn cube_count(&self) -> usize {
        self.state.partition.cube_count()
    }

    fn choose_price(&self, x: &[f64], t: u64) -> Result<f64> {
        self.state.price(x, t)
    }

    fn update(&mut self, x: &[f64], price: f64, demand: f64, t: u64) -> Result<Vec<ShrinkEvent>> {
        self.record(x, price, demand, t)?;
        self.maybe_shrink(t)
    }

    fn shrink_counts(&self) -> Vec<u32> {
        self.state.shrinks.clone()
    }

    fn grids(&self) -> Vec<PriceGrid> {
        self.state.grids.clone()
    }

    fn privatized_trace(&self) -> Option<&[Vec<f64>]> {
        self.trace.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::derive_stream;

    fn policy(j: usize, eps: f64, kappa1: f64, kappa2: f64) -> Lppq {
        let cfg = LppqConfig::custom(1000, eps, j, kappa1, kappa2).unwrap();
        Lppq::new(cfg, 2, (0.0, 1.0), 1.0, derive_stream(2, "noise")).unwrap()
    }

    #[test]
    fn presets() {
        let cfg = LppqConfig::theorem(62_500, 1.0, 2).unwrap();
        assert_eq!(cfg.j_request, 16);
        assert!((cfg.kappa1 - 1.7 * 125_000f64.ln().sqrt()).abs() < 1e-12);
        assert!((cfg.kappa2 - 31.0 * 62_500f64.ln()).abs() < 1e-9);
        let cfg = LppqConfig::experiment(500, 0.01, 2).unwrap();
        assert_eq!(cfg.j_request, 1);
        assert!((cfg.kappa1 - 0.001 * 500f64.ln().sqrt()).abs() < 1e-15);
        assert!((cfg.kappa2 - 0.1 * 500f64.ln()).abs() < 1e-12);
        assert!(LppqConfig::experiment(500, f64::INFINITY, 2).is_err());
        assert!(LppqConfig::custom(500, f64::INFINITY, 1, 0.0, 0.0).is_ok());
    }

    #[test]
    fn price_cycle() {
        let p = policy(4, 1.0, 1.0, 1.0);
        let x = [0.2, 0.2];
        assert_eq!(p.choose_price(&x, 1).unwrap(), 0.0);
        assert_eq!(p.choose_price(&x, 4).unwrap(), 0.75);
        assert_eq!(
            p.choose_price(&x, 3).unwrap(),
            p.choose_price(&x, 8).unwrap()
        );
    }

    #[test]
    fn noiseless_record_is_one_hot() {
        let p = policy(3, f64::INFINITY, 1.0, 1e9);
        assert_eq!(p.cube_count(), 4);
        let x = [0.1, 0.1];
        let price = p.choose_price(&x, 1).unwrap();
        assert_eq!(price, 0.0);
        let mut p = policy(1, f64::INFINITY, 1.0, 1e9);
        let mut total = 0.0;
        for t in 1..=20 {
            let price = p.choose_price(&x, t).unwrap();
            let demand = if price > 0.0 { 0.3 / price } else { 0.0 };
            let z = p.record(&x, price, demand, t).unwrap();
            assert_eq!(z.len(), 1);
            total += z[0];
            assert!(p.maybe_shrink(t).unwrap().is_empty());
        }
        // Phases 2..5 each got 0.3 four times; phase 1 (price 0) got nothing.
        assert!((p.running_sums()[0][1] - 1.2).abs() < 1e-12);
        assert_eq!(p.running_sums()[0][0], 0.0);
        assert!((total - 4.8).abs() < 1e-12);
    }

    #[test]
    fn one_hot_over_several_cubes() {
        let mut rec = LocalRecorder::new(3, f64::INFINITY, 1.0, derive_stream(0, "r")).unwrap();
        assert_eq!(rec.privatize(0, 0.3), vec![0.3, 0.0, 0.0]);
        assert_eq!(rec.draws(), 0);
    }

    #[test]
    fn pure_noise_has_laplace_scale() {
        let eps = 0.5;
        let mut rec = LocalRecorder::new(4, eps, 1.0, derive_stream(0, "r")).unwrap();
        assert_eq!(rec.noise().unwrap().scale(), 4.0);
        let n = 50_000;
        let mut sum_abs = 0.0;
        for _ in 0..n {
            sum_abs += rec.privatize(1, 0.0).iter().map(|v| v.abs()).sum::<f64>();
        }
        assert_eq!(rec.draws(), 4 * n);
        // E|Lap(b)| = b.
        let mean_abs = sum_abs / (4 * n) as f64;
        assert!((mean_abs - 4.0).abs() < 0.1, "{mean_abs}");
    }

    #[test]
    fn count_gate_blocks_shrinks() {
        let mut p = policy(1, 1.0, 0.0, 1e9);
        let x = [0.5, 0.5];
        for t in 1..=200 {
            let price = p.choose_price(&x, t).unwrap();
            assert!(p.update(&x, price, 0.5, t).unwrap().is_empty());
        }
    }

    #[test]
    fn noiseless_gaps_trigger_left_cut() {
        let mut p = policy(1, f64::INFINITY, 0.0, 5.0);
        let x = [0.5, 0.5];
        let means = [0.1, 0.2, 0.3, 0.25, 0.2];
        let mut first = None;
        for t in 1..=50 {
            let price = p.choose_price(&x, t).unwrap();
            let demand = if price > 0.0 {
                means[phase_index(t) - 1] / price
            } else {
                0.0
            };
            let ev = p.update(&x, price, demand, t).unwrap();
            if first.is_none() && !ev.is_empty() {
                first = Some(ev[0]);
            }
        }
        // Phase 1 is priced at 0, so its sum stays 0 < 0.2 and the left chain holds.
        let ev = first.expect("a cut fires");
        assert_eq!(ev.direction, CutDirection::Left);
        assert_eq!(ev.period, 5);
    }

    #[test]
    fn left_wins_when_both_hold() {
        let mut p = policy(1, f64::INFINITY, 0.0, 1.0);
        let z_by_phase = [0.0, 1.0, 2.0, 1.0, 0.0];
        for t in 1..=5u64 {
            p.absorb(&[z_by_phase[(t - 1) as usize]], t).unwrap();
        }
        let ev = p.maybe_shrink(5).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].direction, CutDirection::Left);
        assert_eq!(p.snapshots()[0], p.running_sums()[0]);
        assert_eq!(p.grids()[0].pointer(), 5);
    }

    #[test]
    fn absorb_checks_shape_and_period() {
        let mut p = policy(1, 1.0, 0.0, 1.0);
        assert!(p.absorb(&[0.0, 1.0], 1).is_err());
        assert!(matches!(p.absorb(&[0.0], 2), Err(Error::Protocol(_))));
        p.absorb(&[0.0], 1).unwrap();
        assert!(matches!(p.maybe_shrink(2), Err(Error::Protocol(_))));
    }

    #[test]
    fn trace_keeps_released_vectors() {
        let cfg = LppqConfig::custom(20, 1.0, 4, 0.0, 1e9).unwrap();
        let mut p = Lppq::new(cfg, 2, (0.0, 1.0), 1.0, derive_stream(2, "n"))
            .unwrap()
            .keep_trace();
        let x = [0.9, 0.1];
        let mut released = Vec::new();
        for t in 1..=10 {
            let price = p.choose_price(&x, t).unwrap();
            released.push(p.record(&x, price, 1.0, t).unwrap());
        }
        assert_eq!(p.privatized_trace().unwrap(), released.as_slice());
    }
}
