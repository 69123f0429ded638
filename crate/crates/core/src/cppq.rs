//! Centrally private parallel quadrisection (CPPQ).
//!
//! Contexts are bucketed into `J` congruent cubes; each cube runs its own
//! quadrisection search over a five-point price grid, cycling through the
//! phases with the global period. Per cube and phase, the revenue sum and the
//! customer count are released through tree-based aggregation, each counter
//! holding half of the privacy budget. Every cube's counter for the current
//! phase is fed every period (zero for cubes the customer is not in), so the
//! released statistics do not reveal which cube the customer belongs to.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::{phase_index, quadrisection_cut, HypercubePartition, PriceGrid, PHASES};
use crate::policy::{ceil_count, Preset, PricingPolicy, QuadrisectionState, ShrinkEvent};
use crate::prng::RngStream;
use crate::tree_agg::TreeAggregator;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CppqConfig {
    pub horizon: u64,
    /// Total privacy budget, split evenly between reward and count counters.
    pub eps: f64,
    pub j_request: usize,
    pub c1: f64,
    pub c1_prime: f64,
    pub c2: f64,
    pub preset: Preset,
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

/// `ceil(T^(d/(d+4)))`.
pub fn theorem_cube_count(horizon: u64, dim: usize) -> usize {
    ceil_count((horizon as f64).powf(dim as f64 / (dim as f64 + 4.0)))
}

impl CppqConfig {
    /// Schedule under which the regret bound is proved: `c1 = sqrt(ln 2T^3)`,
    /// `c2 = 76 ln^2(2T^3) / eps`, `c1' = 4 c2`.
    pub fn theorem(horizon: u64, eps: f64, dim: usize) -> Result<Self> {
        check_common(horizon, eps, dim)?;
        let log = (2.0 * (horizon as f64).powi(3)).ln();
        let c2 = 76.0 * log * log / eps;
        Ok(Self {
            horizon,
            eps,
            j_request: theorem_cube_count(horizon, dim),
            c1: log.sqrt(),
            c1_prime: 4.0 * c2,
            c2,
            preset: Preset::Theorem,
        })
    }

    /// Simulation constants `c1 = 0.001 sqrt(ln T)`, `c2 = ln^2 T / eps`,
    /// `c1' = 0.01 c2`, with the theorem's cube count.
    pub fn experiment(horizon: u64, eps: f64, dim: usize) -> Result<Self> {
        check_common(horizon, eps, dim)?;
        let log = (horizon as f64).ln();
        let c2 = log * log / eps;
        Ok(Self {
            horizon,
            eps,
            j_request: theorem_cube_count(horizon, dim),
            c1: 0.001 * log.sqrt(),
            c1_prime: 0.01 * c2,
            c2,
            preset: Preset::Experiment,
        })
    }

    pub fn custom(
        horizon: u64,
        eps: f64,
        j_request: usize,
        c1: f64,
        c1_prime: f64,
        c2: f64,
    ) -> Result<Self> {
        let cfg = Self {
            horizon,
            eps,
            j_request,
            c1,
            c1_prime,
            c2,
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
        for (name, v) in [("c1", self.c1), ("c1'", self.c1_prime), ("c2", self.c2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct CubeCounters {
    reward: Vec<TreeAggregator>,
    count: Vec<TreeAggregator>,
    /// Releases recorded at the last pointer reset.
    reward_snap: [f64; PHASES],
    count_snap: [f64; PHASES],
}

impl CubeCounters {
    fn refresh_snapshots(&mut self) {
        for k in 0..PHASES {
            self.reward_snap[k] = self.reward[k].snapshot();
            self.count_snap[k] = self.count[k].snapshot();
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cppq {
    config: CppqConfig,
    state: QuadrisectionState,
    counters: Vec<CubeCounters>,
    last_contributions: Vec<f64>,
    reward_updates: u64,
    count_updates: u64,
}

impl Cppq {
    /// Builds the policy for prices in `bounds` on `[0,1]^dim`.
    ///
    /// Reward counters use noise scaled by `revenue_scale` (1 for the
    /// normalized setting); count counters always have sensitivity 1.
    pub fn new(
        config: CppqConfig,
        dim: usize,
        bounds: (f64, f64),
        revenue_scale: f64,
        noise: &RngStream,
    ) -> Result<Self> {
        config.validate()?;
        let partition = HypercubePartition::build(dim, config.j_request)?;
        let state = QuadrisectionState::new(partition, config.horizon, bounds)?;
        let branch_eps = config.eps / 2.0;
        let counters = (0..state.partition.cube_count())
            .map(|j| -> Result<CubeCounters> {
                let make = |k: usize, what: &str, scale: f64| {
                    TreeAggregator::with_sensitivity(
                        branch_eps,
                        config.horizon,
                        scale,
                        noise.child(&format!("j/{j}/k/{}/{what}", k + 1)),
                    )
                };
                Ok(CubeCounters {
                    reward: (0..PHASES)
                        .map(|k| make(k, "reward", revenue_scale))
                        .collect::<Result<_>>()?,
                    count: (0..PHASES)
                        .map(|k| make(k, "count", 1.0))
                        .collect::<Result<_>>()?,
                    reward_snap: [0.0; PHASES],
                    count_snap: [0.0; PHASES],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let j = state.partition.cube_count();
        Ok(Self {
            config,
            state,
            counters,
            last_contributions: vec![0.0; j],
            reward_updates: 0,
            count_updates: 0,
        })
    }

    pub fn config(&self) -> &CppqConfig {
        &self.config
    }

    pub fn partition(&self) -> &HypercubePartition {
        &self.state.partition
    }

    /// Reward contributions `u_{t,j,k_t}` fed to each cube in the last period.
    pub fn last_contributions(&self) -> &[f64] {
        &self.last_contributions
    }

    /// Total reward and count counter updates performed so far.
    pub fn counter_updates(&self) -> (u64, u64) {
        (self.reward_updates, self.count_updates)
    }

    /// Epoch-differenced `(r_hat, mu_hat)` for cube `j`.
    pub fn epoch_statistics(&self, j: usize) -> ([f64; PHASES], [f64; PHASES]) {
        let c = &self.counters[j];
        let mut r = [0.0; PHASES];
        let mut mu = [0.0; PHASES];
        for k in 0..PHASES {
            r[k] = c.reward[k].snapshot() - c.reward_snap[k];
            mu[k] = c.count[k].snapshot() - c.count_snap[k];
        }
        (r, mu)
    }

    /// Evaluates both shrink conditions for cube `j` on its current statistics.
    fn decide(&self, j: usize) -> Option<crate::partition::CutDirection> {
        let (r, mu) = self.epoch_statistics(j);
        let cfg = &self.config;
        // Ratios are only meaningful on a side whose counts clear the gate;
        // noisy counts can be zero or negative.
        let gate = |range: std::ops::Range<usize>| -> Option<f64> {
            let floor = mu[range].iter().copied().fold(f64::INFINITY, f64::min);
            (floor >= cfg.c2 && floor > 0.0)
                .then(|| 3.0 * cfg.c1 / floor.sqrt() + 3.0 * cfg.c1_prime / floor)
        };
        let left = gate(0..3);
        let right = gate(2..5);
        if left.is_none() && right.is_none() {
            return None;
        }
        let mut est = [f64::NAN; PHASES];
        for k in 0..PHASES {
            if mu[k] > 0.0 {
                est[k] = r[k] / mu[k];
            }
        }
        quadrisection_cut(&est, left, right)
    }
}

impl PricingPolicy for Cppq {
    fn name(&self) -> &'static str {
        if self.config.eps.is_infinite() {
            "nonprivate"
        } else {
            "cppq"
        }
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
        let visited = self.state.check_feedback(x, price, t)?;
        let k = phase_index(t) - 1;
        let revenue = price * demand;
        for (j, c) in self.counters.iter_mut().enumerate() {
            let (u, v) = if j == visited {
                (revenue, 1.0)
            } else {
                (0.0, 0.0)
            };
            c.reward[k].update(u)?;
            c.count[k].update(v)?;
            self.last_contributions[j] = u;
        }
        self.reward_updates += self.counters.len() as u64;
        self.count_updates += self.counters.len() as u64;

        let mut events = Vec::new();
        for j in 0..self.counters.len() {
            if let Some(direction) = self.decide(j) {
                events.push(self.state.shrink(j, direction, t));
                self.counters[j].refresh_snapshots();
            }
        }
        self.state.next_t += 1;
        Ok(events)
    }

    fn shrink_counts(&self) -> Vec<u32> {
        self.state.shrinks.clone()
    }

    fn grids(&self) -> Vec<PriceGrid> {
        self.state.grids.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::derive_stream;

    fn quiet(j: usize, horizon: u64, c1: f64, c1p: f64, c2: f64) -> Cppq {
        let cfg = CppqConfig::custom(horizon, f64::INFINITY, j, c1, c1p, c2).unwrap();
        Cppq::new(cfg, 2, (0.5, 4.5), 1.0, &derive_stream(1, "noise")).unwrap()
    }

    #[test]
    fn presets() {
        let t = 62_500u64;
        let cfg = CppqConfig::theorem(t, 1.0, 2).unwrap();
        let log = (2.0 * (t as f64).powi(3)).ln();
        assert_eq!(cfg.j_request, 40);
        assert!((cfg.c1 - log.sqrt()).abs() < 1e-12);
        assert!((cfg.c2 - 76.0 * log * log).abs() < 1e-9);
        assert!((cfg.c1_prime - 4.0 * cfg.c2).abs() < 1e-9);

        let cfg = CppqConfig::experiment(500, 0.1, 2).unwrap();
        let log = 500f64.ln();
        assert!((cfg.c1 - 0.001 * log.sqrt()).abs() < 1e-15);
        assert!((cfg.c2 - log * log / 0.1).abs() < 1e-9);
        assert!((cfg.c1_prime - 0.01 * cfg.c2).abs() < 1e-12);
        assert_eq!(cfg.j_request, 8);

        let open = CppqConfig::experiment(500, f64::INFINITY, 2).unwrap();
        assert_eq!((open.c2, open.c1_prime), (0.0, 0.0));
        assert_eq!(theorem_cube_count(64, 2), 4);
        assert!(CppqConfig::experiment(500, 0.0, 2).is_err());
        assert!(CppqConfig::custom(500, 1.0, 0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn choose_price_examples() {
        let p = quiet(4, 100, 0.0, 0.0, 0.0);
        assert_eq!(p.choose_price(&[0.3, 0.7], 1).unwrap(), 0.5);
        assert_eq!(p.choose_price(&[0.3, 0.7], 3).unwrap(), 2.5);
        assert_eq!(p.choose_price(&[0.3, 0.7], 7).unwrap(), 1.5);
        assert!(matches!(
            p.choose_price(&[0.3, 0.7], 0),
            Err(Error::State(_))
        ));
        assert!(matches!(
            p.choose_price(&[0.3, 0.7], 101),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn protocol_is_enforced() {
        let mut p = quiet(4, 100, 0.0, 0.0, 0.0);
        assert!(matches!(
            p.update(&[0.3, 0.3], 0.5, 1.0, 2),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            p.update(&[0.3, 0.3], 1.5, 1.0, 1),
            Err(Error::Protocol(_))
        ));
        p.update(&[0.3, 0.3], 0.5, 1.0, 1).unwrap();
        assert!(matches!(
            p.update(&[0.3, 0.3], 0.5, 1.0, 1),
            Err(Error::Protocol(_))
        ));
    }

    /// Feeds revenue `means[k]` whenever phase `k` is offered in cube 0.
    fn drive(p: &mut Cppq, periods: u64, means: [f64; 5]) -> Vec<ShrinkEvent> {
        let x = [0.1, 0.1];
        let mut events = Vec::new();
        for t in 1..=periods {
            let price = p.choose_price(&x, t).unwrap();
            let demand = means[phase_index(t) - 1] / price;
            events.extend(p.update(&x, price, demand, t).unwrap());
        }
        events
    }

    #[test]
    fn constant_rewards_never_shrink() {
        let mut p = quiet(1, 500, 0.0, 0.0, 0.0);
        assert!(drive(&mut p, 500, [0.3; 5]).is_empty());
    }

    #[test]
    fn rising_rewards_trigger_left_cut() {
        let mut p = quiet(1, 500, 1e-9, 1e-9, 3.0);
        let events = drive(&mut p, 20, [0.1, 0.2, 0.3, 0.25, 0.2]);
        assert!(!events.is_empty());
        assert_eq!(events[0].direction, crate::partition::CutDirection::Left);
        // Gate: three observations of each of phases 1..3 arrive at t = 13.
        assert_eq!(events[0].period, 13);
        assert_eq!(p.grids()[0].epoch(), 1 + events.len() as u32);
    }

    #[test]
    fn count_gate_blocks_shrink() {
        let mut p = quiet(1, 500, 0.0, 0.0, 1e9);
        assert!(drive(&mut p, 500, [0.1, 0.2, 0.3, 0.25, 0.2]).is_empty());
    }

    #[test]
    fn every_cube_counter_is_fed_each_period() {
        let cfg = CppqConfig::experiment(200, 1.0, 2).unwrap();
        let mut p = Cppq::new(cfg, 2, (0.5, 4.5), 1.0, &derive_stream(3, "n")).unwrap();
        let j = p.cube_count() as u64;
        let mut ctx = derive_stream(3, "ctx");
        for t in 1..=200 {
            let x = [ctx.next_unit(), ctx.next_unit()];
            let price = p.choose_price(&x, t).unwrap();
            p.update(&x, price, 0.7, t).unwrap();
            assert_eq!(p.counter_updates(), (t * j, t * j));
            let nonzero: Vec<f64> = p
                .last_contributions()
                .iter()
                .copied()
                .filter(|u| *u != 0.0)
                .collect();
            assert_eq!(nonzero.len(), 1);
            assert!(nonzero[0].abs() <= 4.5);
        }
    }

    #[test]
    fn short_run_never_shrinks() {
        let cfg = CppqConfig::theorem(5, 1.0, 2).unwrap();
        let mut p = Cppq::new(cfg, 2, (0.5, 4.5), 1.0, &derive_stream(3, "n")).unwrap();
        let x = [0.5, 0.5];
        let mut offered = Vec::new();
        for t in 1..=5 {
            let price = p.choose_price(&x, t).unwrap();
            offered.push(price);
            assert!(p.update(&x, price, 0.5, t).unwrap().is_empty());
        }
        assert_eq!(offered, vec![0.5, 1.5, 2.5, 3.5, 4.5]);
    }
}
