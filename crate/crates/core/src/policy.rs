//! Common interface of the pricing policies driven by the simulation harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{CutDirection, HypercubePartition, PriceGrid};

/// One executed quadrisection step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShrinkEvent {
    pub cube: usize,
    pub direction: CutDirection,
    pub period: u64,
}

/// Origin of a policy's tuning constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Constants from the regret-bound schedules.
    Theorem,
    /// The small constants used for the simulation tables.
    #[default]
    Experiment,
    /// Fully user supplied.
    Custom,
}

/// How privacy noise is scaled when per-period revenue can exceed 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMode {
    /// Noise calibrated as if revenue were bounded by 1, whatever the environment.
    #[default]
    #[serde(rename = "paper-literal")]
    Literal,
    /// Revenue noise multiplied by the environment's declared revenue bound.
    SensitivityCorrect,
}

impl SensitivityMode {
    pub fn revenue_scale(&self, revenue_bound: f64) -> f64 {
        match self {
            SensitivityMode::Literal => 1.0,
            SensitivityMode::SensitivityCorrect => revenue_bound,
        }
    }
}

pub trait PricingPolicy: Send {
    fn name(&self) -> &'static str;

    /// Privacy budget; `f64::INFINITY` for a non-private run.
    fn eps(&self) -> f64;

    /// Number of cubes actually used (`J`).
    fn cube_count(&self) -> usize;

    /// Price for the customer at period `t` with context `x`. Does not mutate state.
    fn choose_price(&self, x: &[f64], t: u64) -> Result<f64>;

    /// Feeds back the outcome of period `t` and returns any grid shrinks it caused.
    fn update(&mut self, x: &[f64], price: f64, demand: f64, t: u64) -> Result<Vec<ShrinkEvent>>;

    /// Number of shrinks executed so far, per cube.
    fn shrink_counts(&self) -> Vec<u32>;

    fn grids(&self) -> Vec<PriceGrid>;

    /// Privatized per-period vectors, when the policy was asked to keep them.
    fn privatized_trace(&self) -> Option<&[Vec<f64>]> {
        None
    }
}

/// Cube grids plus the period bookkeeping shared by both quadrisection policies.
#[derive(Clone, Debug)]
pub(crate) struct QuadrisectionState {
    pub partition: HypercubePartition,
    pub horizon: u64,
    pub grids: Vec<PriceGrid>,
    pub shrinks: Vec<u32>,
    /// Next period expected by `update`.
    pub next_t: u64,
}

impl QuadrisectionState {
    pub fn new(partition: HypercubePartition, horizon: u64, bounds: (f64, f64)) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        let grid = PriceGrid::new(bounds.0, bounds.1)?;
        let j = partition.cube_count();
        Ok(Self {
            partition,
            horizon,
            grids: vec![grid; j],
            shrinks: vec![0; j],
            next_t: 1,
        })
    }

    /// Price for `x` at `t`: the current phase's grid point of `x`'s cube.
    pub fn price(&self, x: &[f64], t: u64) -> Result<f64> {
        if t == 0 || t > self.horizon {
            return Err(Error::State(format!(
                "period {t} outside the horizon 1..={}",
                self.horizon
            )));
        }
        let j = self.partition.cube_index(x)?;
        Ok(self.grids[j].price(crate::partition::phase_index(t)))
    }

    /// Checks that `(t, price)` is the next period and the price this state offered.
    pub fn check_feedback(&self, x: &[f64], price: f64, t: u64) -> Result<usize> {
        if t != self.next_t {
            return Err(Error::Protocol(format!(
                "feedback for period {t} but period {} was expected",
                self.next_t
            )));
        }
        let offered = self.price(x, t)?;
        if offered != price {
            return Err(Error::Protocol(format!(
                "price {price} at period {t} differs from the offered price {offered}"
            )));
        }
        self.partition.cube_index(x)
    }

    pub fn shrink(
        &mut self,
        j: usize,
        direction: crate::partition::CutDirection,
        t: u64,
    ) -> ShrinkEvent {
        self.grids[j] = self.grids[j].shrink(direction, t);
        self.shrinks[j] += 1;
        ShrinkEvent {
            cube: j,
            direction,
            period: t,
        }
    }
}

/// `ceil(v)` that ignores floating-point excess below `1e-9`.
pub(crate) fn ceil_count(v: f64) -> usize {
    (v - 1e-9).ceil().max(1.0) as usize
}
