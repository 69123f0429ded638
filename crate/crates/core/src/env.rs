//! Synthetic demand environments and their clairvoyant optimal prices.
//!
//! An environment specifies the mean demand `lambda(p, x)`, the expected
//! revenue `f(p, x) = p * lambda(p, x)`, how realized demand is drawn, and the
//! per-context optimal price `p*(x)` over the admissible price interval.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::{check_context, HypercubePartition};
use crate::prng::{uniform_sample, RngStream};

pub trait DemandEnvironment: Send + Sync {
    /// Short identifier used in output files.
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Admissible price interval `(p_lo, p_hi)`.
    fn price_bounds(&self) -> (f64, f64);

    /// Declared upper bound on per-period revenue `p * y`.
    fn revenue_bound(&self) -> f64;

    /// Draws a context from the environment's context law (uniform on the cube).
    fn sample_context(&self, stream: &mut RngStream) -> Vec<f64> {
        (0..self.dim()).map(|_| stream.next_unit()).collect()
    }

    fn mean_demand(&self, p: f64, x: &[f64]) -> Result<f64>;

    fn mean_revenue(&self, p: f64, x: &[f64]) -> Result<f64> {
        Ok(p * self.mean_demand(p, x)?)
    }

    fn oracle_price(&self, x: &[f64]) -> Result<f64>;

    fn realize_demand(&self, p: f64, x: &[f64], stream: &mut RngStream) -> Result<f64>;
}

fn check_price(p: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo <= p && p <= hi) {
        return Err(Error::Input(format!("price {p} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Linear demand `theta_0 + theta_1 x_1 + theta_2 x_2 + theta_3 p` plus uniform noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearDemandEnv {
    theta: [f64; 4],
    noise_half_width: f64,
    p_lo: f64,
    p_hi: f64,
}

impl LinearDemandEnv {
    pub const DIM: usize = 2;

    pub fn new(theta: [f64; 4], noise_half_width: f64, p_lo: f64, p_hi: f64) -> Result<Self> {
        if !(p_lo < p_hi) {
            return Err(Error::Parameter(format!(
                "price bounds [{p_lo}, {p_hi}] are empty"
            )));
        }
        if !(noise_half_width >= 0.0) || !noise_half_width.is_finite() {
            return Err(Error::Parameter(format!(
                "noise half-width must be finite and non-negative, got {noise_half_width}"
            )));
        }
        if !(theta[3] < 0.0) {
            return Err(Error::Model(format!(
                "price coefficient must be negative for downward-sloping demand, got {}",
                theta[3]
            )));
        }
        let env = Self {
            theta,
            noise_half_width,
            p_lo,
            p_hi,
        };
        for corner in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
            let p = env.unconstrained_maximizer(&corner);
            if !(p_lo < p && p < p_hi) {
                return Err(Error::Model(format!(
                    "revenue maximizer {p} at corner {corner:?} is not interior to [{p_lo}, {p_hi}]"
                )));
            }
        }
        Ok(env)
    }

    /// Coefficients `(0.4, 0.6, 0.6, -0.2)`, noise `U[-0.1, 0.1]`, prices `[0.5, 4.5]`.
    pub fn standard() -> Self {
        Self::new([0.4, 0.6, 0.6, -0.2], 0.1, 0.5, 4.5).expect("standard parameters are valid")
    }

    pub fn theta(&self) -> [f64; 4] {
        self.theta
    }

    pub fn noise_half_width(&self) -> f64 {
        self.noise_half_width
    }

    fn intercept(&self, x: &[f64]) -> f64 {
        self.theta[0] + self.theta[1] * x[0] + self.theta[2] * x[1]
    }

    fn unconstrained_maximizer(&self, x: &[f64]) -> f64 {
        -self.intercept(x) / (2.0 * self.theta[3])
    }

    /// Realized demand for an explicit noise shock.
    pub fn demand_with_shock(&self, p: f64, x: &[f64], shock: f64) -> Result<f64> {
        Ok(self.mean_demand(p, x)? + shock)
    }
}

impl DemandEnvironment for LinearDemandEnv {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn dim(&self) -> usize {
        Self::DIM
    }

    fn price_bounds(&self) -> (f64, f64) {
        (self.p_lo, self.p_hi)
    }

    /// `p_hi` times the largest attainable demand.
    fn revenue_bound(&self) -> f64 {
        let [t0, t1, t2, t3] = self.theta;
        let max_demand = t0 + t1.max(0.0) + t2.max(0.0) + t3 * self.p_lo + self.noise_half_width;
        self.p_hi * max_demand
    }

    fn mean_demand(&self, p: f64, x: &[f64]) -> Result<f64> {
        check_context(x, Self::DIM)?;
        check_price(p, self.price_bounds())?;
        Ok(self.intercept(x) + self.theta[3] * p)
    }

    fn oracle_price(&self, x: &[f64]) -> Result<f64> {
        check_context(x, Self::DIM)?;
        Ok(self.unconstrained_maximizer(x).clamp(self.p_lo, self.p_hi))
    }

    fn realize_demand(&self, p: f64, x: &[f64], stream: &mut RngStream) -> Result<f64> {
        let shock = if self.noise_half_width > 0.0 {
            uniform_sample(stream, -self.noise_half_width, self.noise_half_width)?
        } else {
            0.0
        };
        self.demand_with_shock(p, x, shock)
    }
}

/// Euclidean distance from `x` to the boundary of the cube containing it.
///
/// For an axis-aligned box this is the smallest distance to any face.
pub fn boundary_distance(partition: &HypercubePartition, x: &[f64]) -> Result<f64> {
    let j = partition.cube_index(x)?;
    Ok(partition
        .cube_bounds(j)
        .into_iter()
        .zip(x)
        .map(|((lo, hi), &c)| (c - lo).min(hi - c).max(0.0))
        .fold(f64::INFINITY, f64::min))
}

/// Bernoulli-demand instance family indexed by a bit per cube.
///
/// Mean demand is `2/3 - p/2 + nu_j (1/3 - p/2) dist(x, boundary of B_j)` for
/// the cube `B_j` containing `x`, on prices `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialEnv {
    partition: HypercubePartition,
    nu: Vec<bool>,
}

impl AdversarialEnv {
    pub fn new(partition: HypercubePartition, nu: Vec<bool>) -> Result<Self> {
        if nu.len() != partition.cube_count() {
            return Err(Error::Parameter(format!(
                "instance bit vector has {} entries for {} cubes",
                nu.len(),
                partition.cube_count()
            )));
        }
        Ok(Self { partition, nu })
    }

    pub fn partition(&self) -> &HypercubePartition {
        &self.partition
    }

    pub fn nu(&self) -> &[bool] {
        &self.nu
    }

    fn bump(&self, x: &[f64]) -> Result<(bool, f64)> {
        let j = self.partition.cube_index(x)?;
        Ok((self.nu[j], boundary_distance(&self.partition, x)?))
    }

    pub fn lambda_nu(&self, p: f64, x: &[f64]) -> Result<f64> {
        check_price(p, self.price_bounds())?;
        let (bit, dist) = self.bump(x)?;
        let base = 2.0 / 3.0 - p / 2.0;
        Ok(if bit {
            base + (1.0 / 3.0 - p / 2.0) * dist
        } else {
            base
        })
    }
}

impl DemandEnvironment for AdversarialEnv {
    fn name(&self) -> &'static str {
        "adversarial"
    }

    fn dim(&self) -> usize {
        self.partition.dim()
    }

    fn price_bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn revenue_bound(&self) -> f64 {
        1.0
    }

    fn mean_demand(&self, p: f64, x: &[f64]) -> Result<f64> {
        self.lambda_nu(p, x)
    }

    fn oracle_price(&self, x: &[f64]) -> Result<f64> {
        let (bit, dist) = self.bump(x)?;
        Ok(if bit {
            2.0 / 3.0 - dist / (3.0 * (1.0 + dist))
        } else {
            2.0 / 3.0
        })
    }

    fn realize_demand(&self, p: f64, x: &[f64], stream: &mut RngStream) -> Result<f64> {
        let lambda = self.lambda_nu(p, x)?;
        Ok(if stream.next_unit() < lambda {
            1.0
        } else {
            0.0
        })
    }
}

/// Outcome of one assumption check together with the measured constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Smallest and largest measured `-f_B''(p)` over cubes and grid prices.
    pub min_neg_curvature: f64,
    pub max_neg_curvature: f64,
    pub lipschitz_estimate: f64,
    pub concavity: AssumptionCheck,
    pub interior_optimum: AssumptionCheck,
    pub lipschitz: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.concavity.passed && self.interior_optimum.passed && self.lipschitz.passed
    }
}

/// Numerically checks strong concavity of the cube-averaged revenue, an interior
/// cube optimum and Lipschitz continuity of `f`.
///
/// Cube averages use a deterministic midpoint sub-grid of `samples_per_axis^d`
/// contexts per cube; curvature uses central second differences on
/// `grid_resolution` equally spaced prices.
pub fn check_assumptions(
    env: &dyn DemandEnvironment,
    partition: &HypercubePartition,
    grid_resolution: usize,
    samples_per_axis: usize,
) -> Result<AssumptionReport> {
    if grid_resolution < 3 || samples_per_axis == 0 {
        return Err(Error::Parameter(
            "need at least 3 grid prices and 1 sample per axis".into(),
        ));
    }
    if partition.dim() != env.dim() {
        return Err(Error::Config(format!(
            "partition dimension {} does not match environment dimension {}",
            partition.dim(),
            env.dim()
        )));
    }
    let (p_lo, p_hi) = env.price_bounds();
    let step = (p_hi - p_lo) / (grid_resolution - 1) as f64;
    let prices: Vec<f64> = (0..grid_resolution)
        .map(|i| {
            if i + 1 == grid_resolution {
                p_hi
            } else {
                p_lo + step * i as f64
            }
        })
        .collect();

    let mut min_curv = f64::INFINITY;
    let mut max_curv = f64::NEG_INFINITY;
    let mut lipschitz: f64 = 0.0;
    let mut boundary_cubes = Vec::new();

    for j in 0..partition.cube_count() {
        let contexts = subgrid(partition, j, samples_per_axis);
        let mut f_cube = vec![0.0; prices.len()];
        for x in &contexts {
            let mut prev: Option<f64> = None;
            for (slot, &p) in f_cube.iter_mut().zip(&prices) {
                let f = env.mean_revenue(p, x)?;
                *slot += f / contexts.len() as f64;
                if let Some(prev) = prev {
                    lipschitz = lipschitz.max((f - prev).abs() / step);
                }
                prev = Some(f);
            }
        }
        for w in f_cube.windows(3) {
            let neg_curv = -(w[2] - 2.0 * w[1] + w[0]) / (step * step);
            min_curv = min_curv.min(neg_curv);
            max_curv = max_curv.max(neg_curv);
        }
        let argmax = f_cube
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax == 0 || argmax + 1 == prices.len() {
            boundary_cubes.push(j);
        }
        for pair in contexts.windows(2) {
            let dx = pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dx > 0.0 {
                for &p in prices.iter().step_by((prices.len() / 8).max(1)) {
                    let df = env.mean_revenue(p, &pair[0])? - env.mean_revenue(p, &pair[1])?;
                    lipschitz = lipschitz.max(df.abs() / dx);
                }
            }
        }
    }

    let tol = 1e-9;
    Ok(AssumptionReport {
        min_neg_curvature: min_curv,
        max_neg_curvature: max_curv,
        lipschitz_estimate: lipschitz,
        concavity: AssumptionCheck {
            passed: min_curv > tol,
            detail: format!("-f_B'' ranges over [{min_curv:.6}, {max_curv:.6}]"),
        },
        interior_optimum: AssumptionCheck {
            passed: boundary_cubes.is_empty(),
            detail: if boundary_cubes.is_empty() {
                "every cube optimum is interior".to_string()
            } else {
                format!("cube optima on the price boundary in cubes {boundary_cubes:?}")
            },
        },
        lipschitz: AssumptionCheck {
            passed: lipschitz.is_finite(),
            detail: format!("estimated Lipschitz constant {lipschitz:.6}"),
        },
    })
}

/// Midpoints of an `s^d` sub-grid of cube `j`.
fn subgrid(partition: &HypercubePartition, j: usize, s: usize) -> Vec<Vec<f64>> {
    let bounds = partition.cube_bounds(j);
    let d = bounds.len();
    let total = s.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for (axis, (lo, hi)) in bounds.iter().enumerate().rev() {
                let cell = idx % s;
                idx /= s;
                x[axis] = lo + (hi - lo) * (cell as f64 + 0.5) / s as f64;
            }
            x
        })
        .collect()
}
