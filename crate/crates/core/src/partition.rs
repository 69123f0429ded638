//! Context-space partition and the five-point quadrisection price grid.

use crate::error::{Error, Result};

/// Number of grid prices explored per cube (two endpoints and three quartiles).
pub const PHASES: usize = 5;

/// Equal partition of `[0,1]^d` into `m^d` congruent cubes.
///
/// Cube `j` is the box whose per-axis cell indices are the base-`m` digits of
/// `j`, most significant digit first (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct HypercubePartition {
    dim: usize,
    per_axis: usize,
    cube_count: usize,
    side: f64,
}

impl HypercubePartition {
    /// Smallest congruent partition with at least `j_request` cubes.
    pub fn build(dim: usize, j_request: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        if j_request == 0 {
            return Err(Error::Parameter("cube count must be at least 1".into()));
        }
        let exp = u32::try_from(dim)
            .map_err(|_| Error::Parameter(format!("dimension {dim} too large")))?;
        let mut per_axis = ((j_request as f64).powf(1.0 / dim as f64).round() as usize).max(1);
        // Float roots are only approximate; settle on the exact integer ceiling.
        while per_axis > 1 && pow_checked(per_axis - 1, exp).is_some_and(|v| v >= j_request) {
            per_axis -= 1;
        }
        while pow_checked(per_axis, exp).is_some_and(|v| v < j_request) {
            per_axis += 1;
        }
        let cube_count = pow_checked(per_axis, exp).ok_or_else(|| {
            Error::Parameter(format!("{per_axis}^{dim} cubes overflows the index type"))
        })?;
        Ok(Self {
            dim,
            per_axis,
            cube_count,
            side: 1.0 / per_axis as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis (`m`).
    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    /// Total number of cubes (`J = m^d`).
    pub fn cube_count(&self) -> usize {
        self.cube_count
    }

    /// Side length `h = 1/m`.
    pub fn side(&self) -> f64 {
        self.side
    }

    /// Volume `h^d = 1/J` of one cube.
    pub fn cube_volume(&self) -> f64 {
        1.0 / self.cube_count as f64
    }

    fn edge(&self, c: usize) -> f64 {
        c as f64 / self.per_axis as f64
    }

    /// Cell of `coord` along one axis, consistent with [`Self::cube_bounds`] under rounding.
    fn axis_cell(&self, coord: f64) -> usize {
        let last = self.per_axis - 1;
        let mut c = ((coord * self.per_axis as f64).floor() as usize).min(last);
        if c > 0 && coord < self.edge(c) {
            c -= 1;
        } else if c < last && coord >= self.edge(c + 1) {
            c += 1;
        }
        c
    }

    /// Index of the cube containing `x`; the top face `x_i = 1` belongs to the last cell.
    pub fn cube_index(&self, x: &[f64]) -> Result<usize> {
        check_context(x, self.dim)?;
        Ok(x.iter()
            .fold(0usize, |j, &c| j * self.per_axis + self.axis_cell(c)))
    }

    /// Per-axis cell indices of cube `j`, most significant axis first.
    pub fn digits(&self, mut j: usize) -> Vec<usize> {
        let mut digits = vec![0; self.dim];
        for slot in digits.iter_mut().rev() {
            *slot = j % self.per_axis;
            j /= self.per_axis;
        }
        digits
    }

    /// Axis-aligned bounds `[lo_i, hi_i]` of cube `j`.
    pub fn cube_bounds(&self, j: usize) -> Vec<(f64, f64)> {
        self.digits(j)
            .into_iter()
            .map(|c| (self.edge(c), self.edge(c + 1)))
            .collect()
    }
}

fn pow_checked(base: usize, exp: u32) -> Option<usize> {
    base.checked_pow(exp)
}

/// Validates that `x` is a `dim`-vector in `[0,1]^dim`.
pub fn check_context(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Input(format!(
            "context has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    if let Some(c) = x.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Input(format!(
            "context coordinate {c} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Which quarter of the price interval a shrink discards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutDirection {
    /// Keep `[rho_2, rho_5]`.
    Left,
    /// Keep `[rho_1, rho_4]`.
    Right,
}

/// Five ascending, equally spaced prices over the active interval of one cube.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceGrid {
    rho: [f64; PHASES],
    epoch: u32,
    pointer: u64,
}

impl PriceGrid {
    pub fn new(p_lo: f64, p_hi: f64) -> Result<Self> {
        if !(p_lo < p_hi) || !p_lo.is_finite() || !p_hi.is_finite() {
            return Err(Error::Parameter(format!(
                "price interval requires lo < hi, got [{p_lo}, {p_hi}]"
            )));
        }
        Ok(Self {
            rho: quartiles(p_lo, p_hi),
            epoch: 1,
            pointer: 0,
        })
    }

    pub fn prices(&self) -> &[f64; PHASES] {
        &self.rho
    }

    /// Price for a 1-based phase `k` in `1..=5`.
    pub fn price(&self, phase: usize) -> f64 {
        self.rho[phase - 1]
    }

    pub fn lower(&self) -> f64 {
        self.rho[0]
    }

    pub fn upper(&self) -> f64 {
        self.rho[PHASES - 1]
    }

    pub fn width(&self) -> f64 {
        self.upper() - self.lower()
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower() <= p && p <= self.upper()
    }

    /// 1 for the initial grid, incremented by every shrink.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    /// Period of the most recent reset (0 before any shrink).
    pub fn pointer(&self) -> u64 {
        self.pointer
    }

    /// Returns the grid after discarding one quarter of the interval at period `now`.
    pub fn shrink(&self, direction: CutDirection, now: u64) -> PriceGrid {
        let (lo, hi) = match direction {
            CutDirection::Left => (self.rho[1], self.rho[4]),
            CutDirection::Right => (self.rho[0], self.rho[3]),
        };
        PriceGrid {
            rho: quartiles(lo, hi),
            epoch: self.epoch + 1,
            pointer: now,
        }
    }
}

fn quartiles(lo: f64, hi: f64) -> [f64; PHASES] {
    let w = hi - lo;
    [lo, lo + 0.25 * w, lo + 0.5 * w, lo + 0.75 * w, hi]
}

/// 1-based position in the five-period price cycle: 1, 2, 3, 4, 5, 1, ...
pub fn phase_index(t: u64) -> usize {
    debug_assert!(t >= 1, "periods are 1-based");
    ((t.saturating_sub(1)) % PHASES as u64) as usize + 1
}

/// Quadrisection decision shared by both private policies.
///
/// `estimates` are per-phase revenue estimates on the current grid. A side whose
/// threshold is `None` is gated off. The left cut requires
/// `min(e3 - e2, e2 - e1) > left`, the right cut `min(e3 - e4, e4 - e5) > right`;
/// when both hold the left cut is taken.
pub fn quadrisection_cut(
    estimates: &[f64; PHASES],
    left_threshold: Option<f64>,
    right_threshold: Option<f64>,
) -> Option<CutDirection> {
    let [e1, e2, e3, e4, e5] = *estimates;
    if let Some(thr) = left_threshold {
        if (e3 - e2).min(e2 - e1) > thr {
            return Some(CutDirection::Left);
        }
    }
    if let Some(thr) = right_threshold {
        if (e3 - e4).min(e4 - e5) > thr {
            return Some(CutDirection::Right);
        }
    }
    None
}
