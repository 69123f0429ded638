//! Episode driver, regret accounting and replication over seeds.
//!
//! Regret is accumulated on expected revenue: each period adds
//! `f(p*(x_t), x_t) - f(p_t, x_t)` for the context actually drawn, so the
//! realized demand only matters through what the policy learns from it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cppq::{Cppq, CppqConfig};
use crate::env::DemandEnvironment;
use crate::error::{Error, Result};
use crate::lppq::{Lppq, LppqConfig};
use crate::policy::{Preset, PricingPolicy, SensitivityMode};
use crate::prng::{derive_stream, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub policy: String,
    pub env: String,
    pub horizon: u64,
    pub eps: f64,
    pub cubes: usize,
    pub rep: usize,
    pub seed: u64,
    pub cumulative_regret: f64,
    /// `sum_t f(p*(x_t), x_t)`.
    pub oracle_revenue: f64,
    /// `sum_t f(p_t, x_t)`.
    pub realized_expected_revenue: f64,
    pub shrinks: Vec<u32>,
}

impl RunRecord {
    pub fn shrinks_total(&self) -> u64 {
        self.shrinks.iter().map(|&s| u64::from(s)).sum()
    }
}

/// Regret as a percentage of the clairvoyant revenue.
pub fn percentage_regret(rec: &RunRecord) -> Result<f64> {
    if !(rec.oracle_revenue > 0.0) {
        return Err(Error::Arithmetic(format!(
            "percentage regret undefined for oracle revenue {}",
            rec.oracle_revenue
        )));
    }
    Ok(100.0 * rec.cumulative_regret / rec.oracle_revenue)
}

/// What happened in one period, for observers of an episode.
#[derive(Clone, Debug)]
pub struct Step<'a> {
    pub t: u64,
    pub context: &'a [f64],
    pub price: f64,
    pub demand: f64,
    pub oracle_price: f64,
    pub regret: f64,
}

pub fn run_episode(
    policy: &mut dyn PricingPolicy,
    env: &dyn DemandEnvironment,
    horizon: u64,
    base: &RngStream,
) -> Result<RunRecord> {
    run_episode_with(policy, env, horizon, base, |_| {})
}

/// Runs `horizon` periods, calling `observe` after each one.
///
/// Contexts come from `base/context` and demand noise from `base/demand`; the
/// policy brings its own noise stream.
pub fn run_episode_with(
    policy: &mut dyn PricingPolicy,
    env: &dyn DemandEnvironment,
    horizon: u64,
    base: &RngStream,
    mut observe: impl FnMut(&Step<'_>),
) -> Result<RunRecord> {
    let mut contexts = base.child("context");
    let mut demand_noise = base.child("demand");
    let mut regret = 0.0;
    let mut oracle_revenue = 0.0;
    let mut realized = 0.0;
    for t in 1..=horizon {
        let x = env.sample_context(&mut contexts);
        let price = policy.choose_price(&x, t)?;
        let demand = env.realize_demand(price, &x, &mut demand_noise)?;
        policy.update(&x, price, demand, t)?;

        let p_star = env.oracle_price(&x)?;
        let best = env.mean_revenue(p_star, &x)?;
        let got = env.mean_revenue(price, &x)?;
        regret += best - got;
        oracle_revenue += best;
        realized += got;
        observe(&Step {
            t,
            context: &x,
            price,
            demand,
            oracle_price: p_star,
            regret: best - got,
        });
    }
    Ok(RunRecord {
        policy: policy.name().to_string(),
        env: env.name().to_string(),
        horizon,
        eps: policy.eps(),
        cubes: policy.cube_count(),
        rep: 0,
        seed: base.root_seed(),
        cumulative_regret: regret,
        oracle_revenue,
        realized_expected_revenue: realized,
        shrinks: policy.shrink_counts(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Cppq,
    Lppq,
    /// CPPQ with noise disabled.
    Nonprivate,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Cppq => "cppq",
            PolicyKind::Lppq => "lppq",
            PolicyKind::Nonprivate => "nonprivate",
        }
    }
}

/// Optional replacements for preset constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(rename = "J")]
    pub cubes: Option<usize>,
    pub c1: Option<f64>,
    pub c1_prime: Option<f64>,
    pub c2: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
}

/// Everything needed to instantiate a policy for one `(eps, T)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub preset: Preset,
    pub overrides: Overrides,
    pub sensitivity: SensitivityMode,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            preset: Preset::Experiment,
            overrides: Overrides::default(),
            sensitivity: SensitivityMode::Literal,
        }
    }

    /// Budget actually used: the non-private baseline ignores `eps`.
    pub fn effective_eps(&self, eps: f64) -> f64 {
        match self.kind {
            PolicyKind::Nonprivate => f64::INFINITY,
            _ => eps,
        }
    }

    pub fn cppq_config(&self, horizon: u64, eps: f64, dim: usize) -> Result<CppqConfig> {
        let eps = self.effective_eps(eps);
        let o = &self.overrides;
        let mut cfg = match self.preset {
            Preset::Theorem => CppqConfig::theorem(horizon, eps, dim)?,
            Preset::Experiment => CppqConfig::experiment(horizon, eps, dim)?,
            Preset::Custom => {
                let missing =
                    |name: &str| Error::Config(format!("custom preset requires `{name}`"));
                CppqConfig::custom(
                    horizon,
                    eps,
                    o.cubes.ok_or_else(|| missing("J"))?,
                    o.c1.ok_or_else(|| missing("c1"))?,
                    o.c1_prime.ok_or_else(|| missing("c1_prime"))?,
                    o.c2.ok_or_else(|| missing("c2"))?,
                )?
            }
        };
        cfg.j_request = o.cubes.unwrap_or(cfg.j_request);
        cfg.c1 = o.c1.unwrap_or(cfg.c1);
        cfg.c1_prime = o.c1_prime.unwrap_or(cfg.c1_prime);
        cfg.c2 = o.c2.unwrap_or(cfg.c2);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lppq_config(&self, horizon: u64, eps: f64, dim: usize) -> Result<LppqConfig> {
        let o = &self.overrides;
        let mut cfg = match (self.preset, o.cubes) {
            (Preset::Custom, _) => {
                let missing =
                    |name: &str| Error::Config(format!("custom preset requires `{name}`"));
                LppqConfig::custom(
                    horizon,
                    eps,
                    o.cubes.ok_or_else(|| missing("J"))?,
                    o.kappa1.ok_or_else(|| missing("kappa1"))?,
                    o.kappa2.ok_or_else(|| missing("kappa2"))?,
                )?
            }
            // An explicit J makes the preset usable without a finite budget.
            (preset, Some(j)) if eps.is_infinite() => {
                let finite = match preset {
                    Preset::Theorem => LppqConfig::theorem(horizon, 1.0, dim)?,
                    _ => LppqConfig::experiment(horizon, 1.0, dim)?,
                };
                LppqConfig {
                    eps,
                    j_request: j,
                    ..finite
                }
            }
            (Preset::Theorem, _) => LppqConfig::theorem(horizon, eps, dim)?,
            (Preset::Experiment, _) => LppqConfig::experiment(horizon, eps, dim)?,
        };
        cfg.j_request = o.cubes.unwrap_or(cfg.j_request);
        cfg.kappa1 = o.kappa1.unwrap_or(cfg.kappa1);
        cfg.kappa2 = o.kappa2.unwrap_or(cfg.kappa2);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Instantiates the policy for one episode whose base stream is `base`.
    pub fn build(
        &self,
        horizon: u64,
        eps: f64,
        env: &dyn DemandEnvironment,
        base: &RngStream,
    ) -> Result<Box<dyn PricingPolicy>> {
        self.build_traced(horizon, eps, env, base, false)
    }

    /// As [`PolicySpec::build`]; with `keep_trace` an LPPQ policy retains its privatized vectors.
    pub fn build_traced(
        &self,
        horizon: u64,
        eps: f64,
        env: &dyn DemandEnvironment,
        base: &RngStream,
        keep_trace: bool,
    ) -> Result<Box<dyn PricingPolicy>> {
        let dim = env.dim();
        let bounds = env.price_bounds();
        let scale = self.sensitivity.revenue_scale(env.revenue_bound());
        let noise = base.child(&format!("{}/noise", self.kind.as_str()));
        Ok(match self.kind {
            PolicyKind::Cppq | PolicyKind::Nonprivate => Box::new(Cppq::new(
                self.cppq_config(horizon, eps, dim)?,
                dim,
                bounds,
                scale,
                &noise,
            )?),
            PolicyKind::Lppq => {
                let policy = Lppq::new(
                    self.lppq_config(horizon, eps, dim)?,
                    dim,
                    bounds,
                    scale,
                    noise,
                )?;
                Box::new(if keep_trace {
                    policy.keep_trace()
                } else {
                    policy
                })
            }
        })
    }
}

/// Base stream of replication `rep`.
pub fn rep_stream(root_seed: u64, rep: usize) -> RngStream {
    derive_stream(root_seed, format!("rep/{rep}"))
}

/// Mean and standard error over the replications of one `(policy, eps, T)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateResult {
    pub policy: String,
    pub eps: f64,
    pub horizon: u64,
    pub reps: usize,
    pub cubes: usize,
    pub mean_regret: f64,
    /// `None` for a single replication.
    pub stderr_regret: Option<f64>,
    pub mean_pct_regret: f64,
    pub stderr_pct_regret: Option<f64>,
    pub mean_oracle_revenue: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

impl AggregateResult {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Parameter("cannot aggregate zero records".into()))?;
        let regrets: Vec<f64> = records.iter().map(|r| r.cumulative_regret).collect();
        let pcts = records
            .iter()
            .map(percentage_regret)
            .collect::<Result<Vec<_>>>()?;
        let (mean_regret, stderr_regret) = mean_stderr(&regrets);
        let (mean_pct_regret, stderr_pct_regret) = mean_stderr(&pcts);
        Ok(Self {
            policy: first.policy.clone(),
            eps: first.eps,
            horizon: first.horizon,
            reps: records.len(),
            cubes: first.cubes,
            mean_regret,
            stderr_regret,
            mean_pct_regret,
            stderr_pct_regret,
            mean_oracle_revenue: records.iter().map(|r| r.oracle_revenue).sum::<f64>()
                / records.len() as f64,
        })
    }
}

/// One `(policy, eps, T)` combination of an experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub spec: PolicySpec,
    pub eps: f64,
    pub horizon: u64,
}

/// Runs `reps` replications of every cell on up to `jobs` workers (0 = all cores).
///
/// Records come back grouped by cell in input order, then by replication
/// index, independent of the worker count.
pub fn run_grid(
    cells: &[Cell],
    env: &dyn DemandEnvironment,
    reps: usize,
    root_seed: u64,
    jobs: usize,
) -> Result<Vec<Vec<RunRecord>>> {
    if reps == 0 {
        return Err(Error::Parameter("need at least one replication".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let run = |&(c, rep): &(usize, usize)| -> Result<RunRecord> {
        let cell = &cells[c];
        let base = rep_stream(root_seed, rep);
        let mut policy = cell.spec.build(cell.horizon, cell.eps, env, &base)?;
        let mut rec = run_episode(policy.as_mut(), env, cell.horizon, &base)?;
        rec.rep = rep;
        rec.seed = root_seed;
        Ok(rec)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let flat: Vec<RunRecord> =
        pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let mut grouped = Vec::with_capacity(cells.len());
    let mut it = flat.into_iter();
    for _ in cells {
        grouped.push(it.by_ref().take(reps).collect());
    }
    Ok(grouped)
}

/// Replicates a single cell and aggregates it.
pub fn replicate(
    cell: &Cell,
    env: &dyn DemandEnvironment,
    reps: usize,
    root_seed: u64,
    jobs: usize,
) -> Result<(Vec<RunRecord>, AggregateResult)> {
    let records = run_grid(std::slice::from_ref(cell), env, reps, root_seed, jobs)?
        .pop()
        .unwrap_or_default();
    let agg = AggregateResult::from_records(&records)?;
    Ok((records, agg))
}

/// Least-squares slope of `ln(regret / ln T)` against `ln T`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Input("slope fit needs at least two points".into()));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(t, regret) in points {
        if !(t > 1.0) {
            return Err(Error::Input(format!("horizon {t} must exceed 1")));
        }
        if !(regret > 0.0) {
            return Err(Error::Input(format!("regret {regret} must be positive")));
        }
        let log_t = t.ln();
        xs.push(log_t);
        ys.push((regret / log_t).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input(
            "slope fit needs at least two distinct horizons".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::LinearDemandEnv;
    use crate::partition::PriceGrid;
    use crate::policy::ShrinkEvent;

    struct Oracle<'a>(&'a dyn DemandEnvironment);

    impl PricingPolicy for Oracle<'_> {
        fn name(&self) -> &'static str {
            "oracle"
        }
        fn eps(&self) -> f64 {
            f64::INFINITY
        }
        fn cube_count(&self) -> usize {
            1
        }
        fn choose_price(&self, x: &[f64], _t: u64) -> Result<f64> {
            self.0.oracle_price(x)
        }
        fn update(&mut self, _: &[f64], _: f64, _: f64, _: u64) -> Result<Vec<ShrinkEvent>> {
            Ok(Vec::new())
        }
        fn shrink_counts(&self) -> Vec<u32> {
            vec![0]
        }
        fn grids(&self) -> Vec<PriceGrid> {
            Vec::new()
        }
    }

    #[test]
    fn oracle_has_zero_regret() {
        let env = LinearDemandEnv::standard();
        let mut oracle = Oracle(&env);
        let rec = run_episode(&mut oracle, &env, 1000, &rep_stream(1, 0)).unwrap();
        assert_eq!(rec.cumulative_regret, 0.0);
        assert_eq!(percentage_regret(&rec).unwrap(), 0.0);
        assert!(rec.oracle_revenue > 0.0);
    }

    #[test]
    fn percentage_regret_examples() {
        let mut rec = RunRecord {
            policy: "p".into(),
            env: "e".into(),
            horizon: 1,
            eps: 1.0,
            cubes: 1,
            rep: 0,
            seed: 0,
            cumulative_regret: 0.0,
            oracle_revenue: 100.0,
            realized_expected_revenue: 100.0,
            shrinks: vec![],
        };
        assert_eq!(percentage_regret(&rec).unwrap(), 0.0);
        rec.cumulative_regret = 50.0;
        assert_eq!(percentage_regret(&rec).unwrap(), 50.0);
        rec.cumulative_regret = 15.79;
        assert!((percentage_regret(&rec).unwrap() - 15.79).abs() < 1e-12);
        rec.oracle_revenue = 0.0;
        assert!(matches!(percentage_regret(&rec), Err(Error::Arithmetic(_))));
    }

    #[test]
    fn slope_examples() {
        let exact = |t: f64| t.ln() * t.powf(0.75);
        let s = fit_loglog_slope(&[(500.0, exact(500.0)), (62_500.0, exact(62_500.0))]).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
        let r = 3.0;
        let pts = [
            (500.0, r),
            (2500.0, r * 5f64.powf(0.8) * 2500f64.ln() / 500f64.ln()),
        ];
        assert!((fit_loglog_slope(&pts).unwrap() - 0.8).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [500.0f64, 2500.0, 12_500.0]
            .iter()
            .map(|&t| (t, 2.0 * t.ln()))
            .collect();
        assert!(fit_loglog_slope(&flat).unwrap().abs() < 1e-12);
        assert!(fit_loglog_slope(&[(500.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(500.0, 1.0), (2500.0, 0.0)]).is_err());
        assert!(fit_loglog_slope(&[(500.0, 1.0), (500.0, 2.0)]).is_err());
    }

    #[test]
    fn mean_and_stderr() {
        assert_eq!(mean_stderr(&[3.0]), (3.0, None));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.unwrap() - sd / 2.0).abs() < 1e-12);
    }
}
