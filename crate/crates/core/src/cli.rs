//! Command-line front end: simulation runs, study reproduction and privacy checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, StudyPreset, STUDY_EPS, STUDY_HORIZONS, STUDY_REPS};
use crate::env::DemandEnvironment;
use crate::error::{Error, Result};
use crate::harness::{
    fit_loglog_slope, percentage_regret, rep_stream, run_episode, run_grid, AggregateResult, Cell,
    PolicyKind, RunRecord,
};
use crate::lppq::{release_log_ratio, LocalRecorder};
use crate::prng::{derive_stream, laplace_sample, LaplaceParams, RngStream};
use crate::svg::{line_chart, Series};

pub const SEED_ENV: &str = "PRIVBANDIT_SEED";
pub const DEFAULT_SEED: u64 = 1;
pub const CSV_HEADER: &str =
    "policy,env,eps,T,J,rep,seed,regret,pct_regret,oracle_revenue,shrinks_total";

#[derive(Debug, Parser)]
#[command(
    name = "privbandit",
    version,
    about = "Differentially private personalized pricing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the grid described by a JSON config and write CSV plus summary JSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Root seed; overrides the config, falls back to $PRIVBANDIT_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, 0 for all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun one of the simulation study's tables or its slope plot.
    Reproduce {
        #[arg(value_enum)]
        which: Study,
        #[arg(long, default_value_t = STUDY_REPS)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Where slope-lppq writes its chart.
        #[arg(long, default_value = "slope-lppq.svg")]
        svg: PathBuf,
        /// Optional directory for the per-run CSV and summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the local randomizer's density-ratio bound on random neighbouring records.
    PrivacyCheck {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Draw signals up to 2 instead of 1, as the pricing experiment does.
        #[arg(long)]
        unnormalized: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Study {
    TableCppq,
    TableLppq,
    SlopeLppq,
}

impl From<Study> for StudyPreset {
    fn from(s: Study) -> Self {
        match s {
            Study::TableCppq => StudyPreset::TableCppq,
            Study::TableLppq => StudyPreset::TableLppq,
            Study::SlopeLppq => StudyPreset::SlopeLppq,
        }
    }
}

/// Seed precedence: flag, then config, then `$PRIVBANDIT_SEED`, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Round-trip exact float text.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn csv_row(rec: &RunRecord) -> Result<String> {
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        rec.policy,
        rec.env,
        fmt_f64(rec.eps),
        rec.horizon,
        rec.cubes,
        rec.rep,
        rec.seed,
        fmt_f64(rec.cumulative_regret),
        fmt_f64(percentage_regret(rec)?),
        fmt_f64(rec.oracle_revenue),
        rec.shrinks_total()
    ))
}

pub fn csv_document(records: &[RunRecord]) -> Result<String> {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rec in records {
        out.push_str(&csv_row(rec)?);
        out.push('\n');
    }
    Ok(out)
}

fn eps_json(eps: f64) -> Value {
    if eps.is_finite() {
        json!(eps)
    } else {
        json!("inf")
    }
}

pub fn summary_json(seed: u64, env: &str, aggregates: &[AggregateResult]) -> Value {
    let rows: Vec<Value> = aggregates
        .iter()
        .map(|a| {
            json!({
                "policy": a.policy,
                "eps": eps_json(a.eps),
                "T": a.horizon,
                "J": a.cubes,
                "reps": a.reps,
                "mean_regret": a.mean_regret,
                "stderr_regret": a.stderr_regret,
                "mean_pct_regret": a.mean_pct_regret,
                "stderr_pct_regret": a.stderr_pct_regret,
                "mean_oracle_revenue": a.mean_oracle_revenue,
            })
        })
        .collect();
    json!({ "seed": seed, "env": env, "results": rows })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        ))
    })
}

/// Records and per-cell aggregates of a finished grid.
pub struct GridOutput {
    pub seed: u64,
    pub env: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateResult>,
}

pub fn run_config(cfg: &ExperimentConfig, seed: u64, jobs: usize) -> Result<GridOutput> {
    let env = cfg.env.build(seed)?;
    let cells = cfg.cells();
    let grouped = run_grid(&cells, env.as_ref(), cfg.reps, seed, jobs)?;
    let aggregates = grouped
        .iter()
        .map(|g| AggregateResult::from_records(g))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridOutput {
        seed,
        env: env.name().to_string(),
        records: grouped.into_iter().flatten().collect(),
        aggregates,
    })
}

fn write_grid(out: &GridOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("results.csv"), &csv_document(&out.records)?)?;
    let summary = serde_json::to_string_pretty(&summary_json(out.seed, &out.env, &out.aggregates))
        .map_err(|e| Error::Config(format!("cannot encode summary: {e}")))?;
    write_file(&dir.join("summary.json"), &(summary + "\n"))
}

/// Privatized vectors of replication 0 for one LPPQ cell, as CSV.
pub fn trace_document(cell: &Cell, env: &dyn DemandEnvironment, seed: u64) -> Result<String> {
    let base = rep_stream(seed, 0);
    let mut policy = cell
        .spec
        .build_traced(cell.horizon, cell.eps, env, &base, true)?;
    run_episode(policy.as_mut(), env, cell.horizon, &base)?;
    let trace = policy.privatized_trace().unwrap_or(&[]);
    let mut out = String::from("t");
    for j in 0..policy.cube_count() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for (i, z) in trace.iter().enumerate() {
        let _ = write!(out, "{}", i + 1);
        for v in z {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    jobs: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let seed = resolve_seed(seed, cfg.seed)?;
    let dir = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("privbandit-out"));
    let result = run_config(&cfg, seed, jobs)?;
    write_grid(&result, &dir)?;
    if cfg.trace {
        let env = cfg.env.build(seed)?;
        for cell in cfg
            .cells()
            .iter()
            .filter(|c| c.spec.kind == PolicyKind::Lppq)
        {
            let name = format!(
                "trace_lppq_eps{}_T{}.csv",
                fmt_eps_short(cell.eps),
                cell.horizon
            );
            write_file(&dir.join(name), &trace_document(cell, env.as_ref(), seed)?)?;
        }
    }
    for a in &result.aggregates {
        println!(
            "{:<10} eps={:<6} T={:<7} J={:<4} pct_regret={:.2}",
            a.policy,
            fmt_eps_short(a.eps),
            a.horizon,
            a.cubes,
            a.mean_pct_regret
        );
    }
    println!(
        "wrote {} rows to {}",
        result.records.len(),
        dir.join("results.csv").display()
    );
    Ok(())
}

fn fmt_eps_short(eps: f64) -> String {
    if eps.is_finite() {
        format!("{eps}")
    } else {
        "inf".into()
    }
}

/// Table shaped like the study's: a non-private row, then one row per eps.
pub fn format_table(title: &str, aggregates: &[AggregateResult]) -> String {
    let mut out = format!("{title}\n{:<14}", "");
    for t in STUDY_HORIZONS {
        let _ = write!(out, "{:>10}", format!("T={t}"));
    }
    out.push('\n');
    let mut rows: Vec<(String, Vec<&AggregateResult>)> = Vec::new();
    let np: Vec<&AggregateResult> = aggregates
        .iter()
        .filter(|a| a.policy == "nonprivate")
        .collect();
    if !np.is_empty() {
        rows.push(("Non-Private".into(), np));
    }
    for eps in STUDY_EPS {
        let r: Vec<&AggregateResult> = aggregates
            .iter()
            .filter(|a| a.policy != "nonprivate" && a.eps == eps)
            .collect();
        if !r.is_empty() {
            rows.push((format!("eps={eps}"), r));
        }
    }
    for (label, cells) in rows {
        let _ = write!(out, "{label:<14}");
        for t in STUDY_HORIZONS {
            match cells.iter().find(|a| a.horizon == t) {
                Some(a) => {
                    let _ = write!(out, "{:>10.2}", a.mean_pct_regret);
                }
                None => {
                    let _ = write!(out, "{:>10}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Fitted slope per eps, in study order.
pub fn slopes(aggregates: &[AggregateResult]) -> Result<Vec<(f64, f64)>> {
    STUDY_EPS
        .iter()
        .map(|&eps| {
            let pts: Vec<(f64, f64)> = aggregates
                .iter()
                .filter(|a| a.policy == "lppq" && a.eps == eps)
                .map(|a| (a.horizon as f64, a.mean_regret))
                .collect();
            Ok((eps, fit_loglog_slope(&pts)?))
        })
        .collect()
}

pub fn slope_svg(aggregates: &[AggregateResult], fitted: &[(f64, f64)]) -> String {
    let series: Vec<Series> = fitted
        .iter()
        .map(|&(eps, slope)| Series {
            label: format!("eps={eps} slope {slope:.2}"),
            points: aggregates
                .iter()
                .filter(|a| a.policy == "lppq" && a.eps == eps)
                .map(|a| {
                    let lt = (a.horizon as f64).ln();
                    (lt, (a.mean_regret / lt).ln())
                })
                .collect(),
        })
        .collect();
    line_chart("LPPQ regret, log-log", "ln T", "ln(regret / ln T)", &series)
}

pub fn cmd_reproduce(
    which: Study,
    reps: usize,
    seed: Option<u64>,
    jobs: usize,
    svg: &Path,
    out: Option<PathBuf>,
) -> Result<()> {
    let preset = StudyPreset::from(which);
    let mut cfg = ExperimentConfig::from_preset(preset);
    cfg.reps = reps;
    cfg.validate()?;
    let seed = resolve_seed(seed, None)?;
    let result = run_config(&cfg, seed, jobs)?;
    if let Some(dir) = out {
        write_grid(&result, &dir)?;
    }
    let caption = format!("reps={reps} seed={seed}");
    match preset {
        StudyPreset::TableCppq => print!(
            "{}",
            format_table(
                &format!("Percentage regret (%) for CPPQ, {caption}"),
                &result.aggregates
            )
        ),
        StudyPreset::TableLppq => print!(
            "{}",
            format_table(
                &format!("Percentage regret (%) for LPPQ, {caption}"),
                &result.aggregates
            )
        ),
        StudyPreset::SlopeLppq => {
            let fitted = slopes(&result.aggregates)?;
            println!("Log-log slopes of LPPQ regret / ln T, {caption}");
            for (eps, s) in &fitted {
                println!("eps={eps:<6} slope={s:.3}");
            }
            write_file(svg, &slope_svg(&result.aggregates, &fitted))?;
            println!("chart written to {}", svg.display());
        }
    }
    Ok(())
}

/// Outcome of a density-ratio audit.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyReport {
    pub eps: f64,
    pub trials: usize,
    /// Largest log-ratio seen on sampled releases.
    pub max_observed: f64,
    /// Largest analytic supremum `||a - a'||_1 / b` over the sampled pairs.
    pub max_supremum: f64,
    /// Guaranteed bound for the input range: `eps`, or `2 eps` for unnormalized signals.
    pub bound: f64,
    pub unnormalized: bool,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.max_observed <= self.bound + 1e-9 && self.max_supremum <= self.bound + 1e-9
    }
}

/// Audits the local recorder and the scalar Laplace mechanism on random neighbouring records.
pub fn privacy_audit(
    eps: f64,
    trials: usize,
    unnormalized: bool,
    seed: u64,
) -> Result<PrivacyReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "--eps must be positive and finite, got {eps}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let max_signal = if unnormalized { 2.0 } else { 1.0 };
    let mut draws: RngStream = derive_stream(seed, "privacy-check/inputs");
    let mut max_observed = f64::NEG_INFINITY;
    let mut max_supremum: f64 = 0.0;
    for trial in 0..trials {
        let cubes = 1 + (draws.next_u64() % 16) as usize;
        let (j, j_alt) = (
            (draws.next_u64() % cubes as u64) as usize,
            (draws.next_u64() % cubes as u64) as usize,
        );
        let (s, s_alt) = (
            max_signal * draws.next_unit(),
            max_signal * draws.next_unit(),
        );
        let mut a = vec![0.0; cubes];
        let mut a_alt = vec![0.0; cubes];
        a[j] = s;
        a_alt[j_alt] = s_alt;
        let stream = derive_stream(seed, format!("privacy-check/trial/{trial}"));
        let mut recorder = LocalRecorder::new(cubes, eps, 1.0, stream)?;
        let params = recorder
            .noise()
            .ok_or_else(|| Error::Parameter("recorder without noise".into()))?;
        let z = recorder.privatize(j, s);
        max_observed = max_observed.max(release_log_ratio(&z, &a, &a_alt, params));
        let l1: f64 = a.iter().zip(&a_alt).map(|(x, y)| (x - y).abs()).sum();
        max_supremum = max_supremum.max(l1 / params.scale());

        // Scalar mechanism calibrated for the unit range.
        let scalar = LaplaceParams::for_mechanism(1.0, eps)?;
        let (loc, loc_alt) = (
            max_signal * draws.next_unit(),
            max_signal * draws.next_unit(),
        );
        let v = loc + laplace_sample(&mut draws, scalar);
        max_observed = max_observed.max(scalar.log_density_ratio(v, loc, loc_alt));
    }
    Ok(PrivacyReport {
        eps,
        trials,
        max_observed,
        max_supremum,
        bound: if unnormalized { 2.0 * eps } else { eps },
        unnormalized,
    })
}

/// Returns whether the audit passed.
pub fn cmd_privacy_check(
    eps: f64,
    trials: usize,
    unnormalized: bool,
    seed: Option<u64>,
) -> Result<bool> {
    let seed = resolve_seed(seed, None)?;
    let report = privacy_audit(eps, trials, unnormalized, seed)?;
    println!("eps={} trials={} seed={seed}", report.eps, report.trials);
    println!("max observed log-ratio: {:.12}", report.max_observed);
    println!("max analytic supremum:  {:.12}", report.max_supremum);
    println!("bound:                  {:.12}", report.bound);
    if unnormalized {
        println!(
            "WARNING: signals up to 2 exceed the unit range the Lap(2/eps) noise is calibrated for; \
             the guarantee degrades to {}-LDP",
            report.bound
        );
    }
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
    Ok(report.passed())
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate {
            config,
            seed,
            jobs,
            out,
        } => cmd_simulate(&config, seed, jobs, out).map(|_| true),
        Command::Reproduce {
            which,
            reps,
            seed,
            jobs,
            svg,
            out,
        } => cmd_reproduce(which, reps, seed, jobs, &svg, out).map(|_| true),
        Command::PrivacyCheck {
            eps,
            trials,
            unnormalized,
            seed,
        } => cmd_privacy_check(eps, trials, unnormalized, seed),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
