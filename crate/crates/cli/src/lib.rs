//! `spt-lab`: simulate the example markets, check their properties and
//! aggregate simulated paths into plot-ready tables.
//!
//! Exit codes: 0 when everything passes, 1 when a claim fails, 2 on any
//! configuration or input error. Errors are printed to stderr as JSON.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use spt_core::analytics::market_excess_growth_path;
use spt_core::markets::{build_market, singular_values, MarketError};
use spt_core::model::validate_params;
use spt_core::sde::simulate_drivers;
use spt_core::verify::{run_suite, SuiteError, SuiteOutcome};
use spt_core::{
    Claim, ClaimSuite, Example, Kappa, KappaMode, MarketParams, PortfolioProcess, SimConfig,
    ValidatedConfig, ValidationError, VerdictReport,
};

pub const CSV_HEADER: [&str; 14] = [
    "t",
    "path_id",
    "mu1",
    "mu2",
    "mu3",
    "X",
    "tau11",
    "tau22",
    "tau33",
    "gamma_mu",
    "gamma_pi",
    "rel_log_value",
    "sigma_min",
    "sigma_max",
];

pub const MANIFEST: &str = "summary.json";
pub const VERDICTS: &str = "verdicts.json";
pub const SUMMARY_TABLE: &str = "summary.txt";
pub const TIMINGS: &str = "timings.json";

/// Quantities aggregated by `report`.
pub const REPORT_QUANTITIES: [&str; 4] = ["gamma_mu", "sum_mu_sq", "sigma_min", "rel_log_value"];
pub const REPORT_HEADER: [&str; 9] = ["t", "mean", "min", "q05", "q25", "q50", "q75", "q95", "max"];

#[derive(Debug, Parser)]
#[command(
    name = "spt-lab",
    version,
    about = "Simulate and check three-asset diverse markets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-path time series and a JSON manifest.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Keep every n-th grid point in the CSVs (the last point is always kept).
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Run a claim suite and write verdicts.
    Verify {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Aggregate a `simulate` output directory into quantile tables.
    Report {
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Destination directory (defaults to `<input>/report`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags shared by `simulate` and `verify`; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub example: Option<u8>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub psi0: Option<f64>,
    /// `gbm` or `unit` (Ex5 only).
    #[arg(long)]
    pub kappa: Option<String>,
    /// Base example for Ex5 (1-4).
    #[arg(long)]
    pub base: Option<u8>,
    /// Comma-separated claim ids (default: the example's suite).
    #[arg(long, value_delimiter = ',')]
    pub suite: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_paths() -> usize {
    1000
}
fn default_seed() -> u64 {
    42
}
fn default_out() -> PathBuf {
    PathBuf::from("spt-out")
}

/// The run configuration file: one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub example: Example,
    pub a: f64,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default)]
    pub psi0: f64,
    #[serde(default)]
    pub kappa_mode: KappaMode,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<Claim>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ex5_base: Option<Example>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_epsilon: Option<f64>,
}

impl RunConfig {
    /// Reads the optional config file, then applies flags on top.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut doc = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                match serde_json::from_str::<Value>(&text)? {
                    Value::Object(m) => m,
                    _ => return Err(CliError::Config("config must be a JSON object".into())),
                }
            }
            None => Map::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                doc.insert(key.to_string(), v);
            }
        };
        set("example", args.example.map(Value::from));
        set("a", args.a.map(Value::from));
        set("T", args.horizon.map(Value::from));
        set("dt", args.dt.map(Value::from));
        set("n_paths", args.paths.map(Value::from));
        set("seed", args.seed.map(Value::from));
        set("theta0", args.theta0.map(Value::from));
        set("psi0", args.psi0.map(Value::from));
        set("kappa_mode", args.kappa.clone().map(Value::from));
        set("ex5_base", args.base.map(Value::from));
        set("suite", args.suite.clone().map(Value::from));
        set(
            "output_dir",
            args.out
                .as_ref()
                .map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        let cfg: RunConfig = serde_json::from_value(Value::Object(doc))?;
        if cfg.kappa_mode == KappaMode::Custom {
            return Err(CliError::Config(
                "kappa_mode 'custom' needs a caller-supplied path and is library-only".into(),
            ));
        }
        if cfg.ex5_base.is_some() && cfg.example != Example::Ex5 {
            return Err(CliError::Config(
                "ex5_base is only valid for example 5".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn params(&self) -> MarketParams {
        match self.example {
            Example::Ex5 => MarketParams::ex5(
                self.ex5_base.unwrap_or(Example::Ex3),
                self.a,
                self.horizon,
                self.kappa_mode,
            ),
            ex => MarketParams {
                kappa: self.kappa_mode,
                ..MarketParams::new(ex, self.a, self.horizon)
            },
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut c = SimConfig::new(self.horizon, self.dt, self.n_paths, self.seed)
            .with_theta0(self.theta0)
            .with_psi0(self.psi0);
        if let Some(eps) = self.boundary_epsilon {
            c.boundary_epsilon = eps;
        }
        c
    }

    pub fn validate(&self) -> Result<ValidatedConfig, CliError> {
        Ok(validate_params(&self.params(), &self.sim_config())?)
    }

    pub fn claim_suite(&self) -> ClaimSuite {
        let params = self.params();
        match &self.suite {
            Some(claims) => ClaimSuite::with_claims(params.example, claims.clone()),
            None => ClaimSuite::default_for(&params),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{0}")]
    Config(String),
    #[error("invalid configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> Value {
        match self {
            CliError::Validation(v) => json!({
                "error": v.violations.first().map_or("ValidationError", |x| x.kind()),
                "message": self.to_string(),
                "violations": v.violations,
            }),
            CliError::Suite(s) => json!({
                "error": "ClaimError",
                "claim": s.claim,
                "message": s.source.to_string(),
            }),
            other => json!({ "error": other.kind(), "message": other.to_string() }),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "ValidationError",
            CliError::Config(_) | CliError::Json(_) => "ConfigError",
            CliError::MissingInput(_) => "MissingInput",
            CliError::Io { .. } | CliError::Csv(_) => "IoError",
            CliError::Market(_) => "MarketError",
            CliError::Suite(_) => "ClaimError",
        }
    }
}

/// Caps the global worker pool from `SPT_THREADS`, if set.
pub fn configure_threads(var: Option<&str>) -> Result<(), CliError> {
    let Some(raw) = var else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "SPT_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    // A pool already built (e.g. by a test harness) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate { run, stride } => {
            let cfg = RunConfig::resolve(&run)?;
            cmd_simulate(&cfg, stride)?;
            Ok(0)
        }
        Command::Verify { run } => {
            let cfg = RunConfig::resolve(&run)?;
            let outcome = cmd_verify(&cfg)?;
            Ok(if outcome.all_pass() { 0 } else { 1 })
        }
        Command::Report { input, out } => {
            let out = out.unwrap_or_else(|| input.join("report"));
            cmd_report(&input, &out)?;
            Ok(0)
        }
    }
}

/// One CSV row per grid point.
pub fn path_rows(v: &ValidatedConfig, path_index: u64) -> Result<Vec<[f64; 14]>, CliError> {
    let d = simulate_drivers(v, path_index);
    let m = build_market(v.params(), &d, &Kappa::for_params(v.params(), &d)?)?;
    let gamma_mu = market_excess_growth_path(&m);
    let pf = PortfolioProcess::generated(&m);
    Ok((0..m.len())
        .map(|k| {
            let mu = m.weights[k];
            let tau = m.tau_diag[k];
            let sv = singular_values(&m.sigma[k]);
            [
                m.t_grid[k],
                path_index as f64,
                mu[0],
                mu[1],
                mu[2],
                m.total[k],
                tau[0],
                tau[1],
                tau[2],
                gamma_mu[k],
                pf.gamma_star[k],
                pf.rel_log_value[k],
                sv[2],
                sv[0],
            ]
        })
        .collect())
}

/// Full precision: 17 significant digits.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_path_csv(path: &Path, rows: &[[f64; 14]], stride: usize) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    let last = rows.len().saturating_sub(1);
    for (k, row) in rows.iter().enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        let rec = row.iter().enumerate().map(|(j, &x)| {
            if j == 1 {
                (x as u64).to_string()
            } else {
                fmt_float(x)
            }
        });
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn path_file_name(path_index: u64) -> String {
    format!("path_{path_index:06}.csv")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunConfig,
    pub params: MarketParams,
    pub config: SimConfig,
    pub seed: u64,
    pub stride: usize,
    pub columns: Vec<String>,
    pub files: Vec<String>,
}

/// Writes `path_XXXXXX.csv` for every path plus the manifest.
pub fn cmd_simulate(cfg: &RunConfig, stride: usize) -> Result<Manifest, CliError> {
    if stride == 0 {
        return Err(CliError::Config("stride must be at least 1".into()));
    }
    let v = cfg.validate()?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let files: Vec<String> = (0..v.config().n_paths)
        .into_par_iter()
        .map(|p| {
            let p = p as u64;
            let name = path_file_name(p);
            write_path_csv(&dir.join(&name), &path_rows(&v, p)?, stride)?;
            Ok(name)
        })
        .collect::<Result<_, CliError>>()?;
    let manifest = Manifest {
        run: cfg.clone(),
        params: *v.params(),
        config: *v.config(),
        seed: v.config().seed,
        stride,
        columns: CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Runs the suite and writes verdicts, the text table, timings and dumps of
/// offending paths.
pub fn cmd_verify(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let v = cfg.validate()?;
    let suite = cfg.claim_suite();
    let outcome = run_suite(&suite, &v)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_json(
        &dir.join(VERDICTS),
        &json!({
            "run": cfg,
            "suite": suite,
            "reports": outcome.reports,
        }),
    )?;
    write_text(
        &dir.join(SUMMARY_TABLE),
        &summary_table(&v, &outcome.reports),
    )?;
    write_json(&dir.join(TIMINGS), &outcome.timings)?;
    for (report, claim_cfg) in outcome.reports.iter().zip(&outcome.configs) {
        if let (false, Some(site)) = (report.pass, report.first_violation) {
            let off = dir.join("offending");
            create_dir(&off)?;
            let name = format!(
                "{}_{}",
                report.invariant_name,
                path_file_name(site.path_index)
            );
            write_path_csv(&off.join(name), &path_rows(claim_cfg, site.path_index)?, 1)?;
        }
    }
    Ok(outcome)
}

fn fmt6(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6e}")
    } else {
        "-".to_string()
    }
}

/// Fixed-width table, six significant digits.
pub fn summary_table(v: &ValidatedConfig, reports: &[VerdictReport]) -> String {
    let p = v.params();
    let c = v.config();
    let mut s = format!(
        "{} a={} T={} dt={} paths={} seed={}\n",
        p.example, p.a, p.horizon, c.dt, c.n_paths, c.seed
    );
    s.push_str(&format!(
        "{:<24} {:<6} {:>8} {:>12} {:>14} {:>14} {:>14}\n",
        "claim", "result", "paths", "violations", "worst_margin", "estimate", "std_error"
    ));
    for r in reports {
        s.push_str(&format!(
            "{:<24} {:<6} {:>8} {:>12} {:>14} {:>14} {:>14}\n",
            r.invariant_name,
            if r.pass { "PASS" } else { "FAIL" },
            r.n_paths,
            r.n_violations,
            fmt6(r.worst_margin),
            fmt6(r.point_estimate),
            r.std_error.map_or("-".to_string(), fmt6),
        ));
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    s.push_str(&format!("{passed}/{} claims passed\n", reports.len()));
    s.push_str("note: 3-sigma bands are per claim, without multiple-testing correction\n");
    s
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn read_manifest(input: &Path) -> Result<Manifest, CliError> {
    let path = input.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "{} has no {MANIFEST}",
            input.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per path: `t` and the four report quantities at each kept row.
fn read_report_columns(path: &Path) -> Result<(Vec<f64>, [Vec<f64>; 4]), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingInput(format!("{}: no column {name}", path.display())))
    };
    let (it, imu, ig, ismin, irel) = (
        col("t")?,
        col("mu1")?,
        col("gamma_mu")?,
        col("sigma_min")?,
        col("rel_log_value")?,
    );
    let mut t = Vec::new();
    let mut q: [Vec<f64>; 4] = Default::default();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, CliError> {
            rec[i].parse().map_err(|_| {
                CliError::MissingInput(format!("{}: bad number '{}'", path.display(), &rec[i]))
            })
        };
        t.push(f(it)?);
        let mu = [f(imu)?, f(imu + 1)?, f(imu + 2)?];
        q[0].push(f(ig)?);
        q[1].push(mu.iter().map(|m| m * m).sum());
        q[2].push(f(ismin)?);
        q[3].push(f(irel)?);
    }
    Ok((t, q))
}

/// Writes `aggregate_<quantity>.csv` with the cross-path distribution at
/// every kept time.
pub fn cmd_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest = read_manifest(input)?;
    if manifest.files.is_empty() {
        return Err(CliError::MissingInput(
            "manifest lists no path files".into(),
        ));
    }
    let per_path: Vec<(Vec<f64>, [Vec<f64>; 4])> = manifest
        .files
        .par_iter()
        .map(|f| {
            let p = input.join(f);
            if !p.is_file() {
                return Err(CliError::MissingInput(p.display().to_string()));
            }
            read_report_columns(&p)
        })
        .collect::<Result<_, _>>()?;
    let t = &per_path[0].0;
    if per_path.iter().any(|(ti, _)| ti.len() != t.len()) {
        return Err(CliError::MissingInput(
            "path files have different lengths".into(),
        ));
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (j, name) in REPORT_QUANTITIES.iter().enumerate() {
        let path = out.join(format!("aggregate_{name}.csv"));
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(REPORT_HEADER)?;
        for (k, &tk) in t.iter().enumerate() {
            let mut xs: Vec<f64> = per_path.iter().map(|(_, q)| q[j][k]).collect();
            xs.sort_by(f64::total_cmp);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let row = [
                tk,
                mean,
                xs[0],
                quantile(&xs, 0.05),
                quantile(&xs, 0.25),
                quantile(&xs, 0.5),
                quantile(&xs, 0.75),
                quantile(&xs, 0.95),
                xs[xs.len() - 1],
            ];
            w.write_record(row.iter().map(|&x| fmt_float(x)))?;
        }
        w.into_inner()
            .map_err(|e| CliError::io(&path, e.into_error()))?
            .flush()
            .map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Prints the error JSON to stderr and maps it to exit code 2.
pub fn report_error(err: &CliError, stderr: &mut impl Write) -> i32 {
    let _ = writeln!(stderr, "{}", err.to_json());
    2
}
