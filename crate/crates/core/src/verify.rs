//! Monte Carlo batches that turn each market property into a
//! [`VerdictReport`].
//!
//! Paths are simulated in parallel but collected in path order and reduced
//! sequentially, so a report depends only on the suite, the parameters and
//! the seed. Wall-clock timings are returned separately from the reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    self, instantaneous_arbitrage_check, relative_log_value_direct, AnalyticsError, AnnularSector,
    Direction, PortfolioProcess,
};
use crate::markets::{
    annulus_bounds, build_market, singular_values, sphere_target, sum_sq, weights_at, weights_path,
    Kappa, MarketError, MarketPath,
};
use crate::model::{
    validate_params, Example, KappaMode, MarketParams, SimConfig, ValidatedConfig, ValidationError,
    VerdictReport, ViolationSite,
};
use crate::sde::{psi_bracket, realized_qv, simulate_drivers, DriverPath, RngStream};

/// Minimum sample size for an expectation test.
pub const MIN_MARTINGALE_SAMPLES: usize = 100;
/// Pass band for expectation claims, in standard errors.
pub const SIGMA_BAND: f64 = 3.0;
/// Rank-two threshold: `σ₃ < RANK_TOL·σ₁` counts as a structural zero.
pub const RANK_TOL: f64 = 1e-10;
/// Ratio below which `σ₃/σ₁` counts as near-degenerate evidence.
pub const NEAR_DEGENERATE: f64 = 1e-3;
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
pub const SPHERE_TOL: f64 = 1e-12;
pub const QV_REL_TOL: f64 = 0.05;
pub const MASTER_DIRECT_TOL: f64 = 1e-3;
pub const RAMP_TOL: f64 = 1e-12;
pub const MAX_CLAMP_RATE: f64 = 1e-6;
/// Random non-adjacent pairs sampled per path in the instantaneous check.
pub const RANDOM_PAIRS: usize = 1000;

/// Every checkable property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    Diversity,
    SphereGeometry,
    GammaMuBound,
    #[serde(rename = "martingale-X", alias = "martingale-x")]
    MartingaleX,
    MartingaleMu,
    Rank,
    PsiBounds,
    QvConsistency,
    MasterEqDeterminism,
    InstantaneousArb,
    AnnulusSupport,
    KappaInvariance,
}

impl Claim {
    pub const ALL: [Claim; 12] = [
        Claim::Diversity,
        Claim::SphereGeometry,
        Claim::GammaMuBound,
        Claim::MartingaleX,
        Claim::MartingaleMu,
        Claim::Rank,
        Claim::PsiBounds,
        Claim::QvConsistency,
        Claim::MasterEqDeterminism,
        Claim::InstantaneousArb,
        Claim::AnnulusSupport,
        Claim::KappaInvariance,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Claim::Diversity => "diversity",
            Claim::SphereGeometry => "sphere-geometry",
            Claim::GammaMuBound => "gamma-mu-bound",
            Claim::MartingaleX => "martingale-X",
            Claim::MartingaleMu => "martingale-mu",
            Claim::Rank => "rank",
            Claim::PsiBounds => "psi-bounds",
            Claim::QvConsistency => "qv-consistency",
            Claim::MasterEqDeterminism => "master-eq-determinism",
            Claim::InstantaneousArb => "instantaneous-arb",
            Claim::AnnulusSupport => "annulus-support",
            Claim::KappaInvariance => "kappa-invariance",
        }
    }

    /// Almost-sure claims demand zero violations.
    pub fn almost_sure(self) -> bool {
        !matches!(
            self,
            Claim::MartingaleX | Claim::MartingaleMu | Claim::QvConsistency
        )
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Claim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Claim::ALL
            .into_iter()
            .find(|c| c.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown claim '{s}'"))
    }
}

/// Which property of the market each claim exercises.
pub const CLAIM_INVENTORY: [(Claim, &str); 12] = [
    (Claim::Diversity, "weights in (0, 2/3) and summing to one"),
    (
        Claim::SphereGeometry,
        "fixed circle, expanding circles, annulus",
    ),
    (Claim::GammaMuBound, "market excess growth above 9a²/8"),
    (Claim::MartingaleX, "martingale capitalizations"),
    (Claim::MartingaleMu, "martingale weights"),
    (
        Claim::Rank,
        "rank-two vs nonsingular, not strongly nondegenerate",
    ),
    (Claim::PsiBounds, "bounded martingale ψ"),
    (
        Claim::QvConsistency,
        "realized vs analytic quadratic variation",
    ),
    (
        Claim::MasterEqDeterminism,
        "deterministic relative value ramp",
    ),
    (Claim::InstantaneousArb, "instantaneous relative arbitrage"),
    (Claim::AnnulusSupport, "full support in the annulus"),
    (Claim::KappaInvariance, "weights independent of κ"),
];

const _: () = assert!(CLAIM_INVENTORY.len() == Claim::ALL.len());

/// Per-claim adjustments to the suite configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<AnnularSector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSuite {
    pub example: Example,
    pub claims: Vec<Claim>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<Claim, ClaimOverrides>,
}

impl ClaimSuite {
    /// The claims asserted for the parameters' example.
    pub fn default_for(params: &MarketParams) -> Self {
        use Claim::*;
        let mut claims = match params.weight_model() {
            Example::Ex1 => vec![
                Diversity,
                SphereGeometry,
                GammaMuBound,
                Rank,
                QvConsistency,
                MasterEqDeterminism,
                InstantaneousArb,
            ],
            Example::Ex2 => vec![
                Diversity,
                SphereGeometry,
                GammaMuBound,
                Rank,
                QvConsistency,
                MartingaleX,
                MartingaleMu,
                InstantaneousArb,
            ],
            Example::Ex3 => vec![
                Diversity,
                SphereGeometry,
                GammaMuBound,
                Rank,
                PsiBounds,
                QvConsistency,
                MartingaleX,
                MartingaleMu,
                InstantaneousArb,
            ],
            Example::Ex4 | Example::Ex5 => vec![
                Diversity,
                SphereGeometry,
                GammaMuBound,
                Rank,
                PsiBounds,
                QvConsistency,
                InstantaneousArb,
                AnnulusSupport,
            ],
        };
        if params.example == Example::Ex5 {
            claims.push(KappaInvariance);
        }
        Self {
            example: params.example,
            claims,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_claims(example: Example, claims: Vec<Claim>) -> Self {
        Self {
            example,
            claims,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, claim: Claim, o: ClaimOverrides) -> Self {
        self.overrides.insert(claim, o);
        self
    }
}

#[derive(Debug, Error)]
pub enum ClaimError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("insufficient samples: {0} < {MIN_MARTINGALE_SAMPLES}")]
    InsufficientSamples(usize),
    #[error("claim does not apply to {0}")]
    NotApplicable(Example),
    #[error("suite is for {suite} but parameters are for {params}")]
    ExampleMismatch { suite: Example, params: Example },
}

#[derive(Debug, Error)]
#[error("claim {claim}: {source}")]
pub struct SuiteError {
    pub claim: String,
    #[source]
    pub source: ClaimError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimTiming {
    pub claim: Claim,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub reports: Vec<VerdictReport>,
    pub timings: Vec<ClaimTiming>,
    /// Configuration each claim actually ran with.
    pub configs: Vec<ValidatedConfig>,
}

impl SuiteOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Runs every claim of `suite` on the current rayon pool.
pub fn run_suite(suite: &ClaimSuite, v: &ValidatedConfig) -> Result<SuiteOutcome, SuiteError> {
    let mut out = SuiteOutcome {
        reports: Vec::with_capacity(suite.claims.len()),
        timings: Vec::with_capacity(suite.claims.len()),
        configs: Vec::with_capacity(suite.claims.len()),
    };
    for &claim in &suite.claims {
        let wrap = |source| SuiteError {
            claim: claim.id().to_string(),
            source,
        };
        if suite.example != v.params().example {
            return Err(wrap(ClaimError::ExampleMismatch {
                suite: suite.example,
                params: v.params().example,
            }));
        }
        let overrides = suite.overrides.get(&claim).copied().unwrap_or_default();
        let start = Instant::now();
        let cfg = claim_config(claim, v, &overrides).map_err(wrap)?;
        let report = run_claim(claim, &cfg, &overrides).map_err(wrap)?;
        out.timings.push(ClaimTiming {
            claim,
            seconds: start.elapsed().as_secs_f64(),
        });
        out.reports.push(report);
        out.configs.push(cfg);
    }
    Ok(out)
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

/// Configuration a claim runs with: suite config, claim defaults, then overrides.
pub fn claim_config(
    claim: Claim,
    v: &ValidatedConfig,
    o: &ClaimOverrides,
) -> Result<ValidatedConfig, ClaimError> {
    let p = *v.params();
    let mut c: SimConfig = *v.config();
    match claim {
        Claim::QvConsistency => {
            c.n_paths = c.n_paths.min(1000);
            c = regrid(c, p.horizon, c.dt.min(1e-4));
        }
        Claim::Rank => c.n_paths = c.n_paths.min(1000),
        _ => {}
    }
    if let Some(n) = o.n_paths {
        c.n_paths = n;
    }
    if let Some(dt) = o.dt {
        c = regrid(c, p.horizon, dt);
    }
    if let Some(psi0) = o.psi0 {
        c.psi0 = psi0;
    }
    Ok(validate_params(&p, &c)?)
}

fn regrid(c: SimConfig, horizon: f64, dt: f64) -> SimConfig {
    let g = SimConfig::new(horizon, dt, c.n_paths, c.seed);
    SimConfig {
        dt: g.dt,
        n_steps: g.n_steps,
        ..c
    }
}

/// Runs one claim with an already adjusted configuration.
pub fn run_claim(
    claim: Claim,
    v: &ValidatedConfig,
    o: &ClaimOverrides,
) -> Result<VerdictReport, ClaimError> {
    let mut report = match claim {
        Claim::Diversity => check_diversity(v),
        Claim::SphereGeometry => check_sphere(v),
        Claim::GammaMuBound => check_gamma_bound(v),
        Claim::MartingaleX => check_martingale(v, true),
        Claim::MartingaleMu => check_martingale(v, false),
        Claim::Rank => check_rank(v),
        Claim::PsiBounds => check_psi(v),
        Claim::QvConsistency => check_qv(v),
        Claim::MasterEqDeterminism => check_master(v),
        Claim::InstantaneousArb => check_instantaneous(v),
        Claim::AnnulusSupport => check_support(v, o.sector),
        Claim::KappaInvariance => check_kappa(v),
    }?;
    report.invariant_name = claim.id().to_string();
    Ok(report)
}

/// Expectation test: passes iff `|mean − target| ≤ 3·s/√n`.
pub fn martingale_test(
    name: &str,
    samples: &[f64],
    target: f64,
) -> Result<VerdictReport, ClaimError> {
    let n = samples.len();
    if n < MIN_MARTINGALE_SAMPLES {
        return Err(ClaimError::InsufficientSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let dev = (mean - target).abs();
    let pass = dev <= SIGMA_BAND * se;
    let mut r = VerdictReport::new(name);
    r.n_paths = n as u64;
    r.n_violations = u64::from(!pass);
    r.worst_margin = SIGMA_BAND * se - dev;
    r.point_estimate = mean;
    r.std_error = Some(se);
    r.pass = pass;
    Ok(r.with_extra("target", target))
}

/// Per-path outcome of an almost-sure check.
#[derive(Debug, Clone, Copy)]
struct AsTally {
    points: u64,
    violations: u64,
    worst_margin: f64,
    first: Option<ViolationSite>,
}

impl AsTally {
    fn new() -> Self {
        Self {
            points: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            first: None,
        }
    }

    fn observe(&mut self, path_index: u64, step: usize, margin: f64, ok: bool) {
        self.points += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if !ok {
            self.violations += 1;
            self.first.get_or_insert(ViolationSite { path_index, step });
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.points += other.points;
        self.violations += other.violations;
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        if self.first.is_none() {
            self.first = other.first;
        }
        self
    }

    fn into_report(self, n_paths: usize) -> VerdictReport {
        let mut r = VerdictReport::new("");
        r.n_paths = n_paths as u64;
        r.n_violations = self.violations;
        r.worst_margin = self.worst_margin;
        r.first_violation = self.first;
        r.pass = self.violations == 0;
        r.with_extra("grid_points", self.points as f64)
    }
}

fn for_paths<T, F>(v: &ValidatedConfig, f: F) -> Result<Vec<T>, ClaimError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ClaimError> + Sync + Send,
{
    (0..v.config().n_paths)
        .into_par_iter()
        .map(|p| f(p as u64))
        .collect()
}

fn market_for(v: &ValidatedConfig, d: &DriverPath) -> Result<MarketPath, ClaimError> {
    let kappa = Kappa::for_params(v.params(), d)?;
    Ok(build_market(v.params(), d, &kappa)?)
}

fn merge_tallies<T>(items: &[(AsTally, T)]) -> AsTally {
    items
        .iter()
        .fold(AsTally::new(), |acc, (t, _)| acc.merge(t))
}

fn check_diversity(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let mut tally = AsTally::new();
        let mut max_weight = f64::MIN;
        let mut max_sum_err = 0.0f64;
        for (k, mu) in weights_path(v.params(), &d).iter().enumerate() {
            let lo = mu.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mu.iter().cloned().fold(f64::MIN, f64::max);
            let sum_err = (mu.iter().sum::<f64>() - 1.0).abs();
            max_weight = max_weight.max(hi);
            max_sum_err = max_sum_err.max(sum_err);
            let margin = lo.min(2.0 / 3.0 - hi);
            tally.observe(p, k, margin, margin > 0.0 && sum_err <= WEIGHT_SUM_TOL);
        }
        Ok((tally, (max_weight, max_sum_err)))
    })?;
    let max_weight = per_path.iter().map(|x| x.1 .0).fold(f64::MIN, f64::max);
    let max_sum_err = per_path.iter().map(|x| x.1 .1).fold(0.0, f64::max);
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    r.point_estimate = max_weight;
    Ok(r.with_extra("max_weight_sum_error", max_sum_err))
}

fn check_sphere(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let model = v.params().weight_model();
    let a = v.params().a;
    let (lo, hi) = annulus_bounds(a);
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let mut tally = AsTally::new();
        let mut max_dev = 0.0f64;
        for (k, mu) in weights_path(v.params(), &d).iter().enumerate() {
            let q = sum_sq(mu);
            if model == Example::Ex4 {
                let margin = (q - lo).min(hi - q);
                max_dev = max_dev.max((q - sphere_target(model, a, d.t_grid[k], d.phi[k])).abs());
                tally.observe(p, k, margin, margin > 0.0);
            } else {
                let dev = (q - sphere_target(model, a, d.t_grid[k], d.phi[k])).abs();
                max_dev = max_dev.max(dev);
                tally.observe(p, k, SPHERE_TOL - dev, dev < SPHERE_TOL);
            }
        }
        Ok((tally, max_dev))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    r.point_estimate = per_path.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(r)
}

fn check_gamma_bound(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let floor = v.params().gamma_mu_floor();
    let per_path = for_paths(v, |p| {
        let m = market_for(v, &simulate_drivers(v, p))?;
        let mut tally = AsTally::new();
        let mut min_gamma = f64::INFINITY;
        for k in 0..m.len() {
            let g = analytics::market_excess_growth(&m, k);
            min_gamma = min_gamma.min(g);
            tally.observe(p, k, g - floor, g > floor);
        }
        Ok((tally, min_gamma))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    r.point_estimate = per_path.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    Ok(r.with_extra("bound", floor))
}

fn check_martingale(v: &ValidatedConfig, caps: bool) -> Result<VerdictReport, ClaimError> {
    let params = v.params();
    if caps && params.kappa == KappaMode::Custom {
        return Err(MarketError::CustomKappaRequired.into());
    }
    let model = params.weight_model();
    let terminal = |d: &DriverPath, k: usize| {
        let mu = weights_at(model, params.a, d.t_grid[k], d.theta[k], d.phi[k]);
        let kappa = match (caps, params.kappa) {
            (true, KappaMode::Gbm) => (d.w[k] - d.t_grid[k] / 2.0).exp(),
            _ => 1.0,
        };
        mu.map(|m| kappa * m)
    };
    let finals = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        Ok(terminal(&d, d.len() - 1))
    })?;
    // Every path shares X(0) and μ(0).
    let d0 = simulate_drivers(
        &validate_params(
            params,
            &SimConfig {
                n_paths: 1,
                ..*v.config()
            },
        )?,
        0,
    );
    let initial = terminal(&d0, 0);
    let label = if caps { "X" } else { "mu" };
    let mut components = Vec::with_capacity(3);
    for i in 0..3 {
        let samples: Vec<f64> = finals.iter().map(|x| x[i]).collect();
        components.push(martingale_test(
            &format!("{label}{}", i + 1),
            &samples,
            initial[i],
        )?);
    }
    Ok(combine(components))
}

/// Folds per-component expectation reports into one verdict.
fn combine(components: Vec<VerdictReport>) -> VerdictReport {
    let mut r = VerdictReport::new("");
    r.n_paths = components.iter().map(|c| c.n_paths).max().unwrap_or(0);
    r.n_violations = components.iter().map(|c| c.n_violations).sum();
    r.pass = components.iter().all(|c| c.pass);
    if let Some(worst) = components
        .iter()
        .min_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin))
    {
        r.worst_margin = worst.worst_margin;
        r.point_estimate = worst.point_estimate;
        r.std_error = worst.std_error;
    }
    r.components = components;
    r
}

fn check_rank(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let full_rank = v.params().weight_model().uses_psi();
    let per_path = for_paths(v, |p| {
        let m = market_for(v, &simulate_drivers(v, p))?;
        let mut tally = AsTally::new();
        let mut extreme_ratio = if full_rank { f64::INFINITY } else { 0.0 };
        let mut min_s3 = f64::INFINITY;
        let mut near = 0u64;
        for (k, sig) in m.sigma.iter().enumerate() {
            let sv = singular_values(sig);
            let ratio = sv[2] / sv[0];
            min_s3 = min_s3.min(sv[2]);
            if full_rank {
                extreme_ratio = extreme_ratio.min(ratio);
                if ratio < NEAR_DEGENERATE {
                    near += 1;
                }
                tally.observe(p, k, sv[2], sv[2] > 0.0);
            } else {
                extreme_ratio = extreme_ratio.max(ratio);
                tally.observe(p, k, RANK_TOL - ratio, ratio < RANK_TOL);
            }
        }
        Ok((tally, (extreme_ratio, min_s3, near)))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    let ratios = per_path.iter().map(|x| x.1 .0);
    r.point_estimate = if full_rank {
        ratios.fold(f64::INFINITY, f64::min)
    } else {
        ratios.fold(0.0, f64::max)
    };
    let min_s3 = per_path
        .iter()
        .map(|x| x.1 .1)
        .fold(f64::INFINITY, f64::min);
    let near: u64 = per_path.iter().map(|x| x.1 .2).sum();
    r = r.with_extra("min_sigma3", min_s3);
    if full_rank {
        r = r.with_extra("near_degenerate_steps", near as f64);
    }
    Ok(r)
}

fn check_psi(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let a = v.params().a;
    let c = v.config();
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let mut tally = AsTally::new();
        for (k, psi) in d.psi.iter().enumerate() {
            let margin = a - psi.abs();
            tally.observe(p, k, margin, margin > 0.0);
        }
        Ok((tally, (d.clamp_events, *d.psi.last().unwrap())))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    let clamps: u64 = per_path.iter().map(|x| x.1 .0).sum();
    let steps = (c.n_steps * c.n_paths) as f64;
    let rate = clamps as f64 / steps;
    let rate_asserted = c.dt <= 1e-4 && a >= 0.01;
    if rate_asserted && rate >= MAX_CLAMP_RATE {
        r.pass = false;
    }
    let finals: Vec<f64> = per_path.iter().map(|x| x.1 .1).collect();
    let m = martingale_test("psi(T)", &finals, c.psi0)?;
    r.pass &= m.pass;
    r.point_estimate = m.point_estimate;
    r.std_error = m.std_error;
    r.components.push(m);
    Ok(r.with_extra("clamp_events", clamps as f64)
        .with_extra("clamp_rate", rate)
        .with_extra("clamp_rate_asserted", f64::from(u8::from(rate_asserted))))
}

fn rel_error(realized: f64, analytic: f64) -> f64 {
    (realized - analytic).abs() / analytic
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_qv(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let uses_psi = v.params().weight_model().uses_psi();
    let a = v.params().a;
    let dt = v.config().dt;
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let m = market_for(v, &d)?;
        let mut errs = [0.0; 4];
        for i in 0..3 {
            let series: Vec<f64> = m.weights.iter().map(|mu| mu[i]).collect();
            let realized = *realized_qv(&series).last().unwrap();
            let analytic: f64 = (0..m.len() - 1)
                .map(|k| m.tau_diag[k][i] * m.weights[k][i] * m.weights[k][i] * dt)
                .sum();
            errs[i] = rel_error(realized, analytic);
        }
        if uses_psi {
            let realized = *realized_qv(&d.psi).last().unwrap();
            let analytic = *psi_bracket(&d.psi, a, dt).last().unwrap();
            errs[3] = rel_error(realized, analytic);
        }
        Ok(errs)
    })?;
    let mut components = Vec::new();
    let names = ["mu1", "mu2", "mu3", "psi"];
    for (j, name) in names.iter().enumerate().take(if uses_psi { 4 } else { 3 }) {
        let xs: Vec<f64> = per_path.iter().map(|e| e[j]).collect();
        let (mean, se) = mean_se(&xs);
        let mut c = VerdictReport::new(*name);
        c.n_paths = xs.len() as u64;
        c.point_estimate = mean;
        c.std_error = Some(se);
        c.worst_margin = QV_REL_TOL - mean;
        c.pass = mean < QV_REL_TOL;
        c.n_violations = u64::from(!c.pass);
        components.push(c.with_extra("tolerance", QV_REL_TOL));
    }
    Ok(combine(components).with_extra("dt", dt))
}

fn check_master(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let params = v.params();
    let ramp = params.weight_model() == Example::Ex1;
    let a = params.a;
    let gamma = 3.0 * a * a / (4.0 / 3.0 + 6.0 * a * a);
    let per_path = for_paths(v, |p| {
        let m = market_for(v, &simulate_drivers(v, p))?;
        let pf = PortfolioProcess::generated(&m);
        let direct = relative_log_value_direct(&m, &pf);
        let master_t = *pf.rel_log_value.last().unwrap();
        let direct_dev = (direct.last().unwrap() - master_t).abs();
        let mut tally = AsTally::new();
        let last = m.len() - 1;
        tally.observe(
            p,
            last,
            MASTER_DIRECT_TOL - direct_dev,
            direct_dev < MASTER_DIRECT_TOL,
        );
        let mut ramp_dev = 0.0f64;
        if ramp {
            for (k, val) in pf.rel_log_value.iter().enumerate() {
                let dev = (val + gamma * m.t_grid[k]).abs();
                ramp_dev = ramp_dev.max(dev);
                if dev >= RAMP_TOL {
                    tally.observe(p, k, RAMP_TOL - dev, false);
                }
            }
        }
        Ok((tally, (master_t, direct_dev, ramp_dev)))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    let finals: Vec<f64> = per_path.iter().map(|x| x.1 .0).collect();
    let (mean, _) = mean_se(&finals);
    let spread = finals.iter().cloned().fold(f64::MIN, f64::max)
        - finals.iter().cloned().fold(f64::INFINITY, f64::min);
    r.point_estimate = mean;
    r = r
        .with_extra(
            "max_direct_deviation",
            per_path.iter().map(|x| x.1 .1).fold(0.0, f64::max),
        )
        .with_extra("terminal_spread", spread);
    if ramp {
        r = r
            .with_extra("closed_form_terminal", -gamma * params.horizon)
            .with_extra(
                "max_ramp_deviation",
                per_path.iter().map(|x| x.1 .2).fold(0.0, f64::max),
            );
        if spread >= RAMP_TOL {
            r.pass = false;
        }
    }
    Ok(r)
}

fn check_instantaneous(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let expect_arbitrage = v.params().weight_model() == Example::Ex1;
    let seed = v.config().seed;
    let per_path = for_paths(v, |p| {
        let m = market_for(v, &simulate_drivers(v, p))?;
        let pf = PortfolioProcess::generated(&m);
        let mut rng = RngStream::new(seed, p).auxiliary(1);
        let (fwd, tf) = instantaneous_arbitrage_check(
            &pf,
            Direction::MarketOverGenerated,
            &mut rng,
            RANDOM_PAIRS,
        );
        let (rev, _) = instantaneous_arbitrage_check(
            &pf,
            Direction::GeneratedOverMarket,
            &mut rng,
            RANDOM_PAIRS,
        );
        Ok((
            fwd,
            rev,
            tf.first_violation.map(|step| ViolationSite {
                path_index: p,
                step,
            }),
        ))
    })?;
    let fwd = per_path
        .iter()
        .map(|x| x.0.clone())
        .reduce(|a, b| a.merge(&b))
        .expect("at least one path");
    let rev = per_path
        .iter()
        .map(|x| x.1.clone())
        .reduce(|a, b| a.merge(&b))
        .expect("at least one path");
    let mut r = VerdictReport::new("");
    r.n_paths = per_path.len() as u64;
    r.n_violations = fwd.n_violations;
    r.point_estimate = fwd.violation_fraction;
    r.worst_margin = if expect_arbitrage {
        -(fwd.n_violations as f64)
    } else {
        fwd.n_violations.min(rev.n_violations) as f64
    };
    r.pass = if expect_arbitrage {
        fwd.n_violations == 0
    } else {
        fwd.n_violations > 0 && rev.n_violations > 0
    };
    if expect_arbitrage {
        r.first_violation = per_path.iter().find_map(|x| x.2);
    }
    Ok(r.with_extra("pairs", fwd.n_pairs as f64)
        .with_extra("reverse_violations", rev.n_violations as f64)
        .with_extra("reverse_violation_fraction", rev.violation_fraction)
        .with_extra("expects_arbitrage", f64::from(u8::from(expect_arbitrage))))
}

/// Thin test sector used when the suite does not supply one: angular width
/// 0.1 rad starting one radian past `θ(0)`, radius band `±0.1a·√(3/2)`
/// around the initial radius.
pub fn default_sector(a: f64, c: &SimConfig) -> AnnularSector {
    let scale = 1.5f64.sqrt();
    let ann = AnnularSector::annulus(a);
    let r0 = (2.0 * a + c.psi0) * scale;
    AnnularSector {
        r_lo: (r0 - 0.1 * a * scale).max(ann.r_lo),
        r_hi: (r0 + 0.1 * a * scale).min(ann.r_hi),
        angle_lo: c.theta0 + 1.0,
        angle_width: 0.1,
    }
}

/// Grid indices of `t ∈ {T/4, T/2, T}`.
pub fn support_steps(n_steps: usize) -> [usize; 3] {
    [n_steps / 4, n_steps / 2, n_steps]
}

fn check_support(
    v: &ValidatedConfig,
    sector: Option<AnnularSector>,
) -> Result<VerdictReport, ClaimError> {
    let params = v.params();
    if params.weight_model() != Example::Ex4 {
        return Err(ClaimError::NotApplicable(params.example));
    }
    let a = params.a;
    let c = v.config();
    let sector = sector.unwrap_or_else(|| default_sector(a, c));
    let steps = support_steps(c.n_steps);
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let w = weights_path(params, &d);
        let (lo, hi) = annulus_bounds(a);
        let mut tally = AsTally::new();
        for (k, mu) in w.iter().enumerate() {
            let q = sum_sq(mu);
            let margin = (q - lo).min(hi - q);
            tally.observe(p, k, margin, analytics::in_annulus(mu, a));
        }
        Ok((tally, steps.map(|k| w[k])))
    })?;
    let mut r = merge_tallies(&per_path).into_report(per_path.len());
    let mut min_freq = f64::INFINITY;
    for (j, &k) in steps.iter().enumerate() {
        let samples: Vec<[f64; 3]> = per_path.iter().map(|x| x.1[j]).collect();
        let t = c.time(k);
        let whole = analytics::support_property_check(a, &AnnularSector::annulus(a), t, &samples)?;
        let est = analytics::support_property_check(a, &sector, t, &samples)?;
        min_freq = min_freq.min(est.frequency);
        let mut comp = VerdictReport::new(format!("U at t={t}"));
        comp.n_paths = est.n_paths;
        comp.point_estimate = est.frequency;
        comp.worst_margin = est.frequency;
        comp.pass = est.hits > 0 && whole.hits == whole.n_paths;
        comp.n_violations = whole.n_paths - whole.hits;
        r.pass &= comp.pass;
        r.components.push(
            comp.with_extra("hits", est.hits as f64)
                .with_extra("ci_low", est.ci_low)
                .with_extra("ci_high", est.ci_high)
                .with_extra("annulus_frequency", whole.frequency)
                .with_extra("min_s", est.min_s)
                .with_extra("inf_s_annulus", est.inf_s_annulus),
        );
    }
    r.point_estimate = min_freq;
    Ok(r)
}

fn check_kappa(v: &ValidatedConfig) -> Result<VerdictReport, ClaimError> {
    let params = v.params();
    let per_path = for_paths(v, |p| {
        let d = simulate_drivers(v, p);
        let gbm = build_market(params, &d, &Kappa::gbm(&d))?;
        let unit = build_market(params, &d, &Kappa::unit(d.len()))?;
        let mut tally = AsTally::new();
        for k in 0..d.len() {
            let same = (0..3).all(|i| gbm.weights[k][i].to_bits() == unit.weights[k][i].to_bits());
            let ratio_err = (0..3)
                .map(|i| (gbm.caps[k][i] / gbm.total[k] - gbm.weights[k][i]).abs())
                .fold(0.0, f64::max);
            tally.observe(
                p,
                k,
                WEIGHT_SUM_TOL - ratio_err,
                same && ratio_err <= WEIGHT_SUM_TOL,
            );
        }
        Ok((tally, ()))
    })?;
    Ok(merge_tallies(&per_path).into_report(per_path.len()))
}
