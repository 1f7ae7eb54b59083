//! Parameters, validity constraints and the domain types shared by every
//! other module.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Phase offsets `(i-1)·2π/3` of the three assets.
pub const PHASES: [f64; 3] = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0];

/// Absolute tolerance for `dt · n_steps = T`.
pub const GRID_TOLERANCE: f64 = 1e-12;

/// Largest admissible clamp margin for `ψ`, as a fraction of `a`.
pub const MAX_BOUNDARY_EPSILON: f64 = 1e-6;

/// The five example markets.
///
/// * `Ex1`: weights on a fixed circle, rank-two covariance.
/// * `Ex2`: weights on an expanding circle, martingale capitalizations.
/// * `Ex3`: weights in an expanding annulus driven by `φ = 2a + ψ`.
/// * `Ex4`: weights in a stationary annulus.
/// * `Ex5`: one of `Ex1`–`Ex4` with the total capitalization replaced by `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Example {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
}

impl Example {
    pub const ALL: [Example; 5] = [
        Example::Ex1,
        Example::Ex2,
        Example::Ex3,
        Example::Ex4,
        Example::Ex5,
    ];

    pub fn number(self) -> u8 {
        match self {
            Example::Ex1 => 1,
            Example::Ex2 => 2,
            Example::Ex3 => 3,
            Example::Ex4 => 4,
            Example::Ex5 => 5,
        }
    }

    /// Upper end of the open range for `a`.
    pub fn a_upper(self) -> f64 {
        match self {
            Example::Ex1 | Example::Ex2 => 1.0 / 3.0,
            Example::Ex3 | Example::Ex4 | Example::Ex5 => 1.0 / 9.0,
        }
    }

    /// Strict upper bound on the horizon, if the example has one.
    pub fn horizon_bound(self, a: f64) -> Option<f64> {
        match self {
            Example::Ex2 => Some(-2.0 * (3.0 * a).ln()),
            Example::Ex3 => Some(-2.0 * (9.0 * a).ln()),
            _ => None,
        }
    }

    /// Whether the weight dynamics include the radial diffusion `φ`.
    pub fn uses_psi(self) -> bool {
        matches!(self, Example::Ex3 | Example::Ex4)
    }

    /// Whether the weights carry the `e^{t/2}` expansion factor.
    pub fn expanding(self) -> bool {
        matches!(self, Example::Ex2 | Example::Ex3)
    }
}

impl From<Example> for u8 {
    fn from(e: Example) -> u8 {
        e.number()
    }
}

impl TryFrom<u8> for Example {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            1 => Ok(Example::Ex1),
            2 => Ok(Example::Ex2),
            3 => Ok(Example::Ex3),
            4 => Ok(Example::Ex4),
            5 => Ok(Example::Ex5),
            _ => Err(format!("example must be 1..=5, got {n}")),
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ex{}", self.number())
    }
}

/// How the total capitalization `κ` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// `κ(t) = exp(W(t) − t/2)`.
    #[default]
    Gbm,
    /// `κ ≡ 1`, so capitalizations equal weights.
    Unit,
    /// Caller-supplied positive path.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub example: Example,
    /// Weight model wrapped by `Ex5`; ignored otherwise.
    pub ex5_base: Example,
    pub a: f64,
    pub horizon: f64,
    pub kappa: KappaMode,
}

impl MarketParams {
    pub fn new(example: Example, a: f64, horizon: f64) -> Self {
        Self {
            example,
            ex5_base: Example::Ex3,
            a,
            horizon,
            kappa: KappaMode::Gbm,
        }
    }

    /// `Ex5` over `base` with the given `κ` mode.
    pub fn ex5(base: Example, a: f64, horizon: f64, kappa: KappaMode) -> Self {
        Self {
            example: Example::Ex5,
            ex5_base: base,
            a,
            horizon,
            kappa,
        }
    }

    /// The example whose closed-form weights are used.
    pub fn weight_model(&self) -> Example {
        match self.example {
            Example::Ex5 => self.ex5_base,
            e => e,
        }
    }

    /// Lower bound `9a²/8` on the market excess growth rate.
    pub fn gamma_mu_floor(&self) -> f64 {
        9.0 * self.a * self.a / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Clamp margin for `ψ` as a fraction of `a`.
    pub boundary_epsilon: f64,
    pub theta0: f64,
    pub psi0: f64,
}

impl SimConfig {
    /// Grid with `n_steps = round(horizon / dt)` and default initial values.
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        let n_steps = if dt > 0.0 && horizon.is_finite() {
            (horizon / dt).round().max(0.0) as usize
        } else {
            0
        };
        Self {
            dt,
            n_steps,
            n_paths,
            seed,
            boundary_epsilon: 1e-12,
            theta0: 0.0,
            psi0: 0.0,
        }
    }

    pub fn with_psi0(mut self, psi0: f64) -> Self {
        self.psi0 = psi0;
        self
    }

    pub fn with_theta0(mut self, theta0: f64) -> Self {
        self.theta0 = theta0;
        self
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    /// Time of grid point `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// A single violated constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "error")]
pub enum Violation {
    #[serde(rename = "RangeError")]
    Range {
        parameter: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[serde(rename = "HorizonError")]
    Horizon { horizon: f64, bound: f64 },
    #[serde(rename = "GridError")]
    Grid {
        dt: f64,
        n_steps: usize,
        horizon: f64,
    },
    #[serde(rename = "ConfigError")]
    Config { message: String },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::Range { .. } => "RangeError",
            Violation::Horizon { .. } => "HorizonError",
            Violation::Grid { .. } => "GridError",
            Violation::Config { .. } => "ConfigError",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Range {
                parameter,
                value,
                lower,
                upper,
            } => write!(f, "{parameter} = {value} outside ({lower}, {upper})"),
            Violation::Horizon { horizon, bound } => {
                write!(f, "horizon T = {horizon} must be < {bound}")
            }
            Violation::Grid {
                dt,
                n_steps,
                horizon,
            } => write!(
                f,
                "dt·n_steps = {dt}·{n_steps} does not match T = {horizon}"
            ),
            Violation::Config { message } => f.write_str(message),
        }
    }
}

/// Every constraint an input violated.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("invalid configuration: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn has(&self, kind: &str) -> bool {
        self.violations.iter().any(|v| v.kind() == kind)
    }
}

/// Parameters and grid that passed [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidatedConfig {
    params: MarketParams,
    config: SimConfig,
}

impl ValidatedConfig {
    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }
}

fn check_open(out: &mut Vec<Violation>, name: &str, value: f64, lower: f64, upper: f64) {
    if !(value > lower && value < upper) {
        out.push(Violation::Range {
            parameter: name.to_string(),
            value,
            lower,
            upper,
        });
    }
}

/// Checks every constraint and reports all violations at once.
pub fn validate_params(
    p: &MarketParams,
    c: &SimConfig,
) -> Result<ValidatedConfig, ValidationError> {
    let mut out = Vec::new();
    let model = p.weight_model();

    if p.example == Example::Ex5 && model == Example::Ex5 {
        out.push(Violation::Config {
            message: "Ex5 must wrap one of Ex1..Ex4".into(),
        });
    }
    if p.example != Example::Ex5 && p.kappa != KappaMode::Gbm {
        out.push(Violation::Config {
            message: format!("kappa mode {:?} is only available for Ex5", p.kappa),
        });
    }

    let a_upper = model.a_upper();
    check_open(&mut out, "a", p.a, 0.0, a_upper);

    if !(p.horizon > 0.0 && p.horizon.is_finite()) {
        check_open(&mut out, "T", p.horizon, 0.0, f64::INFINITY);
    } else if p.a > 0.0 && p.a < a_upper {
        if let Some(bound) = model.horizon_bound(p.a) {
            if p.horizon >= bound {
                out.push(Violation::Horizon {
                    horizon: p.horizon,
                    bound,
                });
            }
        }
    }

    if !(c.dt > 0.0 && c.dt.is_finite())
        || c.n_steps == 0
        || (c.dt * c.n_steps as f64 - p.horizon).abs() > GRID_TOLERANCE
    {
        out.push(Violation::Grid {
            dt: c.dt,
            n_steps: c.n_steps,
            horizon: p.horizon,
        });
    }

    if c.n_paths == 0 {
        out.push(Violation::Config {
            message: "n_paths must be at least 1".into(),
        });
    }
    if !(c.boundary_epsilon > 0.0 && c.boundary_epsilon <= MAX_BOUNDARY_EPSILON) {
        out.push(Violation::Range {
            parameter: "boundary_epsilon".into(),
            value: c.boundary_epsilon,
            lower: 0.0,
            upper: MAX_BOUNDARY_EPSILON,
        });
    }
    if p.a > 0.0 {
        check_open(&mut out, "psi0", c.psi0, -p.a, p.a);
    }
    if !c.theta0.is_finite() {
        out.push(Violation::Config {
            message: "theta0 must be finite".into(),
        });
    }

    if out.is_empty() {
        Ok(ValidatedConfig {
            params: *p,
            config: *c,
        })
    } else {
        Err(ValidationError { violations: out })
    }
}

/// Location of the first grid point that broke an almost-sure claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationSite {
    pub path_index: u64,
    pub step: usize,
}

/// Outcome of one checked property over a Monte Carlo batch.
///
/// Almost-sure claims pass only with zero violations; expectation claims
/// pass when the estimate lies within three standard errors of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub invariant_name: String,
    pub n_paths: u64,
    pub n_violations: u64,
    pub worst_margin: f64,
    pub point_estimate: f64,
    pub std_error: Option<f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<ViolationSite>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<VerdictReport>,
}

impl VerdictReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            invariant_name: name.into(),
            n_paths: 0,
            n_violations: 0,
            worst_margin: f64::INFINITY,
            point_estimate: 0.0,
            std_error: None,
            pass: false,
            first_violation: None,
            extra: BTreeMap::new(),
            components: Vec::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}
