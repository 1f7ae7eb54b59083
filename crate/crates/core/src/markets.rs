//! Capitalizations, weights, relative variances and loading matrices of the
//! five example markets.
//!
//! Every market has weights of the form
//!
//! ```text
//! μ_i(t) = 1/3 + r(t)·s(t)·cos(θ(t) + (i−1)2π/3)
//! ```
//!
//! with radius `r = a` (Ex1, Ex2) or `r = φ` (Ex3, Ex4) and expansion factor
//! `s = e^{t/2}` (Ex2, Ex3) or `s = 1` (Ex1, Ex4). The total capitalization is
//! `κ`, which is `exp(W − t/2)` unless `Ex5` replaces it.
//!
//! The loading matrix row `i` holds the loadings of `d ln X_i` on
//! `(dW, dθ, dB)`.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::model::{Example, KappaMode, MarketParams, PHASES};
use crate::sde::DriverPath;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("grid mismatch: expected {expected} points, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("kappa must be positive, got {value} at step {step}")]
    NonPositiveKappa { step: usize, value: f64 },
    #[error("custom kappa must be supplied explicitly")]
    CustomKappaRequired,
}

/// Total capitalization path with its loading on `dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kappa {
    pub mode: KappaMode,
    pub values: Vec<f64>,
    /// Loading of `d ln κ` on `dW` per step.
    pub log_loading: Vec<f64>,
}

impl Kappa {
    /// `κ = exp(W − t/2)`.
    pub fn gbm(driver: &DriverPath) -> Self {
        let values = driver
            .w
            .iter()
            .zip(&driver.t_grid)
            .map(|(w, t)| (w - t / 2.0).exp())
            .collect();
        Self {
            mode: KappaMode::Gbm,
            values,
            log_loading: vec![1.0; driver.len()],
        }
    }

    /// `κ ≡ 1`.
    pub fn unit(len: usize) -> Self {
        Self {
            mode: KappaMode::Unit,
            values: vec![1.0; len],
            log_loading: vec![0.0; len],
        }
    }

    pub fn custom(values: Vec<f64>, log_loading: Vec<f64>) -> Self {
        Self {
            mode: KappaMode::Custom,
            values,
            log_loading,
        }
    }

    /// The built-in `κ` for the parameters' mode.
    pub fn for_params(params: &MarketParams, driver: &DriverPath) -> Result<Self, MarketError> {
        match params.kappa {
            KappaMode::Gbm => Ok(Self::gbm(driver)),
            KappaMode::Unit => Ok(Self::unit(driver.len())),
            KappaMode::Custom => Err(MarketError::CustomKappaRequired),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub params: MarketParams,
    pub path_index: u64,
    pub t_grid: Vec<f64>,
    pub caps: Vec<[f64; 3]>,
    pub total: Vec<f64>,
    pub weights: Vec<[f64; 3]>,
    pub tau_diag: Vec<[f64; 3]>,
    pub sigma: Vec<Matrix3<f64>>,
    pub kappa_loading: Vec<f64>,
}

impl MarketPath {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }
}

/// `(cos, sin)` of `θ + (i−1)2π/3`.
#[inline]
pub fn phase_trig(theta: f64) -> ([f64; 3], [f64; 3]) {
    let mut c = [0.0; 3];
    let mut s = [0.0; 3];
    for i in 0..3 {
        let (si, ci) = (theta + PHASES[i]).sin_cos();
        c[i] = ci;
        s[i] = si;
    }
    (c, s)
}

/// Radius `r` and expansion factor `s` of the weight circle at time `t`.
#[inline]
fn radius_scale(model: Example, a: f64, t: f64, phi: f64) -> (f64, f64) {
    let r = if model.uses_psi() { phi } else { a };
    let s = if model.expanding() {
        (t / 2.0).exp()
    } else {
        1.0
    };
    (r, s)
}

/// Closed-form weights of `model` at one grid point.
#[inline]
pub fn weights_at(model: Example, a: f64, t: f64, theta: f64, phi: f64) -> [f64; 3] {
    let (r, s) = radius_scale(model, a, t, phi);
    let (c, _) = phase_trig(theta);
    [
        1.0 / 3.0 + r * s * c[0],
        1.0 / 3.0 + r * s * c[1],
        1.0 / 3.0 + r * s * c[2],
    ]
}

/// Closed-form weights along a driver path, without the rest of the market.
pub fn weights_path(params: &MarketParams, driver: &DriverPath) -> Vec<[f64; 3]> {
    let model = params.weight_model();
    (0..driver.len())
        .map(|k| {
            weights_at(
                model,
                params.a,
                driver.t_grid[k],
                driver.theta[k],
                driver.phi[k],
            )
        })
        .collect()
}

/// Closed form of `Σ μ_i²` on the circle the weights occupy at time `t`.
pub fn sphere_target(model: Example, a: f64, t: f64, phi: f64) -> f64 {
    let (r, s) = radius_scale(model, a, t, phi);
    1.0 / 3.0 + 1.5 * r * r * s * s
}

/// Open interval for `Σ μ_i²` in the stationary annulus.
pub fn annulus_bounds(a: f64) -> (f64, f64) {
    (1.0 / 3.0 + 1.5 * a * a, 1.0 / 3.0 + 13.5 * a * a)
}

pub fn sum_sq(x: &[f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

/// Builds capitalizations, weights, `τ_ii` and loading matrices for one path.
pub fn build_market(
    params: &MarketParams,
    driver: &DriverPath,
    kappa: &Kappa,
) -> Result<MarketPath, MarketError> {
    let n = driver.len();
    for len in [
        driver.theta.len(),
        driver.w.len(),
        driver.phi.len(),
        driver.psi.len(),
    ] {
        if len != n {
            return Err(MarketError::GridMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if kappa.values.len() != n || kappa.log_loading.len() != n {
        return Err(MarketError::GridMismatch {
            expected: n,
            got: kappa.values.len().min(kappa.log_loading.len()),
        });
    }
    if let Some((step, &value)) = kappa
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(MarketError::NonPositiveKappa { step, value });
    }

    let weights = weights_path(params, driver);
    let caps = weights
        .iter()
        .zip(&kappa.values)
        .map(|(m, k)| [k * m[0], k * m[1], k * m[2]])
        .collect();

    let mut market = MarketPath {
        params: *params,
        path_index: driver.path_index,
        t_grid: driver.t_grid.clone(),
        caps,
        total: kappa.values.clone(),
        weights,
        tau_diag: Vec::new(),
        sigma: Vec::new(),
        kappa_loading: kappa.log_loading.clone(),
    };
    market.tau_diag = analytic_tau_diag(&market, driver);
    market.sigma = (0..n)
        .map(|k| diffusion_matrix(&market, driver, k))
        .collect();
    Ok(market)
}

/// `τ_ii = (1/μ_i²)·d⟨μ_i⟩/dt` from the closed forms:
///
/// * Ex1: `a² sin_i² / μ_i²`
/// * Ex2: `a² e^t sin_i² / μ_i²`
/// * Ex3: `[φ² e^t sin_i² + e^t cos_i² (a² − ψ²)²] / μ_i²`
/// * Ex4: `[φ² sin_i² + cos_i² (a² − ψ²)²] / μ_i²`
pub fn analytic_tau_diag(market: &MarketPath, driver: &DriverPath) -> Vec<[f64; 3]> {
    let model = market.params.weight_model();
    let a = market.params.a;
    (0..market.len())
        .map(|k| {
            let t = driver.t_grid[k];
            let (c, s) = phase_trig(driver.theta[k]);
            let mu = &market.weights[k];
            let (r, scale) = radius_scale(model, a, t, driver.phi[k]);
            let e_t = scale * scale;
            let g = a * a - driver.psi[k] * driver.psi[k];
            let mut out = [0.0; 3];
            for i in 0..3 {
                let mut num = r * r * e_t * s[i] * s[i];
                if model.uses_psi() {
                    num += e_t * c[i] * c[i] * g * g;
                }
                out[i] = num / (mu[i] * mu[i]);
            }
            out
        })
        .collect()
}

/// Loadings of `d ln X_i` on `(dW, dθ, dB)` at grid point `k`.
///
/// The `θ` column is `−r·s·sin_i/μ_i`, the `B` column `s·cos_i·(a² − ψ²)/μ_i`
/// (absent for Ex1/Ex2) and the `W` column the loading of `d ln κ`.
pub fn diffusion_matrix(market: &MarketPath, driver: &DriverPath, k: usize) -> Matrix3<f64> {
    let model = market.params.weight_model();
    let a = market.params.a;
    let (c, s) = phase_trig(driver.theta[k]);
    let (r, scale) = radius_scale(model, a, driver.t_grid[k], driver.phi[k]);
    let g = if model.uses_psi() {
        a * a - driver.psi[k] * driver.psi[k]
    } else {
        0.0
    };
    let mu = &market.weights[k];
    let w = market.kappa_loading[k];
    Matrix3::from_fn(|i, j| match j {
        0 => w,
        1 => -r * scale * s[i] / mu[i],
        _ => scale * c[i] * g / mu[i],
    })
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix3<f64>) -> [f64; 3] {
    let sv = m.singular_values();
    let mut out = [sv[0], sv[1], sv[2]];
    out.sort_by(|x, y| y.total_cmp(x));
    out
}
