//! Excess growth rates, the quadratic generated portfolio, relative value
//! processes and arbitrage/support diagnostics.

use std::f64::consts::TAU;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markets::{annulus_bounds, sum_sq, MarketPath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("test region does not intersect the annulus")]
    EmptyRegion,
    #[error("no samples supplied")]
    NoSamples,
}

/// Portfolio generating functions. Only `S(x) = (x₁² + x₂² + x₃²)^{1/2}` is
/// needed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratingFunction {
    QuadraticRoot,
}

impl GeneratingFunction {
    pub fn value(self, x: &[f64; 3]) -> f64 {
        match self {
            GeneratingFunction::QuadraticRoot => sum_sq(x).sqrt(),
        }
    }

    /// Weights `π_i = x_i ∂_i log S(x)`, i.e. `x_i²/Σx_j²`.
    pub fn portfolio(self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            GeneratingFunction::QuadraticRoot => {
                let q = sum_sq(x);
                [x[0] * x[0] / q, x[1] * x[1] / q, x[2] * x[2] / q]
            }
        }
    }
}

/// `γ*_μ = ½ Σ μ_i τ_ii` at grid point `k`.
pub fn market_excess_growth(market: &MarketPath, k: usize) -> f64 {
    let mu = &market.weights[k];
    let tau = &market.tau_diag[k];
    0.5 * (mu[0] * tau[0] + mu[1] * tau[1] + mu[2] * tau[2])
}

pub fn market_excess_growth_path(market: &MarketPath) -> Vec<f64> {
    (0..market.len())
        .map(|k| market_excess_growth(market, k))
        .collect()
}

/// `π_i = μ_i² / Σ μ_j²` at grid point `k`.
pub fn generated_portfolio(market: &MarketPath, k: usize) -> [f64; 3] {
    GeneratingFunction::QuadraticRoot.portfolio(&market.weights[k])
}

/// Market-relative covariance `τ_ij`, from the loading rows minus the
/// μ-weighted market row.
pub fn relative_covariance(sigma: &Matrix3<f64>, mu: &[f64; 3]) -> Matrix3<f64> {
    let mut rel = *sigma;
    for j in 0..3 {
        let mkt = mu[0] * sigma[(0, j)] + mu[1] * sigma[(1, j)] + mu[2] * sigma[(2, j)];
        for i in 0..3 {
            rel[(i, j)] -= mkt;
        }
    }
    rel * rel.transpose()
}

/// `τ_ππ = |Σ_i π_i·(relative loading row i)|²`.
pub fn tau_pi_pi(pi: &[f64; 3], sigma: &Matrix3<f64>, mu: &[f64; 3]) -> f64 {
    let mut norm = 0.0;
    for j in 0..3 {
        let mkt = mu[0] * sigma[(0, j)] + mu[1] * sigma[(1, j)] + mu[2] * sigma[(2, j)];
        let port = pi[0] * sigma[(0, j)] + pi[1] * sigma[(1, j)] + pi[2] * sigma[(2, j)];
        norm += (port - mkt) * (port - mkt);
    }
    norm
}

/// `γ*_π = ½(Σ π_i τ_ii − τ_ππ)`.
pub fn portfolio_excess_growth(
    pi: &[f64; 3],
    tau_diag: &[f64; 3],
    sigma: &Matrix3<f64>,
    mu: &[f64; 3],
) -> f64 {
    let avg = pi[0] * tau_diag[0] + pi[1] * tau_diag[1] + pi[2] * tau_diag[2];
    0.5 * (avg - tau_pi_pi(pi, sigma, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortfolioKind {
    Market,
    GeneratedQuadratic,
    Custom,
}

/// Weights of a portfolio along a path with its excess growth and
/// `ln(Z_π/Z_μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProcess {
    pub kind: PortfolioKind,
    pub pi: Vec<[f64; 3]>,
    pub gamma_star: Vec<f64>,
    pub rel_log_value: Vec<f64>,
}

impl PortfolioProcess {
    pub fn market(market: &MarketPath) -> Self {
        Self {
            kind: PortfolioKind::Market,
            pi: market.weights.clone(),
            gamma_star: market_excess_growth_path(market),
            rel_log_value: vec![0.0; market.len()],
        }
    }

    /// The portfolio generated by `S(x) = |x|`, valued with the master equation.
    pub fn generated(market: &MarketPath) -> Self {
        let pi: Vec<_> = (0..market.len())
            .map(|k| generated_portfolio(market, k))
            .collect();
        let gamma_star = excess_growth_path(market, &pi);
        let rel_log_value = relative_log_value_master(market, &gamma_star);
        Self {
            kind: PortfolioKind::GeneratedQuadratic,
            pi,
            gamma_star,
            rel_log_value,
        }
    }

    /// Arbitrary weights, valued by left-point integration.
    pub fn custom(market: &MarketPath, pi: Vec<[f64; 3]>) -> Self {
        let gamma_star = excess_growth_path(market, &pi);
        let rel_log_value = integrate_relative_value(market, &pi, &gamma_star, Scheme::LeftPoint);
        Self {
            kind: PortfolioKind::Custom,
            pi,
            gamma_star,
            rel_log_value,
        }
    }
}

pub fn excess_growth_path(market: &MarketPath, pi: &[[f64; 3]]) -> Vec<f64> {
    pi.iter()
        .enumerate()
        .map(|(k, p)| {
            portfolio_excess_growth(p, &market.tau_diag[k], &market.sigma[k], &market.weights[k])
        })
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Master equation for the `S`-generated portfolio:
/// `ln(Z_π/Z_μ)(t_k) = ln S(μ(t_k)) − ln S(μ(0)) − Σ_{j<k} γ*_π(t_j) Δt`.
pub fn relative_log_value_master(market: &MarketPath, gamma_pi: &[f64]) -> Vec<f64> {
    let s = GeneratingFunction::QuadraticRoot;
    let ln_s0 = s.value(&market.weights[0]).ln();
    let mut drift = CompensatedSum::default();
    let mut out = Vec::with_capacity(market.len());
    out.push(0.0);
    for k in 1..market.len() {
        drift.add(gamma_pi[k - 1] * (market.t_grid[k] - market.t_grid[k - 1]));
        out.push((s.value(&market.weights[k]).ln() - ln_s0) - drift.value());
    }
    out
}

/// Discretization of `∫ Σ_i π_i d ln μ_i + ∫ γ*_π dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Itô left-point sums; strong order ½.
    LeftPoint,
    /// Trapezoidal (Stratonovich) sums for `π_i ∝ μ_i^exponent`, corrected
    /// by the bracket `½ d⟨π_i, ln μ_i⟩ = ½ Σ_j p π_i(δ_ij − π_j) τ_ij dt`.
    Trapezoid { exponent: f64 },
}

/// Relative log value by direct integration along the path, independent of
/// the generating function.
pub fn relative_log_value_direct(market: &MarketPath, pf: &PortfolioProcess) -> Vec<f64> {
    match pf.kind {
        PortfolioKind::Market => vec![0.0; market.len()],
        PortfolioKind::GeneratedQuadratic => integrate_relative_value(
            market,
            &pf.pi,
            &pf.gamma_star,
            Scheme::Trapezoid { exponent: 2.0 },
        ),
        PortfolioKind::Custom => {
            integrate_relative_value(market, &pf.pi, &pf.gamma_star, Scheme::LeftPoint)
        }
    }
}

pub fn integrate_relative_value(
    market: &MarketPath,
    pi: &[[f64; 3]],
    gamma_pi: &[f64],
    scheme: Scheme,
) -> Vec<f64> {
    let n = market.len();
    let mut acc = CompensatedSum::default();
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    for k in 0..n.saturating_sub(1) {
        let dt = market.t_grid[k + 1] - market.t_grid[k];
        let mu0 = &market.weights[k];
        let mu1 = &market.weights[k + 1];
        let mut step = gamma_pi[k] * dt;
        match scheme {
            Scheme::LeftPoint => {
                for i in 0..3 {
                    step += pi[k][i] * (mu1[i] / mu0[i]).ln();
                }
            }
            Scheme::Trapezoid { exponent } => {
                for i in 0..3 {
                    step += 0.5 * (pi[k][i] + pi[k + 1][i]) * (mu1[i] / mu0[i]).ln();
                }
                let tau = relative_covariance(&market.sigma[k], mu0);
                let p = &pi[k];
                let mut bracket = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        bracket += exponent * p[i] * (delta - p[j]) * tau[(i, j)];
                    }
                }
                step -= 0.5 * bracket * dt;
            }
        }
        acc.add(step);
        out.push(acc.value());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArbitrageKind {
    Instantaneous,
    Horizon,
}

/// Which portfolio sits in the numerator of the relative value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `Z_μ / Z_π`.
    MarketOverGenerated,
    /// `Z_π / Z_μ`.
    GeneratedOverMarket,
}

impl Direction {
    pub fn pair(self) -> (&'static str, &'static str) {
        match self {
            Direction::MarketOverGenerated => ("market", "generated-quadratic"),
            Direction::GeneratedOverMarket => ("generated-quadratic", "market"),
        }
    }
}

/// Outcome of a monotonicity scan of `Z_ν/Z_η` over sampled time pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageVerdict {
    pub kind: ArbitrageKind,
    pub nu: String,
    pub eta: String,
    pub n_pairs: u64,
    pub n_violations: u64,
    pub violation_fraction: f64,
    pub pass: bool,
}

impl ArbitrageVerdict {
    fn from_tally(direction: Direction, tally: &PairTally) -> Self {
        let (nu, eta) = direction.pair();
        let fraction = if tally.pairs == 0 {
            0.0
        } else {
            tally.violations as f64 / tally.pairs as f64
        };
        Self {
            kind: ArbitrageKind::Instantaneous,
            nu: nu.into(),
            eta: eta.into(),
            n_pairs: tally.pairs,
            n_violations: tally.violations,
            violation_fraction: fraction,
            pass: tally.violations == 0,
        }
    }

    /// Combines verdicts over disjoint path sets.
    pub fn merge(&self, other: &Self) -> Self {
        let pairs = self.n_pairs + other.n_pairs;
        let violations = self.n_violations + other.n_violations;
        Self {
            n_pairs: pairs,
            n_violations: violations,
            violation_fraction: if pairs == 0 {
                0.0
            } else {
                violations as f64 / pairs as f64
            },
            pass: violations == 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairTally {
    pub pairs: u64,
    pub violations: u64,
    pub first_violation: Option<usize>,
}

/// Counts pairs `t₁ < t₂` with `log_ratio(t₂) ≤ log_ratio(t₁)`: every adjacent
/// pair plus `n_random` random pairs at least two steps apart.
pub fn monotone_pair_tally<R: Rng>(log_ratio: &[f64], rng: &mut R, n_random: usize) -> PairTally {
    let mut tally = PairTally::default();
    let record = |i: usize, j: usize, tally: &mut PairTally| {
        tally.pairs += 1;
        if log_ratio[j] <= log_ratio[i] {
            tally.violations += 1;
            tally.first_violation.get_or_insert(j);
        }
    };
    for k in 1..log_ratio.len() {
        record(k - 1, k, &mut tally);
    }
    let n = log_ratio.len();
    if n >= 3 {
        for _ in 0..n_random {
            let i = rng.random_range(0..n - 2);
            let j = rng.random_range(i + 2..n);
            record(i, j, &mut tally);
        }
    }
    tally
}

/// Definition-2 check on one path for the pair (market, generated portfolio).
pub fn instantaneous_arbitrage_check<R: Rng>(
    pf: &PortfolioProcess,
    direction: Direction,
    rng: &mut R,
    n_random: usize,
) -> (ArbitrageVerdict, PairTally) {
    let series: Vec<f64> = match direction {
        Direction::MarketOverGenerated => pf.rel_log_value.iter().map(|x| -x).collect(),
        Direction::GeneratedOverMarket => pf.rel_log_value.clone(),
    };
    let tally = monotone_pair_tally(&series, rng, n_random);
    (ArbitrageVerdict::from_tally(direction, &tally), tally)
}

/// Distance from the centroid and angle in the simplex plane, using the
/// basis `e₁ = (2,−1,−1)/√6`, `e₂ = (0,−1,1)/√2`. For weights
/// `1/3 + r·cos(θ + (i−1)2π/3)` this gives `(r·√(3/2), θ mod 2π)`.
pub fn planar_coords(mu: &[f64; 3]) -> (f64, f64) {
    let d = [mu[0] - 1.0 / 3.0, mu[1] - 1.0 / 3.0, mu[2] - 1.0 / 3.0];
    let x = (2.0 * d[0] - d[1] - d[2]) / 6f64.sqrt();
    let y = (d[2] - d[1]) / 2f64.sqrt();
    (x.hypot(y), y.atan2(x).rem_euclid(TAU))
}

/// Open set `{r_lo < |μ − c| < r_hi, angle ∈ (angle_lo, angle_lo + angle_width)}`.
/// A width of `2π` or more drops the angular constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnularSector {
    pub r_lo: f64,
    pub r_hi: f64,
    pub angle_lo: f64,
    pub angle_width: f64,
}

impl AnnularSector {
    /// The annulus `3a²/2 < |μ − c|² < 27a²/2`.
    pub fn annulus(a: f64) -> Self {
        let r = a * 1.5f64.sqrt();
        Self {
            r_lo: r,
            r_hi: 3.0 * r,
            angle_lo: 0.0,
            angle_width: TAU,
        }
    }

    pub fn contains(&self, mu: &[f64; 3]) -> bool {
        let (r, angle) = planar_coords(mu);
        if !(r > self.r_lo && r < self.r_hi) {
            return false;
        }
        if self.angle_width >= TAU {
            return true;
        }
        let d = (angle - self.angle_lo).rem_euclid(TAU);
        d > 0.0 && d < self.angle_width
    }

    pub fn intersects_annulus(&self, a: f64) -> bool {
        let ann = Self::annulus(a);
        self.r_lo < self.r_hi
            && self.angle_width > 0.0
            && self.r_lo < ann.r_hi
            && self.r_hi > ann.r_lo
    }
}

/// Membership test against the annulus written with `Σμ_i²`.
pub fn in_annulus(mu: &[f64; 3], a: f64) -> bool {
    let (lo, hi) = annulus_bounds(a);
    let q = sum_sq(mu);
    q > lo && q < hi
}

/// Monte Carlo estimate of `P[μ(t) ∈ U]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub t: f64,
    pub n_paths: u64,
    pub hits: u64,
    pub frequency: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Smallest `S(μ(t))` over the sample.
    pub min_s: f64,
    /// `inf{S(x) : x ∈ A}`.
    pub inf_s_annulus: f64,
}

pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Number of samples inside `region`; no intersection check.
pub fn region_frequency(samples: &[[f64; 3]], region: &AnnularSector) -> u64 {
    samples.iter().filter(|mu| region.contains(mu)).count() as u64
}

/// Estimates `P[μ(t) ∈ U]` from the weights of many paths at one time `t`.
pub fn support_property_check(
    a: f64,
    region: &AnnularSector,
    t: f64,
    samples: &[[f64; 3]],
) -> Result<SupportEstimate, AnalyticsError> {
    if !region.intersects_annulus(a) {
        return Err(AnalyticsError::EmptyRegion);
    }
    if samples.is_empty() {
        return Err(AnalyticsError::NoSamples);
    }
    let hits = region_frequency(samples, region);
    let n = samples.len() as u64;
    let (ci_low, ci_high) = wilson_interval(hits, n);
    let s = GeneratingFunction::QuadraticRoot;
    let min_s = samples
        .iter()
        .map(|mu| s.value(mu))
        .fold(f64::INFINITY, f64::min);
    Ok(SupportEstimate {
        t,
        n_paths: n,
        hits,
        frequency: hits as f64 / n as f64,
        ci_low,
        ci_high,
        min_s,
        inf_s_annulus: annulus_bounds(a).0.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::{build_market, phase_trig, Kappa};
    use crate::model::{validate_params, Example, MarketParams, SimConfig};
    use crate::sde::{simulate_drivers, DriverPath, Increments, RngStream};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ex1_point(theta: f64) -> MarketPath {
        let inc = Increments {
            dw: vec![],
            dtheta: vec![],
            db: vec![],
        };
        let d = DriverPath::from_increments(0, &inc, 1e-3, 0.2, theta, 0.0, 1e-12);
        let p = MarketParams::new(Example::Ex1, 0.2, 1.0);
        build_market(&p, &d, &Kappa::gbm(&d)).unwrap()
    }

    fn path(ex: Example, a: f64, t: f64, dt: f64, seed: u64) -> MarketPath {
        let p = MarketParams::new(ex, a, t);
        let v = validate_params(&p, &SimConfig::new(t, dt, 1, seed)).unwrap();
        let d = simulate_drivers(&v, 0);
        build_market(&p, &d, &Kappa::gbm(&d)).unwrap()
    }

    /// γ*_μ from a central finite difference of μ_i in θ:
    /// d⟨μ_i⟩/dt = (∂μ_i/∂θ)², so γ*_μ = ½ Σ (∂μ_i/∂θ)²/μ_i.
    fn gamma_mu_fd_oracle(a: f64, theta: f64) -> f64 {
        let h = 1e-5;
        let mu = |th: f64| {
            let c = [0.0, 2.0, 4.0].map(|k: f64| (th + k * std::f64::consts::PI / 3.0).cos());
            c.map(|ci| 1.0 / 3.0 + a * ci)
        };
        let (up, dn, mid) = (mu(theta + h), mu(theta - h), mu(theta));
        (0..3)
            .map(|i| {
                let d = (up[i] - dn[i]) / (2.0 * h);
                0.5 * d * d / mid[i]
            })
            .sum()
    }

    #[test]
    fn ex1_gamma_mu_at_zero() {
        let m = ex1_point(0.0);
        let g = market_excess_growth(&m, 0);
        // ½·2·(7/30)·(0.03/(7/30)²) = 0.9/7
        assert!((g - 0.128_571_428_571_428_5).abs() < 1e-12);
        assert!((g - gamma_mu_fd_oracle(0.2, 0.0)).abs() < 1e-8);
        assert!(g > 0.045);
    }

    #[test]
    fn ex1_gamma_mu_at_right_angle() {
        let m = ex1_point(FRAC_PI_2);
        let g = market_excess_growth(&m, 0);
        let oracle = gamma_mu_fd_oracle(0.2, FRAC_PI_2);
        assert!((g - oracle).abs() < 1e-8, "{g} vs {oracle}");
        assert!((g - 0.101_095_890_410_958_9).abs() < 1e-12);
        assert!(g > 0.045);
    }

    #[test]
    fn uniform_weights_generate_uniform_portfolio() {
        let pi = GeneratingFunction::QuadraticRoot.portfolio(&[1.0 / 3.0; 3]);
        for p in pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ex1_generated_portfolio_at_zero() {
        let m = ex1_point(0.0);
        let pi = generated_portfolio(&m, 0);
        // μ² = (0.28444…, 0.05444…, 0.05444…), Σ = 0.39333…
        assert!((pi[0] - 0.723_163_841_807_909_6).abs() < 1e-12);
        assert!((pi[1] - 0.138_418_079_096_045_2).abs() < 1e-12);
        assert!((pi[2] - pi[1]).abs() < 1e-15);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ex1_portfolio_excess_growth_closed_form() {
        let a: f64 = 0.2;
        let closed = 3.0 * a * a / (4.0 / 3.0 + 6.0 * a * a);
        assert!((closed - 0.076_271_186_440_677_97).abs() < 1e-15);
        for theta in [0.0, 0.3, 1.7, 4.0] {
            let m = ex1_point(theta);
            let pi = generated_portfolio(&m, 0);
            let half_avg: f64 = 0.5 * (0..3).map(|i| pi[i] * m.tau_diag[0][i]).sum::<f64>();
            assert!((half_avg - closed).abs() < 1e-10);
            assert!(tau_pi_pi(&pi, &m.sigma[0], &m.weights[0]) < 1e-12);
            let g = portfolio_excess_growth(&pi, &m.tau_diag[0], &m.sigma[0], &m.weights[0]);
            assert!((g - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tau_zero_growth() {
        let g = portfolio_excess_growth(
            &[0.2, 0.3, 0.5],
            &[0.0; 3],
            &Matrix3::zeros(),
            &[0.3, 0.3, 0.4],
        );
        assert_eq!(g, 0.0);
    }

    #[test]
    fn ex1_master_is_a_ramp() {
        let a: f64 = 0.2;
        let closed = 3.0 * a * a / (4.0 / 3.0 + 6.0 * a * a);
        let mut terminal = Vec::new();
        for seed in [1, 2, 3] {
            let m = path(Example::Ex1, a, 1.0, 1e-3, seed);
            let pf = PortfolioProcess::generated(&m);
            assert_eq!(pf.rel_log_value[0], 0.0);
            for (k, v) in pf.rel_log_value.iter().enumerate() {
                assert!((v + closed * m.t_grid[k]).abs() < 1e-12);
            }
            terminal.push(*pf.rel_log_value.last().unwrap());
        }
        assert!((terminal[0] - terminal[1]).abs() < 1e-12);
        assert!((terminal[0] - terminal[2]).abs() < 1e-12);
    }

    #[test]
    fn ex4_master_varies_across_paths() {
        let finals: Vec<f64> = (0..100)
            .map(|s| {
                let m = path(Example::Ex4, 0.05, 1.0, 1e-2, s);
                *PortfolioProcess::generated(&m)
                    .rel_log_value
                    .last()
                    .unwrap()
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
        assert!(var.sqrt() > 0.0);
    }

    #[test]
    fn direct_matches_master_on_ex1() {
        let m = path(Example::Ex1, 0.2, 1.0, 1e-4, 21);
        let pf = PortfolioProcess::generated(&m);
        let direct = relative_log_value_direct(&m, &pf);
        let diff = (direct.last().unwrap() - pf.rel_log_value.last().unwrap()).abs();
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn direct_disagreement_shrinks_with_dt() {
        let mean_err = |dt: f64| {
            (0..50)
                .map(|s| {
                    let m = path(Example::Ex1, 0.2, 1.0, dt, 100 + s);
                    let pf = PortfolioProcess::generated(&m);
                    let d = relative_log_value_direct(&m, &pf);
                    (d.last().unwrap() - pf.rel_log_value.last().unwrap()).abs()
                })
                .sum::<f64>()
                / 50.0
        };
        let coarse = mean_err(1e-3);
        let fine = mean_err(2.5e-4);
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn left_point_converges_too() {
        // Strong order ½: mean |error| at dt/16 should drop by roughly 4.
        let mean_err = |dt: f64| {
            (0..40)
                .map(|s| {
                    let m = path(Example::Ex1, 0.2, 1.0, dt, 300 + s);
                    let pf = PortfolioProcess::generated(&m);
                    let lp =
                        integrate_relative_value(&m, &pf.pi, &pf.gamma_star, Scheme::LeftPoint);
                    (lp.last().unwrap() - pf.rel_log_value.last().unwrap()).abs()
                })
                .sum::<f64>()
                / 40.0
        };
        let coarse = mean_err(1.6e-3);
        let fine = mean_err(1e-4);
        assert!(fine < 0.5 * coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn market_relative_to_itself_is_zero() {
        let m = path(Example::Ex3, 0.05, 1.0, 1e-2, 5);
        let pf = PortfolioProcess::market(&m);
        assert!(relative_log_value_direct(&m, &pf).iter().all(|&x| x == 0.0));
        // The generic integrator on π = μ only carries discretization noise.
        let noise = |dt: f64| {
            (0..20)
                .map(|s| {
                    let m = path(Example::Ex3, 0.05, 1.0, dt, 40 + s);
                    let c = PortfolioProcess::custom(&m, m.weights.clone());
                    c.rel_log_value
                        .iter()
                        .fold(0.0f64, |acc, x| acc.max(x.abs()))
                })
                .sum::<f64>()
                / 20.0
        };
        let (coarse, fine) = (noise(1e-2), noise(1e-4));
        assert!(fine < 0.25 * coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn ex1_is_instantaneous_arbitrage() {
        let m = path(Example::Ex1, 0.2, 1.0, 1e-3, 9);
        let pf = PortfolioProcess::generated(&m);
        let mut rng = RngStream::new(9, 0).auxiliary(0);
        let (v, tally) =
            instantaneous_arbitrage_check(&pf, Direction::MarketOverGenerated, &mut rng, 1000);
        assert!(v.pass);
        assert_eq!(v.n_pairs, 2000);
        assert_eq!(tally.first_violation, None);
    }

    #[test]
    fn ex4_is_not_instantaneous_arbitrage() {
        let m = path(Example::Ex4, 0.05, 1.0, 1e-3, 9);
        let pf = PortfolioProcess::generated(&m);
        let mut rng = RngStream::new(9, 0).auxiliary(0);
        for dir in [
            Direction::MarketOverGenerated,
            Direction::GeneratedOverMarket,
        ] {
            let (v, _) = instantaneous_arbitrage_check(&pf, dir, &mut rng, 1000);
            assert!(!v.pass);
            assert!(v.n_violations > 0);
        }
    }

    #[test]
    fn pair_tally_excludes_ties_of_index() {
        let mut rng = RngStream::new(1, 1).auxiliary(0);
        let t = monotone_pair_tally(&[0.0, 1.0, 2.0, 3.0], &mut rng, 500);
        assert_eq!(t.pairs, 503);
        assert_eq!(t.violations, 0);
        let t = monotone_pair_tally(&[0.0, 1.0, 1.0], &mut rng, 0);
        assert_eq!(t.violations, 1);
        assert_eq!(t.first_violation, Some(2));
    }

    #[test]
    fn planar_coords_recover_radius_and_angle() {
        for (r, theta) in [(0.1, 0.0), (0.05, 2.0), (0.2, 5.5)] {
            let (c, _) = phase_trig(theta);
            let mu = c.map(|ci| 1.0 / 3.0 + r * ci);
            let (rad, ang) = planar_coords(&mu);
            assert!((rad - r * 1.5f64.sqrt()).abs() < 1e-14);
            let wrapped = (ang - theta + PI).rem_euclid(TAU) - PI;
            assert!(wrapped.abs() < 1e-12);
        }
    }

    #[test]
    fn support_on_whole_annulus_and_empty_region() {
        let a = 0.05;
        let samples: Vec<[f64; 3]> = (0..200)
            .map(|k| {
                let (c, _) = phase_trig(k as f64 * 0.1);
                c.map(|ci| 1.0 / 3.0 + 2.0 * a * ci)
            })
            .collect();
        let est = support_property_check(a, &AnnularSector::annulus(a), 0.5, &samples).unwrap();
        assert_eq!(est.hits, 200);
        assert_eq!(est.frequency, 1.0);
        assert!(est.min_s > est.inf_s_annulus);

        let outside = AnnularSector {
            r_lo: 4.0 * a,
            r_hi: 5.0 * a,
            angle_lo: 0.0,
            angle_width: TAU,
        };
        assert_eq!(
            support_property_check(a, &outside, 0.5, &samples),
            Err(AnalyticsError::EmptyRegion)
        );
        assert_eq!(region_frequency(&samples, &outside), 0);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
    }

    proptest! {
        #[test]
        fn generated_portfolio_preserves_argmax(x in 0.01f64..1.0, y in 0.01f64..1.0, z in 0.01f64..1.0) {
            let s = x + y + z;
            let mu = [x / s, y / s, z / s];
            let pi = GeneratingFunction::QuadraticRoot.portfolio(&mu);
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pi.iter().all(|&p| p >= 0.0));
            let argmax = |v: &[f64; 3]| (0..3).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
            let mut sorted = mu;
            sorted.sort_by(|p, q| q.total_cmp(p));
            if sorted[0] - sorted[1] > 1e-12 {
                prop_assert_eq!(argmax(&pi), argmax(&mu));
            }
        }
    }
}
