use proptest::prelude::*;

use spt_core::analytics::{market_excess_growth, relative_log_value_direct};
use spt_core::markets::{annulus_bounds, build_market, sphere_target, sum_sq, weights_at};
use spt_core::model::validate_params;
use spt_core::sde::{realized_qv, simulate_drivers, DriverPath, Increments};
use spt_core::{Example, Kappa, MarketParams, PortfolioProcess, SimConfig};

const MODELS: [Example; 4] = [Example::Ex1, Example::Ex2, Example::Ex3, Example::Ex4];

/// A valid `(model, a, t, ψ)` with `t` strictly inside any horizon bound.
fn state() -> impl Strategy<Value = (Example, f64, f64, f64)> {
    (0usize..4, 0.001f64..0.999, 0.0f64..1.0, -0.999f64..0.999).prop_map(|(i, fa, ft, fpsi)| {
        let model = MODELS[i];
        let a = fa * model.a_upper();
        let t = model.horizon_bound(a).map_or(ft * 10.0, |b| ft * b * 0.999);
        (model, a, t, fpsi * a)
    })
}

proptest! {
    #[test]
    fn weights_are_diverse_and_on_their_surface(
        (model, a, t, psi) in state(),
        theta in -20.0f64..20.0,
    ) {
        let phi = 2.0 * a + psi;
        let mu = weights_at(model, a, t, theta, phi);
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(mu.iter().all(|&m| m > 0.0 && m < 2.0 / 3.0));
        let q = sum_sq(&mu);
        prop_assert!((q - sphere_target(model, a, t, phi)).abs() < 1e-12);
        if model == Example::Ex4 {
            let (lo, hi) = annulus_bounds(a);
            prop_assert!(q > lo && q < hi);
        }
    }

    #[test]
    fn excess_growth_clears_its_floor(
        (model, a, t, psi) in state(),
        theta in -20.0f64..20.0,
    ) {
        // One step of length t with no noise puts the state at (t, θ, ψ).
        let inc = Increments { dw: vec![0.0], dtheta: vec![0.0], db: vec![0.0] };
        let d = DriverPath::from_increments(0, &inc, t.max(1e-9), a, theta, psi, 1e-12);
        let params = MarketParams::new(model, a, t.max(1e-9));
        let m = build_market(&params, &d, &Kappa::gbm(&d)).unwrap();
        for k in 0..m.len() {
            prop_assert!(market_excess_growth(&m, k) > params.gamma_mu_floor());
        }
    }
}

#[test]
fn psi_quadratic_variation_converges_to_its_compensator() {
    let a = 0.05;
    // Trapezoidal ∫(a² − ψ²)² dt, independent of the library's left-point sum.
    let compensator = |psi: &[f64], dt: f64| {
        psi.windows(2)
            .map(|w| {
                let g0 = (a * a - w[0] * w[0]).powi(2);
                let g1 = (a * a - w[1] * w[1]).powi(2);
                0.5 * (g0 + g1) * dt
            })
            .sum::<f64>()
    };
    let mean_rel_err = |dt: f64| {
        let params = MarketParams::new(Example::Ex4, a, 1.0);
        let v = validate_params(&params, &SimConfig::new(1.0, dt, 200, 11)).unwrap();
        (0..200)
            .map(|p| {
                let d = simulate_drivers(&v, p);
                let qv = *realized_qv(&d.psi).last().unwrap();
                let c = compensator(&d.psi, dt);
                (qv - c).abs() / c
            })
            .sum::<f64>()
            / 200.0
    };
    let coarse = mean_rel_err(1e-3);
    let fine = mean_rel_err(2.5e-4);
    assert!(coarse < 0.05, "{coarse}");
    assert!(fine < 0.6 * coarse, "{fine} vs {coarse}");
}

#[test]
fn direct_route_tracks_the_master_route_off_the_circle() {
    // Ex3 has a genuinely stochastic relative value; both routes must still agree.
    let params = MarketParams::new(Example::Ex3, 0.05, 1.0);
    let v = validate_params(&params, &SimConfig::new(1.0, 1e-4, 20, 3)).unwrap();
    for p in 0..20 {
        let d = simulate_drivers(&v, p);
        let m = build_market(&params, &d, &Kappa::gbm(&d)).unwrap();
        let pf = PortfolioProcess::generated(&m);
        let direct = relative_log_value_direct(&m, &pf);
        let gap = direct
            .iter()
            .zip(&pf.rel_log_value)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-3, "path {p}: {gap}");
    }
}
