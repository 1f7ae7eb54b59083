//! Benchmark fixtures shared by the criterion targets.

use spt_core::model::validate_params;
use spt_core::{Example, MarketParams, SimConfig, ValidatedConfig};

/// A validated single-path configuration for `example` on `n_steps` steps over `T = 1`.
pub fn fixture(example: Example, n_steps: usize) -> ValidatedConfig {
    let a = if example.uses_psi() { 0.05 } else { 0.2 };
    let params = MarketParams::new(example, a, 1.0);
    let config = SimConfig::new(1.0, 1.0 / n_steps as f64, 1, 42);
    validate_params(&params, &config).expect("valid fixture")
}
