//! Simulation laboratory for three-asset diverse markets driven by a
//! Brownian common factor `W`, a rotation angle `θ` and, in the annulus
//! markets, a bounded radial diffusion `ψ`.
//!
//! The crate is split by role:
//!
//! * [`model`] holds parameters, validation and the shared domain types.
//! * [`sde`] produces reproducible driver paths `(W, θ, B, ψ, φ)`.
//! * [`markets`] turns driver paths into capitalizations, weights, relative
//!   variances and diffusion loading matrices.
//! * [`analytics`] computes excess growth rates, the quadratic generated
//!   portfolio, relative values and arbitrage/support diagnostics.
//! * [`verify`] runs Monte Carlo batches and renders each property as a
//!   [`VerdictReport`].

pub mod analytics;
pub mod markets;
pub mod model;
pub mod sde;
pub mod verify;

pub use analytics::{ArbitrageVerdict, PortfolioKind, PortfolioProcess};
pub use markets::{Kappa, MarketPath};
pub use model::{
    Example, KappaMode, MarketParams, SimConfig, ValidatedConfig, ValidationError, VerdictReport,
    Violation,
};
pub use sde::{DriverPath, RngStream};
pub use verify::{Claim, ClaimSuite};

/// Number of assets in every market.
pub const N_ASSETS: usize = 3;
