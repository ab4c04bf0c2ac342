//! Wave-domain beamforming simulator for stacked-metasurface MIMO-OFDM links.
//!
//! Two programmable metasurface stacks replace digital precoding and
//! combining: every meta-atom applies a unit-modulus phase shift, and the
//! cascade of layer transmissions shapes the end-to-end channel of each OFDM
//! subcarrier toward a target diagonal matrix. The crate provides
//!
//! - the physical model: stack [`geometry`], Rayleigh-Sommerfeld layer
//!   [`propagation`], and a geometric multipath [`channel`] with per-subcarrier
//!   SVD targets;
//! - the [`objective`] algebra that turns the channel-fitting error into exact
//!   per-layer quadratic forms, and the block-coordinate-descent / penalized
//!   convex-concave [`optimizer`] that minimizes it;
//! - [`bandwidth`] search for the widest band that stays under a fitting-error
//!   threshold, and capacity/baseline [`evaluation`] with water-filling;
//! - a configuration-driven [`experiment`] runner with seeded, reproducible
//!   CSV artifacts (also exposed through the `simstack` binary).
//!
//! The `examples/` directory has one runnable example per capability; start
//! with `optimize_phases`.

pub mod bandwidth;
pub mod channel;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod objective;
pub mod optimizer;
pub mod propagation;
pub mod seeding;
pub mod synthetic;
pub mod system;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
