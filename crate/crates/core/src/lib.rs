//! Geometric modelling of spatial extremes.
//!
//! Observations on standard exponential margins are split into an ℓ₁ radius
//! and a simplex angle. Radii above an angle-dependent threshold follow a
//! truncated gamma law whose rate is a spatially parameterised gauge function,
//! angles get one of three models, and the fitted pair is used to simulate new
//! extreme events and estimate probabilities such as pairwise χ_u.

pub mod angular;
pub mod cli;
pub mod config;
pub mod error;
pub mod gauge;
pub mod io;
pub mod margins;
pub mod optim;
pub mod process;
pub mod quadrature;
pub mod radial;
pub mod spatial;
pub mod special;
pub mod study;
pub mod tail;
pub mod truncgamma;

pub use error::{GeomxError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/gauges.md")]
    pub struct Gauges;
    #[doc = include_str!("../../../book/src/radial.md")]
    pub struct Radial;
    #[doc = include_str!("../../../book/src/angular.md")]
    pub struct Angular;
    #[doc = include_str!("../../../book/src/tail.md")]
    pub struct Tail;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
