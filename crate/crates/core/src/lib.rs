//! Multifractal analysis toolkit for piecewise expanding interval maps with
//! full branches, including maps with parabolic (indifferent) fixed points.
//!
//! The crate is organised bottom-up:
//!
//! - [`interval_maps`]: branch maps (linear/Cantor systems, Manneville–Pomeau,
//!   Farey), inverse branches, fixed points and the parabolic hull.
//! - [`symbolic`]: words over the branch alphabet, cylinder intervals, the
//!   coding projection and itineraries.
//! - [`potentials`]: almost additive potentials evaluated on finite words,
//!   variation norms and brackets for the asymptotic average `Φ*(μ)`.
//! - [`measures`]: Bernoulli and finite-order Markov measures, their entropy,
//!   Lyapunov exponent, cylinder masses and sampling.
//! - [`spectrum`]: the variational dimension formula `sup h/λ` under a
//!   Birkhoff constraint, solved over Markov kernels.
//! - [`moran`]: block harvesting, concatenated measures on Moran sets built
//!   from two alternating measures, oscillation profiles and local dimension.
//! - [`dimension`]: box counting and log-log regression.
//! - [`config`] and [`cli`]: experiment descriptors and the batch front end.

pub mod cli;
pub mod config;
pub mod dimension;
pub mod error;
pub mod interval_maps;
pub mod measures;
pub mod moran;
pub mod optimize;
pub mod potentials;
pub mod spectrum;
pub mod symbolic;

pub use error::{Error, Result};
pub use interval_maps::{BranchMap, Interval, MapDescriptor, ParabolicHull};
pub use measures::MarkovMeasure;
pub use potentials::Potential;
pub use symbolic::{CylinderInterval, Word};
