//! First-passage percolation on `Z^2` as a model of a spatially growing
//! population, with the statistics harness around it: genealogical forests of
//! sampled geodesics, branch-length spectra and site frequency spectra,
//! closed-form theory curves, geodesic-coalescence survival probes, and
//! numeric verification of the Brownian bridge / excursion / watermelon
//! small-gap laws.
//!
//! The library is fully deterministic: every random quantity is derived from
//! a 64-bit master seed through counter-based streams, so re-running any
//! experiment with the same configuration reproduces identical output bytes
//! regardless of worker count.

pub mod brownian;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod fpp;
pub mod genealogy;
pub mod numeric;
pub mod rng;
pub mod theory;
pub mod weights;

pub use error::{Error, Result};
