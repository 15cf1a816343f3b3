//! Pseudo-spectral simulation of the 1D stochastic Burgers equation and
//! data-driven NAR (nonlinear autoregression) closure models for its first
//! `K` Fourier modes.
//!
//! The crate covers the full pipeline:
//!
//! * [`spectral`] — Fourier fields, transforms and the dealiased quadratic
//!   nonlinearity;
//! * [`forcing`] — seeded white-in-time, smooth-in-space stochastic forcing;
//! * [`full_model`] — ETDRK4 time integration with the force held constant
//!   per step, CFL diagnostics and blow-up detection;
//! * [`dataset`] — generation and binary persistence of downsampled
//!   training trajectories with matched aggregated forces;
//! * [`nar`] — the reduced autoregressive model: feature construction,
//!   high-mode reconstruction, stepping and long simulations;
//! * [`estimate`] — per-wavenumber least-squares fitting of the NAR
//!   coefficients and noise scales;
//! * [`stats`] — validation statistics: energy spectra, invariant
//!   densities with Kolmogorov–Smirnov distances, autocorrelations;
//! * [`cli`] — experiment orchestration used by the `bnar` binary.
//!
//! The narrative guide lives in `book/`; its code snippets are compiled and
//! run as doc-tests so they cannot drift from the API.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod forcing;
pub mod full_model;
pub mod nar;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

/// Per-mode magnitude beyond which a trajectory is declared blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e5;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/forcing.md")]
    mod forcing {}
    #[doc = include_str!("../../../book/src/full-model.md")]
    mod full_model {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/nar-model.md")]
    mod nar_model {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
