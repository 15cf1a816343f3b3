//! Seeded generation of the stochastic force, white in time and smooth in
//! space, in Fourier form.
//!
//! The physical force is `σ Σ_{m=1..K₀} sin(mx) Ẇ_m + cos(mx) Ẇ'_m` with
//! independent Brownian motions `W_m, W'_m`. Under the crate's Fourier
//! convention its mode `m` coefficient is
//!
//! ```text
//! f̂_m = (σ/2) (Ẇ'_m - i Ẇ_m),
//! ```
//!
//! so reconstructing the physical field from `{f̂_m, conj(f̂_m)}` is real by
//! construction. Over a step of length `dt` the white noise is realised as
//! `ΔW/dt` with `ΔW ~ Normal(0, dt)`, held constant within the step.
//!
//! Randomness comes from a ChaCha12 generator with Gaussian variates drawn
//! by `rand_distr`'s ziggurat sampler, so a `(seed, stream)` pair fixes the
//! whole force path bit-exactly. Streams partition the seed space for
//! parallel work: see [`StreamPurpose`].

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale, spatial extent and seed of the stochastic force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceConfig {
    /// Force strength σ (> 0; zero is allowed for unforced runs).
    pub sigma: f64,
    /// Number of forced sine/cosine pairs K₀ (modes `1..=k0` receive noise).
    pub k0: usize,
    /// Master seed; per-trajectory generators derive independent streams.
    pub seed: u64,
}

impl ForceConfig {
    pub fn new(sigma: f64, k0: usize, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::config(format!("sigma must be >= 0, got {sigma}")));
        }
        if k0 < 1 {
            return Err(Error::config("k0 must be at least 1"));
        }
        Ok(ForceConfig { sigma, k0, seed })
    }
}

/// Per-mode constant force values for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceIncrement {
    pub step_index: u64,
    /// `f̂_m` for `m = 1..=k0`; modes above `k0` are implicitly zero.
    pub modes: Vec<Complex64>,
    /// Step length over which the Brownian increments were drawn.
    pub dt: f64,
}

impl ForceIncrement {
    /// Zero force, for deterministic runs.
    pub fn zero(k0: usize, dt: f64) -> Self {
        ForceIncrement {
            step_index: 0,
            modes: vec![Complex64::new(0.0, 0.0); k0],
            dt,
        }
    }

    /// Force on signed mode `k` (conjugate for negative `k`, zero outside).
    pub fn mode_signed(&self, k: i64) -> Complex64 {
        let a = k.unsigned_abs() as usize;
        if a == 0 || a > self.modes.len() {
            return Complex64::new(0.0, 0.0);
        }
        if k > 0 {
            self.modes[a - 1]
        } else {
            self.modes[a - 1].conj()
        }
    }
}

/// Role of an RNG stream; combined with an index it names a substream of
/// the master seed. The scheme is part of the reproducibility contract:
/// `stream = (purpose << 32) | index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Fine-step forcing of trajectory `index`.
    Trajectory,
    /// Burn-in run preceding ensemble draws.
    BurnIn,
    /// Uniform draws of ensemble members from a burn-in trajectory.
    EnsembleDraw,
    /// NAR model noise `g^n` during reduced-model simulation.
    NarNoise,
    /// Fresh white-noise forcing for standalone NAR simulation.
    NarForce,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Trajectory => 0,
            StreamPurpose::BurnIn => 1,
            StreamPurpose::EnsembleDraw => 2,
            StreamPurpose::NarNoise => 3,
            StreamPurpose::NarForce => 4,
        }
    }
}

/// Builds the generator for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha12Rng {
    assert!(index < (1 << 32), "stream index out of range");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((purpose.tag() << 32) | index);
    rng
}

/// Stateful force generator for one trajectory.
pub struct ForceGen {
    cfg: ForceConfig,
    rng: ChaCha12Rng,
    step: u64,
}

impl ForceGen {
    /// Generator on the trajectory stream `index`.
    pub fn for_trajectory(cfg: &ForceConfig, index: u64) -> Self {
        ForceGen {
            cfg: *cfg,
            rng: stream_rng(cfg.seed, StreamPurpose::Trajectory, index),
            step: 0,
        }
    }

    /// Generator on an arbitrary stream.
    pub fn for_stream(cfg: &ForceConfig, purpose: StreamPurpose, index: u64) -> Self {
        ForceGen {
            cfg: *cfg,
            rng: stream_rng(cfg.seed, purpose, index),
            step: 0,
        }
    }

    pub fn config(&self) -> &ForceConfig {
        &self.cfg
    }

    /// Draws the per-step constant force: `ΔW_m, ΔW'_m ~ Normal(0, dt)`
    /// independently and `f̂_m = (σ/2)(ΔW'_m - i ΔW_m)/dt`.
    pub fn sample_increment(&mut self, dt: f64) -> Result<ForceIncrement> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        let sqrt_dt = dt.sqrt();
        let half_sigma = 0.5 * self.cfg.sigma;
        let modes = (0..self.cfg.k0)
            .map(|_| {
                let dw: f64 = self.rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                let dw_prime: f64 = self.rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                Complex64::new(half_sigma * dw_prime / dt, -half_sigma * dw / dt)
            })
            .collect();
        let inc = ForceIncrement {
            step_index: self.step,
            modes,
            dt,
        };
        self.step += 1;
        Ok(inc)
    }
}

/// Total Brownian increment over an observation window, rescaled by `1/δ`:
/// `f^n_k = (Σ_j f̂_k^{(j)} dt) / δ` with `δ = gap·dt`.
pub fn aggregate_over_gap(
    increments: &[ForceIncrement],
    gap: usize,
    delta: f64,
) -> Result<Vec<Complex64>> {
    if increments.len() != gap {
        return Err(Error::data(format!(
            "expected {gap} increments, got {}",
            increments.len()
        )));
    }
    let k0 = increments[0].modes.len();
    let mut total = vec![Complex64::new(0.0, 0.0); k0];
    for inc in increments {
        if inc.modes.len() != k0 {
            return Err(Error::data("inconsistent force widths in aggregation"));
        }
        for (t, m) in total.iter_mut().zip(&inc.modes) {
            *t += m * inc.dt;
        }
    }
    for t in total.iter_mut() {
        *t /= delta;
    }
    Ok(total)
}
