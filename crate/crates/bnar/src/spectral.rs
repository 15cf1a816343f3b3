//! Fourier representation of real, zero-mean, periodic fields on `[0, 2π]`.
//!
//! Fields are stored as the complex modes `û_k` for `k = 1..=N` under the
//! continuum convention
//!
//! ```text
//! û_k = (1/2π) ∫ u(x) e^{-ikx} dx,   u(x) = Σ_k û_k e^{ikx},
//! ```
//!
//! so `sin(x)` has `û_1 = -i/2` and `cos(2x)` has `û_2 = 1/2`. The mean
//! mode `û_0` is identically zero (Galilean reduction) and never stored;
//! negative modes follow from `û_{-k} = conj(û_k)` and are never stored,
//! which makes the reality constraint unviolable. Model states also keep
//! the Nyquist slot `û_N = 0`; construction from physical samples and the
//! time integrator both enforce this, while derived quantities such as the
//! quadratic nonlinearity may legitimately fill it.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid and physical parameters of the pseudo-spectral discretisation.
///
/// `n_modes` is the maximum retained wavenumber `N`; the physical grid has
/// `2N` points with spacing `Δx = 2π/(2N)`. The dealiased quadratic product
/// is evaluated on `3N` points (the 3/2 rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_modes: usize,
    pub viscosity: f64,
}

impl GridConfig {
    pub fn new(n_modes: usize, viscosity: f64) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::config(format!(
                "n_modes must be at least 2, got {n_modes}"
            )));
        }
        if !(viscosity > 0.0) || !viscosity.is_finite() {
            return Err(Error::config(format!(
                "viscosity must be positive and finite, got {viscosity}"
            )));
        }
        Ok(GridConfig { n_modes, viscosity })
    }

    /// Domain length, fixed to `2π`.
    pub fn domain_length(&self) -> f64 {
        TAU
    }

    /// Number of physical grid points, `2N`.
    pub fn grid_points(&self) -> usize {
        2 * self.n_modes
    }

    /// Grid spacing `Δx = 2π/(2N)`.
    pub fn dx(&self) -> f64 {
        TAU / self.grid_points() as f64
    }
}

/// Complex Fourier modes `û_k` for `k = 1..=N` of a real zero-mean field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    modes: Vec<Complex64>,
}

impl SpectralField {
    /// The zero field on a grid with `n_modes` retained wavenumbers.
    pub fn zeros(n_modes: usize) -> Self {
        SpectralField {
            modes: vec![Complex64::new(0.0, 0.0); n_modes],
        }
    }

    /// Wraps a mode vector; index `0` of the vector is wavenumber `1`.
    pub fn from_modes(modes: Vec<Complex64>) -> Self {
        SpectralField { modes }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Mode of wavenumber `k`, `1 <= k <= N`.
    pub fn mode(&self, k: usize) -> Complex64 {
        assert!(k >= 1 && k <= self.modes.len(), "wavenumber {k} out of range");
        self.modes[k - 1]
    }

    pub fn set_mode(&mut self, k: usize, value: Complex64) {
        assert!(k >= 1 && k <= self.modes.len(), "wavenumber {k} out of range");
        self.modes[k - 1] = value;
    }

    /// Stored modes as a slice, index `i` holding wavenumber `i + 1`.
    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    /// Mode of signed wavenumber `k`, using `û_{-k} = conj(û_k)`, `û_0 = 0`
    /// and zero outside the stored range.
    pub fn mode_signed(&self, k: i64) -> Complex64 {
        let a = k.unsigned_abs() as usize;
        if a == 0 || a > self.modes.len() {
            return Complex64::new(0.0, 0.0);
        }
        let v = self.modes[a - 1];
        if k > 0 {
            v
        } else {
            v.conj()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.modes.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Energy of the stored (positive-wavenumber) modes, `Σ_{k≥1} |û_k|²`.
    pub fn energy(&self) -> f64 {
        self.modes.iter().map(|c| c.norm_sqr()).sum()
    }

    fn check_grid(&self, grid: &GridConfig) -> Result<()> {
        if self.modes.len() != grid.n_modes {
            return Err(Error::config(format!(
                "field has {} modes but grid expects {}",
                self.modes.len(),
                grid.n_modes
            )));
        }
        Ok(())
    }
}

/// Cached FFT plans and scratch buffers for one grid size.
///
/// All operations are pure functions of their inputs; the workspace only
/// avoids re-planning. It is single-owner: clone or rebuild per thread.
pub struct FourierWorkspace {
    n_modes: usize,
    fwd_grid: Arc<dyn Fft<f64>>,
    inv_grid: Arc<dyn Fft<f64>>,
    fwd_pad: Arc<dyn Fft<f64>>,
    inv_pad: Arc<dyn Fft<f64>>,
    buf_grid: Vec<Complex64>,
    buf_pad: Vec<Complex64>,
}

impl FourierWorkspace {
    pub fn new(grid: &GridConfig) -> Self {
        let n = grid.n_modes;
        let mut planner = FftPlanner::new();
        FourierWorkspace {
            n_modes: n,
            fwd_grid: planner.plan_fft_forward(2 * n),
            inv_grid: planner.plan_fft_inverse(2 * n),
            fwd_pad: planner.plan_fft_forward(3 * n),
            inv_pad: planner.plan_fft_inverse(3 * n),
            buf_grid: vec![Complex64::new(0.0, 0.0); 2 * n],
            buf_pad: vec![Complex64::new(0.0, 0.0); 3 * n],
        }
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        if field.n_modes() != self.n_modes {
            return Err(Error::config(format!(
                "field has {} modes but workspace expects {}",
                field.n_modes(),
                self.n_modes
            )));
        }
        Ok(())
    }

    /// Evaluates `u(x_i) = Σ_{|k|≤N} û_k e^{ikx_i}` on the `2N`-point grid.
    pub fn to_physical(&mut self, field: &SpectralField) -> Result<Vec<f64>> {
        self.check(field)?;
        let m = 2 * self.n_modes;
        self.buf_grid.fill(Complex64::new(0.0, 0.0));
        for k in 1..self.n_modes {
            let v = field.mode(k);
            self.buf_grid[k] = v;
            self.buf_grid[m - k] = v.conj();
        }
        // Nyquist slot k = N is shared between +N and -N on this grid; a
        // valid state keeps it zero, so only the real part would survive.
        self.buf_grid[self.n_modes] = Complex64::new(2.0 * field.mode(self.n_modes).re, 0.0);
        self.inv_grid.process(&mut self.buf_grid);
        Ok(self.buf_grid.iter().map(|c| c.re).collect())
    }

    /// Discrete transform of `2N` samples, normalised to the continuum
    /// convention. The mean (`û_0`) is discarded and the Nyquist mode zeroed.
    pub fn to_spectral(&mut self, samples: &[f64]) -> Result<SpectralField> {
        let m = 2 * self.n_modes;
        if samples.len() != m {
            return Err(Error::config(format!(
                "expected {} samples, got {}",
                m,
                samples.len()
            )));
        }
        for (b, &s) in self.buf_grid.iter_mut().zip(samples) {
            *b = Complex64::new(s, 0.0);
        }
        self.fwd_grid.process(&mut self.buf_grid);
        let scale = 1.0 / m as f64;
        let mut modes: Vec<Complex64> =
            self.buf_grid[1..=self.n_modes].iter().map(|c| c * scale).collect();
        modes[self.n_modes - 1] = Complex64::new(0.0, 0.0);
        Ok(SpectralField::from_modes(modes))
    }

    /// Dealiased Burgers nonlinearity `B̂_k = -(ik/2) Σ_l û_l û_{k-l}`.
    ///
    /// The product is evaluated on `3N` points: the spectrum is zero-padded,
    /// squared in physical space and transformed back, which reproduces the
    /// truncated convolution exactly (no aliasing) because states keep
    /// `û_N = 0`.
    pub fn nonlinearity(&mut self, field: &SpectralField) -> Result<SpectralField> {
        self.check(field)?;
        let m = 3 * self.n_modes;
        self.buf_pad.fill(Complex64::new(0.0, 0.0));
        for k in 1..=self.n_modes {
            let v = field.mode(k);
            self.buf_pad[k] = v;
            self.buf_pad[m - k] = v.conj();
        }
        self.inv_pad.process(&mut self.buf_pad);
        for c in self.buf_pad.iter_mut() {
            *c = *c * *c;
        }
        self.fwd_pad.process(&mut self.buf_pad);
        let scale = 1.0 / m as f64;
        let modes = (1..=self.n_modes)
            .map(|k| {
                let conv = self.buf_pad[k] * scale;
                Complex64::new(0.0, -(k as f64) / 2.0) * conv
            })
            .collect();
        Ok(SpectralField::from_modes(modes))
    }
}

/// One-shot version of [`FourierWorkspace::to_physical`].
pub fn to_physical(field: &SpectralField, grid: &GridConfig) -> Result<Vec<f64>> {
    field.check_grid(grid)?;
    FourierWorkspace::new(grid).to_physical(field)
}

/// One-shot version of [`FourierWorkspace::to_spectral`].
pub fn to_spectral(samples: &[f64], grid: &GridConfig) -> Result<SpectralField> {
    FourierWorkspace::new(grid).to_spectral(samples)
}

/// One-shot version of [`FourierWorkspace::nonlinearity`].
pub fn burgers_nonlinearity(field: &SpectralField, grid: &GridConfig) -> Result<SpectralField> {
    field.check_grid(grid)?;
    FourierWorkspace::new(grid).nonlinearity(field)
}

/// Projection onto wavenumbers `k <= k_low`; modes above are zeroed.
pub fn project_low(field: &SpectralField, k_low: usize) -> Result<SpectralField> {
    if k_low < 1 || k_low > field.n_modes() {
        return Err(Error::config(format!(
            "projection cutoff {} out of range 1..={}",
            k_low,
            field.n_modes()
        )));
    }
    let mut modes = field.modes().to_vec();
    for m in modes.iter_mut().skip(k_low) {
        *m = Complex64::new(0.0, 0.0);
    }
    Ok(SpectralField::from_modes(modes))
}
