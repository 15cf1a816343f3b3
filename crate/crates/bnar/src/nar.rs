//! The NAR (nonlinear autoregression) reduced model for the first `K`
//! Fourier modes at observation step `δ`:
//!
//! ```text
//! u^n_k = u^{n-1}_k + δ [ R^δ(u^{n-1})_k + f^n_k + Φ^n_k ] + g^n_k,
//! Φ^n_k = Σ_{j=1..p} [ c^v_{k,j} u^{n-j}_k + c^R_{k,j} R^δ(u^{n-j})_k
//!         + c^f_{k,j} f^{n-j}_k + c^w_{k,j} Q_{k,j} ],
//! ```
//!
//! where `R^δ` is one deterministic ETDRK4 step of the K-mode Galerkin
//! system (so `u + δ R^δ(u)` is exactly that step), `f^n` is the
//! δ-aggregated stochastic force and `g^n` is iid complex Gaussian noise
//! with `E|g^n_k|² = σ^g_k`.
//!
//! The quadratic memory term `Q_{k,j}` couples reconstructed high modes:
//! `Q_{k,j} = Σ ũ^{n-1}_l ũ^{n-j}_{k-l}` over the index set
//! `{|k-l| ≤ K, K < |l| ≤ 2K} ∪ {|l| ≤ K, K < |k-l| ≤ 2K}`, with negative
//! indices supplied by conjugation. The reconstruction `ũ` keeps resolved
//! modes as they are and fills `K < k ≤ 2K` from the one-iteration closure
//! `ũ^{n-j}_k = (ik/2) e^{-ν k² jδ} Σ_{|l|≤K,|k-l|≤K} u^{n-j}_{k-l} u^{n-j}_l`.
//!
//! Coefficients are complex per `(k, term)`: states and features are
//! complex, so complex least squares (two real unknowns per term) is the
//! natural estimator.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::full_model::Etdrk4;
use crate::spectral::{GridConfig, SpectralField};
use crate::BLOW_UP_THRESHOLD;

/// One parametric term family of `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    /// `c^v_{k,j} u^{n-j}_k`
    State,
    /// `c^R_{k,j} R^δ(u^{n-j})_k`
    GalerkinStep,
    /// `c^f_{k,j} f^{n-j}_k`
    Force,
    /// `c^w_{k,j} Q_{k,j}`
    Quadratic,
}

/// A specific feature: family plus lag `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub kind: TermKind,
    pub lag: usize,
}

/// Which `(family, lag)` pairs are active. Index `j-1` holds lag `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMask {
    pub state_lags: Vec<bool>,
    pub galerkin_lags: Vec<bool>,
    pub force_lags: Vec<bool>,
    pub quadratic_lags: Vec<bool>,
}

impl TermMask {
    /// The standard reduction: state and Galerkin terms at lag 1 only, no
    /// force terms, quadratic terms at every lag up to `p`. (Longer state
    /// or force lags make the normal matrix nearly singular.)
    pub fn standard(p: usize) -> Self {
        let mut first = vec![false; p];
        first[0] = true;
        TermMask {
            state_lags: first.clone(),
            galerkin_lags: first,
            force_lags: vec![false; p],
            quadratic_lags: vec![true; p],
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, v) in [
            ("state_lags", &self.state_lags),
            ("galerkin_lags", &self.galerkin_lags),
            ("force_lags", &self.force_lags),
            ("quadratic_lags", &self.quadratic_lags),
        ] {
            if v.len() != p {
                return Err(Error::config(format!(
                    "term mask {name} has length {} but lag is {p}",
                    v.len()
                )));
            }
        }
        if self.term_count() == 0 {
            return Err(Error::config("term mask activates no terms"));
        }
        Ok(())
    }

    /// Active terms in a fixed order (families as declared, lags ascending).
    /// Coefficient vectors follow this layout.
    pub fn terms(&self) -> Vec<Term> {
        let families = [
            (TermKind::State, &self.state_lags),
            (TermKind::GalerkinStep, &self.galerkin_lags),
            (TermKind::Force, &self.force_lags),
            (TermKind::Quadratic, &self.quadratic_lags),
        ];
        let mut out = Vec::new();
        for (kind, lags) in families {
            for (i, &on) in lags.iter().enumerate() {
                if on {
                    out.push(Term { kind, lag: i + 1 });
                }
            }
        }
        out
    }

    pub fn term_count(&self) -> usize {
        self.terms().len()
    }
}

/// Field the coefficients live in.
///
/// States and features are complex, so `Complex` coefficients (two real
/// unknowns per term) are the default: complex least squares is
/// well-defined and strictly generalizes real θ. `Real` restricts every
/// coefficient to the real axis — one unknown per term, the tightest
/// reading of a real parameter vector — and is kept for comparison
/// studies; both fields produce models with closely similar statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientField {
    Real,
    #[default]
    Complex,
}

/// Structure of a NAR model: modes, memory, step and active terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarSpec {
    pub k_modes: usize,
    /// Memory length `p` (lags `1..=p`).
    pub lag: usize,
    /// Reduced-model time step `δ`.
    pub delta: f64,
    pub viscosity: f64,
    pub etd_contour_points: usize,
    #[serde(default)]
    pub coefficients: CoefficientField,
    pub term_mask: TermMask,
}

impl NarSpec {
    pub fn new(
        k_modes: usize,
        lag: usize,
        delta: f64,
        viscosity: f64,
        term_mask: TermMask,
    ) -> Result<Self> {
        if k_modes < 1 {
            return Err(Error::config("k_modes must be at least 1"));
        }
        if lag < 1 {
            return Err(Error::config("lag must be at least 1"));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::config(format!("delta must be positive, got {delta}")));
        }
        if !(viscosity > 0.0) {
            return Err(Error::config("viscosity must be positive"));
        }
        term_mask.validate(lag)?;
        Ok(NarSpec {
            k_modes,
            lag,
            delta,
            viscosity,
            etd_contour_points: 32,
            coefficients: CoefficientField::Complex,
            term_mask,
        })
    }

    /// Spec with the standard term mask and complex coefficients.
    pub fn standard(k_modes: usize, lag: usize, delta: f64, viscosity: f64) -> Result<Self> {
        let mask = TermMask::standard(lag);
        NarSpec::new(k_modes, lag, delta, viscosity, mask)
    }

    pub fn with_coefficient_field(mut self, field: CoefficientField) -> Self {
        self.coefficients = field;
        self
    }
}

/// A fitted (or hand-built) NAR model.
#[derive(Debug, Clone, PartialEq)]
pub struct NarModel {
    pub spec: NarSpec,
    /// `theta[k-1][t]`: complex coefficient of term `t` for wavenumber `k`.
    pub theta: Vec<Vec<Complex64>>,
    /// Noise levels `σ^g_k = E|g^n_k|²`.
    pub sigma_g: Vec<f64>,
}

impl NarModel {
    /// Model with all coefficients and noise zero: the bare stochastic
    /// K-mode Galerkin scheme.
    pub fn zero(spec: NarSpec) -> Self {
        let terms = spec.term_mask.term_count();
        let k = spec.k_modes;
        NarModel {
            spec,
            theta: vec![vec![Complex64::new(0.0, 0.0); terms]; k],
            sigma_g: vec![0.0; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let terms = self.spec.term_mask.term_count();
        if self.theta.len() != self.spec.k_modes || self.sigma_g.len() != self.spec.k_modes {
            return Err(Error::config("coefficient arrays do not match k_modes"));
        }
        for row in &self.theta {
            if row.len() != terms {
                return Err(Error::config("coefficient layout does not match term mask"));
            }
            if row.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::config("non-finite coefficient"));
            }
            if self.spec.coefficients == CoefficientField::Real
                && row.iter().any(|c| c.im != 0.0)
            {
                return Err(Error::config(
                    "model declares real coefficients but has imaginary parts",
                ));
            }
        }
        if self.sigma_g.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("sigma_g must be non-negative and finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let file = NarModelFile {
            spec: self.spec.clone(),
            theta: self
                .theta
                .iter()
                .map(|row| row.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            sigma_g: self.sigma_g.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<NarModel> {
        let file: NarModelFile =
            serde_json::from_str(text).map_err(|e| Error::data(format!("bad model JSON: {e}")))?;
        let model = NarModel {
            spec: file.spec,
            theta: file
                .theta
                .iter()
                .map(|row| row.iter().map(|p| Complex64::new(p[0], p[1])).collect())
                .collect(),
            sigma_g: file.sigma_g,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct NarModelFile {
    spec: NarSpec,
    theta: Vec<Vec<[f64; 2]>>,
    sigma_g: Vec<f64>,
}

/// Rolling history of the last `p` states and forces, newest first:
/// `u_lag(1)` is `u^{n-1}`, `f_lag(1)` is `f^{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWindow {
    u: Vec<Vec<Complex64>>,
    f: Vec<Vec<Complex64>>,
}

impl LagWindow {
    /// Builds a window from newest-first histories of length exactly `p`.
    pub fn new(u: Vec<Vec<Complex64>>, f: Vec<Vec<Complex64>>, spec: &NarSpec) -> Result<Self> {
        if u.len() != spec.lag || f.len() != spec.lag {
            return Err(Error::config(format!(
                "window needs exactly {} states and forces",
                spec.lag
            )));
        }
        if u.iter().any(|v| v.len() != spec.k_modes) {
            return Err(Error::config("window state width does not match k_modes"));
        }
        Ok(LagWindow { u, f })
    }

    /// Seeds the window from observed data so that the first simulated step
    /// reproduces data index `p + 1`. Forces are taken from the matched
    /// aggregates; `f_lag(j)` is the aggregate over `(t_{p-j}, t_{p-j+1}]`.
    pub fn from_dataset(ds: &crate::dataset::TrajectoryDataset, m: usize, spec: &NarSpec) -> Result<Self> {
        let p = spec.lag;
        if ds.meta.n_steps < p + 1 {
            return Err(Error::data("dataset too short to seed a lag window"));
        }
        if ds.meta.k_modes < spec.k_modes {
            return Err(Error::data("dataset stores fewer modes than the model uses"));
        }
        let u = (0..p)
            .map(|j| ds.u_row(m, p - j)[..spec.k_modes].to_vec())
            .collect();
        let f = (0..p)
            .map(|j| ds.f_row(m, p - 1 - j)[..spec.k_modes].to_vec())
            .collect();
        LagWindow::new(u, f, spec)
    }

    /// Cold start: fills the history by running the deterministic K-mode
    /// Galerkin scheme backwards-free (forward from `u0`, zero force), with
    /// the newest state last computed.
    pub fn warm_start(u0: &[Complex64], spec: &NarSpec, stepper: &mut GalerkinStepper) -> Result<Self> {
        let p = spec.lag;
        let mut states = vec![u0.to_vec()];
        for _ in 1..p {
            let prev = states.last().unwrap();
            let r = stepper.r_delta(prev)?;
            let next: Vec<Complex64> = prev
                .iter()
                .zip(&r)
                .map(|(u, r)| u + spec.delta * r)
                .collect();
            states.push(next);
        }
        states.reverse(); // newest first
        let f = vec![vec![Complex64::new(0.0, 0.0); spec.k_modes]; p];
        LagWindow::new(states, f, spec)
    }

    pub fn lag(&self) -> usize {
        self.u.len()
    }

    /// State `u^{n-j}`, `1 <= j <= p`.
    pub fn u_lag(&self, j: usize) -> &[Complex64] {
        &self.u[j - 1]
    }

    /// Force `f^{n-j}`, `1 <= j <= p`.
    pub fn f_lag(&self, j: usize) -> &[Complex64] {
        &self.f[j - 1]
    }

    /// Shifts the window after a step: `u_new` becomes lag 1, `f_used` the
    /// force that produced it.
    pub fn advance(&mut self, u_new: Vec<Complex64>, f_used: Vec<Complex64>) {
        self.u.pop();
        self.u.insert(0, u_new);
        self.f.pop();
        self.f.insert(0, f_used);
    }
}

/// Cached deterministic K-mode Galerkin stepper behind `R^δ`.
///
/// The K modes are embedded in a grid with `K+1` retained wavenumbers so
/// that mode `K` is a live mode (not the pinned Nyquist slot) and the
/// dealiased product stays exact. This shares the exact nonlinearity code
/// path with the full model.
pub struct GalerkinStepper {
    k_modes: usize,
    delta: f64,
    stepper: Etdrk4,
}

impl GalerkinStepper {
    pub fn new(spec: &NarSpec) -> Result<Self> {
        let grid = GridConfig::new(spec.k_modes + 1, spec.viscosity)?;
        let stepper = Etdrk4::new(&grid, spec.delta, spec.etd_contour_points, spec.k_modes)?;
        Ok(GalerkinStepper {
            k_modes: spec.k_modes,
            delta: spec.delta,
            stepper,
        })
    }

    /// Diagnostic variant with the quadratic term off; `R^δ` then reduces
    /// to the exact per-mode decay `u_k (e^{-ν k² δ} - 1)/δ`.
    pub fn linear_only(spec: &NarSpec) -> Result<Self> {
        let full = GalerkinStepper::new(spec)?;
        Ok(GalerkinStepper {
            k_modes: full.k_modes,
            delta: full.delta,
            stepper: full.stepper.without_nonlinearity(),
        })
    }

    fn embed(&self, u: &[Complex64]) -> Result<SpectralField> {
        if u.len() != self.k_modes {
            return Err(Error::evaluation(format!(
                "expected {} modes, got {}",
                self.k_modes,
                u.len()
            )));
        }
        if u.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::evaluation("non-finite reduced state"));
        }
        let mut field = SpectralField::zeros(self.k_modes + 1);
        for (k, &v) in u.iter().enumerate() {
            field.set_mode(k + 1, v);
        }
        Ok(field)
    }

    /// `R^δ(u) = (ETDRK4_δ(u) - u)/δ`, so `u + δ R^δ(u)` is exactly one
    /// deterministic Galerkin step.
    pub fn r_delta(&mut self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let field = self.embed(u)?;
        let next = self.stepper.step_deterministic(&field)?;
        Ok((1..=self.k_modes)
            .map(|k| (next.mode(k) - field.mode(k)) / self.delta)
            .collect())
    }
}

/// One-shot `R^δ`; repeated evaluation should hold a [`GalerkinStepper`].
pub fn r_delta(u: &[Complex64], spec: &NarSpec) -> Result<Vec<Complex64>> {
    GalerkinStepper::new(spec)?.r_delta(u)
}

/// The extended mode vector `ũ^{n-j}` over `k = 1..=2K`: resolved modes are
/// passed through, modes `K < k <= 2K` are reconstructed with the decayed
/// quadratic closure.
pub fn reconstruct_high_modes(u: &[Complex64], j: usize, spec: &NarSpec) -> Result<Vec<Complex64>> {
    if j < 1 || j > spec.lag {
        return Err(Error::evaluation(format!(
            "lag {j} out of range 1..={}",
            spec.lag
        )));
    }
    if u.len() != spec.k_modes {
        return Err(Error::evaluation("state width does not match k_modes"));
    }
    let k_modes = spec.k_modes as i64;
    let signed = |i: i64| -> Complex64 {
        let a = i.unsigned_abs() as usize;
        if a == 0 || a > spec.k_modes {
            return Complex64::new(0.0, 0.0);
        }
        if i > 0 {
            u[a - 1]
        } else {
            u[a - 1].conj()
        }
    };
    let mut out = u.to_vec();
    for k in (k_modes + 1)..=(2 * k_modes) {
        let mut sum = Complex64::new(0.0, 0.0);
        for l in -k_modes..=k_modes {
            let rest = k - l;
            if rest.abs() <= k_modes {
                sum += signed(rest) * signed(l);
            }
        }
        let qk = k as f64;
        let decay = (-spec.viscosity * qk * qk * j as f64 * spec.delta).exp();
        out.push(Complex64::new(0.0, 0.5 * qk) * decay * sum);
    }
    Ok(out)
}

fn ext_signed(ext: &[Complex64], i: i64) -> Complex64 {
    let a = i.unsigned_abs() as usize;
    if a == 0 || a > ext.len() {
        return Complex64::new(0.0, 0.0);
    }
    if i > 0 {
        ext[a - 1]
    } else {
        ext[a - 1].conj()
    }
}

/// `Q_{k,j} = Σ ũ^{n-1}_l ũ^{n-j}_{k-l}` over the low-high interaction
/// index set (one factor resolved, one reconstructed).
fn quadratic_term(ext_lag1: &[Complex64], ext_lagj: &[Complex64], k: usize, k_modes: usize) -> Complex64 {
    let kk = k as i64;
    let km = k_modes as i64;
    let mut sum = Complex64::new(0.0, 0.0);
    for l in -2 * km..=2 * km {
        let rest = kk - l;
        let low_high = rest.abs() <= km && l.abs() > km && l.abs() <= 2 * km;
        let high_low = l.abs() <= km && rest.abs() > km && rest.abs() <= 2 * km;
        if low_high || high_low {
            sum += ext_signed(ext_lag1, l) * ext_signed(ext_lagj, rest);
        }
    }
    sum
}

/// Feature values and the lag-1 drift, shared by stepping and estimation.
/// Returns `(features[k-1][term], r_delta(u^{n-1}))`.
pub fn features_and_drift(
    window: &LagWindow,
    spec: &NarSpec,
    stepper: &mut GalerkinStepper,
) -> Result<(Vec<Vec<Complex64>>, Vec<Complex64>)> {
    if window.lag() != spec.lag {
        return Err(Error::evaluation("window length does not match spec lag"));
    }
    let terms = spec.term_mask.terms();
    let k_modes = spec.k_modes;

    // R^δ per active Galerkin lag; lag 1 is always needed for the drift.
    let mut r_by_lag: Vec<Option<Vec<Complex64>>> = vec![None; spec.lag + 1];
    r_by_lag[1] = Some(stepper.r_delta(window.u_lag(1))?);
    for t in &terms {
        if t.kind == TermKind::GalerkinStep && r_by_lag[t.lag].is_none() {
            r_by_lag[t.lag] = Some(stepper.r_delta(window.u_lag(t.lag))?);
        }
    }

    // Extended vectors per lag used by quadratic terms (lag 1 always,
    // since it is the first factor of every Q).
    let mut ext_by_lag: Vec<Option<Vec<Complex64>>> = vec![None; spec.lag + 1];
    let needs_quadratic = terms.iter().any(|t| t.kind == TermKind::Quadratic);
    if needs_quadratic {
        ext_by_lag[1] = Some(reconstruct_high_modes(window.u_lag(1), 1, spec)?);
        for t in &terms {
            if t.kind == TermKind::Quadratic && ext_by_lag[t.lag].is_none() {
                ext_by_lag[t.lag] = Some(reconstruct_high_modes(window.u_lag(t.lag), t.lag, spec)?);
            }
        }
    }

    let mut features = vec![Vec::with_capacity(terms.len()); k_modes];
    for (ki, row) in features.iter_mut().enumerate() {
        let k = ki + 1;
        for t in &terms {
            let v = match t.kind {
                TermKind::State => window.u_lag(t.lag)[ki],
                TermKind::GalerkinStep => r_by_lag[t.lag].as_ref().unwrap()[ki],
                TermKind::Force => window.f_lag(t.lag)[ki],
                TermKind::Quadratic => quadratic_term(
                    ext_by_lag[1].as_ref().unwrap(),
                    ext_by_lag[t.lag].as_ref().unwrap(),
                    k,
                    k_modes,
                ),
            };
            row.push(v);
        }
    }
    let drift = r_by_lag[1].take().unwrap();
    Ok((features, drift))
}

/// Active feature columns per wavenumber, `features[k-1][term]`.
pub fn phi_features(window: &LagWindow, spec: &NarSpec, stepper: &mut GalerkinStepper) -> Result<Vec<Vec<Complex64>>> {
    Ok(features_and_drift(window, spec, stepper)?.0)
}

/// One reduced-model step. With zero coefficients and zero noise this is
/// the stochastic K-mode Galerkin scheme with the force added linearly.
pub fn nar_step(
    window: &LagWindow,
    force: &[Complex64],
    noise: &[Complex64],
    model: &NarModel,
    stepper: &mut GalerkinStepper,
) -> Result<Vec<Complex64>> {
    let spec = &model.spec;
    if force.len() != spec.k_modes || noise.len() != spec.k_modes {
        return Err(Error::evaluation("force/noise width does not match k_modes"));
    }
    let (features, drift) = features_and_drift(window, spec, stepper)?;
    let prev = window.u_lag(1);
    let mut out = Vec::with_capacity(spec.k_modes);
    for ki in 0..spec.k_modes {
        let phi: Complex64 = features[ki]
            .iter()
            .zip(&model.theta[ki])
            .map(|(f, c)| f * c)
            .sum();
        out.push(prev[ki] + spec.delta * (drift[ki] + force[ki] + phi) + noise[ki]);
    }
    Ok(out)
}

/// Where simulated runs take their force path from.
pub enum ForceSource<'a> {
    /// No forcing.
    None,
    /// Replay recorded δ-aggregates, starting at index 0 of the slice.
    Recorded(&'a [Vec<Complex64>]),
    /// Fresh white noise in law with the δ-aggregated force:
    /// `Re, Im ~ Normal(0, σ²/(4δ))` on modes `1..=k0`.
    WhiteNoise { sigma: f64, k0: usize, rng: ChaCha12Rng },
}

/// A reduced-model trajectory on the δ grid.
#[derive(Debug, Clone)]
pub struct NarTrajectory {
    pub delta: f64,
    /// Simulated states; index `i` is the `(i+1)`-th produced state.
    pub states: Vec<Vec<Complex64>>,
    /// 1-based step at which `|u^n_k| > 1e5` or a non-finite value appeared.
    pub blow_up_step: Option<usize>,
}

impl NarTrajectory {
    pub fn is_stable(&self) -> bool {
        self.blow_up_step.is_none()
    }

    /// Time series view for the statistics functions.
    pub fn mode_series(&self) -> Vec<Vec<Complex64>> {
        self.states.clone()
    }
}

/// Iterates the NAR model for `n_steps`, drawing `g^n` with independent
/// real and imaginary parts of variance `σ^g_k / 2`. Stops early and
/// records the step index if the state exceeds the blow-up threshold;
/// blow-up is a verdict, not an error.
pub fn simulate_nar(
    model: &NarModel,
    initial_window: &LagWindow,
    n_steps: usize,
    force_source: &mut ForceSource,
    noise_rng: &mut ChaCha12Rng,
) -> Result<NarTrajectory> {
    model.validate()?;
    let spec = &model.spec;
    let mut stepper = GalerkinStepper::new(spec)?;
    let mut window = initial_window.clone();
    let noise_scale: Vec<f64> = model.sigma_g.iter().map(|s| (s / 2.0).sqrt()).collect();
    let mut states = Vec::with_capacity(n_steps);
    let mut blow_up_step = None;
    for step in 1..=n_steps {
        let force: Vec<Complex64> = match force_source {
            ForceSource::None => vec![Complex64::new(0.0, 0.0); spec.k_modes],
            ForceSource::Recorded(list) => {
                let i = step - 1;
                if i >= list.len() {
                    return Err(Error::data(format!(
                        "recorded force path exhausted at step {step}"
                    )));
                }
                if list[i].len() < spec.k_modes {
                    return Err(Error::data("recorded force narrower than k_modes"));
                }
                list[i][..spec.k_modes].to_vec()
            }
            ForceSource::WhiteNoise { sigma, k0, rng } => {
                // Re, Im ~ N(0, σ²/(4δ)): same law as a δ-aggregate.
                let std = *sigma / (2.0 * spec.delta.sqrt());
                (1..=spec.k_modes)
                    .map(|k| {
                        if k <= *k0 {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            Complex64::new(re * std, im * std)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect()
            }
        };
        let noise: Vec<Complex64> = noise_scale
            .iter()
            .map(|&s| {
                let re: f64 = noise_rng.sample(StandardNormal);
                let im: f64 = noise_rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect();
        let next = nar_step(&window, &force, &noise, model, &mut stepper)?;
        let bad = next
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite() || c.norm() > BLOW_UP_THRESHOLD);
        if bad {
            blow_up_step = Some(step);
            break;
        }
        states.push(next.clone());
        window.advance(next, force);
    }
    Ok(NarTrajectory {
        delta: spec.delta,
        states,
        blow_up_step,
    })
}

/// Generates data *from* a NAR model, packaged as a [`TrajectoryDataset`]
/// so the estimator can be exercised against a known ground truth. Each
/// trajectory starts at `u0`, is driven by fresh white-noise forcing on
/// modes `1..=k0` with scale `force_sigma`, and records the matched force
/// exactly as [`crate::estimate::build_problem`] expects it.
pub fn synthetic_dataset(
    model: &NarModel,
    u0: &[Complex64],
    n_traj: usize,
    n_steps: usize,
    force_sigma: f64,
    k0: usize,
    seed: u64,
) -> Result<crate::dataset::TrajectoryDataset> {
    use crate::dataset::{DatasetMeta, TrajectoryDataset, FORMAT_VERSION};
    use crate::forcing::ForceConfig;
    use crate::full_model::IntegratorConfig;
    use crate::spectral::GridConfig;

    model.validate()?;
    let spec = &model.spec;
    if u0.len() != spec.k_modes {
        return Err(Error::config("u0 width does not match k_modes"));
    }
    if n_traj < 1 || n_steps < 1 {
        return Err(Error::config("n_traj and n_steps must be at least 1"));
    }
    let k = spec.k_modes;
    let delta = spec.delta;
    let force_std = force_sigma / (2.0 * delta.sqrt());
    let mut u = Vec::with_capacity(n_traj * (n_steps + 1) * k);
    let mut f = Vec::with_capacity(n_traj * n_steps * k);
    for m in 0..n_traj {
        let mut stepper = GalerkinStepper::new(spec)?;
        let mut force_rng = crate::forcing::stream_rng(seed, crate::forcing::StreamPurpose::NarForce, m as u64);
        let mut noise_rng = crate::forcing::stream_rng(seed, crate::forcing::StreamPurpose::NarNoise, m as u64);
        let mut window = LagWindow::new(
            vec![u0.to_vec(); spec.lag],
            vec![vec![Complex64::new(0.0, 0.0); k]; spec.lag],
            spec,
        )?;
        u.extend_from_slice(u0);
        // States 1..lag repeat u0 so the stored history matches the window
        // the generator actually used; estimation skips these rows anyway.
        let mut produced = 0usize;
        while produced + 1 < spec.lag.min(n_steps + 1) {
            u.extend_from_slice(u0);
            f.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(k));
            produced += 1;
        }
        while produced < n_steps {
            let force: Vec<Complex64> = (1..=k)
                .map(|kk| {
                    if kk <= k0 {
                        let re: f64 = force_rng.sample(StandardNormal);
                        let im: f64 = force_rng.sample(StandardNormal);
                        Complex64::new(re * force_std, im * force_std)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            let noise: Vec<Complex64> = model
                .sigma_g
                .iter()
                .map(|&s| {
                    let sc = (s / 2.0).sqrt();
                    let re: f64 = noise_rng.sample(StandardNormal);
                    let im: f64 = noise_rng.sample(StandardNormal);
                    Complex64::new(re * sc, im * sc)
                })
                .collect();
            let next = nar_step(&window, &force, &noise, model, &mut stepper)?;
            if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::evaluation(format!(
                    "synthetic trajectory {m} became non-finite"
                )));
            }
            u.extend_from_slice(&next);
            f.extend_from_slice(&force);
            window.advance(next, force);
            produced += 1;
        }
    }
    let grid = GridConfig::new((k + 1).max(2), spec.viscosity)?;
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        k_modes: k,
        gap: 1,
        dt: delta,
        delta,
        n_traj,
        n_steps,
        full_model: IntegratorConfig {
            grid,
            force: ForceConfig::new(force_sigma, k0.max(1), seed)?,
            dt: delta,
            etd_contour_points: spec.etd_contour_points,
        },
        seed,
    };
    Ok(TrajectoryDataset { meta, u, f })
}
