//! Time integration of the truncated Galerkin system
//! `dû_k/dt = -ν k² û_k + B̂_k(û) + f̂_k` by the fourth-order exponential
//! time differencing Runge–Kutta scheme (ETDRK4), with the stochastic force
//! held constant within each step. The mixture is of strong order one but
//! keeps ETDRK4's stability and the simplicity of Euler–Maruyama.
//!
//! The φ-function coefficients are evaluated by averaging over a complex
//! contour (a unit circle around each `-ν k² dt`), which avoids the
//! cancellation that direct formulas suffer for small arguments.
//!
//! The same stepper serves the full model (`k_active = N`) and the K-mode
//! Galerkin truncation (`k_active = K`): coefficients above `k_active` and
//! at the Nyquist wavenumber are masked to zero, so inactive modes stay
//! identically zero along a trajectory.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{ForceConfig, ForceGen, ForceIncrement, StreamPurpose};
use crate::spectral::{FourierWorkspace, GridConfig, SpectralField};
use crate::BLOW_UP_THRESHOLD;

/// Full-model integration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub grid: GridConfig,
    pub force: ForceConfig,
    pub dt: f64,
    /// Points on the contour used for the φ-function quadrature.
    pub etd_contour_points: usize,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.etd_contour_points < 16 {
            return Err(Error::config(
                "etd_contour_points must be at least 16".to_string(),
            ));
        }
        Ok(())
    }
}

/// A saved solution path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    /// Fine-step force increments, retained only on request.
    pub forces: Option<Vec<ForceIncrement>>,
    /// Fine-step index at which some `|û_k|` first exceeded the blow-up
    /// threshold; `None` for a stable run.
    pub blow_up_step: Option<usize>,
}

impl Trajectory {
    /// Time series of the first `k` modes, for the statistics functions.
    pub fn low_mode_series(&self, k: usize) -> Vec<Vec<Complex64>> {
        self.states
            .iter()
            .map(|s| (1..=k).map(|j| s.mode(j)).collect())
            .collect()
    }
}

/// Precomputed ETDRK4 tables and scratch space for one `(grid, dt, k_active)`.
pub struct Etdrk4 {
    grid: GridConfig,
    dt: f64,
    k_active: usize,
    include_nonlinearity: bool,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    workspace: FourierWorkspace,
}

impl Etdrk4 {
    pub fn new(grid: &GridConfig, dt: f64, contour_points: usize, k_active: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        if contour_points < 16 {
            return Err(Error::config("contour_points must be at least 16"));
        }
        if k_active < 1 || k_active > grid.n_modes {
            return Err(Error::config(format!(
                "k_active {} out of range 1..={}",
                k_active, grid.n_modes
            )));
        }
        let n = grid.n_modes;
        let mut e = vec![0.0; n];
        let mut e2 = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        let mut f3 = vec![0.0; n];
        // Mask: the Nyquist mode is pinned to zero, and so are all modes
        // above k_active; their coefficients stay at zero.
        let top = k_active.min(n - 1);
        for k in 1..=top {
            let z = -grid.viscosity * (k as f64) * (k as f64) * dt;
            e[k - 1] = z.exp();
            e2[k - 1] = (0.5 * z).exp();
            let (mut sq, mut s1, mut s2, mut s3) = (
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            );
            for j in 0..contour_points {
                let theta = std::f64::consts::TAU * (j as f64 + 0.5) / contour_points as f64;
                let s = Complex64::new(z, 0.0) + Complex64::new(theta.cos(), theta.sin());
                let es = s.exp();
                let s3p = s * s * s;
                sq += ((s * 0.5).exp() - 1.0) / s;
                s1 += (-4.0 - s + es * (4.0 - 3.0 * s + s * s)) / s3p;
                s2 += (2.0 + s + es * (s - 2.0)) / s3p;
                s3 += (-4.0 - 3.0 * s - s * s + es * (4.0 - s)) / s3p;
            }
            let norm = dt / contour_points as f64;
            q[k - 1] = (sq * norm).re;
            f1[k - 1] = (s1 * norm).re;
            f2[k - 1] = (s2 * norm).re;
            f3[k - 1] = (s3 * norm).re;
        }
        Ok(Etdrk4 {
            grid: *grid,
            dt,
            k_active,
            include_nonlinearity: true,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            workspace: FourierWorkspace::new(grid),
        })
    }

    /// Drops the quadratic term, leaving exact linear decay plus forcing.
    pub fn without_nonlinearity(mut self) -> Self {
        self.include_nonlinearity = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn k_active(&self) -> usize {
        self.k_active
    }

    /// `B̂(state) + f̂`, the stage right-hand side without the linear part.
    fn stage_rhs(&mut self, state: &SpectralField, force: &ForceIncrement) -> Result<Vec<Complex64>> {
        let n = self.grid.n_modes;
        let mut rhs = if self.include_nonlinearity {
            self.workspace.nonlinearity(state)?.modes().to_vec()
        } else {
            vec![Complex64::new(0.0, 0.0); n]
        };
        let top = force.modes.len().min(self.k_active);
        for k in 1..=top {
            rhs[k - 1] += force.modes[k - 1];
        }
        Ok(rhs)
    }

    /// One ETDRK4 step with the force constant across the internal stages.
    pub fn step(&mut self, state: &SpectralField, force: &ForceIncrement) -> Result<SpectralField> {
        if state.n_modes() != self.grid.n_modes {
            return Err(Error::config(format!(
                "state has {} modes but stepper expects {}",
                state.n_modes(),
                self.grid.n_modes
            )));
        }
        if !state.is_finite() {
            return Err(Error::Integration {
                step: 0,
                message: "non-finite state".to_string(),
            });
        }
        let n = self.grid.n_modes;
        let combine = |coeff_a: &[f64], va: &[Complex64], coeff_b: &[f64], vb: &[Complex64]| {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..n {
                out[i] = coeff_a[i] * va[i] + coeff_b[i] * vb[i];
            }
            out
        };

        let v = state.modes();
        let nv = self.stage_rhs(state, force)?;
        let a = SpectralField::from_modes(combine(&self.e2, v, &self.q, &nv));
        let na = self.stage_rhs(&a, force)?;
        let b = SpectralField::from_modes(combine(&self.e2, v, &self.q, &na));
        let nb = self.stage_rhs(&b, force)?;
        let two_nb_minus_nv: Vec<Complex64> =
            nb.iter().zip(&nv).map(|(x, y)| 2.0 * x - y).collect();
        let c = SpectralField::from_modes(combine(&self.e2, a.modes(), &self.q, &two_nb_minus_nv));
        let nc = self.stage_rhs(&c, force)?;

        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            out[i] = self.e[i] * v[i]
                + self.f1[i] * nv[i]
                + 2.0 * self.f2[i] * (na[i] + nb[i])
                + self.f3[i] * nc[i];
        }
        Ok(SpectralField::from_modes(out))
    }

    /// One deterministic step (zero force).
    pub fn step_deterministic(&mut self, state: &SpectralField) -> Result<SpectralField> {
        let zero = ForceIncrement::zero(0, self.dt);
        self.step(state, &zero)
    }
}

/// One-shot ETDRK4 step; hot loops should hold an [`Etdrk4`] instead.
pub fn etdrk4_step(
    state: &SpectralField,
    force: &ForceIncrement,
    cfg: &IntegratorConfig,
    k_active: usize,
) -> Result<SpectralField> {
    cfg.validate()?;
    Etdrk4::new(&cfg.grid, cfg.dt, cfg.etd_contour_points, k_active)?.step(state, force)
}

fn exceeded(state: &SpectralField) -> bool {
    !state.is_finite() || state.max_abs() > BLOW_UP_THRESHOLD
}

/// Integrates `n_steps` fine steps with fresh force increments, recording
/// the state every `save_every` steps. Blow-up (any `|û_k| > 1e5`) stops
/// the run and is recorded on the trajectory, not raised as an error.
pub fn integrate(
    initial: &SpectralField,
    n_steps: usize,
    cfg: &IntegratorConfig,
    k_active: usize,
    save_every: usize,
    forcing: &mut ForceGen,
    record_forces: bool,
) -> Result<Trajectory> {
    cfg.validate()?;
    if save_every < 1 {
        return Err(Error::config("save_every must be at least 1"));
    }
    let mut stepper = Etdrk4::new(&cfg.grid, cfg.dt, cfg.etd_contour_points, k_active)?;
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    let mut forces = if record_forces { Some(Vec::new()) } else { None };
    let mut state = initial.clone();
    let mut blow_up_step = None;
    for step in 1..=n_steps {
        let inc = forcing.sample_increment(cfg.dt)?;
        let next = stepper.step(&state, &inc)?;
        if let Some(f) = forces.as_mut() {
            f.push(inc);
        }
        if exceeded(&next) {
            blow_up_step = Some(step);
            break;
        }
        state = next;
        if step % save_every == 0 {
            times.push(step as f64 * cfg.dt);
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        forces,
        blow_up_step,
    })
}

/// Mean CFL number over the saved states (the initial state is excluded):
/// the average of `sup_x |u(x, t_n)| · dt_eval / Δx`, with the sup taken on
/// the `2N`-point physical grid.
pub fn mean_cfl(traj: &Trajectory, grid: &GridConfig, dt_eval: f64) -> Result<f64> {
    let mut ws = FourierWorkspace::new(grid);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        if *t == 0.0 {
            continue;
        }
        let u = ws.to_physical(s)?;
        let sup = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        sum += sup * dt_eval / grid.dx();
        count += 1;
    }
    if count == 0 {
        return Err(Error::data("mean_cfl needs at least one saved state after t = 0"));
    }
    Ok(sum / count as f64)
}

/// The standard initial condition `u₀(x) = sin(x) + 2 cos(x)`, i.e.
/// `û_1 = 1 - i/2`.
pub fn initial_condition(grid: &GridConfig) -> SpectralField {
    let mut f = SpectralField::zeros(grid.n_modes);
    f.set_mode(1, Complex64::new(1.0, -0.5));
    f
}

/// Integrates from `u₀ = sin(x) + 2cos(x)` for `burn_in_time` and draws
/// `n_samples` states uniformly in time from the saved trajectory.
pub fn make_initial_ensemble(
    cfg: &IntegratorConfig,
    burn_in_time: f64,
    n_samples: usize,
) -> Result<Vec<SpectralField>> {
    cfg.validate()?;
    if !(burn_in_time > 0.0) {
        return Err(Error::config("burn_in_time must be positive"));
    }
    if n_samples < 1 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let n_steps = (burn_in_time / cfg.dt).round().max(1.0) as usize;
    // Keep a pool of at least ~4 states per requested sample.
    let save_every = (n_steps / (4 * n_samples).max(256)).max(1);
    let mut forcing = ForceGen::for_stream(&cfg.force, StreamPurpose::BurnIn, 0);
    let initial = initial_condition(&cfg.grid);
    let traj = integrate(&initial, n_steps, cfg, cfg.grid.n_modes, save_every, &mut forcing, false)?;
    if let Some(step) = traj.blow_up_step {
        return Err(Error::Integration {
            step,
            message: "blow-up during burn-in".to_string(),
        });
    }
    use rand::Rng;
    let mut rng = crate::forcing::stream_rng(cfg.force.seed, StreamPurpose::EnsembleDraw, 0);
    let pool = traj.states.len();
    Ok((0..n_samples)
        .map(|_| traj.states[rng.gen_range(0..pool)].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, sigma: f64, dt: f64, seed: u64) -> IntegratorConfig {
        IntegratorConfig {
            grid: GridConfig::new(n, 0.02).unwrap(),
            force: ForceConfig::new(sigma, 4, seed).unwrap(),
            dt,
            etd_contour_points: 32,
        }
    }

    #[test]
    fn linear_decay_is_exact() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let mut stepper = Etdrk4::new(&grid, 1.0, 32, 8).unwrap().without_nonlinearity();
        let mut f = SpectralField::zeros(8);
        f.set_mode(2, Complex64::new(1.0, 0.0));
        let out = stepper.step_deterministic(&f).unwrap();
        let expected = (-0.02f64 * 4.0 * 1.0).exp();
        assert!((out.mode(2).re - expected).abs() < 1e-15);
        assert!((expected - 0.923116).abs() < 1e-6);
    }

    #[test]
    fn zero_state_zero_force_stays_zero() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let mut stepper = Etdrk4::new(&grid, 0.1, 32, 8).unwrap();
        let out = stepper.step_deterministic(&SpectralField::zeros(8)).unwrap();
        assert!(out.max_abs() == 0.0);
    }

    #[test]
    fn constant_force_response_is_phi1_weighted() {
        // With B off, one step gives e^z u + dt φ₁(z) f exactly.
        let grid = GridConfig::new(8, 0.5).unwrap();
        let dt = 0.3;
        let mut stepper = Etdrk4::new(&grid, dt, 32, 8).unwrap().without_nonlinearity();
        let mut force = ForceIncrement::zero(4, dt);
        force.modes[2] = Complex64::new(0.4, -1.1); // k = 3
        let out = stepper.step(&SpectralField::zeros(8), &force).unwrap();
        let z = -0.5 * 9.0 * dt;
        let phi1 = (z.exp() - 1.0) / z;
        let expected = force.modes[2] * (dt * phi1);
        assert!((out.mode(3) - expected).norm() < 1e-13);
    }

    #[test]
    fn nonfinite_state_is_rejected() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let mut stepper = Etdrk4::new(&grid, 0.1, 32, 8).unwrap();
        let mut f = SpectralField::zeros(8);
        f.set_mode(1, Complex64::new(f64::NAN, 0.0));
        assert!(matches!(
            stepper.step_deterministic(&f),
            Err(Error::Integration { .. })
        ));
    }

    #[test]
    fn deterministic_self_convergence_is_fourth_order() {
        // Burgers from sin(x): compare successive step halvings at T = 1.
        let grid = GridConfig::new(64, 0.02).unwrap();
        let mut initial = SpectralField::zeros(64);
        initial.set_mode(1, Complex64::new(0.0, -0.5));
        let solve = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut stepper = Etdrk4::new(&grid, dt, 32, 64).unwrap();
            let mut state = initial.clone();
            for _ in 0..steps {
                state = stepper.step_deterministic(&state).unwrap();
            }
            state
        };
        let coarse = solve(0.01);
        let mid = solve(0.005);
        let fine = solve(0.0025);
        let diff = |a: &SpectralField, b: &SpectralField| {
            a.modes()
                .iter()
                .zip(b.modes())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let ratio = diff(&coarse, &mid) / diff(&mid, &fine);
        assert!(
            ratio > 12.0 && ratio < 20.0,
            "self-convergence ratio {ratio}, expected ~16"
        );
    }

    #[test]
    fn linear_integration_matches_exact_semigroup() {
        let mut c = cfg(8, 0.0, 0.05, 1);
        c.grid = GridConfig::new(8, 0.3).unwrap();
        let mut initial = SpectralField::zeros(8);
        initial.set_mode(1, Complex64::new(0.2, -0.7));
        initial.set_mode(5, Complex64::new(-0.4, 0.1));
        let mut forcing = ForceGen::for_trajectory(&c.force, 0);
        // Nonlinearity off via the stepper used directly.
        let mut stepper = Etdrk4::new(&c.grid, c.dt, 32, 8).unwrap().without_nonlinearity();
        let mut state = initial.clone();
        for _ in 0..40 {
            let inc = forcing.sample_increment(c.dt).unwrap();
            let _ = &inc; // σ = 0: zero force either way
            state = stepper.step(&state, &inc).unwrap();
        }
        let t = 40.0 * c.dt;
        for k in [1usize, 5] {
            let decay = (-0.3 * (k * k) as f64 * t).exp();
            let expected = initial.mode(k) * decay;
            assert!((state.mode(k) - expected).norm() < 1e-13 * expected.norm().max(1.0));
        }
    }

    #[test]
    fn energy_decays_without_forcing() {
        let c = cfg(32, 0.0, 0.005, 1);
        let mut stepper = Etdrk4::new(&c.grid, c.dt, 32, 32).unwrap();
        let mut state = initial_condition(&c.grid);
        let mut prev = state.energy();
        for _ in 0..200 {
            state = stepper.step_deterministic(&state).unwrap();
            let e = state.energy();
            assert!(e <= prev * (1.0 + 1e-13), "energy rose from {prev} to {e}");
            prev = e;
        }
    }

    #[test]
    fn integrate_zero_steps_keeps_initial_only() {
        let c = cfg(8, 1.0, 0.01, 2);
        let mut forcing = ForceGen::for_trajectory(&c.force, 0);
        let initial = initial_condition(&c.grid);
        let traj = integrate(&initial, 0, &c, 8, 1, &mut forcing, false).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.times, vec![0.0]);
        assert!(traj.blow_up_step.is_none());
    }

    #[test]
    fn integrate_is_reproducible_bit_for_bit() {
        let c = cfg(16, 1.0, 0.005, 77);
        let initial = initial_condition(&c.grid);
        let run = || {
            let mut forcing = ForceGen::for_trajectory(&c.force, 0);
            integrate(&initial, 50, &c, 16, 5, &mut forcing, false).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.modes(), y.modes());
        }
    }

    #[test]
    fn inactive_modes_stay_zero() {
        let c = cfg(16, 1.0, 0.01, 5);
        let k_active = 6;
        let mut forcing = ForceGen::for_trajectory(&c.force, 0);
        let initial = project_low_initial(&c.grid, k_active);
        let traj = integrate(&initial, 30, &c, k_active, 1, &mut forcing, false).unwrap();
        for s in &traj.states {
            for k in (k_active + 1)..=16 {
                assert!(s.mode(k).norm() == 0.0);
            }
        }
    }

    fn project_low_initial(grid: &GridConfig, k: usize) -> SpectralField {
        crate::spectral::project_low(&initial_condition(grid), k).unwrap()
    }

    #[test]
    fn blow_up_is_recorded_not_thrown() {
        // Negative-viscosity-like blow-up is hard to trigger quickly, so
        // start from an absurdly large state instead.
        let c = cfg(8, 0.0, 0.01, 1);
        let mut initial = SpectralField::zeros(8);
        initial.set_mode(1, Complex64::new(3e5, 0.0));
        let mut forcing = ForceGen::for_trajectory(&c.force, 0);
        let traj = integrate(&initial, 10, &c, 8, 1, &mut forcing, false).unwrap();
        assert!(traj.blow_up_step.is_some());
    }

    #[test]
    fn mean_cfl_of_unit_sine_is_dt_over_dx() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let mut f = SpectralField::zeros(8);
        f.set_mode(1, Complex64::new(0.0, -0.5)); // sin(x), sup |u| = 1
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![f.clone(), f],
            forces: None,
            blow_up_step: None,
        };
        let cfl = mean_cfl(&traj, &grid, 0.01).unwrap();
        assert!((cfl - 0.01 / grid.dx()).abs() < 1e-12);
    }

    #[test]
    fn mean_cfl_rejects_empty() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let traj = Trajectory {
            times: vec![0.0],
            states: vec![SpectralField::zeros(8)],
            forces: None,
            blow_up_step: None,
        };
        assert!(mean_cfl(&traj, &grid, 0.01).is_err());
    }

    #[test]
    fn initial_condition_modes() {
        let grid = GridConfig::new(8, 0.02).unwrap();
        let f = initial_condition(&grid);
        assert_eq!(f.mode(1), Complex64::new(1.0, -0.5));
        for k in 2..=8 {
            assert!(f.mode(k).norm() == 0.0);
        }
    }

    #[test]
    fn ensemble_has_requested_size_and_finite_states() {
        let c = cfg(16, 1.0, 0.01, 3);
        let ens = make_initial_ensemble(&c, 5.0, 7).unwrap();
        assert_eq!(ens.len(), 7);
        assert!(ens.iter().all(|s| s.is_finite()));
    }

    #[test]
    #[ignore = "minutes-long statistical check; run with --ignored"]
    fn ensemble_densities_agree_across_disjoint_windows() {
        // Two halves of one long stationary run should give the same
        // marginal law of Re û₁. The two-sample K-S floor scales like
        // sqrt(τ_int (1/T₁ + 1/T₂)), so each window must be thousands of
        // time units for the 0.05 bound to have headroom.
        let c = cfg(32, 1.0, 0.005, 11);
        let initial = initial_condition(&c.grid);
        let mut forcing = ForceGen::for_trajectory(&c.force, 0);
        let half_steps = 1_200_000; // 6000 time units per window
        let traj = integrate(&initial, 2 * half_steps, &c, 32, 20, &mut forcing, false).unwrap();
        assert!(traj.blow_up_step.is_none());
        let series = traj.low_mode_series(1);
        let n = series.len();
        let first: Vec<Vec<Complex64>> = series[..n / 2].to_vec();
        let second: Vec<Vec<Complex64>> = series[n / 2..].to_vec();
        let pdf_a = crate::stats::pdf_estimate(&[first], 1).unwrap();
        let pdf_b = crate::stats::pdf_estimate(&[second], 1).unwrap();
        let ks = crate::stats::ks_statistic(&pdf_a, &pdf_b).unwrap();
        assert!(ks < 0.05, "two-window K-S {ks}");
    }
}
