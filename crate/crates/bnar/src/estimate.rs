//! Per-wavenumber least-squares estimation of the NAR coefficients and
//! noise scales from a trajectory dataset.
//!
//! For each `k` the one-step data misfit
//!
//! ```text
//! r^{n,m}_k = u^{n,m}_k - u^{n-1,m}_k - δ [ R^δ(u^{n-1,m})_k + f^{n,m}_k ]
//! ```
//!
//! is regressed on the active features `δ·Φ^{n,m}_{k,·}`, skipping the
//! first `p` steps of every trajectory. The complex rows are stacked as
//! real `(re, im)` pairs; a real-field spec contributes one unknown per
//! term and a complex-field spec two. The solve is SVD on the design
//! matrix (never the normal equations); singular values below
//! `1e-10 · σ_max` are dropped, which also silently handles all-zero
//! columns. The noise estimate is the mean squared residual modulus,
//! `σ̂^g_k = RSS_k / (M·(N_t - p))`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::nar::{
    features_and_drift, CoefficientField, GalerkinStepper, LagWindow, NarModel, NarSpec,
};

/// Relative singular-value cutoff of the pseudo-inverse path.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// The assembled least-squares problem: per-`k` complex design matrices
/// (columns are `δ·Φ_{k,j}`) and response vectors.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub spec: NarSpec,
    pub n_rows: usize,
    /// `design[k-1]` is row-major `n_rows × n_terms`.
    pub design: Vec<Vec<Complex64>>,
    pub response: Vec<Vec<Complex64>>,
}

/// Estimation output: coefficients, noise levels and conditioning.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub theta: Vec<Vec<Complex64>>,
    pub sigma_g: Vec<f64>,
    /// Residual sum of squared moduli per wavenumber.
    pub rss: Vec<f64>,
    /// `σ_max/σ_min` over the retained singular values per wavenumber.
    pub condition: Vec<f64>,
    /// Real-column indices dropped by the singular-value cutoff per `k`.
    pub dropped: Vec<Vec<usize>>,
    pub n_rows: usize,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct File<'a> {
            theta: Vec<Vec<[f64; 2]>>,
            sigma_g: &'a [f64],
            rss: &'a [f64],
            condition: &'a [f64],
            dropped: &'a [Vec<usize>],
            n_rows: usize,
        }
        Ok(serde_json::to_string_pretty(&File {
            theta: self
                .theta
                .iter()
                .map(|row| row.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            sigma_g: &self.sigma_g,
            rss: &self.rss,
            condition: &self.condition,
            dropped: &self.dropped,
            n_rows: self.n_rows,
        })?)
    }
}

/// Builds the regression problem from matched `(u, f)` data.
pub fn build_problem(ds: &TrajectoryDataset, spec: &NarSpec) -> Result<RegressionProblem> {
    if ds.meta.k_modes != spec.k_modes {
        return Err(Error::data(format!(
            "dataset stores {} modes but the spec uses {}",
            ds.meta.k_modes, spec.k_modes
        )));
    }
    if ds.meta.delta != spec.delta {
        return Err(Error::data(format!(
            "dataset delta {} does not match spec delta {}",
            ds.meta.delta, spec.delta
        )));
    }
    let p = spec.lag;
    if ds.meta.n_steps <= p {
        return Err(Error::data(format!(
            "need more than lag = {p} observed steps, got {}",
            ds.meta.n_steps
        )));
    }
    let k_modes = spec.k_modes;
    let n_terms = spec.term_mask.term_count();
    let rows_per_traj = ds.meta.n_steps - p;
    let n_rows = ds.meta.n_traj * rows_per_traj;
    let delta = spec.delta;

    let mut design = vec![Vec::with_capacity(n_rows * n_terms); k_modes];
    let mut response = vec![Vec::with_capacity(n_rows); k_modes];
    let mut stepper = GalerkinStepper::new(spec)?;
    for m in 0..ds.meta.n_traj {
        let mut window = LagWindow::from_dataset(ds, m, spec)?;
        for n in (p + 1)..=ds.meta.n_steps {
            let (features, drift) = features_and_drift(&window, spec, &mut stepper)?;
            for ki in 0..k_modes {
                let k = ki + 1;
                let r = ds.u_at(m, n, k)
                    - ds.u_at(m, n - 1, k)
                    - delta * (drift[ki] + ds.f_at(m, n - 1, k));
                if !r.re.is_finite() || !r.im.is_finite() {
                    return Err(Error::data(format!(
                        "non-finite response at trajectory {m}, step {n}, mode {k}"
                    )));
                }
                response[ki].push(r);
                for t in 0..n_terms {
                    let v = delta * features[ki][t];
                    if !v.re.is_finite() || !v.im.is_finite() {
                        return Err(Error::data(format!(
                            "non-finite feature at trajectory {m}, step {n}, mode {k}"
                        )));
                    }
                    design[ki].push(v);
                }
            }
            window.advance(ds.u_row(m, n).to_vec(), ds.f_row(m, n - 1).to_vec());
        }
    }
    Ok(RegressionProblem {
        spec: spec.clone(),
        n_rows,
        design,
        response,
    })
}

struct ModeFit {
    theta: Vec<Complex64>,
    sigma_g: f64,
    rss: f64,
    condition: f64,
    dropped: Vec<usize>,
}

fn solve_one_mode(
    design: &[Complex64],
    response: &[Complex64],
    n_rows: usize,
    n_terms: usize,
    ridge: f64,
    field: CoefficientField,
) -> Result<ModeFit> {
    // Real stacking: row block [Re; Im]. A real coefficient x gives one
    // column (Re φ, Im φ); a complex coefficient x + iy additionally gets
    // the column (-Im φ, Re φ) for its imaginary part.
    let cols_per_term = match field {
        CoefficientField::Real => 1,
        CoefficientField::Complex => 2,
    };
    let a = DMatrix::from_fn(2 * n_rows, cols_per_term * n_terms, |i, j| {
        let (row, im_block) = if i < n_rows { (i, false) } else { (i - n_rows, true) };
        let phi = design[row * n_terms + j / cols_per_term];
        match (im_block, j % cols_per_term) {
            (false, 0) => phi.re,
            (false, 1) => -phi.im,
            (true, 0) => phi.im,
            (true, 1) => phi.re,
            _ => unreachable!(),
        }
    });
    let b = DVector::from_fn(2 * n_rows, |i, _| {
        if i < n_rows {
            response[i].re
        } else {
            response[i - n_rows].im
        }
    });

    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma_max = svd.singular_values.max();
    let cutoff = SINGULAR_VALUE_CUTOFF * sigma_max;
    let mut ut_b = u.transpose() * &b;
    let mut dropped = Vec::new();
    let mut sigma_min_kept = f64::INFINITY;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            ut_b[i] = 0.0;
            dropped.push(i);
        } else {
            ut_b[i] *= s / (s * s + ridge);
            sigma_min_kept = sigma_min_kept.min(s);
        }
    }
    let theta_real = v_t.transpose() * ut_b;
    let condition = if sigma_min_kept.is_finite() {
        sigma_max / sigma_min_kept
    } else {
        f64::INFINITY
    };
    let theta: Vec<Complex64> = (0..n_terms)
        .map(|j| match field {
            CoefficientField::Real => Complex64::new(theta_real[j], 0.0),
            CoefficientField::Complex => {
                Complex64::new(theta_real[2 * j], theta_real[2 * j + 1])
            }
        })
        .collect();

    let mut rss = 0.0;
    for row in 0..n_rows {
        let mut fitted = Complex64::new(0.0, 0.0);
        for (j, c) in theta.iter().enumerate() {
            fitted += design[row * n_terms + j] * c;
        }
        rss += (response[row] - fitted).norm_sqr();
    }
    Ok(ModeFit {
        theta,
        sigma_g: rss / n_rows as f64,
        rss,
        condition,
        dropped,
    })
}

/// Least squares with optional ridge; see the module docs for the exact
/// problem. All-zero (or numerically dependent) columns are dropped by the
/// singular-value cutoff and flagged in the report rather than failing.
pub fn solve(problem: &RegressionProblem, ridge: f64) -> Result<FitReport> {
    if !(ridge >= 0.0) {
        return Err(Error::config("ridge must be non-negative"));
    }
    let n_terms = problem.spec.term_mask.term_count();
    let fits: Vec<Result<ModeFit>> = (0..problem.spec.k_modes)
        .into_par_iter()
        .map(|ki| {
            solve_one_mode(
                &problem.design[ki],
                &problem.response[ki],
                problem.n_rows,
                n_terms,
                ridge,
                problem.spec.coefficients,
            )
        })
        .collect();
    let mut report = FitReport {
        theta: Vec::new(),
        sigma_g: Vec::new(),
        rss: Vec::new(),
        condition: Vec::new(),
        dropped: Vec::new(),
        n_rows: problem.n_rows,
    };
    for fit in fits {
        let fit = fit?;
        report.theta.push(fit.theta);
        report.sigma_g.push(fit.sigma_g);
        report.rss.push(fit.rss);
        report.condition.push(fit.condition);
        report.dropped.push(fit.dropped);
    }
    Ok(report)
}

/// Convenience: build, solve and package as a [`NarModel`].
pub fn fit(ds: &TrajectoryDataset, spec: &NarSpec, ridge: f64) -> Result<(NarModel, FitReport)> {
    let problem = build_problem(ds, spec)?;
    let report = solve(&problem, ridge)?;
    let model = NarModel {
        spec: spec.clone(),
        theta: report.theta.clone(),
        sigma_g: report.sigma_g.clone(),
    };
    model.validate()?;
    Ok((model, report))
}

/// Coefficient paths over nested data sizes.
#[derive(Debug, Clone)]
pub struct ConsistencyTable {
    /// `(n_traj, n_steps)` per refit, ascending.
    pub sizes: Vec<(usize, usize)>,
    pub sample_counts: Vec<usize>,
    /// `thetas[i][k-1][term]` for size `i`.
    pub thetas: Vec<Vec<Vec<Complex64>>>,
    /// Relative RMS change between consecutive sizes.
    pub rel_changes: Vec<f64>,
}

impl ConsistencyTable {
    /// Relative change over the last two sizes.
    pub fn final_rel_change(&self) -> f64 {
        self.rel_changes.last().copied().unwrap_or(f64::NAN)
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        write!(out, "n_traj,n_steps,samples,rel_change")?;
        let n_k = self.thetas[0].len();
        let n_t = self.thetas[0][0].len();
        for k in 1..=n_k {
            for t in 0..n_t {
                write!(out, ",theta_k{k}_t{t}_re,theta_k{k}_t{t}_im")?;
            }
        }
        writeln!(out)?;
        for (i, &(m, n)) in self.sizes.iter().enumerate() {
            let change = if i == 0 {
                String::new()
            } else {
                format!("{}", self.rel_changes[i - 1])
            };
            write!(out, "{m},{n},{},{change}", self.sample_counts[i])?;
            for row in &self.thetas[i] {
                for c in row {
                    write!(out, ",{},{}", c.re, c.im)?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn theta_norm(theta: &[Vec<Complex64>]) -> f64 {
    theta
        .iter()
        .flat_map(|row| row.iter())
        .map(|c| c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn theta_diff(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb))
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Refits on nested prefixes of the dataset and reports how the estimate
/// moves as the sample count grows.
pub fn consistency_study(
    ds: &TrajectoryDataset,
    spec: &NarSpec,
    sizes: &[(usize, usize)],
    ridge: f64,
) -> Result<ConsistencyTable> {
    if sizes.is_empty() {
        return Err(Error::config("consistency study needs at least one size"));
    }
    for w in sizes.windows(2) {
        let s0 = w[0].0 * (w[0].1.saturating_sub(spec.lag));
        let s1 = w[1].0 * (w[1].1.saturating_sub(spec.lag));
        if s1 < s0 {
            return Err(Error::config("sizes must be ascending in sample count"));
        }
    }
    let mut table = ConsistencyTable {
        sizes: sizes.to_vec(),
        sample_counts: Vec::new(),
        thetas: Vec::new(),
        rel_changes: Vec::new(),
    };
    for &(m, n) in sizes {
        let sub = ds.slice(m, n)?;
        let (model, report) = fit(&sub, spec, ridge)?;
        table.sample_counts.push(report.n_rows);
        table.thetas.push(model.theta);
    }
    for w in table.thetas.windows(2) {
        let denom = theta_norm(&w[1]).max(1e-300);
        table.rel_changes.push(theta_diff(&w[0], &w[1]) / denom);
    }
    Ok(table)
}
