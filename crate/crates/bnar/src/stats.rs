//! Validation statistics computed over ensembles of mode trajectories:
//! the energy spectrum `E|û_k|²`, marginal invariant densities of
//! `Re û_k` with Kolmogorov–Smirnov distances, and uncentered
//! autocorrelation functions with `L²([0, τ_max])` relative errors.
//!
//! Inputs are slices of trajectories, each a time-major series of
//! `K`-vectors; full-model, dataset and NAR types all provide adapters.
//! Every statistic is invariant under trajectory reordering.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A time series of the first `K` modes: `series[n][k-1] = û_k(t_n)`.
pub type ModeSeries = Vec<Vec<Complex64>>;

/// Per-mode mean `|û_k|²` with naive standard errors.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

/// Histogram and raw empirical CDF of `Re û_k` for one mode.
#[derive(Debug, Clone)]
pub struct PdfEstimate {
    /// `edges.len() = masses.len() + 1`; masses sum to one.
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    sorted_samples: Vec<f64>,
}

impl PdfEstimate {
    /// Empirical CDF at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.sorted_samples.len();
        let idx = self.sorted_samples.partition_point(|&s| s <= x);
        idx as f64 / n as f64
    }

    pub fn n_samples(&self) -> usize {
        self.sorted_samples.len()
    }
}

/// Uncentered ACF curve on the lag grid `τ = 0, δ, 2δ, ...`.
#[derive(Debug, Clone)]
pub struct AcfEstimate {
    pub delta: f64,
    pub values: Vec<f64>,
}

impl AcfEstimate {
    pub fn tau_max(&self) -> f64 {
        (self.values.len().saturating_sub(1)) as f64 * self.delta
    }

    /// Linear interpolation, clamped to the endpoints.
    fn at(&self, tau: f64) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        let x = (tau / self.delta).clamp(0.0, (self.values.len() - 1) as f64);
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

fn check_series(data: &[ModeSeries], k_min: usize) -> Result<()> {
    if data.is_empty() || data.iter().all(|s| s.is_empty()) {
        return Err(Error::data("statistics need at least one sample"));
    }
    for series in data {
        for row in series {
            if row.len() < k_min {
                return Err(Error::data(format!(
                    "series row has {} modes, need at least {k_min}",
                    row.len()
                )));
            }
        }
    }
    Ok(())
}

/// Time-ensemble average of `|û_k|²` for `k = 1..=k_modes`.
pub fn energy_spectrum(data: &[ModeSeries], k_modes: usize) -> Result<SpectrumEstimate> {
    check_series(data, k_modes)?;
    let mut sum = vec![0.0; k_modes];
    let mut sum_sq = vec![0.0; k_modes];
    let mut n = 0usize;
    for series in data {
        for row in series {
            for k in 0..k_modes {
                let e = row[k].norm_sqr();
                sum[k] += e;
                sum_sq[k] += e * e;
            }
            n += 1;
        }
    }
    let mean_sq: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean_sq)
        .map(|(&ss, &m)| {
            if n > 1 {
                let var = (ss / n as f64 - m * m).max(0.0);
                (var / (n - 1) as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(SpectrumEstimate {
        mean_sq,
        stderr,
        n_samples: n,
    })
}

/// `|E_model(k) - E_true(k)| / E_true(k)` per mode.
pub fn relative_spectrum_error(
    model: &SpectrumEstimate,
    truth: &SpectrumEstimate,
) -> Result<Vec<f64>> {
    if model.mean_sq.len() != truth.mean_sq.len() {
        return Err(Error::data("spectrum estimates have different widths"));
    }
    Ok(model
        .mean_sq
        .iter()
        .zip(&truth.mean_sq)
        .map(|(&m, &t)| (m - t).abs() / t)
        .collect())
}

/// Histogram (Freedman–Diaconis bin width, at least 50 bins) plus raw
/// empirical CDF of `Re û_k`.
pub fn pdf_estimate(data: &[ModeSeries], k: usize) -> Result<PdfEstimate> {
    check_series(data, k)?;
    let mut samples: Vec<f64> = data
        .iter()
        .flat_map(|s| s.iter().map(|row| row[k - 1].re))
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite sample in density estimate"));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    let lo = samples[0];
    let hi = samples[n - 1];
    let q1 = samples[n / 4];
    let q3 = samples[(3 * n) / 4];
    let iqr = (q3 - q1).max(f64::MIN_POSITIVE);
    let fd_width = 2.0 * iqr / (n as f64).cbrt();
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let bins = ((span / fd_width).ceil() as usize).clamp(50, 100_000);
    let width = span / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut masses = vec![0.0; bins];
    for &s in &samples {
        let mut idx = ((s - lo) / width) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        masses[idx] += 1.0;
    }
    for m in masses.iter_mut() {
        *m /= n as f64;
    }
    Ok(PdfEstimate {
        edges,
        masses,
        sorted_samples: samples,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic: the supremum over the merged
/// sample grid of the CDF difference. Binning-free.
pub fn ks_statistic(a: &PdfEstimate, b: &PdfEstimate) -> Result<f64> {
    if a.sorted_samples.is_empty() || b.sorted_samples.is_empty() {
        return Err(Error::data("K-S needs non-empty samples"));
    }
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.sorted_samples.len() as f64, b.sorted_samples.len() as f64);
    let mut sup: f64 = 0.0;
    while i < a.sorted_samples.len() && j < b.sorted_samples.len() {
        let xa = a.sorted_samples[i];
        let xb = b.sorted_samples[j];
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Uncentered autocorrelation of `Re û_k` by time averaging over all valid
/// pairs within each trajectory, on lags `0, δ, ..., ≤ τ_max`.
pub fn acf(data: &[ModeSeries], k: usize, delta: f64, tau_max: f64) -> Result<AcfEstimate> {
    check_series(data, k)?;
    if !(delta > 0.0) {
        return Err(Error::data("acf needs a positive delta"));
    }
    let max_lag = (tau_max / delta).floor() as usize;
    let mut sums = vec![0.0; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];
    for series in data {
        let re: Vec<f64> = series.iter().map(|row| row[k - 1].re).collect();
        let n = re.len();
        for lag in 0..=max_lag.min(n.saturating_sub(1)) {
            let mut s = 0.0;
            for t in 0..(n - lag) {
                s += re[t] * re[t + lag];
            }
            sums[lag] += s;
            counts[lag] += n - lag;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(AcfEstimate { delta, values })
}

/// `‖a - b‖ / ‖b‖` in `L²([0, τ])` by trapezoidal quadrature on `b`'s lag
/// grid, with `a` linearly interpolated onto it; `τ` is the shorter of the
/// two curves' extents.
pub fn acf_relative_error(a: &AcfEstimate, b: &AcfEstimate) -> Result<f64> {
    if a.values.is_empty() || b.values.is_empty() {
        return Err(Error::data("acf curves must be non-empty"));
    }
    let tau = a.tau_max().min(b.tau_max());
    let m = (tau / b.delta).floor() as usize;
    if m < 1 {
        return Err(Error::data("acf curves do not overlap"));
    }
    let same_grid = a.delta == b.delta;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=m {
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        let av = if same_grid {
            a.values[i]
        } else {
            a.at(i as f64 * b.delta)
        };
        let d = av - b.values[i];
        num += w * d * d;
        den += w * b.values[i] * b.values[i];
    }
    Ok((num / den).sqrt())
}

/// `k, value, stderr` rows.
pub fn write_spectrum_csv(s: &SpectrumEstimate, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "k,mean_sq,stderr")?;
    for (i, (m, e)) in s.mean_sq.iter().zip(&s.stderr).enumerate() {
        writeln!(out, "{},{m},{e}", i + 1)?;
    }
    Ok(())
}

/// `bin_left, bin_right, mass` rows.
pub fn write_pdf_csv(p: &PdfEstimate, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "bin_left,bin_right,mass")?;
    for (i, m) in p.masses.iter().enumerate() {
        writeln!(out, "{},{},{m}", p.edges[i], p.edges[i + 1])?;
    }
    Ok(())
}

/// `tau, value` rows.
pub fn write_acf_csv(a: &AcfEstimate, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "tau,value")?;
    for (i, v) in a.values.iter().enumerate() {
        writeln!(out, "{},{v}", i as f64 * a.delta)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn constant_series(c: Complex64, n: usize) -> ModeSeries {
        vec![vec![c]; n]
    }

    #[test]
    fn spectrum_of_constants() {
        let c = Complex64::new(0.6, -0.8); // |c|² = 1
        let s = energy_spectrum(&[constant_series(c, 10)], 1).unwrap();
        assert!((s.mean_sq[0] - 1.0).abs() < 1e-14);

        let two = vec![constant_series(c, 1), constant_series(-c, 1)];
        let s = energy_spectrum(&two, 1).unwrap();
        assert!((s.mean_sq[0] - 1.0).abs() < 1e-14);
        assert_eq!(s.n_samples, 2);
    }

    #[test]
    fn spectrum_matches_discrete_ou_stationary_variance() {
        // Linear model (nonlinearity off): û_{n+1} = λ û_n + c f, with f
        // per-step white noise. Exact stationary E|û|² is
        // c² E|f|² / (1 - λ²); the simulation must match it.
        use crate::forcing::{ForceConfig, ForceGen};
        use crate::full_model::Etdrk4;
        use crate::spectral::{GridConfig, SpectralField};
        let grid = GridConfig::new(4, 0.5).unwrap();
        let dt = 0.05;
        let sigma = 0.8;
        let mut stepper = Etdrk4::new(&grid, dt, 32, 4).unwrap().without_nonlinearity();
        let force_cfg = ForceConfig::new(sigma, 2, 3).unwrap();
        let mut forcing = ForceGen::for_trajectory(&force_cfg, 0);
        let mut state = SpectralField::zeros(4);
        let n_steps = 200_000;
        let mut series = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let inc = forcing.sample_increment(dt).unwrap();
            state = stepper.step(&state, &inc).unwrap();
            series.push(vec![state.mode(1), state.mode(2)]);
        }
        let s = energy_spectrum(&[series], 2).unwrap();
        for k in 1..=2u32 {
            let z = -0.5 * (k * k) as f64 * dt;
            let lambda = z.exp();
            let c = (lambda - 1.0) / (-0.5 * (k * k) as f64);
            let e_f = sigma * sigma / (2.0 * dt); // E|f̂|² per step
            let expected = c * c * e_f / (1.0 - lambda * lambda);
            let got = s.mean_sq[(k - 1) as usize];
            assert!(
                (got - expected).abs() < 0.05 * expected,
                "k={k}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn relative_error_basics() {
        let t = SpectrumEstimate {
            mean_sq: vec![1.0, 2.0],
            stderr: vec![0.0, 0.0],
            n_samples: 1,
        };
        let m = SpectrumEstimate {
            mean_sq: vec![2.0, 4.0],
            stderr: vec![0.0, 0.0],
            n_samples: 1,
        };
        assert_eq!(relative_spectrum_error(&t, &t).unwrap(), vec![0.0, 0.0]);
        assert_eq!(relative_spectrum_error(&m, &t).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn histogram_mass_is_normalised_and_cdf_monotone() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let series: ModeSeries = (0..5000)
            .map(|_| vec![Complex64::new(rng.gen_range(-2.0..2.0), 0.0)])
            .collect();
        let pdf = pdf_estimate(&[series], 1).unwrap();
        let total: f64 = pdf.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pdf.masses.len() >= 50);
        let mut prev = -1.0;
        for i in -30..=30 {
            let c = pdf.cdf(i as f64 / 10.0);
            assert!(c >= prev);
            prev = c;
        }
        assert_eq!(pdf.cdf(3.0), 1.0);
        assert_eq!(pdf.cdf(-3.0), 0.0);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let series: ModeSeries = (0..2000)
            .map(|_| vec![Complex64::new(rng.gen_range(0.0..1.0), 0.0)])
            .collect();
        let a = pdf_estimate(&[series.clone()], 1).unwrap();
        let b = pdf_estimate(&[series], 1).unwrap();
        assert_eq!(ks_statistic(&a, &b).unwrap(), 0.0);

        let lo: ModeSeries = (0..100).map(|i| vec![Complex64::new(i as f64, 0.0)]).collect();
        let hi: ModeSeries = (0..100)
            .map(|i| vec![Complex64::new(1000.0 + i as f64, 0.0)])
            .collect();
        let a = pdf_estimate(&[lo], 1).unwrap();
        let b = pdf_estimate(&[hi], 1).unwrap();
        assert_eq!(ks_statistic(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ks_detects_location_shift() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let a_series: ModeSeries = (0..20000)
            .map(|_| vec![Complex64::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0)])
            .collect();
        let b_series: ModeSeries = (0..20000)
            .map(|_| {
                vec![Complex64::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal) + 0.5,
                    0.0,
                )]
            })
            .collect();
        let a = pdf_estimate(&[a_series], 1).unwrap();
        let b = pdf_estimate(&[b_series], 1).unwrap();
        let ks = ks_statistic(&a, &b).unwrap();
        // For N(0,1) vs N(0.5,1) the true K-S distance is ≈ 0.197.
        assert!((ks - 0.197).abs() < 0.03, "ks = {ks}");
    }

    #[test]
    fn acf_of_constant_signal_is_flat() {
        let c = Complex64::new(0.7, 0.3);
        let est = acf(&[constant_series(c, 100)], 1, 0.1, 1.0).unwrap();
        assert_eq!(est.values.len(), 11);
        for v in &est.values {
            assert!((v - 0.49).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_error_of_identical_curves_is_zero() {
        let a = AcfEstimate {
            delta: 0.1,
            values: vec![1.0, 0.8, 0.5, 0.2],
        };
        assert_eq!(acf_relative_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn acf_error_interpolates_mismatched_grids() {
        // Same underlying curve e^{-τ} sampled at two rates.
        let f = |t: f64| (-t).exp();
        let a = AcfEstimate {
            delta: 0.2,
            values: (0..=15).map(|i| f(i as f64 * 0.2)).collect(),
        };
        let b = AcfEstimate {
            delta: 0.05,
            values: (0..=60).map(|i| f(i as f64 * 0.05)).collect(),
        };
        let err = acf_relative_error(&a, &b).unwrap();
        assert!(err < 0.01, "interpolation error {err}");
    }

    #[test]
    fn acf_known_ar1_process() {
        // AR(1): x_{n+1} = ρ x_n + ε, uncentered ACF(τ) = var · ρ^{τ/δ}.
        let rho: f64 = 0.9;
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut x = 0.0;
        let n = 400_000;
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            x = rho * x + rng.sample::<f64, _>(rand_distr::StandardNormal);
            series.push(vec![Complex64::new(x, 0.0)]);
        }
        let est = acf(&[series], 1, 1.0, 5.0).unwrap();
        let var = 1.0 / (1.0 - rho * rho);
        for lag in 0..=5usize {
            let want = var * rho.powi(lag as i32);
            let got = est.values[lag];
            assert!(
                (got - want).abs() < 0.05 * var,
                "lag {lag}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn statistics_are_order_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mk = |rng: &mut ChaCha12Rng| -> ModeSeries {
            (0..500)
                .map(|_| vec![Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))])
                .collect()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let fwd = [a.clone(), b.clone()];
        let rev = [b, a];
        let s1 = energy_spectrum(&fwd, 1).unwrap();
        let s2 = energy_spectrum(&rev, 1).unwrap();
        assert!((s1.mean_sq[0] - s2.mean_sq[0]).abs() < 1e-14);
        let k1 = pdf_estimate(&fwd, 1).unwrap();
        let k2 = pdf_estimate(&rev, 1).unwrap();
        assert_eq!(ks_statistic(&k1, &k2).unwrap(), 0.0);
        let a1 = acf(&fwd, 1, 0.1, 2.0).unwrap();
        let a2 = acf(&rev, 1, 0.1, 2.0).unwrap();
        for (x, y) in a1.values.iter().zip(&a2.values) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn chunked_and_whole_series_agree() {
        // One long trajectory vs the same samples split in four: spectrum
        // identical, ACF within edge effects (< 1% here).
        let rho: f64 = 0.8;
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let n = 40_000;
        let mut x = 0.0;
        let whole: ModeSeries = (0..n)
            .map(|_| {
                x = rho * x + rng.sample::<f64, _>(rand_distr::StandardNormal);
                vec![Complex64::new(x, 0.0)]
            })
            .collect();
        let chunks: Vec<ModeSeries> = whole.chunks(n / 4).map(|c| c.to_vec()).collect();
        let s_whole = energy_spectrum(&[whole.clone()], 1).unwrap();
        let s_chunks = energy_spectrum(&chunks, 1).unwrap();
        assert!((s_whole.mean_sq[0] - s_chunks.mean_sq[0]).abs() < 1e-12);
        let a_whole = acf(&[whole], 1, 1.0, 10.0).unwrap();
        let a_chunks = acf(&chunks, 1, 1.0, 10.0).unwrap();
        let err = acf_relative_error(&a_chunks, &a_whole).unwrap();
        assert!(err < 0.01, "chunking error {err}");
    }

    #[test]
    fn csv_writers_emit_headers() {
        let s = SpectrumEstimate {
            mean_sq: vec![1.0],
            stderr: vec![0.1],
            n_samples: 2,
        };
        let mut buf = Vec::new();
        write_spectrum_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,mean_sq,stderr"));
    }
}
