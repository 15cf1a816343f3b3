//! Experiment orchestration behind the `bnar` binary: declarative JSON
//! configs, five subcommands (`simulate`, `gen-data`, `fit`, `validate`,
//! `sweep`) and deterministic, manifest-stamped outputs.
//!
//! Every command is a pure function of `(config, seed, input files)`:
//! reruns produce bit-identical outputs. Output directories receive a
//! `manifest.json` recording the command, the resolved config and its
//! SHA-256 hash, the seed and the crate version. Nothing time-dependent is
//! ever written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::estimate;
use crate::forcing::{stream_rng, ForceConfig, ForceGen, StreamPurpose};
use crate::full_model::{
    initial_condition, integrate, make_initial_ensemble, mean_cfl, IntegratorConfig,
};
use crate::nar::{ForceSource, LagWindow, NarModel, NarSpec, NarTrajectory};
use crate::spectral::{FourierWorkspace, GridConfig, SpectralField};
use crate::stats;

/// Force-stream index of the dedicated full-model CFL run.
const STREAM_IDX_FULL_CFL: u64 = 1 << 20;
/// Base force-stream index of the per-gap Galerkin CFL runs.
const STREAM_IDX_GALERKIN_CFL: u64 = (1 << 20) + 1;

/// Experiment size: `quick` for desk-scale runs and CI, `paper` for the
/// full-length reproduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Quick,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::config(format!("unknown scale '{other}'"))),
        }
    }
}

fn default_viscosity() -> f64 {
    0.02
}
fn default_n_modes() -> usize {
    128
}
fn default_dt() -> f64 {
    0.001
}
fn default_k0() -> usize {
    4
}
fn default_sigma() -> f64 {
    1.0
}
fn default_contour() -> usize {
    32
}

/// Full-model parameters (defaults are the reference configuration:
/// ν = 0.02, N = 128, dt = 0.001, K₀ = 4, σ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullModelBlock {
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    #[serde(default = "default_n_modes")]
    pub n_modes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_contour")]
    pub etd_contour_points: usize,
}

impl Default for FullModelBlock {
    fn default() -> Self {
        FullModelBlock {
            viscosity: default_viscosity(),
            n_modes: default_n_modes(),
            dt: default_dt(),
            k0: default_k0(),
            sigma: default_sigma(),
            etd_contour_points: default_contour(),
        }
    }
}

fn default_k_modes() -> usize {
    8
}
fn default_gaps() -> Vec<usize> {
    vec![5, 10, 20, 30, 40, 50, 80, 160]
}
fn default_lags() -> Vec<usize> {
    vec![1]
}

/// Reduction parameters: modes kept, observation strides and memory
/// lengths to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionBlock {
    #[serde(default = "default_k_modes")]
    pub k_modes: usize,
    #[serde(default = "default_gaps")]
    pub gaps: Vec<usize>,
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
    #[serde(default)]
    pub ridge: f64,
}

impl Default for ReductionBlock {
    fn default() -> Self {
        ReductionBlock {
            k_modes: default_k_modes(),
            gaps: default_gaps(),
            lags: default_lags(),
            ridge: 0.0,
        }
    }
}

fn default_seed() -> u64 {
    37
}
fn default_n_traj() -> usize {
    1
}
fn default_save_every() -> usize {
    10
}

/// Data sizes. Times are in simulated time units; `None` fields resolve
/// from the scale (quick: burn-in 200, train/validate 500, 32 ensemble
/// members; paper: burn-in 10⁴, train/validate 2000, 10³ members).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBlock {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub burn_in_time: Option<f64>,
    #[serde(default)]
    pub train_time: Option<f64>,
    #[serde(default)]
    pub validate_time: Option<f64>,
    #[serde(default)]
    pub n_ensemble: Option<usize>,
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock {
            seed: default_seed(),
            n_traj: default_n_traj(),
            burn_in_time: None,
            train_time: None,
            validate_time: None,
            n_ensemble: None,
            save_every: default_save_every(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub full_model: FullModelBlock,
    #[serde(default)]
    pub reduction: ReductionBlock,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scale: Scale,
}

/// Scale-resolved data sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedData {
    pub burn_in_time: f64,
    pub train_time: f64,
    pub validate_time: f64,
    pub n_ensemble: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator()?.validate()?;
        if self.reduction.gaps.is_empty() {
            return Err(Error::config("gap list must be non-empty"));
        }
        if self.reduction.gaps.iter().any(|&g| g < 1) {
            return Err(Error::config("gaps must be positive"));
        }
        if self.reduction.lags.is_empty() || self.reduction.lags.iter().any(|&p| p < 1) {
            return Err(Error::config("lags must be non-empty and positive"));
        }
        if self.reduction.k_modes < 1 || self.reduction.k_modes > self.full_model.n_modes {
            return Err(Error::config("k_modes out of range"));
        }
        if self.data.n_traj < 1 || self.data.save_every < 1 {
            return Err(Error::config("n_traj and save_every must be positive"));
        }
        for t in [
            self.data.burn_in_time,
            self.data.train_time,
            self.data.validate_time,
        ]
        .into_iter()
        .flatten()
        {
            if !(t > 0.0) {
                return Err(Error::config("times must be positive"));
            }
        }
        Ok(())
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        Ok(IntegratorConfig {
            grid: GridConfig::new(self.full_model.n_modes, self.full_model.viscosity)?,
            force: ForceConfig::new(self.full_model.sigma, self.full_model.k0, self.data.seed)?,
            dt: self.full_model.dt,
            etd_contour_points: self.full_model.etd_contour_points,
        })
    }

    pub fn resolved_data(&self) -> ResolvedData {
        let (burn, train, valid, ens) = match self.scale {
            Scale::Quick => (200.0, 500.0, 500.0, 32),
            Scale::Paper => (10_000.0, 2000.0, 2000.0, 1000),
        };
        ResolvedData {
            burn_in_time: self.data.burn_in_time.unwrap_or(burn),
            train_time: self.data.train_time.unwrap_or(train),
            validate_time: self.data.validate_time.unwrap_or(valid),
            n_ensemble: self.data.n_ensemble.unwrap_or(ens),
        }
    }

    fn nar_spec(&self, gap: usize, lag: usize) -> Result<NarSpec> {
        let delta = gap as f64 * self.full_model.dt;
        let mut spec = NarSpec::standard(
            self.reduction.k_modes,
            lag,
            delta,
            self.full_model.viscosity,
        )?;
        spec.etd_contour_points = self.full_model.etd_contour_points;
        Ok(spec)
    }
}

/// Honors `BNAR_WORKERS`; call once at process start.
pub fn init_worker_pool() {
    if let Ok(v) = std::env::var("BNAR_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        config_sha256: String,
        config: &'a ExperimentConfig,
        resolved: ResolvedData,
    }
    let config_json = serde_json::to_vec(cfg)?;
    let hash = hex_digest(&config_json);
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.data.seed,
        config_sha256: hash,
        config: cfg,
        resolved: cfg.resolved_data(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn steps_for(time: f64, dt: f64) -> usize {
    (time / dt).round().max(1.0) as usize
}

/// Mean CFL of a reduced (K-mode) state sequence: sup on the evaluation
/// grid, `Δx = 2π/(2K)` of the reduced system itself.
fn reduced_mean_cfl(
    states: &[Vec<Complex64>],
    k_modes: usize,
    eval_modes: usize,
    dt_eval: f64,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::data("no states for CFL evaluation"));
    }
    let grid = GridConfig::new(eval_modes, 1.0)?;
    let mut ws = FourierWorkspace::new(&grid);
    let dx = std::f64::consts::TAU / (2 * k_modes) as f64;
    let mut sum = 0.0;
    for state in states {
        let mut field = SpectralField::zeros(eval_modes);
        for (i, &v) in state.iter().enumerate().take(k_modes) {
            field.set_mode(i + 1, v);
        }
        let u = ws.to_physical(&field)?;
        let sup = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        sum += sup * dt_eval / dx;
    }
    Ok(sum / states.len() as f64)
}

/// Runs the full model from a burned-in state, writing the trajectory (as
/// a `BNAR1` dataset with `K = N` and `gap = save_every`) plus a mean-CFL
/// report. With `--steps 0` the burn-in is skipped and only headers are
/// written, which makes smoke tests cheap.
pub fn cmd_simulate(cfg: &ExperimentConfig, n_steps_override: Option<usize>) -> Result<()> {
    cfg.validate()?;
    let out = cfg.output_dir.join("simulate");
    ensure_dir(&out)?;
    let integ = cfg.integrator()?;
    let resolved = cfg.resolved_data();
    let n_steps = n_steps_override.unwrap_or(100_000);
    let save_every = cfg.data.save_every;

    let initial = if n_steps == 0 {
        initial_condition(&integ.grid)
    } else {
        make_initial_ensemble(&integ, resolved.burn_in_time, 1)?
            .pop()
            .expect("one sample")
    };
    let mut forcing = ForceGen::for_trajectory(&integ.force, 0);
    let traj = integrate(&initial, n_steps, &integ, integ.grid.n_modes, save_every, &mut forcing, true)?;
    if let Some(step) = traj.blow_up_step {
        return Err(Error::Integration {
            step,
            message: "full model blew up during simulate".to_string(),
        });
    }

    // Package the saved states as a dataset: K = N, one trajectory.
    let n_saved = traj.states.len() - 1;
    let n = integ.grid.n_modes;
    let mut u = Vec::with_capacity((n_saved + 1) * n);
    for s in &traj.states {
        u.extend((1..=n).map(|k| s.mode(k)));
    }
    let delta = save_every as f64 * integ.dt;
    let mut f = Vec::with_capacity(n_saved * n);
    if let Some(incs) = &traj.forces {
        for chunk in incs.chunks_exact(save_every).take(n_saved) {
            let agg = crate::forcing::aggregate_over_gap(chunk, save_every, delta)?;
            for k in 1..=n {
                f.push(if k <= agg.len() { agg[k - 1] } else { Complex64::new(0.0, 0.0) });
            }
        }
    }
    let meta = dataset::DatasetMeta {
        format_version: dataset::FORMAT_VERSION,
        k_modes: n,
        gap: save_every,
        dt: integ.dt,
        delta,
        n_traj: 1,
        n_steps: n_saved.max(1),
        full_model: integ,
        seed: cfg.data.seed,
    };
    // A zero-step run still needs one observed step to satisfy the format,
    // so duplicate the initial state.
    let ds = if n_saved == 0 {
        let mut u2 = u.clone();
        u2.extend_from_slice(&u);
        TrajectoryDataset {
            meta,
            u: u2,
            f: vec![Complex64::new(0.0, 0.0); n],
        }
    } else {
        TrajectoryDataset { meta, u, f }
    };
    dataset::save(&ds, out.join("trajectory.bnar"))?;

    #[derive(Serialize)]
    struct CflReport {
        sigma: f64,
        dt: f64,
        n_steps: usize,
        save_every: usize,
        mean_cfl: Option<f64>,
    }
    let cfl = if n_steps == 0 {
        None
    } else {
        Some(mean_cfl(&traj, &integ.grid, integ.dt)?)
    };
    let report = CflReport {
        sigma: cfg.full_model.sigma,
        dt: integ.dt,
        n_steps,
        save_every,
        mean_cfl: cfl,
    };
    fs::write(out.join("cfl.json"), serde_json::to_string_pretty(&report)?)?;
    write_manifest(&out, "simulate", cfg)?;
    Ok(())
}

/// Burns in, draws the initial ensemble and writes one training dataset
/// per gap plus a validation dataset (independent trajectory) at the
/// finest gap. When every gap is a multiple of the smallest, the full
/// model runs once and the coarser datasets are exact downsamples sharing
/// the same Brownian path.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let out = cfg.output_dir.join("data");
    ensure_dir(&out)?;
    let integ = cfg.integrator()?;
    let resolved = cfg.resolved_data();
    let k = cfg.reduction.k_modes;
    let ensemble = make_initial_ensemble(&integ, resolved.burn_in_time, resolved.n_ensemble)?;

    let g0 = *cfg.reduction.gaps.iter().min().unwrap();
    let train_fine_steps = steps_for(resolved.train_time, integ.dt);
    let all_divisible = cfg.reduction.gaps.iter().all(|g| g % g0 == 0);

    if all_divisible {
        let n_obs = train_fine_steps / g0;
        let base = dataset::generate(&integ, k, g0, cfg.data.n_traj, n_obs, &ensemble)?;
        for &gap in &cfg.reduction.gaps {
            let ds = base.downsample(gap / g0)?;
            dataset::save(&ds, out.join(format!("gap{gap}.bnar")))?;
        }
    } else {
        for &gap in &cfg.reduction.gaps {
            let n_obs = train_fine_steps / gap;
            let ds = dataset::generate(&integ, k, gap, cfg.data.n_traj, n_obs, &ensemble)?;
            dataset::save(&ds, out.join(format!("gap{gap}.bnar")))?;
        }
    }

    // Validation trajectory: fresh force streams after the training ones.
    let valid_fine_steps = steps_for(resolved.validate_time, integ.dt);
    let valid = dataset::generate_with_streams(
        &integ,
        k,
        g0,
        1,
        valid_fine_steps / g0,
        &ensemble,
        cfg.data.n_traj as u64,
    )?;
    dataset::save(&valid, out.join("validation.bnar"))?;
    write_manifest(&out, "gen-data", cfg)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub gap: usize,
    pub lag: usize,
    pub n_sim_steps: usize,
    pub stable: bool,
    pub blow_up_step: Option<usize>,
    pub spectrum_model: Option<Vec<f64>>,
    pub spectrum_truth: Vec<f64>,
    pub spectrum_rel_err: Option<Vec<f64>>,
    pub max_spectrum_rel_err: Option<f64>,
    pub ks: Option<Vec<f64>>,
    pub max_ks: Option<f64>,
    pub acf_rel_err: Option<Vec<f64>>,
    pub max_acf_rel_err: Option<f64>,
    pub nar_mean_cfl: Option<f64>,
}

/// Fits every requested `(gap, lag)` pair from the generated datasets and
/// writes models, fit reports and coefficient-vs-datasize tables.
pub fn cmd_fit(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let data = data_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("data"));
    let out = cfg.output_dir.join("fit");
    ensure_dir(&out)?;
    for &gap in &cfg.reduction.gaps {
        let ds = dataset::load(data.join(format!("gap{gap}.bnar")))?;
        for &p in &cfg.reduction.lags {
            let spec = cfg.nar_spec(gap, p)?;
            let (model, report) = estimate::fit(&ds, &spec, cfg.reduction.ridge)?;
            fs::write(out.join(format!("model_gap{gap}_p{p}.json")), model.to_json()?)?;
            fs::write(out.join(format!("report_gap{gap}_p{p}.json")), report.to_json()?)?;
            // Nested refits for the convergence table.
            let n = ds.meta.n_steps;
            let mut sizes = Vec::new();
            for div in [8usize, 4, 2, 1] {
                let steps = n / div;
                if steps > p + 1 {
                    sizes.push((ds.meta.n_traj, steps));
                }
            }
            if sizes.len() >= 2 {
                let table = estimate::consistency_study(&ds, &spec, &sizes, cfg.reduction.ridge)?;
                let mut csv = Vec::new();
                table.write_csv(&mut csv)?;
                fs::write(out.join(format!("consistency_gap{gap}_p{p}.csv")), csv)?;
            }
        }
    }
    write_manifest(&out, "fit", cfg)?;
    Ok(())
}

/// Validates one fitted model against the truth dataset: long NAR
/// simulation, spectrum/PDF/ACF/K-S comparison, stability verdict and the
/// reduced model's own CFL number.
pub fn cmd_validate(
    cfg: &ExperimentConfig,
    gap: usize,
    lag: usize,
    model_path: Option<&Path>,
    truth_path: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    let model_file = model_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("fit").join(format!("model_gap{gap}_p{lag}.json")));
    let truth_file = truth_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("data").join("validation.bnar"));
    let model = NarModel::from_json(&fs::read_to_string(&model_file)?)?;
    let truth = dataset::load(&truth_file)?;
    let out = cfg.output_dir.join("validate").join(format!("gap{gap}_p{lag}"));
    ensure_dir(&out)?;

    let report = validate_model(cfg, &model, &truth, gap, lag)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report.0)?)?;

    let k = model.spec.k_modes;
    let truth_series = [truth.truncate_modes(k)?.mode_series(0)];
    let truth_spectrum = stats::energy_spectrum(&truth_series, k)?;
    let mut buf = Vec::new();
    stats::write_spectrum_csv(&truth_spectrum, &mut buf)?;
    fs::write(out.join("spectrum_truth.csv"), buf)?;
    if let Some(nar) = &report.1 {
        let series = [nar.mode_series()];
        let spectrum = stats::energy_spectrum(&series, k)?;
        let mut buf = Vec::new();
        stats::write_spectrum_csv(&spectrum, &mut buf)?;
        fs::write(out.join("spectrum_model.csv"), buf)?;
        for kk in 1..=k {
            let pdf = stats::pdf_estimate(&series, kk)?;
            let mut buf = Vec::new();
            stats::write_pdf_csv(&pdf, &mut buf)?;
            fs::write(out.join(format!("pdf_model_k{kk}.csv")), buf)?;
            let acf = stats::acf(&series, kk, nar.delta, 3.0)?;
            let mut buf = Vec::new();
            stats::write_acf_csv(&acf, &mut buf)?;
            fs::write(out.join(format!("acf_model_k{kk}.csv")), buf)?;
            let pdf_t = stats::pdf_estimate(&truth_series, kk)?;
            let mut buf = Vec::new();
            stats::write_pdf_csv(&pdf_t, &mut buf)?;
            fs::write(out.join(format!("pdf_truth_k{kk}.csv")), buf)?;
            let acf_t = stats::acf(&truth_series, kk, truth.meta.delta, 3.0)?;
            let mut buf = Vec::new();
            stats::write_acf_csv(&acf_t, &mut buf)?;
            fs::write(out.join(format!("acf_truth_k{kk}.csv")), buf)?;
        }
    }
    write_manifest(&out, "validate", cfg)?;
    Ok(())
}

/// Shared validation core; returns the report plus the simulated
/// trajectory when one was produced.
fn validate_model(
    cfg: &ExperimentConfig,
    model: &NarModel,
    truth: &TrajectoryDataset,
    gap: usize,
    lag: usize,
) -> Result<(ValidationReport, Option<NarTrajectory>)> {
    let resolved = cfg.resolved_data();
    let k = model.spec.k_modes;
    if truth.meta.k_modes < k {
        return Err(Error::data("truth dataset stores fewer modes than the model"));
    }
    let truth_k = truth.truncate_modes(k)?;
    if gap % truth.meta.gap != 0 {
        return Err(Error::data(format!(
            "model gap {gap} is not a multiple of the truth gap {}",
            truth.meta.gap
        )));
    }
    let seed_window = truth_k.downsample(gap / truth.meta.gap)?;
    let window = LagWindow::from_dataset(&seed_window, 0, &model.spec)?;

    let n_sim = steps_for(resolved.validate_time, model.spec.delta);
    let stream_idx = (gap * 256 + lag) as u64;
    let mut force = ForceSource::WhiteNoise {
        sigma: cfg.full_model.sigma,
        k0: cfg.full_model.k0,
        rng: stream_rng(cfg.data.seed, StreamPurpose::NarForce, stream_idx),
    };
    let mut noise_rng = stream_rng(cfg.data.seed, StreamPurpose::NarNoise, stream_idx);
    let nar = crate::nar::simulate_nar(model, &window, n_sim, &mut force, &mut noise_rng)?;

    let truth_series = [truth_k.mode_series(0)];
    let truth_spectrum = stats::energy_spectrum(&truth_series, k)?;
    let mut report = ValidationReport {
        gap,
        lag,
        n_sim_steps: n_sim,
        stable: nar.is_stable(),
        blow_up_step: nar.blow_up_step,
        spectrum_model: None,
        spectrum_truth: truth_spectrum.mean_sq.clone(),
        spectrum_rel_err: None,
        max_spectrum_rel_err: None,
        ks: None,
        max_ks: None,
        acf_rel_err: None,
        max_acf_rel_err: None,
        nar_mean_cfl: None,
    };
    if !nar.is_stable() {
        return Ok((report, Some(nar)));
    }

    let series = [nar.mode_series()];
    let spectrum = stats::energy_spectrum(&series, k)?;
    let rel = stats::relative_spectrum_error(&spectrum, &truth_spectrum)?;
    report.max_spectrum_rel_err = rel.iter().cloned().fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });
    report.spectrum_model = Some(spectrum.mean_sq.clone());
    report.spectrum_rel_err = Some(rel);

    let mut ks = Vec::with_capacity(k);
    let mut acf_err = Vec::with_capacity(k);
    for kk in 1..=k {
        let pdf_m = stats::pdf_estimate(&series, kk)?;
        let pdf_t = stats::pdf_estimate(&truth_series, kk)?;
        ks.push(stats::ks_statistic(&pdf_m, &pdf_t)?);
        let acf_m = stats::acf(&series, kk, nar.delta, 3.0)?;
        let acf_t = stats::acf(&truth_series, kk, truth_k.meta.delta, 3.0)?;
        acf_err.push(stats::acf_relative_error(&acf_m, &acf_t)?);
    }
    report.max_ks = ks.iter().cloned().reduce(f64::max);
    report.max_acf_rel_err = acf_err.iter().cloned().reduce(f64::max);
    report.ks = Some(ks);
    report.acf_rel_err = Some(acf_err);
    report.nar_mean_cfl = Some(reduced_mean_cfl(
        &nar.states,
        k,
        cfg.full_model.n_modes.min(4 * k).max(k + 1),
        model.spec.delta,
    )?);
    Ok((report, Some(nar)))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    gap: usize,
    lag: usize,
    delta: f64,
    stable: bool,
    blow_up_step: Option<usize>,
    max_spectrum_rel_err: Option<f64>,
    max_ks: Option<f64>,
    max_acf_rel_err: Option<f64>,
    nar_mean_cfl: Option<f64>,
    galerkin_mean_cfl: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    full_model_mean_cfl: f64,
    best_gap_by_spectrum: Option<usize>,
    cfl_matching_gap: Option<usize>,
    rows: Vec<SweepRow>,
}

/// End-to-end study over every `(gap, lag)` combination: generate data
/// once, fit, validate, and tabulate stability, statistical errors and the
/// CFL comparison between the full model and the bare K-mode Galerkin
/// scheme at each δ.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    cmd_gen_data(cfg)?;
    cmd_fit(cfg, None)?;
    let out = cfg.output_dir.join("sweep");
    ensure_dir(&out)?;
    let integ = cfg.integrator()?;
    let resolved = cfg.resolved_data();
    let truth = dataset::load(cfg.output_dir.join("data").join("validation.bnar"))?;

    // Full-model reference CFL over 10^5 fine steps.
    let full_cfl = {
        let initial = make_initial_ensemble(&integ, resolved.burn_in_time, 1)?
            .pop()
            .expect("one sample");
        let mut forcing =
            ForceGen::for_stream(&integ.force, StreamPurpose::Trajectory, STREAM_IDX_FULL_CFL);
        let traj = integrate(&initial, 100_000, &integ, integ.grid.n_modes, 10, &mut forcing, false)?;
        mean_cfl(&traj, &integ.grid, integ.dt)?
    };

    let combos: Vec<(usize, usize)> = cfg
        .reduction
        .gaps
        .iter()
        .flat_map(|&g| cfg.reduction.lags.iter().map(move |&p| (g, p)))
        .collect();
    let rows: Vec<Result<SweepRow>> = combos
        .par_iter()
        .map(|&(gap, lag)| {
            let model_path = cfg
                .output_dir
                .join("fit")
                .join(format!("model_gap{gap}_p{lag}.json"));
            let model = NarModel::from_json(&fs::read_to_string(&model_path)?)?;
            let (report, _) = validate_model(cfg, &model, &truth, gap, lag)?;
            let galerkin_cfl = galerkin_mean_cfl(cfg, &truth, gap)?;
            Ok(SweepRow {
                gap,
                lag,
                delta: gap as f64 * cfg.full_model.dt,
                stable: report.stable,
                blow_up_step: report.blow_up_step,
                max_spectrum_rel_err: report.max_spectrum_rel_err,
                max_ks: report.max_ks,
                max_acf_rel_err: report.max_acf_rel_err,
                nar_mean_cfl: report.nar_mean_cfl,
                galerkin_mean_cfl: galerkin_cfl,
            })
        })
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;

    let best_gap_by_spectrum = rows
        .iter()
        .filter(|r| r.stable)
        .filter_map(|r| r.max_spectrum_rel_err.map(|e| (r.gap, e)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(g, _)| g);
    let cfl_matching_gap = rows
        .iter()
        .filter_map(|r| r.galerkin_mean_cfl.map(|c| (r.gap, (c - full_cfl).abs())))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(g, _)| g);

    let mut csv = Vec::new();
    writeln!(
        csv,
        "gap,lag,delta,stable,blow_up_step,max_spectrum_rel_err,max_ks,max_acf_rel_err,nar_mean_cfl,galerkin_mean_cfl"
    )?;
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.gap,
            r.lag,
            r.delta,
            r.stable,
            r.blow_up_step.map(|s| s.to_string()).unwrap_or_default(),
            fmt(&r.max_spectrum_rel_err),
            fmt(&r.max_ks),
            fmt(&r.max_acf_rel_err),
            fmt(&r.nar_mean_cfl),
            fmt(&r.galerkin_mean_cfl),
        )?;
    }
    fs::write(out.join("summary.csv"), csv)?;

    let mut cfl_csv = Vec::new();
    writeln!(cfl_csv, "gap,delta,galerkin_mean_cfl,full_model_mean_cfl")?;
    for r in rows.iter().filter(|r| r.lag == cfg.reduction.lags[0]) {
        writeln!(
            cfl_csv,
            "{},{},{},{full_cfl}",
            r.gap,
            r.delta,
            fmt(&r.galerkin_mean_cfl)
        )?;
    }
    fs::write(out.join("cfl.csv"), cfl_csv)?;

    let summary = SweepSummary {
        full_model_mean_cfl: full_cfl,
        best_gap_by_spectrum,
        cfl_matching_gap,
        rows,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_manifest(&out, "sweep", cfg)?;
    Ok(())
}

/// Mean CFL of the bare stochastic K-mode Galerkin system run at step
/// `δ = gap·dt` for the validation horizon; `None` if it blows up.
fn galerkin_mean_cfl(
    cfg: &ExperimentConfig,
    truth: &TrajectoryDataset,
    gap: usize,
) -> Result<Option<f64>> {
    let resolved = cfg.resolved_data();
    let k = cfg.reduction.k_modes;
    let delta = gap as f64 * cfg.full_model.dt;
    let grid = GridConfig::new(k + 1, cfg.full_model.viscosity)?;
    let force = ForceConfig::new(cfg.full_model.sigma, cfg.full_model.k0, cfg.data.seed)?;
    let galerkin_cfg = IntegratorConfig {
        grid,
        force,
        dt: delta,
        etd_contour_points: cfg.full_model.etd_contour_points,
    };
    let mut initial = SpectralField::zeros(k + 1);
    for kk in 1..=k.min(truth.meta.k_modes) {
        initial.set_mode(kk, truth.u_at(0, 0, kk));
    }
    let mut forcing = ForceGen::for_stream(
        &galerkin_cfg.force,
        StreamPurpose::Trajectory,
        STREAM_IDX_GALERKIN_CFL + gap as u64,
    );
    let n_steps = steps_for(resolved.validate_time, delta);
    let traj = integrate(&initial, n_steps, &galerkin_cfg, k, 1, &mut forcing, false)?;
    if traj.blow_up_step.is_some() {
        return Ok(None);
    }
    let states: Vec<Vec<Complex64>> = traj.low_mode_series(k);
    // Skip the seed state to mirror mean_cfl's convention.
    Ok(Some(reduced_mean_cfl(
        &states[1..],
        k,
        k + 1,
        delta,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.full_model.n_modes = 16;
        cfg.full_model.dt = 0.01;
        cfg.reduction.k_modes = 2;
        cfg.reduction.gaps = vec![2, 4];
        cfg.data.seed = 42;
        cfg.data.burn_in_time = Some(1.0);
        cfg.data.train_time = Some(10.0);
        cfg.data.validate_time = Some(10.0);
        cfg.data.n_ensemble = Some(4);
        cfg.data.save_every = 2;
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn config_defaults_follow_reference_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.full_model.n_modes, 128);
        assert_eq!(cfg.full_model.dt, 0.001);
        assert_eq!(cfg.full_model.k0, 4);
        assert_eq!(cfg.full_model.viscosity, 0.02);
        assert_eq!(cfg.full_model.sigma, 1.0);
        assert_eq!(cfg.reduction.gaps, vec![5, 10, 20, 30, 40, 50, 80, 160]);
        assert_eq!(cfg.scale, Scale::Quick);
        let paper = ExperimentConfig {
            scale: Scale::Paper,
            ..Default::default()
        };
        let r = paper.resolved_data();
        assert_eq!(r.burn_in_time, 10_000.0);
        assert_eq!(r.train_time, 2000.0);
        assert_eq!(r.n_ensemble, 1000);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"full_model": {"sigma": 0.2}}"#).unwrap();
        assert_eq!(cfg.full_model.sigma, 0.2);
        assert_eq!(cfg.full_model.n_modes, 128);
        assert!(ExperimentConfig::from_json("{invalid").is_err());
        assert!(ExperimentConfig::from_json(r#"{"reduction": {"gaps": []}}"#).is_err());
    }

    #[test]
    fn zero_step_simulate_writes_headers() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_simulate(&cfg, Some(0)).unwrap();
        let out = dir.path().join("simulate");
        assert!(out.join("trajectory.bnar").exists());
        assert!(out.join("cfl.json").exists());
        assert!(out.join("manifest.json").exists());
        let ds = dataset::load(out.join("trajectory.bnar")).unwrap();
        assert_eq!(ds.meta.k_modes, 16);
        let cfl: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("cfl.json")).unwrap()).unwrap();
        assert!(cfl["mean_cfl"].is_null());
    }

    #[test]
    fn pipeline_runs_end_to_end_at_toy_scale() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_gen_data(&cfg).unwrap();
        for gap in [2usize, 4] {
            let ds = dataset::load(dir.path().join("data").join(format!("gap{gap}.bnar"))).unwrap();
            assert_eq!(ds.meta.gap, gap);
            assert_eq!(ds.meta.k_modes, 2);
            assert_eq!(ds.meta.n_steps, (10.0f64 / 0.01).round() as usize / gap);
        }
        cmd_fit(&cfg, None).unwrap();
        let model_path = dir.path().join("fit").join("model_gap2_p1.json");
        let model = NarModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
        assert_eq!(model.spec.k_modes, 2);
        cmd_validate(&cfg, 2, 1, None, None).unwrap();
        let report: ValidationReport = serde_json::from_str(
            &fs::read_to_string(
                dir.path()
                    .join("validate")
                    .join("gap2_p1")
                    .join("report.json"),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(report.gap, 2);
        assert_eq!(report.spectrum_truth.len(), 2);
    }

    #[test]
    fn sweep_produces_summary_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.reduction.gaps = vec![2, 4];
        cfg.data.validate_time = Some(20.0);
        cmd_sweep(&cfg).unwrap();
        let out = dir.path().join("sweep");
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary.starts_with("gap,lag,delta,stable"));
        assert_eq!(summary.lines().count(), 3);
        let cfl = fs::read_to_string(out.join("cfl.csv")).unwrap();
        assert!(cfl.starts_with("gap,delta,galerkin_mean_cfl,full_model_mean_cfl"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert!(json["full_model_mean_cfl"].as_f64().unwrap() > 0.0);
        assert!(json["rows"].as_array().unwrap().len() == 2);
    }

    #[test]
    fn gen_data_is_bit_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir_a.path());
        cfg_a.reduction.gaps = vec![2];
        let mut cfg_b = tiny_config(dir_b.path());
        cfg_b.reduction.gaps = vec![2];
        cmd_gen_data(&cfg_a).unwrap();
        cmd_gen_data(&cfg_b).unwrap();
        let a = fs::read(dir_a.path().join("data").join("gap2.bnar")).unwrap();
        let b = fs::read(dir_b.path().join("data").join("gap2.bnar")).unwrap();
        assert_eq!(a, b);
    }
}
