//! Command implementations behind the CLI: calibration, figures,
//! tomography and the oracle gate. Every command writes a manifest naming
//! the files it produced.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, config_hash, Calibration};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::figures::{figure, FIGURE_IDS};
use crate::lab::Lab;
use crate::oracle::{run_all, Mutations, OracleResult};
use crate::rng::derive_seed;
use crate::svg::render_svg;
use crate::tomo::{conditional_fidelity, ket_e, ket_plus, ket_r, measured_states, mle_reconstruct, mc_uncertainty, standard_settings, McUncertainty};

pub const CALIBRATION_FILE: &str = "calibration.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub trials: u64,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest_{command}.json")
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Config,
    pub out: PathBuf,
    pub seed: u64,
    /// Trial budget; `None` uses the config default for the command.
    pub trials: Option<u64>,
    pub workers: Option<usize>,
}

impl RunOptions {
    pub fn new(config: Config, out: impl Into<PathBuf>) -> Self {
        let seed = config.run.seed;
        Self { config, out: out.into(), seed, trials: None, workers: None }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub report: String,
    pub passed: bool,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn write_manifest(opts: &RunOptions, command: &str, trials: u64, outputs: &[PathBuf]) -> Result<PathBuf> {
    let m = RunManifest {
        command: command.into(),
        config_hash: config_hash(&opts.config)?,
        seed: opts.seed,
        trials,
        code_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        outputs: outputs.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect(),
    };
    let path = opts.out.join(RunManifest::file_name(command));
    // files rewritten by this run belong to this manifest only
    for entry in std::fs::read_dir(&opts.out)? {
        let other = entry?.path();
        let name = other.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if other == path || !(name.starts_with("manifest_") && name.ends_with(".json")) {
            continue;
        }
        if let Ok(mut old) = serde_json::from_str::<RunManifest>(&std::fs::read_to_string(&other)?) {
            let before = old.outputs.len();
            old.outputs.retain(|o| !m.outputs.contains(o));
            if old.outputs.is_empty() {
                std::fs::remove_file(&other)?;
            } else if old.outputs.len() != before {
                std::fs::write(&other, serde_json::to_string_pretty(&old)?)?;
            }
        }
    }
    std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}

fn write(path: PathBuf, text: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    outputs.push(path);
    Ok(())
}

pub fn calibration_path(out: &Path) -> PathBuf {
    out.join(CALIBRATION_FILE)
}

pub fn cmd_calibrate(opts: &RunOptions) -> Result<CommandOutcome> {
    std::fs::create_dir_all(&opts.out)?;
    let cal = calibrate(&opts.config)?;
    let path = calibration_path(&opts.out);
    cal.save(&path)?;
    let mut r = String::new();
    let _ = writeln!(r, "calibration written to {}", path.display());
    let _ = writeln!(r, "  finesse {:.4}, eta_afc {:.4} (analytic {:.4})", cal.finesse, cal.eta_afc, cal.eta_afc_analytic);
    let _ = writeln!(r, "  echo delay {:.1} ns, FWHM {:.1} ns", cal.echo_peak_time * 1e9, cal.echo_fwhm * 1e9);
    let _ = writeln!(r, "  dual finesse {:.4}, eta_dual {:.4} / {:.4}", cal.dual_finesse, cal.eta_dual[0], cal.eta_dual[1]);
    let _ = writeln!(r, "  signal per herald {:.4e}, noise per window {:.4e}, mu1 {:.4}", cal.signal_per_herald, cal.noise_per_window, cal.mu1);
    let _ = writeln!(r, "  eta_write_path {:.4}, read background {:.4e}", cal.eta_write_path, cal.read_background);
    let _ = writeln!(r, "  jitter sigma {:.0} Hz (coherent), {:.0} Hz (single), beta {:.3}", cal.jitter_sigma_coherent, cal.jitter_sigma_single, cal.beta);
    let outputs = vec![path];
    let manifest = write_manifest(opts, "calibrate", 0, &outputs)?;
    Ok(CommandOutcome { report: r, passed: true, outputs, manifest })
}

/// Lab built from the calibration stored in the output directory.
pub fn load_lab(opts: &RunOptions) -> Result<Lab> {
    let cal = Calibration::load_for(&calibration_path(&opts.out), &opts.config)?;
    let mut lab = Lab::new(opts.config.clone(), cal);
    lab.workers = opts.workers;
    Ok(lab)
}

/// One figure id, or `all`.
pub fn cmd_figure(opts: &RunOptions, id: &str) -> Result<CommandOutcome> {
    let ids: Vec<&str> = if id == "all" { FIGURE_IDS.to_vec() } else { vec![id] };
    if let Some(bad) = ids.iter().find(|i| !FIGURE_IDS.contains(i)) {
        return Err(Error::UnknownFigure(bad.to_string()));
    }
    let lab = load_lab(opts)?;
    let trials = opts.trials.unwrap_or(opts.config.run.trials);
    let mut outputs = vec![];
    let mut r = String::new();
    for id in &ids {
        let f = figure(&lab, id, opts.seed, trials)?;
        for k in 0..f.tables.len() {
            let csv = f.csv(k);
            let name = f.file_name(k);
            write(opts.out.join(&name), &csv, &mut outputs)?;
            write(opts.out.join(name.replace(".csv", ".svg")), &render_svg(&csv), &mut outputs)?;
        }
        let _ = writeln!(r, "figure {id}: {}", f.title);
        for (k, v) in &f.notes {
            let _ = writeln!(r, "  {k} = {v:.6}");
        }
    }
    let command = format!("figure_{id}");
    let manifest = write_manifest(opts, &command, trials, &outputs)?;
    Ok(CommandOutcome { report: r, passed: true, outputs, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoState {
    pub name: String,
    pub fidelity: f64,
    pub sigma: f64,
    pub converged: bool,
    pub rho: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoReport {
    pub states: Vec<TomoState>,
    pub average: f64,
    pub average_sigma: f64,
    pub significance: f64,
    pub nonconverged_fraction: f64,
    pub flagged: bool,
    /// Fidelities of the published density matrices.
    pub published: Vec<(String, f64)>,
}

/// Simulated tomography of the |E⟩, |+⟩ and |R⟩ preparations with
/// Poisson-resampled uncertainties.
pub fn run_tomography(lab: &Lab, seed: u64, trials_per_setting: u64, resamples: usize) -> Result<TomoReport> {
    let settings = standard_settings(true);
    let preps = [
        ("E", (1.0, 0.0, 0.0), ket_e()),
        ("+", (FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0), ket_plus()),
        ("R", (FRAC_1_SQRT_2, FRAC_1_SQRT_2, std::f64::consts::FRAC_PI_2), ket_r()),
    ];
    let eff = lab.analyzer();
    let datasets = preps
        .iter()
        .map(|(name, q, target)| lab.tomography_dataset(name, *q, *target, &settings, seed, trials_per_setting))
        .collect::<Result<Vec<_>>>()?;
    let mc: McUncertainty = mc_uncertainty(&datasets, &eff, resamples, derive_seed(seed, "tomo-resample"))?;
    let mut states = vec![];
    for (d, s) in datasets.iter().zip(&mc.states) {
        let res = mle_reconstruct(&d.records, &eff)?;
        states.push(TomoState { name: d.name.clone(), fidelity: s.fidelity, sigma: s.sigma, converged: res.converged, rho: res.rho.to_json() });
    }
    let published = measured_states()
        .iter()
        .map(|(n, rho, psi)| Ok((n.to_string(), conditional_fidelity(rho, psi)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TomoReport {
        states,
        average: mc.average,
        average_sigma: mc.average_sigma,
        significance: mc.significance,
        nonconverged_fraction: mc.nonconverged_fraction,
        flagged: mc.flagged,
        published,
    })
}

pub fn cmd_tomo(opts: &RunOptions) -> Result<(CommandOutcome, TomoReport)> {
    let lab = load_lab(opts)?;
    let trials = opts.trials.unwrap_or(opts.config.run.tomo_trials_per_setting);
    let rep = run_tomography(&lab, opts.seed, trials, opts.config.run.mc_resamples)?;
    let mut r = String::new();
    let _ = writeln!(r, "tomography, {trials} trials per setting");
    for s in &rep.states {
        let _ = writeln!(r, "  F_{} = {:.4} ± {:.4}{}", s.name, s.fidelity, s.sigma, if s.converged { "" } else { " (not converged)" });
    }
    let _ = writeln!(r, "  average {:.4} ± {:.4}, {:.1} σ above 2/3", rep.average, rep.average_sigma, rep.significance);
    let _ = writeln!(r, "  non-converged resamples {:.2}%", 100.0 * rep.nonconverged_fraction);
    for (n, f) in &rep.published {
        let _ = writeln!(r, "  published matrix {n}: F = {f:.4}");
    }
    let passed = rep.states.iter().all(|s| s.converged) && !rep.flagged;
    let mut outputs = vec![];
    write(opts.out.join("tomography.json"), &serde_json::to_string_pretty(&rep)?, &mut outputs)?;
    write(opts.out.join("tomography_report.txt"), &r, &mut outputs)?;
    let manifest = write_manifest(opts, "tomo", trials, &outputs)?;
    Ok((CommandOutcome { report: r, passed, outputs, manifest }, rep))
}

/// Runs every oracle. Uses the stored calibration when present.
pub fn cmd_oracle_check(opts: &RunOptions, mutations: &Mutations) -> Result<(CommandOutcome, Vec<OracleResult>)> {
    std::fs::create_dir_all(&opts.out)?;
    let path = calibration_path(&opts.out);
    let cal = if path.exists() { Calibration::load_for(&path, &opts.config)? } else { calibrate(&opts.config)? };
    let mut lab = Lab::new(opts.config.clone(), cal);
    lab.workers = opts.workers;
    let trials = opts.trials.unwrap_or(1_000_000);
    let results = run_all(&lab, mutations, opts.seed, trials)?;
    let mut r = String::new();
    for o in &results {
        let _ = writeln!(
            r,
            "{} {}: value {:.6e}, reference {:.6e}, deviation {:.3e} (tolerance {:.1e}); {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.value,
            o.reference,
            o.deviation,
            o.tolerance,
            o.detail
        );
    }
    let passed = results.iter().all(|o| o.passed);
    let mut outputs = vec![];
    write(opts.out.join("oracle_report.json"), &serde_json::to_string_pretty(&results)?, &mut outputs)?;
    let manifest = write_manifest(opts, "oracle_check", trials, &outputs)?;
    Ok((CommandOutcome { report: r, passed, outputs, manifest }, results))
}
