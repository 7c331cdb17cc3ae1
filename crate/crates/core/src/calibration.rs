//! Fits the free model parameters to the measured anchor values. The result
//! depends only on the configuration, so repeated runs are identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afc::{analytic_efficiency, CombSpec, EngineSetup, ToothFamily};
use crate::config::{Config, EngineSection, MemorySection};
use crate::error::{Error, Result};
use crate::source::{heralded_autocorrelation, PairSourceParams, TimeGrid, FWHM_PER_SIGMA};
use crate::stats::{linewidth_from_visibility, model_g2_heralded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Hash of the configuration this calibration was fitted for.
    pub config_hash: String,
    pub finesse: f64,
    pub eta_afc: f64,
    pub eta_afc_analytic: f64,
    pub echo_peak_time: f64,
    pub echo_fwhm: f64,
    pub dual_finesse: f64,
    /// Echo efficiencies of the dual comb, shorter storage first.
    pub eta_dual: [f64; 2],
    /// Fraction of a Gaussian photon inside the coincidence window.
    pub window_capture: f64,
    /// Signal per herald in the echo window at the D2 plane.
    pub signal_per_herald: f64,
    /// Background per coincidence window, D2 dark counts included.
    pub noise_per_window: f64,
    pub residual_per_window: f64,
    pub mu1: f64,
    pub eta_write_path: f64,
    pub read_background: f64,
    pub jitter_sigma_coherent: f64,
    pub jitter_sigma_single: f64,
    pub beta: f64,
    pub storage_times: Vec<f64>,
    pub storage_efficiency: Vec<f64>,
}

impl Calibration {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingCalibration(path.display().to_string()))?;
        Ok(toml::from_str(&text)?)
    }

    /// Loads a calibration and checks it belongs to `cfg`.
    pub fn load_for(path: &Path, cfg: &Config) -> Result<Self> {
        let cal = Self::load(path)?;
        if cal.config_hash != calibration_key(cfg)? {
            return Err(Error::MissingCalibration(format!("{} was fitted for a different configuration", path.display())));
        }
        Ok(cal)
    }
}

pub fn config_hash(cfg: &Config) -> Result<String> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Hash of the settings a calibration depends on; the run section and the
/// run-time noise and jitter scales are excluded.
pub fn calibration_key(cfg: &Config) -> Result<String> {
    let d = Config::defaults();
    let mut c = cfg.clone();
    c.run = d.run;
    c.noise.scale = d.noise.scale;
    c.jitter.scale = d.jitter.scale;
    config_hash(&c)
}

pub fn engine_setup(e: &EngineSection, photon_fwhm: f64) -> EngineSetup {
    EngineSetup { grid: TimeGrid { n: e.samples, dt: e.dt, t0: 0.0 }, t_in: e.t_in, pulse_fwhm: photon_fwhm, half_window: e.half_window }
}

pub fn single_comb(m: &MemorySection, finesse: f64) -> CombSpec {
    CombSpec { bandwidth: m.bandwidth, ..CombSpec::single(m.single_period, m.peak_depth, finesse, m.background_depth) }
}

pub fn dual_comb(m: &MemorySection, finesse: f64) -> CombSpec {
    CombSpec {
        center: 0.0,
        bandwidth: m.bandwidth,
        families: m.dual_periods.iter().map(|&p| ToothFamily::new(p, m.peak_depth, finesse)).collect(),
        background_depth: m.background_depth,
    }
}

/// Fraction of a Gaussian of the given FWHM inside a centred window.
pub fn window_capture(fwhm: f64, window: f64) -> f64 {
    let sigma = fwhm / FWHM_PER_SIGMA;
    libm::erf(window / 2.0 / (sigma * std::f64::consts::SQRT_2))
}

fn bisect(mut f: impl FnMut(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut f_lo = f(lo)?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Finesse on the rising branch at which `eff(F)` equals `target`.
fn fit_finesse(anchor: &str, bounds: [f64; 2], target: f64, mut eff: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let steps = ((bounds[1] - bounds[0]) / 0.25).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| (bounds[0] + 0.25 * i as f64).min(bounds[1])).collect();
    let mut prev = (grid[0], eff(grid[0])?);
    let mut best = prev;
    if prev.1 >= target {
        return Err(Error::AnchorUnreachable {
            anchor: anchor.into(),
            detail: format!("efficiency {:.3} at the lower finesse bound {} already exceeds {target}", prev.1, prev.0),
        });
    }
    for &f in &grid[1..] {
        let e = eff(f)?;
        if e >= target {
            return bisect(|x| Ok(eff(x)? - target), prev.0, f);
        }
        if e > best.1 {
            best = (f, e);
        }
        prev = (f, e);
    }
    Err(Error::AnchorUnreachable {
        anchor: anchor.into(),
        detail: format!("maximum efficiency {:.3} at finesse {:.2} within bounds {bounds:?} is below {target}", best.1, best.0),
    })
}

/// Signal photons per herald at D2 inside the echo window.
pub fn signal_per_herald(cfg: &Config, eta_afc: f64, capture: f64) -> f64 {
    cfg.source.eta_ret * detection_per_input_photon(cfg, eta_afc) * capture
}

/// Chain, memory, crystal and D2 efficiency for one photon at the chain input.
pub fn detection_per_input_photon(cfg: &Config, eta_afc: f64) -> f64 {
    cfg.chain_transmission() * eta_afc * cfg.memory.crystal_transmission * cfg.detectors.d2.efficiency
}

fn herald_probability(p_e: f64, eta_w: f64) -> f64 {
    let x = p_e * eta_w;
    x / (1.0 + x)
}

/// Closed-form heralded coincidence rate per hour in the echo window.
pub fn model_rate(cfg: &Config, p_e: f64, eta_w: f64, signal: f64, noise: f64) -> f64 {
    cfg.sequence.trials_per_second() * 3600.0 * herald_probability(p_e, eta_w) * (signal + noise)
}

pub fn calibrate(cfg: &Config) -> Result<Calibration> {
    cfg.validate()?;
    let m = &cfg.memory;
    let a = &cfg.anchors;
    let setup = engine_setup(&cfg.engine, cfg.photon.fwhm);

    let finesse = fit_finesse("eta_afc", m.finesse_bounds, a.eta_afc, |f| Ok(setup.single_echo(&single_comb(m, f))?.efficiency))?;
    let echo = setup.single_echo(&single_comb(m, finesse))?;
    let dual_finesse = fit_finesse("eta_dual", m.finesse_bounds, a.eta_dual, |f| {
        let [e1, e2] = setup.dual_echoes(&dual_comb(m, f))?;
        Ok(0.5 * (e1.efficiency + e2.efficiency))
    })?;
    let [d_short, d_long] = setup.dual_echoes(&dual_comb(m, dual_finesse))?;

    // one Poisson background level serves both SNR anchors: it is set to
    // the geometric mean of the two implied signal-to-noise ratios
    let capture = window_capture(cfg.photon.fwhm, cfg.noise.window);
    let signal = signal_per_herald(cfg, echo.efficiency, capture);
    let snr_coherent = cfg.source.eta_ret / a.mu1;
    let rho = (snr_coherent * a.snr_pairs).sqrt();
    let noise = signal / rho;
    let dark = cfg.detectors.d2.dark_rate * cfg.noise.window;
    if noise <= dark {
        return Err(Error::AnchorUnreachable {
            anchor: "snr".into(),
            detail: format!("required background {noise:.3e} per window is below the D2 dark level {dark:.3e}"),
        });
    }
    let mu1 = noise / (detection_per_input_photon(cfg, echo.efficiency) * capture);

    // write-arm efficiency: weighted log least squares over both rates and g2
    let loss = |eta_w: f64| -> Result<f64> {
        let r1 = model_rate(cfg, a.rate_low_p_e, eta_w, signal, noise) / a.rate_low;
        let r2 = model_rate(cfg, a.rate_high_p_e, eta_w, signal, noise) / a.rate_high;
        let g = model_g2_heralded(herald_probability(a.g2_wr_p_e, eta_w), signal, noise)? / a.g2_wr;
        let (wr, wg) = (a.rate_rel_sigma, a.g2_wr_sigma / a.g2_wr);
        Ok((r1.ln() / wr).powi(2) + (r2.ln() / wr).powi(2) + (g.ln() / wg).powi(2))
    };
    let eta_write_path = golden_min(loss, cfg.source.eta_write_path_bounds)?;

    let params = |p_e: f64| PairSourceParams { p_e, eta_ret: cfg.source.eta_ret, eta_write_path, n_max: cfg.source.n_max };
    let alpha_at = |b: f64| -> Result<f64> { Ok(heralded_autocorrelation(&params(a.alpha_p_e), cfg.detectors.hbt_efficiency, b)?.alpha) };
    let alpha0 = alpha_at(0.0)?;
    if alpha0 > a.alpha {
        return Err(Error::AnchorUnreachable { anchor: "alpha".into(), detail: format!("background-free value {alpha0:.3} exceeds {}", a.alpha) });
    }
    let read_background = bisect(|b| Ok(alpha_at(b)? - a.alpha), 0.0, 0.1)?;

    let sep = cfg.photon.bin_separation;
    let jitter_sigma_coherent = linewidth_from_visibility(a.v0_coherent, sep)?.sigma;
    let jitter_sigma_single = linewidth_from_visibility(a.v0_single, sep)?.sigma;
    let beta = echo.efficiency / (d_short.efficiency + d_long.efficiency);

    let base = ToothFamily::new(m.single_period, m.peak_depth, finesse);
    let storage_efficiency =
        crate::afc::efficiency_vs_storage_time(&setup, &base, m.bandwidth, m.background_depth, &m.storage_times, m.decoherence_rate)?;

    Ok(Calibration {
        config_hash: calibration_key(cfg)?,
        finesse,
        eta_afc: echo.efficiency,
        eta_afc_analytic: analytic_efficiency(m.peak_depth, finesse, m.background_depth),
        echo_peak_time: echo.peak_time,
        echo_fwhm: echo.fwhm,
        dual_finesse,
        eta_dual: [d_short.efficiency, d_long.efficiency],
        window_capture: capture,
        signal_per_herald: signal,
        noise_per_window: noise,
        residual_per_window: noise - dark,
        mu1,
        eta_write_path,
        read_background,
        jitter_sigma_coherent,
        jitter_sigma_single,
        beta,
        storage_times: m.storage_times.clone(),
        storage_efficiency,
    })
}

fn golden_min(mut f: impl FnMut(f64) -> Result<f64>, bounds: [f64; 2]) -> Result<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (bounds[0], bounds[1]);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-9 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_of_gaussian() {
        assert!((window_capture(200e-9, 400e-9) - 0.9815).abs() < 1e-3);
    }

    #[test]
    fn bisection_and_golden() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-9);
        let m = golden_min(|x| Ok((x - 0.3).powi(2)), [0.0, 1.0]).unwrap();
        assert!((m - 0.3).abs() < 1e-6);
    }

    #[test]
    fn unreachable_efficiency() {
        let cfg = Config::defaults();
        let setup = engine_setup(&cfg.engine, cfg.photon.fwhm);
        let err = fit_finesse("eta_afc", cfg.memory.finesse_bounds, 0.9, |f| Ok(setup.single_echo(&single_comb(&cfg.memory, f))?.efficiency)).unwrap_err();
        assert!(matches!(err, Error::AnchorUnreachable { ref anchor, .. } if anchor == "eta_afc"), "{err}");
    }
}
