//! Independent cross-checks: brute-force enumerations and closed forms
//! compared against the simulator and the estimator formulas.

use serde::{Deserialize, Serialize};

use crate::afc::{analytic_efficiency, synthesize_comb, transfer_function};
use crate::calibration::{engine_setup, single_comb, Calibration};
use crate::config::Config;
use crate::error::Result;
use crate::lab::{Jitter, Lab};
use crate::rng::derive_seed;
use crate::sim::{run_hbt, Sampling};
use crate::source::{heralded_autocorrelation, herald_probability, thermal_probability, PairSourceParams};
use crate::stats::{linewidth_from_visibility, model_g2_vs_pe, visibility_from_linewidth};

/// Deliberate defects injected to show that the oracles catch them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutations {
    /// Conjugate the memory transfer-function phase (anti-causal filter).
    pub flip_afc_phase: bool,
    /// Use SNR/(SNR + 2) in the background-dilution formula.
    pub perturb_g2_formula: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    /// Deviation in the oracle's own unit (σ, relative or absolute).
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &str, value: f64, reference: f64, deviation: f64, tolerance: f64, detail: String) -> OracleResult {
    OracleResult { name: name.into(), value, reference, deviation, tolerance, passed: deviation.is_finite() && deviation <= tolerance, detail }
}

/// Exact g2 between a thermal pair source thinned by `eta_w`, `eta_r` and a
/// binary read detector that also sees Poisson noise of mean `mu`.
pub fn thermal_g2_with_noise(p_e: f64, eta_w: f64, eta_r: f64, mu: f64, n_max: usize) -> (f64, f64) {
    let (mut pw, mut pr, mut pwr, mut p_sig) = (0.0, 0.0, 0.0, 0.0);
    let quiet = (-mu).exp();
    for n in 0..=n_max {
        let pn = thermal_probability(p_e, n);
        let w = 1.0 - (1.0 - eta_w).powi(n as i32);
        let none = (1.0 - eta_r).powi(n as i32);
        let r = 1.0 - none * quiet;
        pw += pn * w;
        pr += pn * r;
        pwr += pn * w * r;
        p_sig += pn * (1.0 - none);
    }
    (pwr / (pw * pr), p_sig / (1.0 - quiet))
}

/// Exact g2 for a binary herald of probability `p_w` whose read click
/// probability is raised so the noise-free g2 equals `g2_in`, with Poisson
/// noise at signal-to-noise ratio `snr`. Returns the enumerated g2.
pub fn binary_g2_with_noise(g2_in: f64, snr: f64) -> f64 {
    let (p_w, q0) = (1e-2, 1e-5);
    let q1 = g2_in * (1.0 - p_w) * q0 / (1.0 - g2_in * p_w);
    let p_sig = p_w * q1 + (1.0 - p_w) * q0;
    let quiet = 1.0 - p_sig / snr;
    let r1 = 1.0 - (1.0 - q1) * quiet;
    let r0 = 1.0 - (1.0 - q0) * quiet;
    let pr = p_w * r1 + (1.0 - p_w) * r0;
    p_w * r1 / (p_w * pr)
}

fn dilution(g2_in: f64, snr: f64, m: &Mutations) -> Result<f64> {
    if m.perturb_g2_formula {
        Ok(1.0 + (g2_in - 1.0) * snr / (snr + 2.0))
    } else {
        model_g2_vs_pe(g2_in, snr)
    }
}

/// Background-dilution formula against brute-force mixed statistics.
pub fn mixed_statistics_oracle(m: &Mutations) -> Result<OracleResult> {
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for &g2_in in &[2.0, 5.0, 22.0] {
        for &snr in &[0.5, 1.0, 5.0, 20.0] {
            let (exact, g_in, s) = if g2_in > 3.0 {
                // thermal source at small efficiencies: noise-free g2 ≈ 2 + 1/p_e
                let p_e = 1.0 / (g2_in - 2.0);
                let (eta_w, eta_r) = (1e-3, 1e-4);
                let (g_in, _) = thermal_g2_with_noise(p_e, eta_w, eta_r, 0.0, 400);
                let p_sig: f64 = (0..=400).map(|n| thermal_probability(p_e, n) * (1.0 - (1.0 - eta_r).powi(n as i32))).sum();
                let mu = -(1.0 - p_sig / snr).ln();
                let (g, s) = thermal_g2_with_noise(p_e, eta_w, eta_r, mu, 400);
                (g, g_in, s)
            } else {
                (binary_g2_with_noise(g2_in, snr), g2_in, snr)
            };
            let model = dilution(g_in, s, m)?;
            let rel = (model - exact).abs() / exact;
            if rel > worst {
                worst = rel;
                detail = format!("worst at g2_in = {g_in:.3}, SNR = {s:.3}: model {model:.4} vs exact {exact:.4}");
            }
        }
    }
    Ok(result("mixed-statistics g2", worst, 0.0, worst, 0.01, detail))
}

/// Fock-space enumeration against Monte Carlo for herald and HBT click
/// probabilities, in units of the Monte Carlo standard deviation.
pub fn fock_vs_monte_carlo(seed: u64, trials: u64, workers: Option<usize>) -> Result<OracleResult> {
    let params = PairSourceParams { p_e: 0.1, eta_ret: 0.3, eta_write_path: 0.5, n_max: 30 };
    let (det, bg) = (0.41, 0.01);
    let exact = heralded_autocorrelation(&params, det, bg)?;
    let p_w = herald_probability(&params)?;
    let uncond = run_hbt(&params, det, bg, Sampling::Unconditional, derive_seed(seed, "fock-uncond"), trials, workers)?;
    let cond = run_hbt(&params, det, bg, Sampling::HeraldConditioned, derive_seed(seed, "fock-cond"), trials, workers)?;
    let binom = |k: f64, n: f64, p: f64| (k - n * p).abs() / (n * p * (1.0 - p)).sqrt();
    let h = cond.herald_count as f64;
    let na = cond.records.iter().filter(|r| r.a).count() as f64;
    let nab = cond.records.iter().filter(|r| r.a && r.b).count() as f64;
    let devs = [
        binom(uncond.herald_count as f64, trials as f64, p_w),
        binom(na, h, exact.p1),
        binom(nab, h, exact.p12),
    ];
    let worst = devs.iter().cloned().fold(0.0, f64::max);
    Ok(result(
        "Fock enumeration vs Monte Carlo",
        worst,
        0.0,
        worst,
        4.0,
        format!("herald, single-click and coincidence deviations {:.2}, {:.2}, {:.2} σ", devs[0], devs[1], devs[2]),
    ))
}

/// Conditional echo probability against the product of efficiencies.
pub fn echo_probability_oracle(lab: &Lab, seed: u64, trials: u64) -> Result<OracleResult> {
    let mut quiet = lab.clone();
    quiet.cfg.noise.scale = 0.0;
    let eta = quiet.cal.eta_afc;
    let p = quiet.heralded(0.05, quiet.gaussian(), quiet.calibrated_afc(), Jitter::None);
    let run = quiet.run(&p, derive_seed(seed, "echo-probability"), trials)?;
    let k = run.d2_click_count() as f64;
    let n = run.herald_count as f64;
    // click probability over the heralded photon-number mixture
    let dist = crate::source::heralded_number_distribution(&quiet.pairs(0.05), p.d1_dark_probability())?;
    let e = quiet.pairs(0.05).excitation_retrieval() * crate::calibration::detection_per_input_photon(&quiet.cfg, eta);
    let expected: f64 = dist.iter().enumerate().map(|(m, pm)| pm * (1.0 - (1.0 - e).powi(m as i32))).sum::<f64>();
    let dev = (k - n * expected).abs() / (n * expected * (1.0 - expected)).sqrt();
    Ok(result("conditional echo probability", k / n, expected, dev, 4.0, format!("{k} detections in {n} heralds")))
}

/// Analytic comb efficiency against the numeric engine at the calibrated point.
pub fn afc_efficiency_oracle(cfg: &Config, cal: &Calibration) -> Result<OracleResult> {
    let setup = engine_setup(&cfg.engine, cfg.photon.fwhm);
    let numeric = setup.single_echo(&single_comb(&cfg.memory, cal.finesse))?.efficiency;
    let analytic = analytic_efficiency(cfg.memory.peak_depth, cal.finesse, cfg.memory.background_depth);
    let rel = (numeric - analytic).abs() / numeric;
    Ok(result("analytic vs numeric AFC efficiency", numeric, analytic, rel, 0.15, format!("finesse {:.4}", cal.finesse)))
}

/// Impulse response of the memory filter must vanish before t = 0.
pub fn causality_oracle(cfg: &Config, cal: &Calibration, m: &Mutations) -> Result<OracleResult> {
    let setup = engine_setup(&cfg.engine, cfg.photon.fwhm);
    let mut h = transfer_function(&synthesize_comb(&single_comb(&cfg.memory, cal.finesse), &setup.grid)?)?;
    if m.flip_afc_phase {
        h = h.phase_conjugated();
    }
    let f = h.acausal_fraction();
    Ok(result("memory filter causality", f, 0.0, f, 1e-4, "impulse-response energy at negative times".into()))
}

/// Visibility–linewidth relation and its inverse.
pub fn linewidth_oracle(delta_tau: f64) -> Result<OracleResult> {
    let mut worst: f64 = 0.0;
    let mut range = vec![];
    for &v0 in &[0.65, 0.67, 0.70, 0.75] {
        let lw = linewidth_from_visibility(v0, delta_tau)?;
        let back = visibility_from_linewidth(lw.sigma, delta_tau)?;
        worst = worst.max((back - v0).abs() / v0);
        range.push(lw.fwhm);
    }
    let in_range = range.iter().all(|&f| (560e3..=710e3).contains(&f));
    let dev = if in_range { worst } else { f64::INFINITY };
    Ok(result(
        "linewidth inversion",
        worst,
        0.0,
        dev,
        1e-9,
        format!("FWHM for V0 = 0.75..0.65: {:.0}..{:.0} kHz", range[range.len() - 1] / 1e3, range[0] / 1e3),
    ))
}

pub fn run_all(lab: &Lab, m: &Mutations, seed: u64, trials: u64) -> Result<Vec<OracleResult>> {
    Ok(vec![
        fock_vs_monte_carlo(seed, trials, lab.workers)?,
        mixed_statistics_oracle(m)?,
        afc_efficiency_oracle(&lab.cfg, &lab.cal)?,
        causality_oracle(&lab.cfg, &lab.cal, m)?,
        linewidth_oracle(lab.cfg.photon.bin_separation)?,
        echo_probability_oracle(lab, seed, trials)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilution_formula_matches_enumeration() {
        let r = mixed_statistics_oracle(&Mutations::default()).unwrap();
        assert!(r.passed, "{r:?}");
        let bad = mixed_statistics_oracle(&Mutations { perturb_g2_formula: true, ..Default::default() }).unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn thermal_noise_free_value() {
        let (g, _) = thermal_g2_with_noise(0.05, 1e-3, 1e-3, 0.0, 200);
        assert!((g - 22.0).abs() < 0.05, "{g}");
        // losses leave it unchanged
        let (g2, _) = thermal_g2_with_noise(0.05, 1e-4, 1e-5, 0.0, 200);
        assert!((g2 - 22.0).abs() < 0.05);
    }

    #[test]
    fn linewidth_round_trip() {
        assert!(linewidth_oracle(500e-9).unwrap().passed);
    }
}
