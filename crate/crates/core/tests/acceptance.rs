//! Acceptance suite: one pass/fail line per criterion. Tolerances are the
//! published bands; Monte Carlo estimates use at most 10^7 trials each.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use qst_core::afc::{analyzer_phase, overlap_fringe_phase, synthesize_comb, transfer_function, CombSpec, DualCombConfig};
use qst_core::calibration::{calibrate, dual_comb, engine_setup, single_comb};
use qst_core::config::Config;
use qst_core::figures::figure;
use qst_core::lab::{phase_grid, FringeSource, Jitter, Lab};
use qst_core::oracle::{linewidth_oracle, run_all, thermal_g2_with_noise, Mutations};
use qst_core::rng::derive_seed;
use qst_core::runner::run_tomography;
use qst_core::source::{pair_number_distribution, PairSourceParams, TimeGrid};
use qst_core::stats::{cauchy_schwarz, model_visibility_mu, CorrelationResult};
use qst_core::tomo::{conditional_fidelity, measured_states};
use qst_core::Result;

const MAX_TRIALS: u64 = 10_000_000;
/// Histogram bin used to judge the echo width.
const ECHO_BIN: f64 = 50e-9;

struct Verdict {
    passed: bool,
    detail: String,
}

fn check(parts: &mut Vec<String>, ok: &mut bool, cond: bool, text: String) {
    *ok &= cond;
    parts.push(format!("{}{}", if cond { "" } else { "[x] " }, text));
}

fn verdict(ok: bool, parts: Vec<String>) -> Result<Verdict> {
    Ok(Verdict { passed: ok, detail: parts.join("; ") })
}

fn seed(label: &str) -> u64 {
    derive_seed(Config::defaults().run.seed, label)
}

fn c1_efficiency_budget(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let chain = lab.cfg.chain_transmission();
    check(&mut p, &mut ok, (chain - 0.012).abs() <= 0.001, format!("stage product {:.3}% (1.2 ± 0.1)", chain * 100.0));
    let mut quiet = lab.clone();
    quiet.cfg.noise.scale = 0.0;
    let afc = quiet.calibrated_afc();
    let tau = afc.longest_delay();
    let pp = quiet.heralded(0.35, quiet.gaussian(), afc, Jitter::None);
    let run = quiet.run(&pp, seed("c1"), 4_000_000)?;
    let h = run.herald_count as f64;
    let total = run.coincidences(&quiet.window_at(tau)) as f64 / h;
    check(&mut p, &mut ok, (2e-4 / 1.5..=2e-4 * 1.5).contains(&total), format!("conditional detection {:.4}% (0.02% within ×1.5)", total * 100.0));
    let after = run.after_crystal as f64 / h;
    check(&mut p, &mut ok, (5e-4..=2e-3).contains(&after), format!("after the crystal {after:.2e} (1e-3 within ×2)"));
    verdict(ok, p)
}

fn c2_echo_physics(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let setup = engine_setup(&lab.cfg.engine, lab.cfg.photon.fwhm);
    for period in [400e3, 500e3] {
        let mut m = lab.cfg.memory.clone();
        m.single_period = period;
        let e = setup.single_echo(&single_comb(&m, lab.cal.finesse))?;
        let dt = lab.cfg.engine.dt;
        check(&mut p, &mut ok, (e.peak_time - 1.0 / period).abs() <= dt, format!("{:.0} kHz echo at {:.1} ns (expected {:.0} ± {:.0})", period / 1e3, e.peak_time * 1e9, 1e9 / period, dt * 1e9));
        check(&mut p, &mut ok, (e.fwhm - 200e-9).abs() <= ECHO_BIN, format!("{:.0} kHz echo FWHM {:.1} ns (200 ± 50)", period / 1e3, e.fwhm * 1e9));
    }
    check(&mut p, &mut ok, (lab.cal.eta_afc - 0.29).abs() <= 0.02, format!("eta_afc {:.4} (0.29 ± 0.02)", lab.cal.eta_afc));
    for (k, e) in lab.cal.eta_dual.iter().enumerate() {
        check(&mut p, &mut ok, (e - 0.10).abs() <= 0.02, format!("dual echo {k} {e:.4} (0.10 ± 0.02)"));
    }
    verdict(ok, p)
}

fn c3_detuning(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let f8 = figure(lab, "8", 0, 0)?;
    let period = f8.get("dual_period_mhz").unwrap_or(f64::NAN);
    check(&mut p, &mut ok, (period - 2.0).abs() <= 0.1, format!("dual-comb period {period:.3} MHz (2.0 ± 5%)"));
    let setup = engine_setup(&lab.cfg.engine, lab.cfg.photon.fwhm);
    let m = &lab.cfg.memory;
    let base = DualCombConfig { comb: dual_comb(m, lab.cal.dual_finesse), separation: lab.cfg.photon.bin_separation, overlap_window: lab.cfg.noise.window };
    let mut shifted = base.clone();
    shifted.comb.families[1].detuning = 200e3;
    let numeric = (overlap_fringe_phase(&setup, &shifted)? - overlap_fringe_phase(&setup, &base)?).rem_euclid(2.0 * PI);
    let closed = analyzer_phase(200e3, m.dual_periods[1])?;
    check(&mut p, &mut ok, (closed - PI).abs() < 1e-12, format!("closed-form shift {closed:.4} rad (π)"));
    let diff = (numeric - closed + PI).rem_euclid(2.0 * PI) - PI;
    check(&mut p, &mut ok, diff.abs() <= 0.05, format!("numeric shift {numeric:.4} rad, |Δ| = {:.4} (≤ 0.05)", diff.abs()));
    verdict(ok, p)
}

fn c4_correlations(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let eta = lab.cal.eta_afc;
    let tau = 1.0 / lab.cfg.memory.single_period;
    let low = lab.measure_g2(0.05, eta, tau, seed("c4-low"), MAX_TRIALS)?;
    check(&mut p, &mut ok, (low.value - 11.4).abs() <= 2.4, format!("g2(0.05) {:.2} ± {:.2} (11.4 ± 2.4)", low.value, low.sigma));
    let high = lab.measure_g2(0.35, eta, tau, seed("c4-high"), MAX_TRIALS)?;
    check(&mut p, &mut ok, high.value > 2.0, format!("g2(0.35) {:.2} ± {:.2} (> 2)", high.value, high.sigma));
    for (&t, &e) in lab.cal.storage_times.iter().zip(&lab.cal.storage_efficiency) {
        let g = lab.measure_g2(0.1, e, t, seed(&format!("c4-tau-{t}")), MAX_TRIALS)?;
        let us = t * 1e6;
        if us <= 8.0 + 1e-9 {
            check(&mut p, &mut ok, g.value > 2.0, format!("g2(τ = {us} μs) {:.2} ± {:.2} (> 2)", g.value, g.sigma));
        } else if us >= 10.0 - 1e-9 {
            check(&mut p, &mut ok, g.value < 2.0, format!("g2(τ = {us} μs) {:.2} ± {:.2} (< 2)", g.value, g.sigma));
        } else {
            p.push(format!("g2(τ = {us} μs) {:.2} ± {:.2}", g.value, g.sigma));
        }
    }
    let a = &lab.cfg.anchors;
    let ww = CorrelationResult { value: a.g2_ww, sigma: a.g2_ww_sigma, n_coincidences: 0 };
    let rr = CorrelationResult { value: a.g2_rr, sigma: 0.0, n_coincidences: 0 };
    let cs = cauchy_schwarz(&ww, &rr, &low);
    p.push(format!("Cauchy–Schwarz margin {:.1} σ at p_e = 0.05 (bound {:.3})", cs.margin_sigma, cs.bound));
    verdict(ok, p)
}

fn c5_single_photon(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let a = lab.measure_alpha(0.05, seed("c5"), MAX_TRIALS)?;
    check(&mut p, &mut ok, (a.value - 0.26).abs() <= 0.04, format!("alpha(0.05) {:.3} ± {:.3} (0.26 ± 0.04)", a.value, a.sigma));
    for (level, target) in [(0.5, 0.11), (1.0, 0.25)] {
        match lab.alpha_crossing(level, 0.005, 0.6)? {
            Some(x) => check(&mut p, &mut ok, (x - target).abs() <= 0.04, format!("alpha = {level} at p_e {x:.3} ({target} ± 0.04)")),
            None => check(&mut p, &mut ok, false, format!("alpha never reaches {level} for p_e ≤ 0.6 (expected near {target})")),
        }
    }
    verdict(ok, p)
}

fn c6_snr(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let afc = lab.calibrated_afc();
    let tau = afc.longest_delay();
    let pairs = lab.heralded(0.35, lab.gaussian(), afc.clone(), Jitter::None);
    let s = lab.measure_snr(&pairs, &[tau], seed("c6-pairs"), MAX_TRIALS)?.remove(0);
    check(&mut p, &mut ok, (s.value - 17.0).abs() <= 4.0, format!("SNR(p_e = 0.35) {:.2} ± {:.2} (17 ± 4)", s.value, s.sigma));
    let f = figure(lab, "10a", seed("c6-wcs"), MAX_TRIALS)?;
    let mu1 = f.get("mu1_fit").unwrap_or(f64::NAN);
    check(&mut p, &mut ok, (mu1 - 0.022).abs() <= 0.003, format!("fitted mu1 {mu1:.4} (0.022 ± 0.003)"));
    let wcs = lab.coherent(0.3, lab.gaussian(), afc, Jitter::None);
    let s3 = lab.measure_snr(&wcs, &[tau], seed("c6-mu-0.3"), MAX_TRIALS)?.remove(0);
    check(&mut p, &mut ok, (s3.value - 14.0).abs() <= 2.0, format!("SNR(mu = 0.3) {:.2} ± {:.2} (14 ± 2)", s3.value, s3.sigma));
    verdict(ok, p)
}

fn c7_visibilities(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let phis = phase_grid(12);
    let per = MAX_TRIALS / phis.len() as u64;
    let v = lab.fringe(FringeSource::Pairs { p_e: 0.35 }, 0.0, Jitter::Coherent, &phis, seed("c7-pairs"), per)?.fit;
    check(&mut p, &mut ok, (v.visibility - 0.60).abs() <= 0.15, format!("V(p_e = 0.35) {:.3} ± {:.3} (0.60 ± 0.15)", v.visibility, v.sigma));
    for d in [0.0, 200e3] {
        let v = lab.fringe(FringeSource::Pairs { p_e: 0.05 }, d, Jitter::Single, &phis, seed(&format!("c7-single-{d}")), per)?.fit;
        check(&mut p, &mut ok, (0.60..=0.86).contains(&v.visibility), format!("single-photon V at {:.0} kHz {:.3} ± {:.3} (0.70–0.76 ± 0.10)", d / 1e3, v.visibility, v.sigma));
    }
    let mus = [0.1, 0.3, 1.0, 2.0, 5.0];
    let mut inside = 0;
    for &mu in &mus {
        let fit = lab.fringe(FringeSource::Coherent { mu }, 0.0, Jitter::Coherent, &phis, seed(&format!("c7-mu-{mu}")), per / mus.len() as u64)?.fit;
        let model = model_visibility_mu(lab.cfg.anchors.v0_coherent, lab.cal.beta, lab.cal.mu1, mu)?;
        inside += ((fit.visibility - model).abs() <= 2.0 * fit.sigma) as usize;
        p.push(format!("V(mu = {mu}) {:.3} ± {:.3} vs {:.3}", fit.visibility, fit.sigma, model));
    }
    check(&mut p, &mut ok, inside == mus.len(), format!("{inside}/{} within 2σ of the visibility model", mus.len()));
    let lw = linewidth_oracle(lab.cfg.photon.bin_separation)?;
    check(&mut p, &mut ok, lw.passed, lw.detail);
    verdict(ok, p)
}

fn c8_tomography(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let published = [("R", 0.782), ("+", 0.854), ("E", 0.938)];
    for ((name, rho, psi), (_, f_ref)) in measured_states().iter().zip(published) {
        let f = conditional_fidelity(rho, psi)?;
        check(&mut p, &mut ok, (f - f_ref).abs() <= 0.005, format!("published F_{name} {:.4} ({f_ref} ± 0.005)", f));
    }
    let rep = run_tomography(lab, seed("c8"), 2_000_000, 200)?;
    for s in &rep.states {
        p.push(format!("F_{} {:.4} ± {:.4}", s.name, s.fidelity, s.sigma));
    }
    check(&mut p, &mut ok, (0.80..=0.92).contains(&rep.average), format!("average {:.4} ± {:.4} ([0.80, 0.92])", rep.average, rep.average_sigma));
    check(&mut p, &mut ok, rep.significance >= 3.0, format!("{:.1} σ above 2/3 (≥ 3)", rep.significance));
    check(&mut p, &mut ok, !rep.flagged, format!("non-converged resamples {:.2}%", 100.0 * rep.nonconverged_fraction));
    verdict(ok, p)
}

/// Fixed-sample pass over the invariants; the randomized suites live in
/// tests/properties.rs.
fn c9_properties(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    let mut norm = 0.0f64;
    let mut gww = 0.0f64;
    for &pe in &[0.01, 0.05, 0.2, 0.4] {
        let d = pair_number_distribution(&PairSourceParams { p_e: pe, eta_ret: 0.3, eta_write_path: 0.4, n_max: 120 })?;
        norm = norm.max((d.total() + d.truncation_residual - 1.0).abs());
        gww = gww.max((d.write_autocorrelation()? - 2.0).abs());
    }
    check(&mut p, &mut ok, norm < 1e-12, format!("normalization error {norm:.1e}"));
    check(&mut p, &mut ok, gww < 1e-6, format!("|g2_ww − 2| ≤ {gww:.1e}"));
    let (g1, _) = thermal_g2_with_noise(0.1, 1e-4, 1e-4, 0.0, 200);
    let (g2, _) = thermal_g2_with_noise(0.1, 5e-4, 2e-5, 0.0, 200);
    check(&mut p, &mut ok, (g1 - g2).abs() / g1 < 1e-3, format!("g2_wr loss change {:.1e}", (g1 - g2).abs() / g1));
    let grid = TimeGrid { n: 65536, dt: 5e-9, t0: 0.0 };
    let h = transfer_function(&synthesize_comb(&CombSpec::single(400e3, 10.0, 4.0, 0.1), &grid)?)?;
    let gain = h.h.iter().map(|x| x.norm()).fold(0.0, f64::max);
    check(&mut p, &mut ok, gain <= 1.0 && h.acausal_fraction() < 1e-4, format!("max |H| {gain:.4}, acausal {:.1e}", h.acausal_fraction()));
    let pp = lab.heralded(0.2, lab.gaussian(), lab.calibrated_afc(), Jitter::Single);
    let a = qst_core::sim::run_trials(&lab.cfg.sequence, &pp, 7, 50_000, Some(1))?;
    let b = qst_core::sim::run_trials(&lab.cfg.sequence, &pp, 7, 50_000, Some(5))?;
    check(&mut p, &mut ok, a.records == b.records, "1 and 5 workers give identical records".into());
    p.push("linearity, unbiasedness and MLE constraints: see the property suite".into());
    verdict(ok, p)
}

fn c10_oracles(lab: &Lab) -> Result<Verdict> {
    let (mut p, mut ok) = (vec![], true);
    for o in run_all(lab, &Mutations::default(), seed("c10"), 1_000_000)? {
        check(&mut p, &mut ok, o.passed, format!("{}: {:.3e} (≤ {:.1e})", o.name, o.deviation, o.tolerance));
    }
    verdict(ok, p)
}

fn main() -> ExitCode {
    let cfg = Config::defaults();
    let cal = match calibrate(&cfg) {
        Ok(c) => c,
        Err(e) => {
            println!("calibration failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    let lab = Lab::new(cfg, cal);
    let criteria: [(&str, fn(&Lab) -> Result<Verdict>); 10] = [
        ("efficiency budget", c1_efficiency_budget),
        ("echo physics", c2_echo_physics),
        ("detuning scan", c3_detuning),
        ("correlations", c4_correlations),
        ("single-photon character", c5_single_photon),
        ("SNR chain", c6_snr),
        ("visibilities", c7_visibilities),
        ("tomography", c8_tomography),
        ("property suites", c9_properties),
        ("oracle gate", c10_oracles),
    ];
    let mut failed = vec![];
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f(&lab).unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        println!("criterion {:>2} {} {name} ({:.1} s): {}", i + 1, if v.passed { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), v.detail);
        if !v.passed {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 10 criteria fail: {:?}", failed.len(), failed);
        ExitCode::FAILURE
    }
}
