//! Correlation, SNR and visibility estimators with counting errors, and the
//! closed-form models they are compared with.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qfc::GateWindow;
use crate::sim::{CoincidenceHistogram, HbtRun, RunResult, Sampling};
use crate::source::FWHM_PER_SIGMA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub value: f64,
    pub sigma: f64,
    pub n_coincidences: u64,
}

/// Write/read cross-correlation from an unconditional run. Same-trial
/// coincidences are normalized by pairs of a herald with the read window
/// `k` trials later, k = 1..=offsets.
pub fn g2_cross(run: &RunResult, window: &GateWindow, offsets: u64) -> Result<CorrelationResult> {
    if run.sampling != Sampling::Unconditional {
        return Err(invalid("cross-correlation needs an unconditional run"));
    }
    if offsets == 0 {
        return Err(invalid("need at least one trial offset"));
    }
    let read: HashSet<u64> = run.records.iter().filter(|r| r.d2_in(window)).map(|r| r.trial_index).collect();
    let (mut heralds, mut same, mut acc, mut pairs) = (0u64, 0u64, 0u64, 0u64);
    for r in run.records.iter().filter(|r| r.d1_ns.is_some()) {
        heralds += 1;
        if read.contains(&r.trial_index) {
            same += 1;
        }
        for k in 1..=offsets {
            let j = r.trial_index + k;
            if j >= run.n_trials {
                break;
            }
            pairs += 1;
            if read.contains(&j) {
                acc += 1;
            }
        }
    }
    if acc == 0 {
        return Err(Error::Undefined("no accidental coincidences to normalize by".into()));
    }
    let norm = acc as f64 / pairs as f64 * heralds as f64;
    Ok(ratio_result(same, norm, acc))
}

fn ratio_result(same: u64, expected: f64, acc: u64) -> CorrelationResult {
    let value = same as f64 / expected;
    let sigma = if same > 0 {
        value * (1.0 / same as f64 + 1.0 / acc as f64).sqrt()
    } else {
        1.0 / expected
    };
    CorrelationResult { value, sigma, n_coincidences: same }
}

/// Cross-correlation from a herald-conditioned run for p(D2 | herald) and an
/// independent unconditional run for the accidental level p(D2).
pub fn g2_cross_split(heralded: &RunResult, unconditional: &RunResult, window: &GateWindow) -> Result<CorrelationResult> {
    if heralded.sampling != Sampling::HeraldConditioned || unconditional.sampling != Sampling::Unconditional {
        return Err(invalid("split estimate needs a herald-conditioned and an unconditional run"));
    }
    let same = heralded.coincidences(window);
    let acc = unconditional.records.iter().filter(|r| r.d2_in(window)).count() as u64;
    if acc == 0 {
        return Err(Error::Undefined("no accidental read detections".into()));
    }
    let expected = acc as f64 / unconditional.n_trials as f64 * heralded.n_trials as f64;
    Ok(ratio_result(same, expected, acc))
}

/// Heralded autocorrelation N_h·N_ab/(N_a·N_b).
pub fn heralded_g2(run: &HbtRun) -> Result<CorrelationResult> {
    let h = run.herald_count as f64;
    let na = run.records.iter().filter(|r| r.a).count() as f64;
    let nb = run.records.iter().filter(|r| r.b).count() as f64;
    let nab = run.records.iter().filter(|r| r.a && r.b).count() as u64;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("a split detector never clicked".into()));
    }
    let value = h * nab as f64 / (na * nb);
    let sigma = if nab > 0 {
        value * (1.0 / nab as f64 + 1.0 / na + 1.0 / nb).sqrt()
    } else {
        h / (na * nb)
    };
    Ok(CorrelationResult { value, sigma, n_coincidences: nab })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchySchwarz {
    pub violated: bool,
    pub bound: f64,
    pub bound_sigma: f64,
    pub margin_sigma: f64,
}

/// Classical bound g2_wr ≤ √(g2_ww·g2_rr); margin in combined s.d.
pub fn cauchy_schwarz(ww: &CorrelationResult, rr: &CorrelationResult, wr: &CorrelationResult) -> CauchySchwarz {
    let bound = (ww.value * rr.value).sqrt();
    let rel = |c: &CorrelationResult| if c.value > 0.0 { c.sigma / c.value } else { 0.0 };
    let bound_sigma = 0.5 * bound * (rel(ww).powi(2) + rel(rr).powi(2)).sqrt();
    let s = (wr.sigma.powi(2) + bound_sigma.powi(2)).sqrt();
    let diff = wr.value - bound;
    let margin_sigma = if s > 0.0 {
        diff / s
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    CauchySchwarz { violated: diff > 0.0, bound, bound_sigma, margin_sigma }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub value: f64,
    pub sigma: f64,
    /// No noise counts were seen; `value` assumes a single one.
    pub lower_bound: bool,
    pub signal_counts: u64,
    pub noise_counts: u64,
}

/// (S − N)/N for counts S in a signal window and N_raw in noise windows of
/// total width `noise_width / signal_width` times the signal width.
pub fn snr_from_counts(signal: u64, noise_raw: u64, width_ratio: f64) -> Result<SnrEstimate> {
    if !(width_ratio > 0.0) {
        return Err(invalid("noise windows must have positive width"));
    }
    let lower_bound = noise_raw == 0;
    let n = noise_raw.max(1) as f64 / width_ratio;
    let s = signal as f64;
    let value = (s - n) / n;
    let var = s / (n * n) + (s * s / n.powi(4)) * n / width_ratio;
    Ok(SnrEstimate { value, sigma: var.sqrt(), lower_bound, signal_counts: signal, noise_counts: noise_raw })
}

fn check_disjoint(signal: &GateWindow, noise: &[GateWindow]) -> Result<()> {
    if noise.is_empty() {
        return Err(invalid("need at least one noise window"));
    }
    if noise.iter().any(|w| w.overlap(signal) > 0.0) {
        return Err(invalid("noise window overlaps the signal window"));
    }
    Ok(())
}

pub fn snr_from_histogram(hist: &CoincidenceHistogram, signal: &GateWindow, noise: &[GateWindow]) -> Result<SnrEstimate> {
    check_disjoint(signal, noise)?;
    let s = hist.counts_in(signal);
    let n: u64 = noise.iter().map(|w| hist.counts_in(w)).sum();
    let wn: f64 = noise.iter().map(|w| w.width()).sum();
    snr_from_counts(s, n, wn / signal.width())
}

/// Same estimate from exact event times of heralded trials.
pub fn snr_from_run(run: &RunResult, signal: &GateWindow, noise: &[GateWindow]) -> Result<SnrEstimate> {
    check_disjoint(signal, noise)?;
    let count = |w: &GateWindow| -> u64 {
        run.records
            .iter()
            .filter(|r| r.d1_ns.is_some())
            .map(|r| r.d2_ns.iter().filter(|&&t| w.contains(t as f64 * 1e-9)).count() as u64)
            .sum()
    };
    let s = count(signal);
    let n: u64 = noise.iter().map(count).sum();
    let wn: f64 = noise.iter().map(|w| w.width()).sum();
    snr_from_counts(s, n, wn / signal.width())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub sigma: f64,
    /// Mean count level A.
    pub amplitude: f64,
    /// Phase φ0 of maximum counts.
    pub phase: f64,
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<([f64; 3], [[f64; 3]; 3])> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    let x = [0, 1, 2].map(|i| (0..3).map(|j| inv[i][j] * v[j]).sum());
    Some((x, inv))
}

/// Poisson-weighted least squares of counts to A(1 + V cos(φ − φ0)).
pub fn visibility_fit(phis: &[f64], counts: &[u64]) -> Result<VisibilityFit> {
    if phis.len() != counts.len() || phis.len() < 4 {
        return Err(invalid("need at least 4 (phase, count) points"));
    }
    let span = phis.iter().cloned().fold(f64::MIN, f64::max) - phis.iter().cloned().fold(f64::MAX, f64::min);
    if span < 1.5 * std::f64::consts::PI - 1e-9 {
        return Err(invalid("phase points must span at least 3π/2"));
    }
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    if counts.iter().all(|&c| c == counts[0]) {
        return Ok(VisibilityFit { visibility: 0.0, sigma: 1.0, amplitude: mean, phase: 0.0 });
    }
    let mut m = [[0.0; 3]; 3];
    let mut v = [0.0; 3];
    for (&phi, &c) in phis.iter().zip(counts) {
        let row = [1.0, phi.cos(), phi.sin()];
        let w = 1.0 / (c.max(1) as f64);
        for i in 0..3 {
            v[i] += w * row[i] * c as f64;
            for j in 0..3 {
                m[i][j] += w * row[i] * row[j];
            }
        }
    }
    let (x, cov) = solve3(m, v).ok_or_else(|| invalid("singular fringe design"))?;
    let (a, b, c) = (x[0], x[1], x[2]);
    if !(a > 0.0) {
        return Err(invalid("fitted mean count level is not positive"));
    }
    let r = (b * b + c * c).sqrt();
    let vis = r / a;
    let g = [-vis / a, b / (a * r), c / (a * r)];
    let var: f64 = (0..3).map(|i| (0..3).map(|j| g[i] * cov[i][j] * g[j]).sum::<f64>()).sum();
    Ok(VisibilityFit { visibility: vis.clamp(0.0, 1.0), sigma: var.max(0.0).sqrt(), amplitude: a, phase: c.atan2(b) })
}

/// Poissonian dilution of a correlated signal, 1 + (g2_in − 1)·SNR/(SNR + 1).
pub fn model_g2_vs_pe(g2_in: f64, snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(invalid("SNR must be ≥ 0"));
    }
    if snr.is_infinite() {
        return Ok(g2_in);
    }
    Ok(1.0 + (g2_in - 1.0) * snr / (snr + 1.0))
}

/// Model band for a symmetric SNR uncertainty.
pub fn model_g2_band(g2_in: f64, snr: f64, snr_sigma: f64) -> Result<(f64, f64, f64)> {
    Ok((
        model_g2_vs_pe(g2_in, (snr - snr_sigma).max(0.0))?,
        model_g2_vs_pe(g2_in, snr)?,
        model_g2_vs_pe(g2_in, snr + snr_sigma)?,
    ))
}

/// Cross-correlation with heralded read-out: signal C and noise N per
/// window given a herald, noise N otherwise, (C + N)/(p_w·C + N).
pub fn model_g2_heralded(p_w: f64, signal: f64, noise: f64) -> Result<f64> {
    if !(signal >= 0.0 && noise >= 0.0 && signal + noise > 0.0 && p_w > 0.0) {
        return Err(invalid("need p_w > 0 and a non-empty read window"));
    }
    Ok((signal + noise) / (p_w * signal + noise))
}

/// V = V0·μ/(μ + 2βμ1).
pub fn model_visibility_mu(v0: f64, beta: f64, mu1: f64, mu_in: f64) -> Result<f64> {
    if !(mu1 > 0.0 && beta > 0.0) {
        return Err(invalid("mu1 and beta must be positive"));
    }
    Ok(v0 * mu_in / (mu_in + 2.0 * beta * mu1))
}

/// V0 = exp(−(2πσΔτ)²/2) for a Gaussian frequency jitter σ.
pub fn visibility_from_linewidth(sigma: f64, delta_tau: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be ≥ 0"));
    }
    Ok((-(2.0 * std::f64::consts::PI * sigma * delta_tau).powi(2) / 2.0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linewidth {
    pub sigma: f64,
    pub fwhm: f64,
}

pub fn linewidth_from_visibility(v0: f64, delta_tau: f64) -> Result<Linewidth> {
    if !(v0 > 0.0 && v0 <= 1.0) {
        return Err(invalid(format!("V0 = {v0} outside (0, 1]")));
    }
    if !(delta_tau > 0.0) {
        return Err(invalid("delta_tau must be positive"));
    }
    let sigma = (-2.0 * v0.ln()).sqrt() / (2.0 * std::f64::consts::PI * delta_tau);
    Ok(Linewidth { sigma, fwhm: FWHM_PER_SIGMA * sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityBounds {
    pub f_pol: f64,
    pub f_eq: f64,
}

pub fn fidelity_bounds(snr: f64, visibility: f64) -> Result<FidelityBounds> {
    if !(snr >= 0.0) || !(0.0..=1.0).contains(&visibility) {
        return Err(invalid("need SNR ≥ 0 and V in [0, 1]"));
    }
    Ok(FidelityBounds { f_pol: (snr + 1.0) / (snr + 2.0), f_eq: (1.0 + visibility) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
    pub n: u64,
}

pub fn write_report_csv<W: Write>(rows: &[EstimatorRow], mut w: W) -> Result<()> {
    writeln!(w, "name,value,sigma,N")?;
    for r in rows {
        writeln!(w, "{},{:.6e},{:.6e},{}", r.name, r.value, r.sigma, r.n)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sim::{HbtRecord, TrialRecord};
    use rand::Rng;

    fn window() -> GateWindow {
        GateWindow::new(2.3e-6, 2.7e-6).unwrap()
    }

    fn independent_run(n: u64, p1: f64, p2: f64, seed: u64) -> RunResult {
        let mut rng = stream_rng(seed, 0);
        let mut records = vec![];
        for i in 0..n {
            let d1 = rng.random::<f64>() < p1;
            let d2 = rng.random::<f64>() < p2;
            if d1 || d2 {
                records.push(TrialRecord { trial_index: i, d1_ns: d1.then_some(0), d2_ns: if d2 { vec![2500] } else { vec![] } });
            }
        }
        RunResult {
            seed,
            n_trials: n,
            sampling: Sampling::Unconditional,
            herald_count: records.iter().filter(|r| r.d1_ns.is_some()).count() as u64,
            after_crystal: 0,
            herald_probability: p1,
            record_window: GateWindow::new(0.0, 5e-6).unwrap(),
            records,
        }
    }

    #[test]
    fn independent_streams_give_unity() {
        let run = independent_run(2_000_000, 0.05, 0.02, 1);
        let g = g2_cross(&run, &window(), 1).unwrap();
        assert!((g.value - 1.0).abs() < 3.0 * g.sigma, "{g:?}");
    }

    #[test]
    fn no_accidentals_is_an_error() {
        let run = independent_run(1000, 0.05, 0.0, 1);
        assert!(g2_cross(&run, &window(), 1).is_err());
    }

    fn hbt(n: u64, photons: impl Fn(&mut crate::rng::TrialRng) -> u64, e: f64) -> HbtRun {
        let mut rng = stream_rng(4, 0);
        let mut records = vec![];
        for i in 0..n {
            let k = photons(&mut rng);
            let (mut a, mut b) = (false, false);
            for _ in 0..k {
                if rng.random::<f64>() < e {
                    if rng.random::<bool>() { a = true } else { b = true }
                }
            }
            if a || b {
                records.push(HbtRecord { trial_index: i, herald: true, a, b });
            }
        }
        HbtRun { n_trials: n, sampling: Sampling::HeraldConditioned, records, herald_count: n }
    }

    #[test]
    fn coherent_light_gives_unity() {
        let run = hbt(400_000, |r| crate::qfc::poisson_draw(1.0, r), 0.3);
        let g = heralded_g2(&run).unwrap();
        assert!((g.value - 1.0).abs() < 3.0 * g.sigma, "{g:?}");
    }

    #[test]
    fn two_photon_fock_gives_half() {
        let run = hbt(400_000, |_| 2, 0.05);
        let g = heralded_g2(&run).unwrap();
        // exact binary-detector value for n = 2 at efficiency e
        let e: f64 = 0.05;
        let p1 = 1.0 - (1.0 - e / 2.0).powi(2);
        let p12 = 1.0 - 2.0 * (1.0 - e / 2.0).powi(2) + (1.0 - e).powi(2);
        assert!((g.value - p12 / (p1 * p1)).abs() < 3.0 * g.sigma);
        assert!((g.value - 0.5).abs() < 0.05);
    }

    fn c(value: f64, sigma: f64) -> CorrelationResult {
        CorrelationResult { value, sigma, n_coincidences: 0 }
    }

    #[test]
    fn cauchy_schwarz_cases() {
        let r = cauchy_schwarz(&c(1.97, 0.10), &c(2.0, 0.0), &c(11.4, 2.4));
        assert!(r.violated && (r.bound - 1.985).abs() < 1e-3 && r.margin_sigma > 3.0);
        assert!(!cauchy_schwarz(&c(2.0, 0.0), &c(2.0, 0.0), &c(2.0, 0.1)).violated);
        assert!(!cauchy_schwarz(&c(2.0, 0.0), &c(2.0, 0.0), &c(1.0, 0.1)).violated);
    }

    #[test]
    fn snr_counts() {
        let s = snr_from_counts(180, 10, 1.0).unwrap();
        assert!((s.value - 17.0).abs() < 1e-12);
        let z = snr_from_counts(50, 0, 1.0).unwrap();
        assert!(z.lower_bound);
        let d = snr_from_counts(100, 200, 2.0).unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn noiseless_fringe() {
        let phis: Vec<f64> = (0..12).map(|i| i as f64 * std::f64::consts::PI / 6.0).collect();
        let counts: Vec<u64> = phis.iter().map(|p| (100.0 * (1.0 + p.cos())).round() as u64).collect();
        let f = visibility_fit(&phis, &counts).unwrap();
        assert!((f.visibility - 1.0).abs() < 1e-9);
        assert!(f.phase.abs() < 1e-9);
        let flat = visibility_fit(&phis, &vec![7; 12]).unwrap();
        assert_eq!(flat.visibility, 0.0);
        assert!(visibility_fit(&phis[..3], &counts[..3]).is_err());
        assert!(visibility_fit(&phis[..5], &counts[..5]).is_err());
    }

    #[test]
    fn g2_model_limits() {
        assert_eq!(model_g2_vs_pe(22.0, f64::INFINITY).unwrap(), 22.0);
        assert_eq!(model_g2_vs_pe(22.0, 0.0).unwrap(), 1.0);
        assert!(model_g2_vs_pe(22.0, -1.0).is_err());
    }

    #[test]
    fn heralded_model_matches_unheralded_form() {
        let (p_w, cn) = (0.02, 15.0);
        let a = model_g2_heralded(p_w, cn, 1.0).unwrap();
        let b = model_g2_vs_pe(1.0 / p_w, p_w * cn).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn visibility_model() {
        assert!((model_visibility_mu(0.67, 1.0, 0.022, 0.3).unwrap() - 0.584).abs() < 1e-3);
        assert_eq!(model_visibility_mu(0.67, 1.0, 0.022, 0.0).unwrap(), 0.0);
        assert!((model_visibility_mu(0.67, 1.0, 0.022, 1e12).unwrap() - 0.67).abs() < 1e-9);
    }

    #[test]
    fn linewidth_inversion() {
        assert_eq!(visibility_from_linewidth(0.0, 0.5e-6).unwrap(), 1.0);
        let l = linewidth_from_visibility(0.67, 0.5e-6).unwrap();
        assert!((l.fwhm - 670e3).abs() < 5e3 && (570e3..=700e3).contains(&l.fwhm));
        let l = linewidth_from_visibility(0.75, 0.5e-6).unwrap();
        assert!((l.fwhm - 567e3).abs() < 2e3);
        assert!(linewidth_from_visibility(1.2, 0.5e-6).is_err());
    }

    #[test]
    fn fidelity_limits() {
        let b = fidelity_bounds(17.0, 0.70).unwrap();
        assert!((b.f_pol - 0.947).abs() < 1e-3 && (b.f_eq - 0.85).abs() < 1e-12);
        let z = fidelity_bounds(0.0, 0.0).unwrap();
        assert_eq!((z.f_pol, z.f_eq), (0.5, 0.5));
    }
}
