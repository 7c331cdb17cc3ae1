//! Photon-pair source of a cold-ensemble write/read scheme.
//!
//! Write and read photon numbers are perfectly correlated with a thermal
//! marginal (two-mode squeezed statistics). Detectors are binary.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const TRUNCATION_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSourceParams {
    /// Excitation probability per trial.
    pub p_e: f64,
    /// Mean number of fiber-coupled read photons per herald.
    pub eta_ret: f64,
    /// Write-arm transmission, filtering and detector efficiency.
    pub eta_write_path: f64,
    /// Fock-space truncation.
    pub n_max: usize,
}

impl Default for PairSourceParams {
    fn default() -> Self {
        Self { p_e: 0.05, eta_ret: 0.30, eta_write_path: 0.42, n_max: 30 }
    }
}

impl PairSourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_e) {
            return Err(invalid(format!("p_e = {} outside [0, 1)", self.p_e)));
        }
        for (name, v) in [("eta_ret", self.eta_ret), ("eta_write_path", self.eta_write_path)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_max < 2 {
            return Err(invalid(format!("n_max = {} < 2", self.n_max)));
        }
        Ok(())
    }

    /// Mean number of excitations in a heralded trial.
    pub fn heralded_mean_excitations(&self) -> f64 {
        heralded_mean_excitations(self.p_e, self.eta_write_path)
    }

    /// Retrieval efficiency per stored excitation, chosen so that a herald
    /// yields `eta_ret` fiber-coupled read photons on average.
    pub fn excitation_retrieval(&self) -> f64 {
        (self.eta_ret / self.heralded_mean_excitations()).min(1.0)
    }
}

/// Thermal probability of `n` pairs at mean `p`.
pub fn thermal_probability(p: f64, n: usize) -> f64 {
    if p == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let q = p / (1.0 + p);
    q.powi(n as i32) / (1.0 + p)
}

/// Joint photon-number table. Only the diagonal is populated.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    diag: Vec<f64>,
    /// Probability mass beyond `n_max` before renormalization.
    pub truncation_residual: f64,
}

impl PairDistribution {
    pub fn n_max(&self) -> usize {
        self.diag.len() - 1
    }

    /// P(n_w, n_r).
    pub fn prob(&self, n_w: usize, n_r: usize) -> f64 {
        if n_w != n_r || n_w >= self.diag.len() {
            0.0
        } else {
            self.diag[n_w]
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn total(&self) -> f64 {
        self.diag.iter().sum()
    }

    /// Mean photon number per arm.
    pub fn mean(&self) -> f64 {
        self.diag.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Unheralded write autocorrelation ⟨n(n−1)⟩/⟨n⟩².
    pub fn write_autocorrelation(&self) -> Result<f64> {
        let m = self.mean();
        if m == 0.0 {
            return Err(Error::Undefined("autocorrelation of vacuum".into()));
        }
        let f2: f64 = self
            .diag
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n.saturating_sub(1)) as f64 * p)
            .sum();
        Ok(f2 / (m * m))
    }
}

pub fn pair_number_distribution(params: &PairSourceParams) -> Result<PairDistribution> {
    params.validate()?;
    let p = params.p_e;
    let raw: Vec<f64> = (0..=params.n_max).map(|n| thermal_probability(p, n)).collect();
    let residual = (1.0 - raw.iter().sum::<f64>()).max(0.0);
    if residual > TRUNCATION_LIMIT {
        return Err(Error::Truncation { residual, limit: TRUNCATION_LIMIT });
    }
    let s: f64 = raw.iter().sum();
    Ok(PairDistribution { diag: raw.into_iter().map(|x| x / s).collect(), truncation_residual: residual })
}

/// Probability that a binary detector clicks on `n` photons at efficiency `eta`.
pub fn click_probability(eta: f64, n: usize) -> f64 {
    1.0 - (1.0 - eta).powi(n as i32)
}

/// Herald probability p_w = pη/(1+pη) (the geometric sum in closed form).
pub fn herald_probability(params: &PairSourceParams) -> Result<f64> {
    params.validate()?;
    let x = params.p_e * params.eta_write_path;
    Ok(x / (1.0 + x))
}

/// Mean excitation number given a write click; tends to 1 as the herald
/// probability vanishes.
pub fn heralded_mean_excitations(p: f64, eta_w: f64) -> f64 {
    let x = p * eta_w;
    if x < 1e-12 {
        return 1.0;
    }
    let p_w = x / (1.0 + x);
    // Σ n P(n) (1−η)^n = q/(1−q)² /(1+p), q = p(1−η)/(1+p)
    let q = p * (1.0 - eta_w) / (1.0 + p);
    let no_click = q / ((1.0 - q) * (1.0 - q)) / (1.0 + p);
    (p - no_click) / p_w
}

/// P(n | write click), including an optional dark-click probability of
/// the write detector.
pub fn heralded_number_distribution(params: &PairSourceParams, p_dark: f64) -> Result<Vec<f64>> {
    let dist = pair_number_distribution(params)?;
    let w: Vec<f64> = dist
        .diagonal()
        .iter()
        .enumerate()
        .map(|(n, p)| p * (1.0 - (1.0 - params.eta_write_path).powi(n as i32) * (1.0 - p_dark)))
        .collect();
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(Error::Undefined("herald probability is zero".into()));
    }
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Lossless cross-correlation of the thermal pair source, 2 + 1/p_e.
pub fn ideal_cross_correlation(p_e: f64) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::Undefined(format!("cross-correlation at p_e = {p_e}")));
    }
    Ok(2.0 + 1.0 / p_e)
}

/// Conditional click statistics of a 50/50 split of the heralded read mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbtProbabilities {
    pub p1: f64,
    pub p2: f64,
    pub p12: f64,
    pub alpha: f64,
}

/// Heralded autocorrelation α = p(12|w)/(p(1|w)p(2|w)) by enumeration over
/// the pair number. `detector_efficiency` multiplies the retrieval
/// efficiency; `read_background` is the mean Poissonian background per trial
/// in the read mode, split evenly onto both detectors.
pub fn heralded_autocorrelation(
    params: &PairSourceParams,
    detector_efficiency: f64,
    read_background: f64,
) -> Result<HbtProbabilities> {
    if !(read_background >= 0.0) {
        return Err(invalid(format!("read background {read_background} < 0")));
    }
    if !(0.0..=1.0).contains(&detector_efficiency) {
        return Err(invalid(format!("detector efficiency {detector_efficiency} outside [0, 1]")));
    }
    let dist = pair_number_distribution(params)?;
    let p_w = herald_probability(params)?;
    if p_w == 0.0 {
        return Err(Error::Undefined("herald probability is zero".into()));
    }
    let e = params.excitation_retrieval() * detector_efficiency;
    let b_half = (-read_background / 2.0).exp();
    let (mut p1, mut p12, mut norm) = (0.0, 0.0, 0.0);
    for (n, pn) in dist.diagonal().iter().enumerate() {
        let w = pn * click_probability(params.eta_write_path, n);
        let none_one = (1.0 - e / 2.0).powi(n as i32) * b_half;
        let none_both = (1.0 - e).powi(n as i32) * b_half * b_half;
        norm += w;
        p1 += w * (1.0 - none_one);
        p12 += w * (1.0 - 2.0 * none_one + none_both);
    }
    let (p1, p12) = (p1 / norm, p12 / norm);
    if p1 == 0.0 {
        return Err(Error::Undefined("no read clicks given a herald".into()));
    }
    Ok(HbtProbabilities { p1, p2: p1, p12, alpha: p12 / (p1 * p1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinQubitSpec {
    pub c1: f64,
    pub c2: f64,
    pub phi: f64,
    pub separation: f64,
    pub bin_fwhm: f64,
}

impl TimeBinQubitSpec {
    pub fn new(c1: f64, c2: f64, phi: f64) -> Result<Self> {
        let s = Self { c1, c2, phi, separation: 500e-9, bin_fwhm: 200e-9 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.c1 * self.c1 + self.c2 * self.c2;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("c1² + c2² = {norm}, expected 1")));
        }
        if !(self.bin_fwhm > 0.0) {
            return Err(invalid("bin FWHM must be positive"));
        }
        if self.separation < self.bin_fwhm {
            return Err(Error::OverlappingBins { separation: self.separation, fwhm: self.bin_fwhm });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WaveformSpec {
    Gaussian { fwhm: f64 },
    TimeBin(TimeBinQubitSpec),
}

/// Uniform time axis: `n` samples of spacing `dt` starting at `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n: usize,
    pub dt: f64,
    pub t0: f64,
}

impl TimeGrid {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Complex envelope sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEnvelope {
    pub samples: Vec<Complex64>,
    pub dt: f64,
    pub t0: f64,
}

impl TemporalEnvelope {
    pub fn zeros(grid: &TimeGrid) -> Self {
        Self { samples: vec![Complex64::new(0.0, 0.0); grid.n], dt: grid.dt, t0: grid.t0 }
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid { n: self.samples.len(), dt: self.dt, t0: self.t0 }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Energy in samples with t1 ≤ t < t2.
    pub fn energy_between(&self, t1: f64, t2: f64) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = self.time(*i);
                t >= t1 && t < t2
            })
            .map(|(_, a)| a.norm_sqr())
            .sum::<f64>()
            * self.dt
    }

    pub fn normalized(mut self) -> Result<Self> {
        let e = self.energy();
        if !(e > 0.0 && e.is_finite()) {
            return Err(invalid("envelope energy must be finite and positive"));
        }
        let s = 1.0 / e.sqrt();
        self.samples.iter_mut().for_each(|a| *a *= s);
        Ok(self)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Index of the intensity maximum among samples with t ≥ t_min.
    pub fn peak_index_after(&self, t_min: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in self.samples.iter().enumerate() {
            if self.time(i) < t_min {
                continue;
            }
            let v = a.norm_sqr();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Intensity FWHM of the peak at `peak`, from linearly interpolated
    /// half-maximum crossings.
    pub fn fwhm_around(&self, peak: usize) -> f64 {
        let y = self.intensity();
        let half = y[peak] / 2.0;
        let mut lo = peak;
        while lo > 0 && y[lo] > half {
            lo -= 1;
        }
        let mut hi = peak;
        while hi + 1 < y.len() && y[hi] > half {
            hi += 1;
        }
        let left = lo as f64 + (half - y[lo]) / (y[lo + 1] - y[lo]);
        let right = (hi - 1) as f64 + (y[hi - 1] - half) / (y[hi - 1] - y[hi]);
        (right - left) * self.dt
    }
}

fn gaussian_amplitude(t: f64, center: f64, fwhm: f64) -> f64 {
    let s = fwhm / FWHM_PER_SIGMA;
    (-(t - center).powi(2) / (4.0 * s * s)).exp()
}

fn check_sampling(grid: &TimeGrid, fwhm: f64) -> Result<()> {
    if !(fwhm > 0.0) {
        return Err(invalid("FWHM must be positive"));
    }
    if grid.dt > fwhm / 32.0 {
        return Err(invalid(format!(
            "dt = {:e} s gives {:.1} samples per FWHM, need at least 32",
            grid.dt,
            fwhm / grid.dt
        )));
    }
    Ok(())
}

/// Unit-energy envelope; `center` is the Gaussian centre or the early-bin
/// centre of a time-bin qubit.
pub fn make_waveform(spec: &WaveformSpec, grid: &TimeGrid, center: f64) -> Result<TemporalEnvelope> {
    let mut env = TemporalEnvelope::zeros(grid);
    match *spec {
        WaveformSpec::Gaussian { fwhm } => {
            check_sampling(grid, fwhm)?;
            for (i, a) in env.samples.iter_mut().enumerate() {
                *a = Complex64::new(gaussian_amplitude(grid.time(i), center, fwhm), 0.0);
            }
        }
        WaveformSpec::TimeBin(q) => {
            q.validate()?;
            check_sampling(grid, q.bin_fwhm)?;
            let bin = |c: f64| -> Vec<f64> {
                let v: Vec<f64> = (0..grid.n).map(|i| gaussian_amplitude(grid.time(i), c, q.bin_fwhm)).collect();
                let norm = (v.iter().map(|x| x * x).sum::<f64>() * grid.dt).sqrt();
                v.into_iter().map(|x| x / norm).collect()
            };
            let early = bin(center);
            let late = bin(center + q.separation);
            let late_phase = Complex64::from_polar(q.c2, q.phi);
            for (i, a) in env.samples.iter_mut().enumerate() {
                *a = q.c1 * early[i] + late_phase * late[i];
            }
        }
    }
    env.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p_e: f64, eta_w: f64) -> PairSourceParams {
        PairSourceParams { p_e, eta_write_path: eta_w, ..Default::default() }
    }

    #[test]
    fn vacuum_limit() {
        let d = pair_number_distribution(&params(0.0, 0.5)).unwrap();
        assert_eq!(d.prob(0, 0), 1.0);
        assert!(d.diagonal()[1..].iter().all(|&p| p == 0.0));
        assert_eq!(herald_probability(&params(0.0, 0.5)).unwrap(), 0.0);
    }

    #[test]
    fn mean_photon_number() {
        let d = pair_number_distribution(&params(0.05, 0.5)).unwrap();
        assert!((d.mean() - 0.05).abs() < 1e-9);
        assert_eq!(d.prob(1, 2), 0.0);
    }

    #[test]
    fn write_autocorrelation_is_thermal() {
        let d = pair_number_distribution(&params(0.05, 0.5)).unwrap();
        let g = d.write_autocorrelation().unwrap();
        assert!((g - 2.0).abs() < 1e-6);
        // measured 1.97 ± 0.10
        assert!((g - 1.97).abs() < 0.10);
    }

    #[test]
    fn truncation_is_reported() {
        let p = PairSourceParams { p_e: 0.9, n_max: 5, ..Default::default() };
        assert!(matches!(pair_number_distribution(&p), Err(Error::Truncation { .. })));
    }

    #[test]
    fn herald_probability_lossless() {
        let p_w = herald_probability(&params(0.05, 1.0)).unwrap();
        assert!((p_w - (1.0 - 1.0 / 1.05)).abs() < 1e-12);
        assert!((p_w - 0.0476).abs() < 1e-4);
    }

    #[test]
    fn cross_correlation_values() {
        assert!((ideal_cross_correlation(0.05).unwrap() - 22.0).abs() < 1e-12);
        assert!((ideal_cross_correlation(1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((ideal_cross_correlation(1e6).unwrap() - 2.0).abs() < 1e-5);
        assert!(ideal_cross_correlation(0.0).is_err());
    }

    #[test]
    fn alpha_vanishes_for_single_pairs() {
        let a = heralded_autocorrelation(&params(1e-4, 0.5), 0.5, 0.0).unwrap();
        assert!(a.alpha < 1e-3);
    }

    #[test]
    fn alpha_requires_heralds() {
        assert!(heralded_autocorrelation(&params(0.0, 0.5), 0.5, 0.0).is_err());
        assert!(heralded_autocorrelation(&params(0.1, 0.5), 0.5, -1.0).is_err());
    }

    #[test]
    fn heralded_mean_matches_table() {
        let p = params(0.35, 0.42);
        let d = pair_number_distribution(&PairSourceParams { n_max: 80, ..p }).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (n, pn) in d.diagonal().iter().enumerate() {
            let w = pn * click_probability(0.42, n);
            num += n as f64 * w;
            den += w;
        }
        assert!((p.heralded_mean_excitations() - num / den).abs() < 1e-10);
    }

    fn grid() -> TimeGrid {
        TimeGrid { n: 4096, dt: 5e-9, t0: 0.0 }
    }

    #[test]
    fn gaussian_waveform_fwhm() {
        let env = make_waveform(&WaveformSpec::Gaussian { fwhm: 200e-9 }, &grid(), 5e-6).unwrap();
        assert!((env.energy() - 1.0).abs() < 1e-9);
        let pk = env.peak_index_after(0.0).unwrap();
        assert!((env.fwhm_around(pk) - 200e-9).abs() < env.dt);
    }

    #[test]
    fn timebin_equal_bins() {
        let q = TimeBinQubitSpec::new(0.5f64.sqrt(), 0.5f64.sqrt(), 0.0).unwrap();
        // centre half a sample off the lattice so the midpoint falls between samples
        let env = make_waveform(&WaveformSpec::TimeBin(q), &grid(), 5e-6 + 2.5e-9).unwrap();
        let mid = 5e-6 + 2.5e-9 + 250e-9;
        let early = env.energy_between(0.0, mid);
        let late = env.energy_between(mid, 1.0);
        assert!((early - 0.5).abs() < 1e-6 && (late - 0.5).abs() < 1e-6);
    }

    #[test]
    fn timebin_polar_state() {
        let q = TimeBinQubitSpec::new(1.0, 0.0, 0.0).unwrap();
        let env = make_waveform(&WaveformSpec::TimeBin(q), &grid(), 5e-6).unwrap();
        assert!((env.energy() - 1.0).abs() < 1e-9);
        assert!(env.energy_between(5.25e-6, 1.0) < 0.01);
    }

    #[test]
    fn overlapping_bins_rejected() {
        let q = TimeBinQubitSpec { separation: 100e-9, ..TimeBinQubitSpec::new(1.0, 0.0, 0.0).unwrap() };
        let r = make_waveform(&WaveformSpec::TimeBin(q), &grid(), 5e-6);
        assert!(matches!(r, Err(Error::OverlappingBins { .. })));
    }

    #[test]
    fn undersampled_waveform_rejected() {
        let g = TimeGrid { n: 1024, dt: 20e-9, t0: 0.0 };
        assert!(make_waveform(&WaveformSpec::Gaussian { fwhm: 200e-9 }, &g, 5e-6).is_err());
    }
}
