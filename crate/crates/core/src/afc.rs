//! Atomic frequency comb memory as a causal linear filter.
//!
//! A comb is an optical-depth spectrum D(f). Its amplitude response is
//! exp(−D/2) and its phase is fixed by the minimum-phase (Kramers–Kronig)
//! construction, so fields are propagated by a single spectral product.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::source::{make_waveform, TemporalEnvelope, TimeGrid, WaveformSpec, FWHM_PER_SIGMA};

pub type TemporalField = TemporalEnvelope;

/// One periodic family of absorption teeth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToothFamily {
    /// Tooth spacing Δ in Hz.
    pub period: f64,
    /// Offset δ of the family from the comb centre in Hz.
    pub detuning: f64,
    /// Peak optical depth d of each tooth.
    pub peak_depth: f64,
    /// Δ / tooth FWHM.
    pub finesse: f64,
    /// Tooth FWHM in Hz overriding Δ/F (linewidth-limited preparation).
    #[serde(default)]
    pub width: Option<f64>,
}

impl ToothFamily {
    pub fn new(period: f64, peak_depth: f64, finesse: f64) -> Self {
        Self { period, detuning: 0.0, peak_depth, finesse, width: None }
    }

    pub fn tooth_fwhm(&self) -> f64 {
        self.width.unwrap_or(self.period / self.finesse)
    }

    pub fn storage_time(&self) -> f64 {
        1.0 / self.period
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSpec {
    /// Comb centre relative to the photon carrier in Hz.
    pub center: f64,
    pub bandwidth: f64,
    pub families: Vec<ToothFamily>,
    pub background_depth: f64,
}

impl CombSpec {
    pub fn single(period: f64, peak_depth: f64, finesse: f64, background_depth: f64) -> Self {
        Self {
            center: 0.0,
            bandwidth: 4e6,
            families: vec![ToothFamily::new(period, peak_depth, finesse)],
            background_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background_depth >= 0.0) {
            return Err(invalid("background depth must be ≥ 0"));
        }
        for f in &self.families {
            if !(f.period > 0.0) {
                return Err(invalid("tooth period must be positive"));
            }
            if !(f.finesse > 1.0) {
                return Err(invalid(format!("finesse {} must exceed 1", f.finesse)));
            }
            if !(f.peak_depth >= 0.0) {
                return Err(invalid("peak depth must be ≥ 0"));
            }
            if !(self.bandwidth > f.period) {
                return Err(invalid("bandwidth must exceed the tooth period"));
            }
            if let Some(w) = f.width {
                if !(w > 0.0) {
                    return Err(invalid("tooth width must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Tooth centre frequencies of `family`, relative to the carrier.
    pub fn tooth_centers(&self, family: &ToothFamily) -> Vec<f64> {
        let half = self.bandwidth / 2.0;
        let kmax = (half / family.period).floor() as i64;
        (-kmax..=kmax)
            .map(|k| self.center + family.detuning + k as f64 * family.period)
            .collect()
    }
}

/// Frequency of FFT bin `k` on an `n`-point grid of spacing `df`.
pub fn fft_frequency(k: usize, n: usize, df: f64) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 * df
    } else {
        (k as f64 - n as f64) * df
    }
}

/// Optical depth sampled in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub depth: Vec<f64>,
    pub df: f64,
}

impl SpectralProfile {
    pub fn frequency(&self, k: usize) -> f64 {
        fft_frequency(k, self.depth.len(), self.df)
    }

    /// (frequency, depth) pairs in ascending frequency within ±`span`.
    pub fn sorted(&self, span: f64) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = (0..self.depth.len())
            .map(|k| (self.frequency(k), self.depth[k]))
            .filter(|(f, _)| f.abs() <= span)
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

pub fn synthesize_comb(spec: &CombSpec, grid: &TimeGrid) -> Result<SpectralProfile> {
    spec.validate()?;
    let n = grid.n;
    let df = 1.0 / (n as f64 * grid.dt);
    let mut depth = vec![spec.background_depth; n];
    for fam in &spec.families {
        let fwhm = fam.tooth_fwhm();
        if df > fwhm / 8.0 {
            return Err(Error::GridTooCoarse(format!(
                "df = {df:.1} Hz resolves a {fwhm:.1} Hz tooth with {:.1} samples, need 8",
                fwhm / df
            )));
        }
        if fam.peak_depth == 0.0 {
            continue;
        }
        let s = fwhm / FWHM_PER_SIGMA;
        let reach = (8.0 * s / df).ceil() as i64;
        for fc in spec.tooth_centers(fam) {
            let kc = (fc / df).round() as i64;
            for k in (kc - reach)..=(kc + reach) {
                let idx = k.rem_euclid(n as i64) as usize;
                let f = k as f64 * df;
                depth[idx] += fam.peak_depth * (-0.5 * ((f - fc) / s).powi(2)).exp();
            }
        }
    }
    Ok(SpectralProfile { depth, df })
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(buf.len()) } else { planner.plan_fft_forward(buf.len()) };
    fft.process(buf);
    if inverse {
        let s = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|x| *x *= s);
    }
}

/// Spectral response in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub h: Vec<Complex64>,
}

impl TransferFunction {
    pub fn identity(n: usize) -> Self {
        Self { h: vec![Complex64::new(1.0, 0.0); n] }
    }

    /// Same magnitude with the phase reversed; the result is anti-causal.
    pub fn phase_conjugated(&self) -> Self {
        Self { h: self.h.iter().map(|x| x.conj()).collect() }
    }

    pub fn impulse_response(&self) -> Vec<Complex64> {
        let mut buf = self.h.clone();
        fft_in_place(&mut buf, true);
        buf
    }

    /// Fraction of impulse-response energy at negative times (second half
    /// of the circular buffer).
    pub fn acausal_fraction(&self) -> f64 {
        let h = self.impulse_response();
        let n = h.len();
        let total: f64 = h.iter().map(|x| x.norm_sqr()).sum();
        let neg: f64 = h[n / 2 + 1..].iter().map(|x| x.norm_sqr()).sum();
        neg / total
    }
}

/// Minimum-phase response with |H| = exp(−D/2).
pub fn transfer_function(profile: &SpectralProfile) -> Result<TransferFunction> {
    let n = profile.depth.len();
    if n < 4 || n % 2 != 0 {
        return Err(invalid("profile length must be even and ≥ 4"));
    }
    if let Some(d) = profile.depth.iter().find(|d| !(**d >= 0.0)) {
        return Err(invalid(format!("negative optical depth {d}")));
    }
    let mut c: Vec<Complex64> = profile.depth.iter().map(|d| Complex64::new(-d / 2.0, 0.0)).collect();
    fft_in_place(&mut c, true);
    // fold the real cepstrum onto non-negative quefrencies
    let mut cm = vec![Complex64::new(0.0, 0.0); n];
    cm[0] = c[0];
    for k in 1..n / 2 {
        cm[k] = 2.0 * c[k];
    }
    cm[n / 2] = c[n / 2];
    fft_in_place(&mut cm, false);
    Ok(TransferFunction { h: cm.into_iter().map(|x| x.exp()).collect() })
}

/// Fraction of spectral energy in the outer tenth of the sampled band.
pub fn spectral_leakage(field: &TemporalField) -> f64 {
    let mut buf = field.samples.clone();
    fft_in_place(&mut buf, false);
    let n = buf.len();
    let df = 1.0 / (n as f64 * field.dt);
    let edge = 0.45 / field.dt;
    let total: f64 = buf.iter().map(|x| x.norm_sqr()).sum();
    let out: f64 = buf
        .iter()
        .enumerate()
        .filter(|(k, _)| fft_frequency(*k, n, df).abs() > edge)
        .map(|(_, x)| x.norm_sqr())
        .sum();
    if total > 0.0 { out / total } else { 0.0 }
}

pub fn propagate(field: &TemporalField, h: &TransferFunction) -> Result<TemporalField> {
    if field.samples.len() != h.h.len() {
        return Err(invalid(format!(
            "field has {} samples, response has {}",
            field.samples.len(),
            h.h.len()
        )));
    }
    let leak = spectral_leakage(field);
    if leak > 0.01 {
        return Err(Error::SpectralLeakage(leak));
    }
    let mut buf = field.samples.clone();
    fft_in_place(&mut buf, false);
    buf.iter_mut().zip(&h.h).for_each(|(a, b)| *a *= b);
    fft_in_place(&mut buf, true);
    Ok(TemporalField { samples: buf, dt: field.dt, t0: field.t0 })
}

/// Energy of `output` in [t1, t2) relative to `input_energy`.
pub fn extract_echo(output: &TemporalField, input_energy: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(t2 > t1) {
        return Err(invalid("empty echo window"));
    }
    let end = output.time(output.samples.len());
    if t1 < output.t0 || t2 > end {
        return Err(invalid(format!("window [{t1:e}, {t2:e}] outside field support")));
    }
    if !(input_energy > 0.0) {
        return Err(invalid("input energy must be positive"));
    }
    Ok(output.energy_between(t1, t2) / input_energy)
}

/// 2πδ/Δ reduced to [0, 2π).
pub fn analyzer_phase(delta: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(invalid("comb period must be positive"));
    }
    Ok((2.0 * PI * delta / period).rem_euclid(2.0 * PI))
}

pub fn relative_analyzer_phase(delta: f64, tau1: f64, tau2: f64) -> f64 {
    2.0 * PI * delta * (tau1 - tau2)
}

/// Multiplies the field by exp(i2πνt), moving its spectrum by +ν.
pub fn frequency_shift(field: &TemporalField, nu: f64) -> TemporalField {
    let mut out = field.clone();
    for (i, a) in out.samples.iter_mut().enumerate() {
        let t = field.time(i);
        *a *= Complex64::from_polar(1.0, 2.0 * PI * nu * t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoMeasurement {
    pub efficiency: f64,
    pub peak_time: f64,
    pub fwhm: f64,
}

/// Echo of a pulse centred at `t_in` expected after `tau`; the window is
/// `tau ± half_window` and the peak is searched inside it.
pub fn measure_echo(output: &TemporalField, input_energy: f64, t_in: f64, tau: f64, half_window: f64) -> Result<EchoMeasurement> {
    let (t1, t2) = (t_in + tau - half_window, t_in + tau + half_window);
    let efficiency = extract_echo(output, input_energy, t1, t2)?;
    let i1 = ((t1 - output.t0) / output.dt).ceil() as usize;
    let i2 = ((t2 - output.t0) / output.dt).floor() as usize;
    let peak = (i1..i2)
        .max_by(|&a, &b| output.samples[a].norm_sqr().total_cmp(&output.samples[b].norm_sqr()))
        .ok_or_else(|| invalid("empty echo window"))?;
    Ok(EchoMeasurement { efficiency, peak_time: output.time(peak) - t_in, fwhm: output.fwhm_around(peak) })
}

/// Closed-form echo efficiency of a Gaussian-tooth comb,
/// (d/F)² e^{−d/F} e^{−7/F²} e^{−d0}.
pub fn analytic_efficiency(peak_depth: f64, finesse: f64, background_depth: f64) -> f64 {
    let de = peak_depth / finesse;
    de * de * (-de).exp() * (-7.0 / (finesse * finesse)).exp() * (-background_depth).exp()
}

/// Sampling setup shared by all engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSetup {
    pub grid: TimeGrid,
    /// Input pulse centre.
    pub t_in: f64,
    pub pulse_fwhm: f64,
    /// Half width of the single-comb efficiency window.
    pub half_window: f64,
}

impl Default for EngineSetup {
    fn default() -> Self {
        Self { grid: TimeGrid { n: 32768, dt: 5e-9, t0: 0.0 }, t_in: 2e-6, pulse_fwhm: 200e-9, half_window: 0.5e-6 }
    }
}

impl EngineSetup {
    pub fn gaussian_input(&self) -> Result<TemporalField> {
        make_waveform(&WaveformSpec::Gaussian { fwhm: self.pulse_fwhm }, &self.grid, self.t_in)
    }

    /// Echo of the standard Gaussian input through a single-family comb.
    pub fn single_echo(&self, spec: &CombSpec) -> Result<EchoMeasurement> {
        let tau = spec.families[0].storage_time();
        let h = transfer_function(&synthesize_comb(spec, &self.grid)?)?;
        let input = self.gaussian_input()?;
        let out = propagate(&input, &h)?;
        measure_echo(&out, input.energy(), self.t_in, tau, self.half_window)
    }

    /// Both first-order echoes of a two-family comb; windows are
    /// `tau ± |τ2 − τ1|/2`.
    pub fn dual_echoes(&self, spec: &CombSpec) -> Result<[EchoMeasurement; 2]> {
        if spec.families.len() != 2 {
            return Err(invalid("dual comb needs two tooth families"));
        }
        let h = transfer_function(&synthesize_comb(spec, &self.grid)?)?;
        let input = self.gaussian_input()?;
        let out = propagate(&input, &h)?;
        let (ta, tb) = (spec.families[0].storage_time(), spec.families[1].storage_time());
        let hw = (ta - tb).abs() / 2.0;
        Ok([
            measure_echo(&out, input.energy(), self.t_in, ta, hw)?,
            measure_echo(&out, input.energy(), self.t_in, tb, hw)?,
        ])
    }
}

/// Dual-comb analyzer: the early bin is read through the longer storage
/// time, the late bin through the shorter one, so both meet in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCombConfig {
    pub comb: CombSpec,
    pub separation: f64,
    pub overlap_window: f64,
}

impl DualCombConfig {
    /// Longer storage time τ of the two families.
    pub fn tau_long(&self) -> f64 {
        self.comb.families.iter().map(|f| f.storage_time()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetuningScan {
    /// Input frequency offset of the photon relative to the comb centre.
    pub delta: Vec<f64>,
    pub single_efficiency: Vec<f64>,
    pub dual_area: Vec<f64>,
}

/// Single-comb echo efficiency and dual-comb overlap-window energy versus the
/// input detuning. The dual input is an equal-weight time-bin pulse.
pub fn detuning_scan(setup: &EngineSetup, single: &CombSpec, dual: &DualCombConfig, deltas: &[f64]) -> Result<DetuningScan> {
    for &d in deltas {
        if d.abs() > single.bandwidth.max(dual.comb.bandwidth) {
            return Err(invalid(format!("detuning {d} Hz outside ±bandwidth")));
        }
    }
    let h1 = transfer_function(&synthesize_comb(single, &setup.grid)?)?;
    let h2 = transfer_function(&synthesize_comb(&dual.comb, &setup.grid)?)?;
    let g = setup.gaussian_input()?;
    let q = crate::source::TimeBinQubitSpec {
        c1: 0.5f64.sqrt(),
        c2: 0.5f64.sqrt(),
        phi: 0.0,
        separation: dual.separation,
        bin_fwhm: setup.pulse_fwhm,
    };
    let tb = make_waveform(&WaveformSpec::TimeBin(q), &setup.grid, setup.t_in)?;
    let tau1 = single.families[0].storage_time();
    let t_overlap = setup.t_in + dual.tau_long();
    let hw = dual.overlap_window / 2.0;
    let mut scan = DetuningScan { delta: deltas.to_vec(), single_efficiency: vec![], dual_area: vec![] };
    for &d in deltas {
        let out1 = propagate(&frequency_shift(&g, d), &h1)?;
        scan.single_efficiency.push(extract_echo(
            &out1,
            g.energy(),
            setup.t_in + tau1 - setup.half_window,
            setup.t_in + tau1 + setup.half_window,
        )?);
        let out2 = propagate(&frequency_shift(&tb, d), &h2)?;
        scan.dual_area.push(extract_echo(&out2, tb.energy(), t_overlap - hw, t_overlap + hw)?);
    }
    Ok(scan)
}

/// Phase φ that maximizes overlap-window counts for a time-bin input
/// c(|e⟩ + e^{iφ}|l⟩), from separate early and late propagations.
pub fn overlap_fringe_phase(setup: &EngineSetup, dual: &DualCombConfig) -> Result<f64> {
    let h = transfer_function(&synthesize_comb(&dual.comb, &setup.grid)?)?;
    let g = setup.gaussian_input()?;
    let late_in = shift_in_time(&g, dual.separation);
    let a_e = propagate(&g, &h)?;
    let a_l = propagate(&late_in, &h)?;
    let t_overlap = setup.t_in + dual.tau_long();
    let hw = dual.overlap_window / 2.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a_e.samples.len() {
        let t = a_e.time(i);
        if t >= t_overlap - hw && t < t_overlap + hw {
            acc += a_l.samples[i].conj() * a_e.samples[i];
        }
    }
    Ok(acc.arg())
}

fn shift_in_time(field: &TemporalField, by: f64) -> TemporalField {
    let k = (by / field.dt).round() as usize;
    let n = field.samples.len();
    let mut out = TemporalField { samples: vec![Complex64::new(0.0, 0.0); n], dt: field.dt, t0: field.t0 };
    for i in 0..n - k {
        out.samples[i + k] = field.samples[i];
    }
    out
}

/// Echo efficiency versus storage time for combs of period 1/τ whose tooth
/// width is limited from below by the preparation linewidth `gamma`.
pub fn efficiency_vs_storage_time(setup: &EngineSetup, base: &ToothFamily, bandwidth: f64, background_depth: f64, taus: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(invalid("preparation linewidth must be positive"));
    }
    taus.iter()
        .map(|&tau| {
            let period = 1.0 / tau;
            let width = (period / base.finesse).max(gamma);
            let fam = ToothFamily { period, detuning: 0.0, peak_depth: base.peak_depth, finesse: period / width, width: Some(width) };
            let spec = CombSpec { center: 0.0, bandwidth, families: vec![fam], background_depth };
            let out = setup.single_echo(&spec)?;
            Ok(out.efficiency)
        })
        .collect()
}

/// Writes (time, |amplitude|²) rows.
pub fn write_trace_csv<W: Write>(field: &TemporalField, mut w: W) -> Result<()> {
    writeln!(w, "t_s,intensity")?;
    for (i, a) in field.samples.iter().enumerate() {
        writeln!(w, "{:.9e},{:.9e}", field.time(i), a.norm_sqr())?;
    }
    Ok(())
}
