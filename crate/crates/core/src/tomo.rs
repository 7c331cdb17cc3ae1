//! Time-bin qubit tomography: analyzer POVMs, maximum-likelihood
//! reconstruction and Poisson resampling of the fidelities.
//!
//! Basis ordering is {|e⟩, |l⟩} and ρ is stored as ρ_jk = ⟨j|ρ|k⟩.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qfc::poisson_draw;
use crate::rng::stream_rng;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[C; 2]; 2]);

impl Mat2 {
    pub fn zero() -> Self {
        Mat2([[ZERO; 2]; 2])
    }

    pub fn identity() -> Self {
        Mat2([[ONE, ZERO], [ZERO, ONE]])
    }

    /// |ψ⟩⟨ψ|.
    pub fn projector(psi: &[C; 2]) -> Self {
        let mut m = Self::zero();
        for j in 0..2 {
            for k in 0..2 {
                m.0[j][k] = psi[j] * psi[k].conj();
            }
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let a = self.0;
        Mat2([[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]])
    }

    pub fn mul(&self, o: &Mat2) -> Self {
        let (a, b) = (self.0, o.0);
        let mut m = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        m
    }

    pub fn add(&self, o: &Mat2) -> Self {
        let mut m = *self;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|x| *x *= s);
        m
    }

    pub fn trace(&self) -> C {
        self.0[0][0] + self.0[1][1]
    }

    /// Tr(AB).
    pub fn trace_product(&self, o: &Mat2) -> C {
        let (a, b) = (self.0, o.0);
        a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.add(&self.adjoint().scale(-1.0));
        d.0.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues (ascending) of the Hermitian part.
    pub fn hermitian_eigenvalues(&self) -> [f64; 2] {
        let a = self.0[0][0].re;
        let d = self.0[1][1].re;
        let b = 0.5 * (self.0[0][1] + self.0[1][0].conj());
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
        [mean - r, mean + r]
    }

    /// Coordinates in the (I, X, Y, Z) basis.
    pub fn pauli_coordinates(&self) -> [f64; 4] {
        let m = self.0;
        [
            0.5 * (m[0][0] + m[1][1]).re,
            0.5 * (m[0][1] + m[1][0]).re,
            0.5 * (m[1][0] - m[0][1]).im,
            0.5 * (m[0][0] - m[1][1]).re,
        ]
    }
}

pub fn ket(a: C, b: C) -> [C; 2] {
    [a, b]
}

pub fn ket_e() -> [C; 2] {
    [ONE, ZERO]
}

pub fn ket_l() -> [C; 2] {
    [ZERO, ONE]
}

pub fn ket_plus() -> [C; 2] {
    let s = 0.5f64.sqrt();
    [C::new(s, 0.0), C::new(s, 0.0)]
}

/// (|e⟩ + i|l⟩)/√2.
pub fn ket_r() -> [C; 2] {
    let s = 0.5f64.sqrt();
    [C::new(s, 0.0), C::new(0.0, s)]
}

/// (|e⟩ + e^{iθ}|l⟩)/√2.
pub fn ket_theta(theta: f64) -> [C; 2] {
    let s = 0.5f64.sqrt();
    [C::new(s, 0.0), C::from_polar(s, theta)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix(pub Mat2);

impl DensityMatrix {
    pub fn new(m: Mat2) -> Result<Self> {
        if m.hermiticity_error() > 1e-12 {
            return Err(invalid("density matrix is not Hermitian"));
        }
        if (m.trace().re - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("trace {} ≠ 1", m.trace().re)));
        }
        if m.hermitian_eigenvalues()[0] < -1e-10 {
            return Err(invalid("density matrix has a negative eigenvalue"));
        }
        Ok(Self(m))
    }

    /// Builds ρ from entries ρ00, ρ01 and ρ11, normalizing the trace.
    pub fn from_entries(r00: f64, r01: C, r11: f64) -> Result<Self> {
        let t = r00 + r11;
        Self::new(Mat2([[C::new(r00 / t, 0.0), r01 / t], [r01.conj() / t, C::new(r11 / t, 0.0)]]))
    }

    pub fn pure(psi: &[C; 2]) -> Result<Self> {
        Self::new(Mat2::projector(psi))
    }

    pub fn get(&self, j: usize, k: usize) -> C {
        self.0 .0[j][k]
    }

    pub fn trace_distance(&self, o: &DensityMatrix) -> f64 {
        let d = self.0.add(&o.0.scale(-1.0));
        let e = d.hermitian_eigenvalues();
        0.5 * (e[0].abs() + e[1].abs())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = self.0 .0;
        serde_json::json!({
            "re": [[m[0][0].re, m[0][1].re], [m[1][0].re, m[1][1].re]],
            "im": [[m[0][0].im, m[0][1].im], [m[1][0].im, m[1][1].im]],
        })
    }
}

/// ⟨ψ|ρ|ψ⟩.
pub fn conditional_fidelity(rho: &DensityMatrix, psi: &[C; 2]) -> Result<f64> {
    let norm = psi[0].norm_sqr() + psi[1].norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("target state norm {norm} ≠ 1")));
    }
    let mut f = ZERO;
    for j in 0..2 {
        for k in 0..2 {
            f += psi[j].conj() * rho.get(j, k) * psi[k];
        }
    }
    Ok(f.re.clamp(0.0, 1.0))
}

/// The three reconstructed states of the stored-qubit measurement, with
/// their target states: |R⟩, |+⟩ and |E⟩.
pub fn measured_states() -> [(&'static str, DensityMatrix, [C; 2]); 3] {
    let r = DensityMatrix::from_entries(0.567, C::new(0.040, -0.284), 0.434).expect("valid matrix");
    let p = DensityMatrix::from_entries(0.505, C::new(0.352, 0.067), 0.495).expect("valid matrix");
    let e = DensityMatrix::from_entries(0.941, C::new(0.063, -0.001), 0.059).expect("valid matrix");
    [("R", r, ket_r()), ("+", p, ket_plus()), ("E", e, ket_e())]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeasurementSetting {
    /// Single comb; early and late echo windows.
    Z,
    /// Dual comb; analyzer phase θ.
    Equatorial { theta: f64 },
}

impl MeasurementSetting {
    pub fn validate(&self) -> Result<()> {
        if let MeasurementSetting::Equatorial { theta } = self {
            if !(0.0..2.0 * PI).contains(theta) {
                return Err(invalid(format!("analyzer phase {theta} outside [0, 2π)")));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            MeasurementSetting::Z => "Z".into(),
            MeasurementSetting::Equatorial { theta } => format!("theta={:.4}", theta),
        }
    }
}

/// Echo efficiencies of the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerEfficiencies {
    pub single: f64,
    /// Shorter-storage family of the dual comb (reads the late bin into the overlap).
    pub short: f64,
    /// Longer-storage family (reads the early bin into the overlap).
    pub long: f64,
}

/// Unscaled overlap-window operator |θ⟩⟨θ|.
pub fn overlap_projector(theta: f64) -> Mat2 {
    Mat2::projector(&ket_theta(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: &'static str,
    pub op: Mat2,
}

/// Outcome operators per setting. Z: early and late windows. Equatorial:
/// early side echo, overlap window, late side echo.
pub fn povm_for_setting(setting: &MeasurementSetting, eff: &AnalyzerEfficiencies) -> Result<Vec<Outcome>> {
    setting.validate()?;
    let proj_e = Mat2::projector(&ket_e());
    let proj_l = Mat2::projector(&ket_l());
    let out = match *setting {
        MeasurementSetting::Z => vec![
            Outcome { label: "early", op: proj_e.scale(eff.single) },
            Outcome { label: "late", op: proj_l.scale(eff.single) },
        ],
        MeasurementSetting::Equatorial { theta } => {
            let v = [C::new(eff.long.sqrt(), 0.0), C::from_polar(eff.short.sqrt(), theta)];
            vec![
                Outcome { label: "side_early", op: proj_e.scale(eff.short) },
                Outcome { label: "overlap", op: Mat2::projector(&v) },
                Outcome { label: "side_late", op: proj_l.scale(eff.long) },
            ]
        }
    };
    let total = out.iter().fold(Mat2::zero(), |acc, o| acc.add(&o.op));
    let ev = total.hermitian_eigenvalues();
    if ev[1] > 1.0 + 1e-12 || ev[0] < -1e-12 || out.iter().all(|o| o.op.trace().re == 0.0) {
        return Err(invalid(format!("setting {} is not a valid measurement", setting.label())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub setting: MeasurementSetting,
    pub counts: Vec<u64>,
    pub background: Vec<f64>,
    /// Expected counts per unit Tr(ρE): heralds × detection chain efficiency.
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Settings did not span the operator space; the unconstrained
    /// direction stays at its maximally mixed starting value.
    pub rank_deficient: bool,
    /// Likelihood never decreased between iterations.
    pub monotone: bool,
}

struct Term {
    op: Mat2,
    n: f64,
    b: f64,
    s: f64,
}

fn rho_of(t: &[f64; 4]) -> (Mat2, Mat2, f64) {
    let tm = Mat2([[C::new(t[0], 0.0), ZERO], [C::new(t[2], t[3]), C::new(t[1], 0.0)]]);
    let a = tm.adjoint().mul(&tm);
    let tr = a.trace().re;
    (a.scale(1.0 / tr), tm, tr)
}

fn log_likelihood(terms: &[Term], rho: &Mat2, total: f64) -> f64 {
    terms
        .iter()
        .map(|k| {
            let lam = (k.s * rho.trace_product(&k.op).re + k.b).max(1e-300);
            k.n * lam.ln() - lam
        })
        .sum::<f64>()
        / total
}

fn gradient(terms: &[Term], t: &[f64; 4], total: f64) -> [f64; 4] {
    let (rho, tm, tr) = rho_of(t);
    let g = terms.iter().fold(Mat2::zero(), |acc, k| {
        let lam = (k.s * rho.trace_product(&k.op).re + k.b).max(1e-300);
        acc.add(&k.op.scale(k.s * (k.n / lam - 1.0) / total))
    });
    let shift = g.trace_product(&rho).re;
    let gp = g.add(&Mat2::identity().scale(-shift)).scale(1.0 / tr);
    let m = gp.mul(&tm.adjoint()).0;
    [2.0 * m[0][0].re, 2.0 * m[1][1].re, 2.0 * m[0][1].re, -2.0 * m[0][1].im]
}

fn numeric_hessian(terms: &[Term], t: &[f64; 4], total: f64) -> [[f64; 4]; 4] {
    let eps = 1e-6;
    let mut h = [[0.0; 4]; 4];
    for j in 0..4 {
        let (mut tp, mut tm) = (*t, *t);
        tp[j] += eps;
        tm[j] -= eps;
        let (gp, gm) = (gradient(terms, &tp, total), gradient(terms, &tm, total));
        for i in 0..4 {
            h[i][j] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }
    for i in 0..4 {
        for j in 0..i {
            let m = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = m;
            h[j][i] = m;
        }
    }
    h
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn operator_rank(ops: &[Mat2]) -> usize {
    let mut basis: Vec<[f64; 4]> = vec![];
    for op in ops {
        let mut v = op.pauli_coordinates();
        for b in &basis {
            let d: f64 = (0..4).map(|i| v[i] * b[i]).sum();
            (0..4).for_each(|i| v[i] -= d * b[i]);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(v.map(|x| x / n));
        }
    }
    basis.len()
}

/// Maximum-likelihood ρ = T†T/Tr(T†T) for lower-triangular T under a
/// Poisson model λ = exposure·Tr(ρE) + background, by damped Newton ascent
/// that only accepts non-decreasing likelihood.
pub fn mle_reconstruct(records: &[CountsRecord], eff: &AnalyzerEfficiencies) -> Result<MleResult> {
    if records.is_empty() {
        return Err(invalid("no counts"));
    }
    let mut terms = vec![];
    for r in records {
        let povm = povm_for_setting(&r.setting, eff)?;
        if r.counts.len() != povm.len() || r.background.len() != povm.len() {
            return Err(invalid(format!("setting {} needs {} outcomes", r.setting.label(), povm.len())));
        }
        if !(r.exposure > 0.0) {
            return Err(invalid("exposure must be positive"));
        }
        for (k, o) in povm.into_iter().enumerate() {
            terms.push(Term { op: o.op, n: r.counts[k] as f64, b: r.background[k], s: r.exposure });
        }
    }
    let rank = operator_rank(&terms.iter().map(|t| t.op).collect::<Vec<_>>());
    let total = terms.iter().map(|t| t.n).sum::<f64>().max(1.0);
    let mut t = [0.5f64.sqrt(), 0.5f64.sqrt(), 0.0, 0.0];
    let mut ll = log_likelihood(&terms, &rho_of(&t).0, total);
    let (mut iterations, mut converged, mut monotone) = (0, false, true);
    let mut damping = 1e-3;
    while iterations < 10_000 {
        let g = gradient(&terms, &t, total);
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn < 1e-8 {
            converged = true;
            break;
        }
        iterations += 1;
        let h = numeric_hessian(&terms, &t, total);
        let mut accepted = false;
        while damping < 1e12 {
            // damped Newton step; large damping tends to a short gradient step
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] = -h[i][j] + if i == j { damping } else { 0.0 };
                }
            }
            let Some(delta) = solve4(a, g) else {
                damping *= 4.0;
                continue;
            };
            let mut cand = [0.0; 4];
            (0..4).for_each(|i| cand[i] = t[i] + delta[i]);
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            cand.iter_mut().for_each(|x| *x /= norm);
            let l = log_likelihood(&terms, &rho_of(&cand).0, total);
            if l >= ll {
                monotone &= l >= ll;
                t = cand;
                ll = l;
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            // no ascent direction left at machine precision
            converged = gn < 1e-6;
            break;
        }
    }
    let (rho, _, _) = rho_of(&t);
    // enforce exact Hermiticity and unit trace against rounding
    let r01 = 0.5 * (rho.0[0][1] + rho.0[1][0].conj());
    let rho = DensityMatrix::from_entries(rho.0[0][0].re, r01, rho.0[1][1].re)?;
    Ok(MleResult { rho, iterations, converged, log_likelihood: ll, rank_deficient: rank < 4, monotone })
}

/// Expected counts per outcome for state ρ.
pub fn expected_counts(rho: &DensityMatrix, setting: &MeasurementSetting, eff: &AnalyzerEfficiencies, exposure: f64, background: &[f64]) -> Result<Vec<f64>> {
    let povm = povm_for_setting(setting, eff)?;
    Ok(povm.iter().enumerate().map(|(k, o)| exposure * rho.0.trace_product(&o.op).re + background.get(k).copied().unwrap_or(0.0)).collect())
}

/// One prepared state's data and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyDataset {
    pub name: String,
    pub records: Vec<CountsRecord>,
    pub target: [C; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityStats {
    pub name: String,
    pub fidelity: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McUncertainty {
    pub states: Vec<FidelityStats>,
    pub average: f64,
    pub average_sigma: f64,
    /// (average − 2/3)/σ.
    pub significance: f64,
    pub nonconverged_fraction: f64,
    /// More than 1% of resampled reconstructions failed to converge.
    pub flagged: bool,
}

/// Poisson resampling of all counts, re-running the reconstruction each time.
pub fn mc_uncertainty(datasets: &[TomographyDataset], eff: &AnalyzerEfficiencies, n_resamples: usize, seed: u64) -> Result<McUncertainty> {
    if n_resamples < 100 {
        return Err(invalid("need at least 100 resamples"));
    }
    if datasets.is_empty() {
        return Err(invalid("no datasets"));
    }
    let point: Vec<f64> = datasets
        .iter()
        .map(|d| conditional_fidelity(&mle_reconstruct(&d.records, eff)?.rho, &d.target))
        .collect::<Result<_>>()?;
    let samples: Vec<(Vec<f64>, usize)> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            let mut fails = 0;
            let mut fs = vec![];
            for d in datasets {
                let recs: Vec<CountsRecord> = d
                    .records
                    .iter()
                    .map(|c| CountsRecord { counts: c.counts.iter().map(|&n| poisson_draw(n as f64, &mut rng)).collect(), ..c.clone() })
                    .collect();
                let res = mle_reconstruct(&recs, eff)?;
                fails += (!res.converged) as usize;
                fs.push(conditional_fidelity(&res.rho, &d.target)?);
            }
            Ok((fs, fails))
        })
        .collect::<Result<_>>()?;
    let n = n_resamples as f64;
    let stat = |xs: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (m, s)
    };
    let states = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (mean, sigma) = stat(&mut samples.iter().map(|s| s.0[i]));
            FidelityStats { name: d.name.clone(), fidelity: point[i], mean, sigma }
        })
        .collect();
    let (_, average_sigma) = stat(&mut samples.iter().map(|s| s.0.iter().sum::<f64>() / datasets.len() as f64));
    let average = point.iter().sum::<f64>() / point.len() as f64;
    let fails: usize = samples.iter().map(|s| s.1).sum();
    let nonconverged_fraction = fails as f64 / (n * datasets.len() as f64);
    let significance = if average_sigma > 0.0 { (average - 2.0 / 3.0) / average_sigma } else { f64::INFINITY };
    if !significance.is_finite() && average < 2.0 / 3.0 {
        return Err(Error::Undefined("zero spread below threshold".into()));
    }
    Ok(McUncertainty { states, average, average_sigma, significance, nonconverged_fraction, flagged: nonconverged_fraction > 0.01 })
}

/// Settings Z, θ = 0, π/2 and optionally π, 3π/2.
pub fn standard_settings(with_opposite: bool) -> Vec<MeasurementSetting> {
    let mut v = vec![MeasurementSetting::Z, MeasurementSetting::Equatorial { theta: 0.0 }, MeasurementSetting::Equatorial { theta: PI / 2.0 }];
    if with_opposite {
        v.push(MeasurementSetting::Equatorial { theta: PI });
        v.push(MeasurementSetting::Equatorial { theta: 1.5 * PI });
    }
    v
}
