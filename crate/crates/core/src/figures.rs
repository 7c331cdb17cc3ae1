//! Figure tables: every target plot as deterministic CSV. Monte Carlo
//! columns are left empty when the trial budget is zero.

use std::f64::consts::PI;

use crate::afc::{detuning_scan, propagate, synthesize_comb, transfer_function, DualCombConfig, EngineSetup};
use crate::calibration::{dual_comb, engine_setup, single_comb};
use crate::error::{Error, Result};
use crate::lab::{phase_grid, FringeSource, Jitter, Lab};
use crate::rng::derive_seed;
use crate::sim::{coincidence_histogram, lab_rate, AfcAction};
use crate::source::{herald_probability, ideal_cross_correlation};
use crate::stats::{model_g2_heralded, model_visibility_mu, visibility_from_linewidth};

pub const FIGURE_IDS: [&str; 13] = ["2a", "2b", "2c", "3a", "3b", "3c", "4a", "7", "8", "10a", "10b", "11", "12"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File suffix; empty for single-table figures.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub id: String,
    pub title: String,
    pub tables: Vec<Table>,
    /// Scalar results, written as `# key = value` lines ahead of the first table.
    pub notes: Vec<(String, f64)>,
}

impl FigureData {
    fn new(id: &str, title: &str) -> Self {
        Self { id: id.into(), title: title.into(), tables: vec![], notes: vec![] }
    }

    fn note(&mut self, key: &str, value: f64) {
        self.notes.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn file_name(&self, table: usize) -> String {
        match self.tables[table].name.as_str() {
            "" => format!("fig{}.csv", self.id),
            s => format!("fig{}_{}.csv", self.id, s),
        }
    }

    pub fn csv(&self, table: usize) -> String {
        let t = &self.tables[table];
        let mut out = format!("# figure {}: {}\n", self.id, self.title);
        if table == 0 {
            for (k, v) in &self.notes {
                out += &format!("# {k} = {v}\n");
            }
        }
        out += &t.columns.join(",");
        out.push('\n');
        for r in &t.rows {
            let cells: Vec<String> = r.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()).collect();
            out += &cells.join(",");
            out.push('\n');
        }
        out
    }
}

/// Seconds to microseconds, rounded to the picosecond.
fn us(t: f64) -> f64 {
    (t * 1e12).round() / 1e6
}

fn mc(trials: u64) -> bool {
    trials > 0
}

fn per(trials: u64, parts: usize) -> u64 {
    (trials / parts as u64).max(1)
}

pub fn figure(lab: &Lab, id: &str, seed: u64, trials: u64) -> Result<FigureData> {
    let s = |k: &str| derive_seed(seed, &format!("fig{id}-{k}"));
    match id {
        "2a" => fig_2a(lab, trials, s),
        "2b" => fig_2b(lab, trials, s),
        "2c" => fig_2c(lab, trials, s),
        "3a" => fig_3a(lab, trials, s),
        "3b" => fig_3b(lab, trials, s),
        "3c" => fig_3c(lab, trials, s),
        "4a" => fig_4a(lab, trials, s),
        "7" => fig_7(lab),
        "8" => fig_8(lab),
        "10a" => fig_10a(lab, trials, s),
        "10b" => fig_10b(lab, trials, s),
        "11" => fig_11(lab),
        "12" => fig_12(lab, trials, s),
        _ => Err(Error::UnknownFigure(id.into())),
    }
}

fn fig_2a(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let grid = [0.02, 0.05, 0.08, 0.11, 0.15, 0.2, 0.25, 0.3, 0.35, 0.45];
    let mut f = FigureData::new("2a", "heralded autocorrelation versus excitation probability");
    let mut t = Table::new("", &["p_e", "alpha_model", "alpha_mc", "alpha_mc_sigma"]);
    for (i, &p) in grid.iter().enumerate() {
        let model = lab.model_alpha(p)?;
        let (v, e) = if mc(trials) {
            let r = lab.measure_alpha(p, s(&i.to_string()), per(trials, grid.len()))?;
            (Some(r.value), Some(r.sigma))
        } else {
            (None, None)
        };
        t.push(vec![Some(p), Some(model), v, e]);
    }
    f.tables.push(t);
    if let Some(x) = lab.alpha_crossing(0.5, 0.01, 0.6)? {
        f.note("alpha_half_crossing_p_e", x);
    }
    if let Some(x) = lab.alpha_crossing(1.0, 0.01, 0.6)? {
        f.note("alpha_unity_crossing_p_e", x);
    }
    Ok(f)
}

fn histogram_rows(lab: &Lab, p: &crate::sim::PipelineParams, seed: u64, trials: u64) -> Result<(Vec<f64>, Vec<u64>, crate::sim::RunResult)> {
    let run = lab.run(p, seed, trials)?;
    let h = coincidence_histogram(&run, &lab.cfg.sequence, 50e-9)?;
    Ok((h.centers(), h.counts, run))
}

fn time_axis(lab: &Lab, afc: &AfcAction) -> Vec<f64> {
    let (a, b) = (lab.cfg.noise.record_start, afc.longest_delay() + lab.cfg.noise.record_after_echo);
    let n = ((b - a) / 50e-9 - 1e-9).ceil() as usize;
    (0..n).map(|i| a + (i as f64 + 0.5) * 50e-9).collect()
}

fn fig_2b(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let p_e = lab.cfg.anchors.snr_pairs_p_e;
    let afc = lab.calibrated_afc();
    let tau = afc.longest_delay();
    let mut f = FigureData::new("2b", "heralded coincidence histogram after storage");
    let mut t = Table::new("", &["t_us", "counts", "noise_counts"]);
    let p = lab.heralded(p_e, lab.gaussian(), afc.clone(), Jitter::None);
    if mc(trials) {
        let (centers, counts, run) = histogram_rows(lab, &p, s("signal"), per(trials, 2))?;
        let mut dark = p.clone();
        dark.send_read_photon = false;
        let (_, noise, _) = histogram_rows(lab, &dark, s("noise"), per(trials, 2))?;
        for i in 0..centers.len() {
            t.push(vec![Some(us(centers[i])), Some(counts[i] as f64), Some(noise[i] as f64)]);
        }
        let snr = crate::stats::snr_from_run(&run, &lab.window_at(tau), &lab.noise_windows(tau))?;
        f.note("snr", snr.value);
        f.note("snr_sigma", snr.sigma);
        f.note("coincidences_per_hour", lab_rate(&run, &lab.cfg.sequence, &lab.window_at(tau)));
    } else {
        for c in time_axis(lab, &afc) {
            t.push(vec![Some(us(c)), None, None]);
        }
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_2c(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let grid = [0.02, 0.05, 0.1, 0.2, 0.35];
    let a = &lab.cfg.anchors;
    // band from the spread of the measured pair SNR
    let (lo_scale, hi_scale) = (a.snr_pairs / (a.snr_pairs - 4.0), a.snr_pairs / (a.snr_pairs + 4.0));
    let eta = lab.cal.eta_afc;
    let tau = 1.0 / lab.cfg.memory.single_period;
    let (c, n) = (lab.signal_per_herald(eta), lab.noise_per_window());
    let mut f = FigureData::new("2c", "write-read cross-correlation versus excitation probability");
    let mut t = Table::new("", &["p_e", "g2_ideal", "g2_model", "g2_band_low", "g2_band_high", "g2_mc", "g2_mc_sigma"]);
    for (i, &p) in grid.iter().enumerate() {
        let p_w = herald_probability(&lab.pairs(p))?;
        let model = model_g2_heralded(p_w, c, n)?;
        let low = model_g2_heralded(p_w, c, n * lo_scale)?;
        let high = model_g2_heralded(p_w, c, n * hi_scale)?;
        let (v, e) = if mc(trials) {
            let r = lab.measure_g2(p, eta, tau, s(&i.to_string()), per(trials, grid.len()))?;
            (Some(r.value), Some(r.sigma))
        } else {
            (None, None)
        };
        t.push(vec![Some(p), Some(ideal_cross_correlation(p)?), Some(model), Some(low), Some(high), v, e]);
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_3a(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let p_e = lab.cfg.anchors.snr_pairs_p_e;
    let afc = lab.calibrated_afc();
    let tau = afc.longest_delay();
    let sep = lab.cfg.photon.bin_separation;
    let mut f = FigureData::new("3a", "early and late time-bin photons after storage");
    let mut t = Table::new("", &["t_us", "early_counts", "late_counts"]);
    if mc(trials) {
        let early = lab.heralded(p_e, lab.time_bin(1.0, 0.0, 0.0)?, afc.clone(), Jitter::None);
        let late = lab.heralded(p_e, lab.time_bin(0.0, 1.0, 0.0)?, afc.clone(), Jitter::None);
        let (centers, ce, re) = histogram_rows(lab, &early, s("early"), per(trials, 2))?;
        let (_, cl, rl) = histogram_rows(lab, &late, s("late"), per(trials, 2))?;
        for i in 0..centers.len() {
            t.push(vec![Some(us(centers[i])), Some(ce[i] as f64), Some(cl[i] as f64)]);
        }
        let noise = lab.noise_windows(tau);
        let se = crate::stats::snr_from_run(&re, &lab.window_at(tau), &noise)?;
        let sl = crate::stats::snr_from_run(&rl, &lab.window_at(tau + sep), &noise)?;
        f.note("snr_early", se.value);
        f.note("snr_late", sl.value);
    } else {
        for c in time_axis(lab, &afc) {
            t.push(vec![Some(us(c)), None, None]);
        }
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_3b(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let p_e = lab.cfg.anchors.snr_pairs_p_e;
    let m = &lab.cfg.memory;
    let setup = engine_setup(&lab.cfg.engine, lab.cfg.photon.fwhm);
    let mut short_mem = m.clone();
    short_mem.single_period = m.dual_periods[0];
    let eta_short = setup.single_echo(&single_comb(&short_mem, lab.cal.finesse))?.efficiency;
    let short = lab.single_afc(eta_short, 1.0 / m.dual_periods[0]);
    let long = lab.calibrated_afc();
    let mut f = FigureData::new("3b", "time-bin photon after short and long storage");
    f.note("eta_short", eta_short);
    f.note("eta_long", lab.cal.eta_afc);
    let mut t = Table::new("", &["t_us", "short_counts", "long_counts"]);
    let axis = time_axis(lab, &long);
    if mc(trials) {
        let photon = lab.time_bin(0.5f64.sqrt(), 0.5f64.sqrt(), 0.0)?;
        let mut ps = lab.heralded(p_e, photon, short, Jitter::None);
        let pl = lab.heralded(p_e, photon, long, Jitter::None);
        // shared time axis
        ps.record_window = pl.record_window;
        let (centers, cs, _) = histogram_rows(lab, &ps, s("short"), per(trials, 2))?;
        let (_, cl, _) = histogram_rows(lab, &pl, s("long"), per(trials, 2))?;
        for i in 0..centers.len() {
            t.push(vec![Some(us(centers[i])), Some(cs[i] as f64), Some(cl[i] as f64)]);
        }
    } else {
        for c in axis {
            t.push(vec![Some(us(c)), None, None]);
        }
    }
    f.tables.push(t);
    Ok(f)
}

fn fringe_table(lab: &Lab, source: FringeSource, detunings: &[(f64, &str)], jitter: Jitter, trials: u64, s: impl Fn(&str) -> u64, f: &mut FigureData) -> Result<Vec<f64>> {
    let phis = phase_grid(12);
    let mut cols = vec!["phi".to_string()];
    for (_, l) in detunings {
        cols.push(format!("counts_{l}"));
        cols.push(format!("counts_{l}_sigma"));
        cols.push(format!("fit_{l}"));
    }
    let mut t = Table { name: String::new(), columns: cols, rows: phis.iter().map(|&p| vec![Some(p)]).collect() };
    let mut phases = vec![];
    for (d, l) in detunings {
        if mc(trials) {
            let fr = lab.fringe(source, *d, jitter, &phis, s(l), per(trials, phis.len() * detunings.len()))?;
            let fit = fr.fit;
            for (row, pt) in t.rows.iter_mut().zip(&fr.points) {
                let model = fit.amplitude * (1.0 + fit.visibility * (pt.phi - fit.phase).cos());
                row.extend([Some(pt.counts as f64), Some((pt.counts as f64).sqrt()), Some(model)]);
            }
            f.note(&format!("visibility_{l}"), fit.visibility);
            f.note(&format!("visibility_sigma_{l}"), fit.sigma);
            f.note(&format!("fringe_phase_{l}"), fit.phase);
            phases.push(fit.phase);
        } else {
            for row in t.rows.iter_mut() {
                row.extend([None, None, None]);
            }
        }
    }
    f.tables.push(t);
    Ok(phases)
}

fn fig_3c(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let mut f = FigureData::new("3c", "interference fringe of the time-bin photon");
    let p_e = lab.cfg.anchors.snr_pairs_p_e;
    fringe_table(lab, FringeSource::Pairs { p_e }, &[(0.0, "0")], Jitter::Coherent, trials, s, &mut f)?;
    Ok(f)
}

fn fig_4a(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let mut f = FigureData::new("4a", "fringes with the second comb at zero and 200 kHz detuning");
    let p_e = lab.cfg.anchors.alpha_p_e;
    let phases = fringe_table(lab, FringeSource::Pairs { p_e }, &[(0.0, "0"), (200e3, "200k")], Jitter::Single, trials, s, &mut f)?;
    if let [a, b] = phases[..] {
        let d = (b - a).rem_euclid(2.0 * PI);
        f.note("phase_shift", d);
    }
    let closed = crate::afc::analyzer_phase(200e3, lab.cfg.memory.dual_periods[1])?;
    f.note("phase_shift_closed_form", closed);
    Ok(f)
}

fn fig_7(lab: &Lab) -> Result<FigureData> {
    let m = &lab.cfg.memory;
    let setup = engine_setup(&lab.cfg.engine, lab.cfg.photon.fwhm);
    let mut m500 = m.clone();
    m500.single_period = m.dual_periods[0];
    let combs = [single_comb(&m500, lab.cal.finesse), single_comb(m, lab.cal.finesse), dual_comb(m, lab.cal.dual_finesse)];
    let mut f = FigureData::new("7", "comb spectra and echo traces");
    let mut spectra = Table::new("spectra", &["frequency_mhz", "od_500k", "od_400k", "od_dual"]);
    let mut traces = Table::new("traces", &["t_us", "input", "out_500k", "out_400k", "out_dual"]);
    let input = setup.gaussian_input()?;
    let mut profiles = vec![];
    let mut outs = vec![];
    for c in &combs {
        let p = synthesize_comb(c, &setup.grid)?;
        outs.push(propagate(&input, &transfer_function(&p)?)?);
        profiles.push(p.sorted(3e6));
    }
    for k in 0..profiles[0].len() {
        spectra.push(vec![Some(profiles[0][k].0 / 1e6), Some(profiles[0][k].1), Some(profiles[1][k].1), Some(profiles[2][k].1)]);
    }
    let t_stop = setup.t_in + 4.5e-6;
    let mut i = 0;
    while i < input.samples.len() && input.time(i) <= t_stop {
        let mut row = vec![Some(us(input.time(i))), Some(input.samples[i].norm_sqr())];
        row.extend(outs.iter().map(|o| Some(o.samples[i].norm_sqr())));
        traces.push(row);
        i += 4;
    }
    let e500 = setup.single_echo(&combs[0])?;
    let e400 = setup.single_echo(&combs[1])?;
    let dual = setup.dual_echoes(&combs[2])?;
    f.note("echo_delay_500k_us", e500.peak_time * 1e6);
    f.note("echo_delay_400k_us", e400.peak_time * 1e6);
    f.note("echo_fwhm_400k_ns", e400.fwhm * 1e9);
    f.note("efficiency_500k", e500.efficiency);
    f.note("efficiency_400k", e400.efficiency);
    f.note("efficiency_dual_short", dual[0].efficiency);
    f.note("efficiency_dual_long", dual[1].efficiency);
    f.tables.push(spectra);
    f.tables.push(traces);
    Ok(f)
}

/// Period of dual ≈ single·(a + b cos(2πδ/P) + c sin(2πδ/P)) by grid search.
pub fn oscillation_period(delta: &[f64], single: &[f64], dual: &[f64], lo: f64, hi: f64) -> f64 {
    let resid = |period: f64| {
        let mut m = [[0.0; 3]; 3];
        let mut v = [0.0; 3];
        for i in 0..delta.len() {
            let x = 2.0 * PI * delta[i] / period;
            let b = [single[i], single[i] * x.cos(), single[i] * x.sin()];
            for r in 0..3 {
                v[r] += b[r] * dual[i];
                for c in 0..3 {
                    m[r][c] += b[r] * b[c];
                }
            }
        }
        let Some(coef) = solve3(m, v) else { return f64::INFINITY };
        (0..delta.len())
            .map(|i| {
                let x = 2.0 * PI * delta[i] / period;
                let fit = single[i] * (coef[0] + coef[1] * x.cos() + coef[2] * x.sin());
                (dual[i] - fit).powi(2)
            })
            .sum::<f64>()
    };
    let steps = 2000;
    let (mut best, mut best_r) = (lo, f64::INFINITY);
    for k in 0..=steps {
        let p = lo + (hi - lo) * k as f64 / steps as f64;
        let r = resid(p);
        if r < best_r {
            best = p;
            best_r = r;
        }
    }
    best
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    // Cramer's rule
    Some([0, 1, 2].map(|k| {
        let mut a = m;
        for r in 0..3 {
            a[r][k] = v[r];
        }
        det(a) / d
    }))
}

fn fig_8(lab: &Lab) -> Result<FigureData> {
    let m = &lab.cfg.memory;
    let setup: EngineSetup = engine_setup(&lab.cfg.engine, lab.cfg.photon.fwhm);
    let single = single_comb(m, lab.cal.finesse);
    let dual = DualCombConfig { comb: dual_comb(m, lab.cal.dual_finesse), separation: lab.cfg.photon.bin_separation, overlap_window: lab.cfg.noise.window };
    let deltas: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.1e6).collect();
    let scan = detuning_scan(&setup, &single, &dual, &deltas)?;
    let mut f = FigureData::new("8", "relative storage efficiency versus input detuning");
    let s0 = scan.single_efficiency[30];
    let mut t = Table::new("", &["detuning_mhz", "single_relative", "dual_overlap_relative"]);
    for i in 0..deltas.len() {
        t.push(vec![Some(deltas[i] / 1e6), Some(scan.single_efficiency[i] / s0), Some(scan.dual_area[i] / s0)]);
    }
    // fit only where the input lies inside the comb
    let inside: Vec<usize> = (0..deltas.len()).filter(|&i| deltas[i].abs() <= m.bandwidth / 2.0 + 1.0).collect();
    let pick = |v: &[f64]| inside.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let period = oscillation_period(&pick(&scan.delta), &pick(&scan.single_efficiency), &pick(&scan.dual_area), 1.0e6, 3.0e6);
    f.note("dual_period_mhz", period / 1e6);
    f.tables.push(t);
    Ok(f)
}

fn fig_10a(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let grid = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];
    let afc = lab.calibrated_afc();
    let tau = afc.longest_delay();
    let mu1 = lab.cal.mu1;
    let mut f = FigureData::new("10a", "echo SNR versus mean input photon number");
    let mut t = Table::new("", &["mu_in", "snr_model", "snr_mc", "snr_mc_sigma"]);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &mu) in grid.iter().enumerate() {
        let (v, e) = if mc(trials) {
            let p = lab.coherent(mu, lab.gaussian(), afc.clone(), Jitter::None);
            let r = lab.measure_snr(&p, &[tau], s(&i.to_string()), per(trials, grid.len()))?.remove(0);
            let w = 1.0 / (r.sigma * r.sigma).max(1e-300);
            num += w * mu * r.value;
            den += w * mu * mu;
            (Some(r.value), Some(r.sigma))
        } else {
            (None, None)
        };
        t.push(vec![Some(mu), Some(mu / mu1), v, e]);
    }
    f.note("mu1_model", mu1);
    if den > 0.0 {
        f.note("mu1_fit", den / num);
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_10b(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let grid = [0.1, 0.3, 1.0, 2.0, 5.0];
    let v0 = lab.cfg.anchors.v0_coherent;
    let phis = phase_grid(12);
    let mut f = FigureData::new("10b", "fringe visibility versus mean input photon number");
    f.note("beta", lab.cal.beta);
    let mut t = Table::new("", &["mu_in", "visibility_model", "visibility_mc", "visibility_mc_sigma"]);
    for (i, &mu) in grid.iter().enumerate() {
        let model = model_visibility_mu(v0, lab.cal.beta, lab.cal.mu1, mu)?;
        let (v, e) = if mc(trials) {
            let fr = lab.fringe(FringeSource::Coherent { mu }, 0.0, Jitter::Coherent, &phis, s(&i.to_string()), per(trials, grid.len() * phis.len()))?;
            (Some(fr.fit.visibility), Some(fr.fit.sigma))
        } else {
            (None, None)
        };
        t.push(vec![Some(mu), Some(model), v, e]);
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_11(lab: &Lab) -> Result<FigureData> {
    let dt = lab.cfg.photon.bin_separation;
    let fwhm_per_sigma = 2.0 * (2.0 * 2f64.ln()).sqrt();
    let mut f = FigureData::new("11", "bright-pulse visibility versus laser linewidth");
    let mut t = Table::new("", &["fwhm_khz", "visibility"]);
    for k in 0..=100 {
        let fwhm = k as f64 * 10e3;
        t.push(vec![Some(fwhm / 1e3), Some(visibility_from_linewidth(fwhm / fwhm_per_sigma, dt)?)]);
    }
    for (key, v0) in [("fwhm_khz_at_0.65", 0.65), ("fwhm_khz_at_0.75", 0.75)] {
        f.note(key, crate::stats::linewidth_from_visibility(v0, dt)?.fwhm / 1e3);
    }
    f.tables.push(t);
    Ok(f)
}

fn fig_12(lab: &Lab, trials: u64, s: impl Fn(&str) -> u64) -> Result<FigureData> {
    let p_e = 0.1;
    let taus = &lab.cal.storage_times;
    let mut f = FigureData::new("12", "storage efficiency and cross-correlation versus storage time");
    let mut t = Table::new(
        "",
        &["tau_us", "memory_efficiency", "total_model", "total_mc", "g2_model", "g2_mc", "g2_mc_sigma"],
    );
    for (i, (&tau, &eta)) in taus.iter().zip(&lab.cal.storage_efficiency).enumerate() {
        let total = lab.signal_per_herald(eta);
        let g2 = lab.model_g2(p_e, eta)?;
        let (tot_mc, g, e) = if mc(trials) {
            let n = per(trials, 2 * taus.len());
            let p = lab.heralded(p_e, lab.gaussian(), lab.single_afc(eta, tau), Jitter::None);
            let mut quiet = p.clone();
            quiet.residual_noise.mean_noise_per_window = 0.0;
            quiet.pump_noise.mean_noise_per_window = 0.0;
            quiet.d2.dark_rate = 0.0;
            let run = lab.run(&quiet, s(&format!("total-{i}")), n)?;
            let tot = run.coincidences(&lab.window_at(tau)) as f64 / run.herald_count.max(1) as f64;
            let r = lab.measure_g2(p_e, eta, tau, s(&format!("g2-{i}")), n)?;
            (Some(tot), Some(r.value), Some(r.sigma))
        } else {
            (None, None, None)
        };
        t.push(vec![Some(tau * 1e6), Some(eta), Some(total), tot_mc, Some(g2), g, e]);
    }
    f.tables.push(t);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_search_recovers_cosine() {
        let d: Vec<f64> = (-30..=30).map(|k| k as f64 * 0.1e6).collect();
        let single: Vec<f64> = d.iter().map(|x| (-(x / 1.5e6).powi(2)).exp()).collect();
        let dual: Vec<f64> = d.iter().zip(&single).map(|(x, s)| s * (0.5 + 0.4 * (2.0 * PI * x / 2.1e6 + 0.3).cos())).collect();
        let p = oscillation_period(&d, &single, &dual, 1e6, 3e6);
        assert!((p - 2.1e6).abs() < 2e3, "{p}");
    }

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let mut f = FigureData::new("x", "t");
        f.note("k", 1.5);
        let mut t = Table::new("", &["a", "b"]);
        t.push(vec![Some(1.0), None]);
        f.tables.push(t);
        assert_eq!(f.csv(0), "# figure x: t\n# k = 1.5\na,b\n1,\n");
        assert_eq!(f.file_name(0), "figx.csv");
    }
}
