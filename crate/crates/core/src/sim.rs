//! Seeded Monte Carlo of the full link: pair source, write detector,
//! conversion chain, comb memory, crystal and read detector.
//!
//! Trial `i` of a run with seed `s` draws only from stream `i` of `s`, so
//! records do not depend on the number of worker threads.
//!
//! Timestamps are integer nanoseconds. D1 times are relative to the write
//! pulse; D2 times are relative to the arrival of the read photon at the
//! memory, so an echo of storage time τ appears at τ.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qfc::{poisson_draw, GateWindow, NoiseSpec};
use crate::rng::{derive_seed, stream_rng, TrialRng};
use crate::source::{herald_probability, heralded_number_distribution, PairSourceParams, TimeBinQubitSpec, FWHM_PER_SIGMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub name: String,
    pub efficiency: f64,
    pub dark_rate: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid(format!("{} efficiency {} outside [0, 1]", self.name, self.efficiency)));
        }
        if !(self.dark_rate >= 0.0) {
            return Err(invalid(format!("{} dark rate must be ≥ 0", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub cryostat_period: f64,
    pub prep_time: f64,
    pub science_window: f64,
    pub mot_time: f64,
    pub trial_block: f64,
    pub captures_per_cycle: u32,
    pub trial_period: f64,
    pub coincidence_window: f64,
    pub tau_a: f64,
    pub tau_b: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            cryostat_period: 1.0,
            prep_time: 0.2,
            science_window: 0.29,
            mot_time: 17e-3,
            trial_block: 1e-3,
            captures_per_cycle: 15,
            trial_period: 13e-6,
            coincidence_window: 400e-9,
            tau_a: 1.6e-6,
            tau_b: 2.5e-6,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let d = [
            self.cryostat_period,
            self.prep_time,
            self.science_window,
            self.mot_time,
            self.trial_block,
            self.trial_period,
            self.coincidence_window,
            self.tau_a,
            self.tau_b,
        ];
        if d.iter().any(|x| !(*x > 0.0)) || self.captures_per_cycle == 0 {
            return Err(invalid("sequence durations must be positive"));
        }
        if self.captures_per_cycle as f64 * (self.trial_block + self.mot_time) > self.science_window {
            return Err(invalid("trial blocks exceed the science window"));
        }
        Ok(())
    }

    /// Write attempts in one trial block, ⌊block/period⌋.
    pub fn attempts_per_block(&self) -> u64 {
        (self.trial_block / self.trial_period + 1e-9).floor() as u64
    }

    pub fn trials_per_second(&self) -> f64 {
        self.captures_per_cycle as f64 * self.attempts_per_block() as f64 / self.cryostat_period
    }
}

/// One storage channel of the memory: an echo after `delay` with
/// efficiency `efficiency` and analyzer phase 2π(detuning − ε)/period for a
/// photon offset ε from the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombEcho {
    pub efficiency: f64,
    pub delay: f64,
    pub period: f64,
    pub detuning: f64,
}

impl CombEcho {
    pub fn phase(&self, photon_offset: f64) -> f64 {
        2.0 * PI * (self.detuning - photon_offset) / self.period
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfcAction {
    pub echoes: Vec<CombEcho>,
    /// Fraction transmitted without storage (arrives at t ≈ 0).
    pub transmitted: f64,
}

impl AfcAction {
    pub fn single(efficiency: f64, delay: f64) -> Self {
        Self { echoes: vec![CombEcho { efficiency, delay, period: 1.0 / delay, detuning: 0.0 }], transmitted: 0.0 }
    }

    pub fn longest_delay(&self) -> f64 {
        self.echoes.iter().map(|e| e.delay).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhotonShape {
    Gaussian { fwhm: f64 },
    TimeBin(TimeBinQubitSpec),
}

impl PhotonShape {
    fn bins(&self) -> (Vec<(f64, Complex64)>, f64) {
        match *self {
            PhotonShape::Gaussian { fwhm } => (vec![(0.0, Complex64::new(1.0, 0.0))], fwhm),
            PhotonShape::TimeBin(q) => (
                vec![(0.0, Complex64::new(q.c1, 0.0)), (q.separation, Complex64::from_polar(q.c2, q.phi))],
                q.bin_fwhm,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    Pairs(PairSourceParams),
    /// Weak coherent pulses of mean photon number `mu` at the chain input;
    /// every trial carries a trigger in place of a herald.
    Coherent { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// Read pulse only after a D1 click.
    Heralded,
    /// Read pulse in every trial.
    EveryTrial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    Unconditional,
    /// Every simulated trial is conditioned on a D1 click.
    HeraldConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub source: SourceKind,
    pub readout: Readout,
    pub sampling: Sampling,
    pub chain_transmission: f64,
    pub afc: AfcAction,
    pub photon: PhotonShape,
    pub crystal_transmission: f64,
    pub d1: DetectorSpec,
    pub d2: DetectorSpec,
    /// Width of the D1 detection window.
    pub d1_window: f64,
    /// Ungated background at the D2 plane.
    pub residual_noise: NoiseSpec,
    /// Pump-induced background, silent inside `gate`.
    pub pump_noise: NoiseSpec,
    pub gate: GateWindow,
    /// D2 events outside this span are not recorded.
    pub record_window: GateWindow,
    /// Standard deviation of the per-trial photon frequency offset.
    pub jitter_sigma: f64,
    pub send_read_photon: bool,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.d1.validate()?;
        self.d2.validate()?;
        for (n, v) in [("chain transmission", self.chain_transmission), ("crystal transmission", self.crystal_transmission), ("transmitted fraction", self.afc.transmitted)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{n} {v} outside [0, 1]")));
            }
        }
        if let SourceKind::Pairs(p) = &self.source {
            p.validate()?;
        }
        if let SourceKind::Coherent { mu } = self.source {
            if !(mu >= 0.0) {
                return Err(invalid("coherent mean photon number must be ≥ 0"));
            }
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(invalid("jitter sigma must be ≥ 0"));
        }
        let (bins, _) = self.photon.bins();
        let worst: f64 = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
            .iter()
            .map(|&e| slot_distribution(&self.afc, &bins, e * 1e6).iter().map(|s| s.1).sum::<f64>())
            .fold(0.0, f64::max);
        if worst > 1.0 + 1e-9 {
            return Err(invalid(format!("memory outcome probabilities sum to {worst} > 1")));
        }
        Ok(())
    }

    /// Probability that a D1 detection window holds a dark count.
    pub fn d1_dark_probability(&self) -> f64 {
        1.0 - (-self.d1.dark_rate * self.d1_window).exp()
    }

    /// Probability of a trigger (herald or dark click) per trial.
    pub fn herald_probability(&self) -> Result<f64> {
        match &self.source {
            SourceKind::Coherent { .. } => Ok(1.0),
            SourceKind::Pairs(p) => {
                let real = herald_probability(p)?;
                Ok(1.0 - (1.0 - real) * (1.0 - self.d1_dark_probability()))
            }
        }
    }

    /// Mean D2 detections per read photon reaching the chain input, over
    /// all memory output channels.
    pub fn detection_per_photon(&self) -> f64 {
        let (bins, _) = self.photon.bins();
        let slots: f64 = slot_distribution(&self.afc, &bins, 0.0).iter().filter(|s| s.0 > 0.0).map(|s| s.1).sum();
        self.chain_transmission * slots * self.crystal_transmission * self.d2.efficiency
    }
}

/// Coherent superposition of every (bin, echo) path grouped by arrival
/// time; returns (arrival offset, probability) per slot, the transmitted
/// leak included at the bin offsets.
fn slot_distribution(afc: &AfcAction, bins: &[(f64, Complex64)], photon_offset: f64) -> Vec<(f64, f64)> {
    let mut slots: Vec<(f64, Complex64)> = Vec::new();
    for &(offset, amp) in bins {
        for e in &afc.echoes {
            let t = offset + e.delay;
            let a = amp * Complex64::from_polar(e.efficiency.sqrt(), e.phase(photon_offset));
            match slots.iter_mut().find(|s| (s.0 - t).abs() < 1e-9) {
                Some(s) => s.1 += a,
                None => slots.push((t, a)),
            }
        }
    }
    let mut out: Vec<(f64, f64)> = slots.into_iter().map(|(t, a)| (t, a.norm_sqr())).collect();
    if afc.transmitted > 0.0 {
        for &(offset, amp) in bins {
            out.push((offset, afc.transmitted * amp.norm_sqr()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub d1_ns: Option<i64>,
    pub d2_ns: Vec<i64>,
}

impl TrialRecord {
    /// Random stream that produced this record.
    pub fn rng_stream_id(&self) -> u64 {
        self.trial_index
    }

    pub fn d2_in(&self, window: &GateWindow) -> bool {
        self.d2_ns.iter().any(|&t| window.contains(t as f64 * 1e-9))
    }
}

/// Trials without any D1 or D2 event (unconditional sampling), or without
/// a D2 event (herald-conditioned sampling), are counted but not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub n_trials: u64,
    pub sampling: Sampling,
    pub herald_count: u64,
    /// Trials with at least one read photon leaving the crystal.
    pub after_crystal: u64,
    /// Per-trial trigger probability of the configuration.
    pub herald_probability: f64,
    pub record_window: GateWindow,
    pub records: Vec<TrialRecord>,
}

impl RunResult {
    /// Laboratory time represented by the run.
    pub fn lab_time(&self, seq: &SequenceConfig) -> f64 {
        let trials = match self.sampling {
            Sampling::Unconditional => self.n_trials as f64,
            Sampling::HeraldConditioned => self.n_trials as f64 / self.herald_probability,
        };
        trials / seq.trials_per_second()
    }

    /// Heralded trials with a D2 event in `window`.
    pub fn coincidences(&self, window: &GateWindow) -> u64 {
        self.records.iter().filter(|r| r.d1_ns.is_some() && r.d2_in(window)).count() as u64
    }

    pub fn d2_click_count(&self) -> u64 {
        self.records.iter().map(|r| r.d2_ns.len() as u64).sum()
    }

    /// Columnar text: trial_index, d1_time_ns ('-' if none), d2 times
    /// separated by ';'.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial_index,d1_time_ns,d2_times_ns")?;
        for r in &self.records {
            let d1 = r.d1_ns.map_or("-".to_string(), |t| t.to_string());
            let d2: Vec<String> = r.d2_ns.iter().map(|t| t.to_string()).collect();
            writeln!(w, "{},{},{}", r.trial_index, d1, d2.join(";"))?;
        }
        Ok(())
    }
}

struct Prepared {
    heralded_n: Option<Vec<f64>>,
    geometric: Option<Geometric>,
    p_e: f64,
    eta_w: f64,
    eta_exc: f64,
    p_dark1: f64,
    bins: Vec<(f64, Complex64)>,
    sigma_t: f64,
    echo_slots_static: Option<Vec<(f64, f64)>>,
    ungated_mean: f64,
    pump_segments: Vec<(f64, f64)>,
    pump_mean: f64,
    jitter: Option<Normal<f64>>,
}

fn prepare(p: &PipelineParams) -> Result<Prepared> {
    let (bins, fwhm) = p.photon.bins();
    let dual_phase = p.afc.echoes.len() > 1 || bins.len() > 1;
    let rec = p.record_window;
    let ungated_rate = p.residual_noise.rate() + p.d2.dark_rate;
    let pump_rate = p.pump_noise.rate();
    let mut pump_segments = vec![];
    if p.pump_noise.gated {
        if p.gate.t_start > rec.t_start {
            pump_segments.push((rec.t_start, p.gate.t_start.min(rec.t_stop)));
        }
        if p.gate.t_stop < rec.t_stop {
            pump_segments.push((p.gate.t_stop.max(rec.t_start), rec.t_stop));
        }
    } else {
        pump_segments.push((rec.t_start, rec.t_stop));
    }
    let pump_width: f64 = pump_segments.iter().map(|s| (s.1 - s.0).max(0.0)).sum();
    let (heralded_n, geometric, p_e, eta_w, eta_exc) = match &p.source {
        SourceKind::Coherent { .. } => (None, None, 0.0, 1.0, 1.0),
        SourceKind::Pairs(s) => {
            let h = if p.sampling == Sampling::HeraldConditioned {
                Some(heralded_number_distribution(s, p.d1_dark_probability())?)
            } else {
                None
            };
            let g = Geometric::new(1.0 / (1.0 + s.p_e)).map_err(|e| invalid(e.to_string()))?;
            (h, Some(g), s.p_e, s.eta_write_path, s.excitation_retrieval())
        }
    };
    Ok(Prepared {
        heralded_n,
        geometric,
        p_e,
        eta_w,
        eta_exc,
        p_dark1: p.d1_dark_probability(),
        echo_slots_static: if dual_phase && p.jitter_sigma > 0.0 { None } else { Some(slot_distribution(&p.afc, &bins, 0.0)) },
        bins,
        sigma_t: fwhm / FWHM_PER_SIGMA,
        ungated_mean: ungated_rate * rec.width(),
        pump_segments,
        pump_mean: pump_rate * pump_width,
        jitter: if p.jitter_sigma > 0.0 { Some(Normal::new(0.0, p.jitter_sigma).map_err(|e| invalid(e.to_string()))?) } else { None },
    })
}

fn binomial(n: u64, p: f64, rng: &mut TrialRng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|b| b.sample(rng)).unwrap_or(0)
}

fn sample_index(cdf_probs: &[f64], rng: &mut TrialRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in cdf_probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    cdf_probs.len() - 1
}

fn to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

struct TrialOutcome {
    record: TrialRecord,
    heralded: bool,
    after_crystal: bool,
}

fn simulate_trial(p: &PipelineParams, pre: &Prepared, seed: u64, index: u64) -> TrialOutcome {
    let mut rng = stream_rng(seed, index);
    let rng = &mut rng;
    // write side
    let (d1, read_photons) = match p.source {
        SourceKind::Coherent { mu } => (Some(0), poisson_draw(mu, rng)),
        SourceKind::Pairs(_) => {
            let (n, d1) = match &pre.heralded_n {
                Some(table) => {
                    let n = sample_index(table, rng) as u64;
                    let p_real = 1.0 - (1.0 - pre.eta_w).powi(n as i32);
                    let p_click = 1.0 - (1.0 - p_real) * (1.0 - pre.p_dark1);
                    let real = rng.random::<f64>() < p_real / p_click;
                    let t = if real { 0 } else { to_ns(rng.random::<f64>() * p.d1_window) };
                    (n, Some(t))
                }
                None => {
                    let n = if pre.p_e > 0.0 { pre.geometric.as_ref().map_or(0, |g| g.sample(rng)) } else { 0 };
                    let real = binomial(n, pre.eta_w, rng) > 0;
                    let dark = rng.random::<f64>() < pre.p_dark1;
                    let t = if real { Some(0) } else if dark { Some(to_ns(rng.random::<f64>() * p.d1_window)) } else { None };
                    (n, t)
                }
            };
            let read = d1.is_some() || p.readout == Readout::EveryTrial;
            (d1, if read { binomial(n, pre.eta_exc, rng) } else { 0 })
        }
    };
    let offset = pre.jitter.as_ref().map_or(0.0, |j| j.sample(rng));
    let mut d2 = Vec::new();
    let mut after_crystal = false;
    if p.send_read_photon && read_photons > 0 {
        let dynamic;
        let slots = match &pre.echo_slots_static {
            Some(s) => s,
            None => {
                dynamic = slot_distribution(&p.afc, &pre.bins, offset);
                &dynamic
            }
        };
        for _ in 0..read_photons {
            if rng.random::<f64>() >= p.chain_transmission {
                continue;
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut arrival = None;
            for &(t, prob) in slots.iter() {
                acc += prob;
                if u < acc {
                    arrival = Some(t);
                    break;
                }
            }
            let Some(t_slot) = arrival else { continue };
            if rng.random::<f64>() >= p.crystal_transmission {
                continue;
            }
            after_crystal = true;
            if rng.random::<f64>() >= p.d2.efficiency {
                continue;
            }
            let t = t_slot + pre.sigma_t * rng.sample::<f64, _>(rand_distr::StandardNormal);
            if p.record_window.contains(t) {
                d2.push(to_ns(t));
            }
        }
    }
    // background
    let rec = p.record_window;
    for _ in 0..poisson_draw(pre.ungated_mean, rng) {
        d2.push(to_ns(rec.t_start + rng.random::<f64>() * rec.width()));
    }
    if pre.pump_mean > 0.0 {
        let total: f64 = pre.pump_segments.iter().map(|s| s.1 - s.0).sum();
        for _ in 0..poisson_draw(pre.pump_mean, rng) {
            let mut x = rng.random::<f64>() * total;
            for &(a, b) in &pre.pump_segments {
                if x < b - a {
                    d2.push(to_ns(a + x));
                    break;
                }
                x -= b - a;
            }
        }
    }
    d2.sort_unstable();
    TrialOutcome { heralded: d1.is_some(), after_crystal, record: TrialRecord { trial_index: index, d1_ns: d1, d2_ns: d2 } }
}

const CHUNK: u64 = 1 << 15;

/// Runs `n` trials; `workers = None` uses the global thread pool.
pub fn run_trials(seq: &SequenceConfig, p: &PipelineParams, seed: u64, n: u64, workers: Option<usize>) -> Result<RunResult> {
    if n == 0 {
        return Err(invalid("need at least one trial"));
    }
    seq.validate()?;
    p.validate()?;
    let p_trigger = p.herald_probability()?;
    if p.sampling == Sampling::HeraldConditioned && p_trigger == 0.0 {
        return Err(Error::NoHeralds(0));
    }
    let pre = prepare(p)?;
    let keep_all_heralds = p.sampling == Sampling::Unconditional;
    let work = || {
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut recs = Vec::new();
                let (mut h, mut ac) = (0u64, 0u64);
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let o = simulate_trial(p, &pre, seed, i);
                    h += o.heralded as u64;
                    ac += o.after_crystal as u64;
                    if !o.record.d2_ns.is_empty() || (keep_all_heralds && o.heralded) {
                        recs.push(o.record);
                    }
                }
                (recs, h, ac)
            })
            .collect::<Vec<_>>()
    };
    let parts = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut res = RunResult {
        seed,
        n_trials: n,
        sampling: p.sampling,
        herald_count: 0,
        after_crystal: 0,
        herald_probability: p_trigger,
        record_window: p.record_window,
        records: Vec::new(),
    };
    for (recs, h, ac) in parts {
        res.records.extend(recs);
        res.herald_count += h;
        res.after_crystal += ac;
    }
    if res.herald_count == 0 {
        return Err(Error::NoHeralds(n));
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub acquisition_time: f64,
}

impl CoincidenceHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts in bins whose centres fall inside `window`.
    pub fn counts_in(&self, window: &GateWindow) -> u64 {
        self.centers().iter().zip(&self.counts).filter(|(c, _)| window.contains(**c)).map(|(_, n)| n).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_start_s,t_stop_s,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.9e},{:.9e},{}", self.bin_edges[i], self.bin_edges[i + 1], c)?;
        }
        Ok(())
    }
}

/// Histogram of D2 times in heralded trials over the record window.
pub fn coincidence_histogram(run: &RunResult, seq: &SequenceConfig, bin_width: f64) -> Result<CoincidenceHistogram> {
    if !(bin_width > 0.0) {
        return Err(invalid("bin width must be positive"));
    }
    let w = run.record_window;
    let n_bins = (w.width() / bin_width - 1e-9).ceil() as usize;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| w.t_start + i as f64 * bin_width).collect();
    let mut counts = vec![0u64; n_bins];
    let start_ns = to_ns(w.t_start);
    let width_ns = bin_width * 1e9;
    for r in run.records.iter().filter(|r| r.d1_ns.is_some()) {
        for &t in &r.d2_ns {
            let k = (((t - start_ns) as f64) / width_ns).floor();
            if k >= 0.0 && (k as usize) < n_bins {
                counts[k as usize] += 1;
            }
        }
    }
    Ok(CoincidenceHistogram { bin_edges, counts, acquisition_time: run.lab_time(seq) })
}

/// Heralded coincidences in `window` per laboratory hour.
pub fn lab_rate(run: &RunResult, seq: &SequenceConfig, window: &GateWindow) -> f64 {
    run.coincidences(window) as f64 / run.lab_time(seq) * 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phi: f64,
    pub counts: u64,
    pub heralds: u64,
}

/// Overlap-window coincidences versus the qubit phase φ. The pipeline's
/// photon must be a time-bin qubit; its phase is replaced per point.
pub fn fringe_scan(
    phis: &[f64],
    seq: &SequenceConfig,
    pipeline: &PipelineParams,
    window: &GateWindow,
    seed: u64,
    n_per_point: u64,
    workers: Option<usize>,
) -> Result<Vec<FringePoint>> {
    let PhotonShape::TimeBin(q) = pipeline.photon else {
        return Err(invalid("fringe scan needs a time-bin photon"));
    };
    phis.iter()
        .enumerate()
        .map(|(i, &phi)| {
            let mut p = pipeline.clone();
            p.photon = PhotonShape::TimeBin(TimeBinQubitSpec { phi, ..q });
            let run = run_trials(seq, &p, derive_seed(seed, &format!("fringe-{i}")), n_per_point, workers)?;
            Ok(FringePoint { phi, counts: run.coincidences(window), heralds: run.herald_count })
        })
        .collect()
}

/// Split-detector measurement of the heralded read mode at the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbtRecord {
    pub trial_index: u64,
    pub herald: bool,
    pub a: bool,
    pub b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtRun {
    pub n_trials: u64,
    pub sampling: Sampling,
    /// Trials with a herald and at least one read click.
    pub records: Vec<HbtRecord>,
    pub herald_count: u64,
}

/// Herald followed by a 50/50 split of the read photons onto two binary
/// detectors of efficiency `detector_efficiency`; `background` is the mean
/// Poissonian read-mode background per trial split evenly between them.
pub fn run_hbt(
    params: &PairSourceParams,
    detector_efficiency: f64,
    background: f64,
    sampling: Sampling,
    seed: u64,
    n: u64,
    workers: Option<usize>,
) -> Result<HbtRun> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("need at least one trial"));
    }
    let table = heralded_number_distribution(params, 0.0)?;
    let geo = Geometric::new(1.0 / (1.0 + params.p_e)).map_err(|e| invalid(e.to_string()))?;
    let e = params.excitation_retrieval() * detector_efficiency;
    let trial = |i: u64| -> Option<HbtRecord> {
        let mut rng = stream_rng(seed, i);
        let rng = &mut rng;
        let (n, herald) = match sampling {
            Sampling::HeraldConditioned => (sample_index(&table, rng) as u64, true),
            Sampling::Unconditional => {
                let n = if params.p_e > 0.0 { geo.sample(rng) } else { 0 };
                (n, binomial(n, params.eta_write_path, rng) > 0)
            }
        };
        if !herald {
            return None;
        }
        let k = binomial(n, e, rng);
        let ka = binomial(k, 0.5, rng);
        let a = ka > 0 || poisson_draw(background / 2.0, rng) > 0;
        let b = k - ka > 0 || poisson_draw(background / 2.0, rng) > 0;
        Some(HbtRecord { trial_index: i, herald, a, b })
    };
    let work = || {
        (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut recs = Vec::new();
                let mut h = 0u64;
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    if let Some(r) = trial(i) {
                        h += 1;
                        if r.a || r.b {
                            recs.push(r);
                        }
                    }
                }
                (recs, h)
            })
            .collect::<Vec<_>>()
    };
    let parts = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build().map_err(|e| invalid(e.to_string()))?.install(work),
        None => work(),
    };
    let mut out = HbtRun { n_trials: n, sampling, records: vec![], herald_count: 0 };
    for (r, h) in parts {
        out.records.extend(r);
        out.herald_count += h;
    }
    if out.herald_count == 0 {
        return Err(Error::NoHeralds(n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(q: f64) -> NoiseSpec {
        NoiseSpec { mean_noise_per_window: q, reference_window: 400e-9, gated: false }
    }

    fn pipeline() -> PipelineParams {
        PipelineParams {
            source: SourceKind::Pairs(PairSourceParams { p_e: 1e-6, eta_ret: 1.0, eta_write_path: 1.0, n_max: 30 }),
            readout: Readout::Heralded,
            sampling: Sampling::HeraldConditioned,
            chain_transmission: 1.0,
            afc: AfcAction::single(1.0, 2.5e-6),
            photon: PhotonShape::Gaussian { fwhm: 200e-9 },
            crystal_transmission: 1.0,
            d1: DetectorSpec { name: "D1".into(), efficiency: 1.0, dark_rate: 0.0 },
            d2: DetectorSpec { name: "D2".into(), efficiency: 1.0, dark_rate: 0.0 },
            d1_window: 100e-9,
            residual_noise: quiet(0.0),
            pump_noise: NoiseSpec { gated: true, ..quiet(0.0) },
            gate: GateWindow::new(1.2e-6, 6.2e-6).unwrap(),
            record_window: GateWindow::new(-1e-6, 8e-6).unwrap(),
            jitter_sigma: 0.0,
            send_read_photon: true,
        }
    }

    #[test]
    fn duty_cycle() {
        let s = SequenceConfig::default();
        assert_eq!(s.attempts_per_block(), 76);
        assert!((s.trials_per_second() - 1140.0).abs() < 1e-9);
    }

    #[test]
    fn lossless_limit() {
        let run = run_trials(&SequenceConfig::default(), &pipeline(), 1, 2000, None).unwrap();
        assert_eq!(run.herald_count, 2000);
        assert_eq!(run.records.len(), 2000);
        for r in &run.records {
            assert_eq!(r.d1_ns, Some(0));
            assert_eq!(r.d2_ns.len(), 1);
            assert!((r.d2_ns[0] - 2500).abs() < 600);
        }
    }

    #[test]
    fn no_heralds_is_an_error() {
        let mut p = pipeline();
        p.source = SourceKind::Pairs(PairSourceParams { p_e: 0.0, ..PairSourceParams::default() });
        p.sampling = Sampling::Unconditional;
        assert!(matches!(run_trials(&SequenceConfig::default(), &p, 1, 100, None), Err(Error::NoHeralds(100))));
        p.sampling = Sampling::HeraldConditioned;
        assert!(run_trials(&SequenceConfig::default(), &p, 1, 100, None).is_err());
    }

    #[test]
    fn timebin_single_comb_gives_two_echoes() {
        let mut p = pipeline();
        p.photon = PhotonShape::TimeBin(TimeBinQubitSpec::new(0.5f64.sqrt(), 0.5f64.sqrt(), 0.0).unwrap());
        let seq = SequenceConfig::default();
        let run = run_trials(&seq, &p, 2, 4000, None).unwrap();
        let h = coincidence_histogram(&run, &seq, 100e-9).unwrap();
        let early = h.counts_in(&GateWindow::new(2.3e-6, 2.7e-6).unwrap());
        let late = h.counts_in(&GateWindow::new(2.8e-6, 3.2e-6).unwrap());
        assert!(early > 1700 && late > 1700);
        assert_eq!(h.total(), run.d2_click_count());
    }

    #[test]
    fn empty_histogram_without_heralds() {
        let seq = SequenceConfig::default();
        let run = RunResult {
            seed: 0,
            n_trials: 10,
            sampling: Sampling::Unconditional,
            herald_count: 0,
            after_crystal: 0,
            herald_probability: 0.1,
            record_window: GateWindow::new(0.0, 5e-6).unwrap(),
            records: vec![TrialRecord { trial_index: 3, d1_ns: None, d2_ns: vec![100, 2500] }],
        };
        let h = coincidence_histogram(&run, &seq, 100e-9).unwrap();
        assert_eq!(h.total(), 0);
        assert_eq!(h.counts.len(), 50);
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let mut p = pipeline();
        p.source = SourceKind::Pairs(PairSourceParams { p_e: 0.3, eta_ret: 0.3, eta_write_path: 0.4, n_max: 40 });
        p.chain_transmission = 0.5;
        p.residual_noise = quiet(0.01);
        p.jitter_sigma = 3e5;
        let seq = SequenceConfig::default();
        let a = run_trials(&seq, &p, 9, 70_000, Some(1)).unwrap();
        let b = run_trials(&seq, &p, 9, 70_000, Some(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_chain_gives_zero_rate() {
        let mut p = pipeline();
        p.chain_transmission = 0.0;
        let seq = SequenceConfig::default();
        let run = run_trials(&seq, &p, 4, 1000, None).unwrap();
        assert_eq!(lab_rate(&run, &seq, &GateWindow::new(2.3e-6, 2.7e-6).unwrap()), 0.0);
    }

    #[test]
    fn noise_only_trace() {
        let mut p = pipeline();
        p.send_read_photon = false;
        p.d2.dark_rate = 15.0;
        let run = run_trials(&SequenceConfig::default(), &p, 5, 10_000, None).unwrap();
        assert!(run.records.len() < 10);
    }

    #[test]
    fn record_file_format() {
        let run = run_trials(&SequenceConfig::default(), &pipeline(), 1, 3, None).unwrap();
        let mut buf = Vec::new();
        run.write_records(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("trial_index,d1_time_ns,d2_times_ns\n0,0,"));
        assert_eq!(text.lines().count(), 4);
    }
}
