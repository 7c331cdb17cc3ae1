//! Calibrated experiment builders: assembles pipelines from a configuration
//! and calibration, and runs the standard measurements on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calibration::{detection_per_input_photon, Calibration};
use crate::config::Config;
use crate::error::{invalid, Result};
use crate::qfc::{GateWindow, NoiseSpec};
use crate::rng::derive_seed;
use crate::sim::{
    fringe_scan, run_hbt, run_trials, AfcAction, CombEcho, FringePoint, PhotonShape, PipelineParams, Readout, RunResult, Sampling,
    SourceKind,
};
use crate::source::{herald_probability, heralded_autocorrelation, PairSourceParams, TimeBinQubitSpec};
use crate::stats::{g2_cross_split, heralded_g2, model_g2_heralded, snr_from_run, visibility_fit, CorrelationResult, SnrEstimate, VisibilityFit};
use crate::tomo::{AnalyzerEfficiencies, CountsRecord, MeasurementSetting, TomographyDataset};

/// Which calibrated jitter level a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jitter {
    None,
    Coherent,
    Single,
}

#[derive(Debug, Clone)]
pub struct Lab {
    pub cfg: Config,
    pub cal: Calibration,
    pub workers: Option<usize>,
}

impl Lab {
    pub fn new(cfg: Config, cal: Calibration) -> Self {
        Self { cfg, cal, workers: None }
    }

    pub fn pairs(&self, p_e: f64) -> PairSourceParams {
        PairSourceParams { p_e, eta_ret: self.cfg.source.eta_ret, eta_write_path: self.cal.eta_write_path, n_max: self.cfg.source.n_max }
    }

    /// Coincidence window centred on `t`.
    pub fn window_at(&self, t: f64) -> GateWindow {
        let hw = self.cfg.noise.window / 2.0;
        GateWindow { t_start: t - hw, t_stop: t + hw }
    }

    /// Background windows inside the gate after every echo of a memory read at `tau_long`.
    pub fn noise_windows(&self, tau_long: f64) -> Vec<GateWindow> {
        let w = self.cfg.noise.window;
        let start = tau_long + self.cfg.photon.bin_separation + 0.6e-6;
        let stop = tau_long - self.cfg.noise.gate_lead + self.cfg.noise.gate_length - 0.2e-6;
        let n = ((stop - start) / w).floor().max(1.0) as usize;
        (0..n).map(|i| GateWindow { t_start: start + i as f64 * w, t_stop: start + (i + 1) as f64 * w }).collect()
    }

    pub fn single_afc(&self, efficiency: f64, tau: f64) -> AfcAction {
        AfcAction::single(efficiency, tau)
    }

    pub fn calibrated_afc(&self) -> AfcAction {
        self.single_afc(self.cal.eta_afc, 1.0 / self.cfg.memory.single_period)
    }

    /// Dual comb with the longer-storage family shifted by `detuning`.
    pub fn dual_afc(&self, detuning: f64) -> AfcAction {
        let [p_short, p_long] = self.cfg.memory.dual_periods;
        AfcAction {
            echoes: vec![
                CombEcho { efficiency: self.cal.eta_dual[0], delay: 1.0 / p_short, period: p_short, detuning: 0.0 },
                CombEcho { efficiency: self.cal.eta_dual[1], delay: 1.0 / p_long, period: p_long, detuning },
            ],
            transmitted: 0.0,
        }
    }

    /// Detuning of the long-storage family giving analyzer phase θ.
    pub fn detuning_for_phase(&self, theta: f64) -> f64 {
        theta / (2.0 * PI) * self.cfg.memory.dual_periods[1]
    }

    pub fn analyzer(&self) -> AnalyzerEfficiencies {
        AnalyzerEfficiencies { single: self.cal.eta_afc, short: self.cal.eta_dual[0], long: self.cal.eta_dual[1] }
    }

    pub fn gaussian(&self) -> PhotonShape {
        PhotonShape::Gaussian { fwhm: self.cfg.photon.fwhm }
    }

    pub fn time_bin(&self, c1: f64, c2: f64, phi: f64) -> Result<PhotonShape> {
        let q = TimeBinQubitSpec { separation: self.cfg.photon.bin_separation, bin_fwhm: self.cfg.photon.fwhm, ..TimeBinQubitSpec::new(c1, c2, phi)? };
        q.validate()?;
        Ok(PhotonShape::TimeBin(q))
    }

    pub fn jitter_sigma(&self, j: Jitter) -> f64 {
        self.cfg.jitter.scale
            * match j {
                Jitter::None => 0.0,
                Jitter::Coherent => self.cal.jitter_sigma_coherent,
                Jitter::Single => self.cal.jitter_sigma_single,
            }
    }

    pub fn pipeline(&self, source: SourceKind, sampling: Sampling, photon: PhotonShape, afc: AfcAction, jitter: Jitter) -> PipelineParams {
        let n = &self.cfg.noise;
        let tau = afc.longest_delay();
        let mut d2 = self.cfg.detectors.d2.clone();
        d2.dark_rate *= n.scale;
        let spec = |q: f64, gated: bool| NoiseSpec { mean_noise_per_window: q * n.scale, reference_window: n.window, gated };
        let gate_start = tau - n.gate_lead;
        PipelineParams {
            source,
            readout: Readout::Heralded,
            sampling,
            chain_transmission: self.cfg.chain_transmission(),
            afc,
            photon,
            crystal_transmission: self.cfg.memory.crystal_transmission,
            d1: self.cfg.detectors.d1.clone(),
            d2,
            d1_window: self.cfg.detectors.d1_window,
            residual_noise: spec(self.cal.residual_per_window, false),
            pump_noise: spec(n.pump_per_window, true),
            gate: GateWindow { t_start: gate_start, t_stop: gate_start + n.gate_length },
            record_window: GateWindow { t_start: n.record_start, t_stop: tau + n.record_after_echo },
            jitter_sigma: self.jitter_sigma(jitter),
            send_read_photon: true,
        }
    }

    /// Herald-conditioned pair source.
    pub fn heralded(&self, p_e: f64, photon: PhotonShape, afc: AfcAction, jitter: Jitter) -> PipelineParams {
        self.pipeline(SourceKind::Pairs(self.pairs(p_e)), Sampling::HeraldConditioned, photon, afc, jitter)
    }

    pub fn coherent(&self, mu: f64, photon: PhotonShape, afc: AfcAction, jitter: Jitter) -> PipelineParams {
        self.pipeline(SourceKind::Coherent { mu }, Sampling::Unconditional, photon, afc, jitter)
    }

    pub fn run(&self, p: &PipelineParams, seed: u64, n: u64) -> Result<RunResult> {
        run_trials(&self.cfg.sequence, p, seed, n, self.workers)
    }

    /// Expected D2 signal per herald in the echo window for memory efficiency `eta`.
    pub fn signal_per_herald(&self, eta: f64) -> f64 {
        self.cfg.source.eta_ret * detection_per_input_photon(&self.cfg, eta) * self.cal.window_capture
    }

    pub fn noise_per_window(&self) -> f64 {
        self.cal.noise_per_window * self.cfg.noise.scale
    }

    /// Closed-form heralded g2 for memory efficiency `eta`.
    pub fn model_g2(&self, p_e: f64, eta: f64) -> Result<f64> {
        model_g2_heralded(herald_probability(&self.pairs(p_e))?, self.signal_per_herald(eta), self.noise_per_window())
    }

    /// g2 from a herald-conditioned run and an unconditional normalization
    /// run sharing `trials` in the variance-optimal ratio.
    pub fn measure_g2(&self, p_e: f64, eta: f64, tau: f64, seed: u64, trials: u64) -> Result<CorrelationResult> {
        let afc = self.single_afc(eta, tau);
        let heralded = self.heralded(p_e, self.gaussian(), afc.clone(), Jitter::None);
        let mut uncond = heralded.clone();
        uncond.sampling = Sampling::Unconditional;
        let p_w = herald_probability(&self.pairs(p_e))?;
        let (c, n) = (self.signal_per_herald(eta), self.noise_per_window());
        let ratio = ((p_w * c + n) / (c + n)).sqrt();
        let n_h = ((trials as f64 * ratio / (1.0 + ratio)).round() as u64).max(1);
        let n_u = trials.saturating_sub(n_h).max(1);
        let window = self.window_at(tau);
        let h = self.run(&heralded, derive_seed(seed, "g2-heralded"), n_h)?;
        let u = self.run(&uncond, derive_seed(seed, "g2-unconditional"), n_u)?;
        g2_cross_split(&h, &u, &window)
    }

    pub fn measure_snr(&self, p: &PipelineParams, signal_at: &[f64], seed: u64, trials: u64) -> Result<Vec<SnrEstimate>> {
        let run = self.run(p, seed, trials)?;
        let noise = self.noise_windows(p.afc.longest_delay());
        signal_at.iter().map(|&t| snr_from_run(&run, &self.window_at(t), &noise)).collect()
    }

    pub fn model_alpha(&self, p_e: f64) -> Result<f64> {
        Ok(heralded_autocorrelation(&self.pairs(p_e), self.cfg.detectors.hbt_efficiency, self.cal.read_background)?.alpha)
    }

    pub fn measure_alpha(&self, p_e: f64, seed: u64, trials: u64) -> Result<CorrelationResult> {
        let run = run_hbt(&self.pairs(p_e), self.cfg.detectors.hbt_efficiency, self.cal.read_background, Sampling::HeraldConditioned, seed, trials, self.workers)?;
        heralded_g2(&run)
    }

    /// p_e at which the model α reaches `level`, searched on [lo, hi].
    pub fn alpha_crossing(&self, level: f64, lo: f64, hi: f64) -> Result<Option<f64>> {
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (self.model_alpha(a)? - level, self.model_alpha(b)? - level);
        if fa.signum() == fb.signum() {
            return Ok(None);
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if (self.model_alpha(m)? - level).signum() == fa.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(Some(0.5 * (a + b)))
    }

    /// Phase scan of a time-bin input through the dual comb.
    pub fn fringe(&self, source: FringeSource, detuning: f64, jitter: Jitter, phis: &[f64], seed: u64, per_point: u64) -> Result<Fringe> {
        let photon = self.time_bin(0.5f64.sqrt(), 0.5f64.sqrt(), 0.0)?;
        let afc = self.dual_afc(detuning);
        let tau = afc.longest_delay();
        let p = match source {
            FringeSource::Pairs { p_e } => self.heralded(p_e, photon, afc, jitter),
            FringeSource::Coherent { mu } => self.coherent(mu, photon, afc, jitter),
        };
        let points = fringe_scan(phis, &self.cfg.sequence, &p, &self.window_at(tau), seed, per_point, self.workers)?;
        let counts: Vec<u64> = points.iter().map(|p| p.counts).collect();
        let fit = visibility_fit(phis, &counts)?;
        Ok(Fringe { points, fit })
    }

    /// Simulated counts of one prepared qubit for every tomography setting.
    pub fn tomography_dataset(&self, name: &str, qubit: (f64, f64, f64), target: [num_complex::Complex64; 2], settings: &[MeasurementSetting], seed: u64, trials: u64) -> Result<TomographyDataset> {
        let (c1, c2, phi) = qubit;
        let photon = self.time_bin(c1, c2, phi)?;
        let sep = self.cfg.photon.bin_separation;
        let mut records = vec![];
        for (i, s) in settings.iter().enumerate() {
            let (afc, windows) = match *s {
                MeasurementSetting::Z => {
                    let tau = 1.0 / self.cfg.memory.single_period;
                    (self.calibrated_afc(), vec![self.window_at(tau), self.window_at(tau + sep)])
                }
                MeasurementSetting::Equatorial { theta } => {
                    let afc = self.dual_afc(self.detuning_for_phase(theta));
                    let (t_s, t_l) = (afc.echoes[0].delay, afc.echoes[1].delay);
                    if ((t_l - t_s) - sep).abs() > 1e-12 {
                        return Err(invalid("dual-comb storage difference must equal the bin separation"));
                    }
                    (afc, vec![self.window_at(t_s), self.window_at(t_l), self.window_at(t_s + 2.0 * sep)])
                }
            };
            let p = self.heralded(self.cfg.source.p_e, photon, afc, Jitter::Single);
            let run = self.run(&p, derive_seed(seed, &format!("tomo-{name}-{i}")), trials)?;
            let counts = windows.iter().map(|w| run.coincidences(w)).collect::<Vec<_>>();
            let exposure = run.herald_count as f64 * self.signal_per_herald(1.0);
            records.push(CountsRecord { setting: *s, background: vec![0.0; counts.len()], counts, exposure });
        }
        Ok(TomographyDataset { name: name.into(), records, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FringeSource {
    Pairs { p_e: f64 },
    Coherent { mu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fringe {
    pub points: Vec<FringePoint>,
    pub fit: VisibilityFit,
}

/// `n` equally spaced phases on [0, 2π).
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}
