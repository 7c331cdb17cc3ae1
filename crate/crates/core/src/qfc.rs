//! Cascaded frequency-conversion link: scalar transmission stages plus a
//! gated Poissonian background referred to the detection plane.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub transmission: f64,
}

impl StageSpec {
    pub fn new(name: &str, transmission: f64) -> Self {
        Self { name: name.to_string(), transmission }
    }
}

/// Poissonian background. `mean_noise_per_window` refers to a counting
/// window of width `reference_window`; other widths scale linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean_noise_per_window: f64,
    pub reference_window: f64,
    /// Whether the source is switched off while a gate is active.
    pub gated: bool,
}

impl NoiseSpec {
    pub fn rate(&self) -> f64 {
        self.mean_noise_per_window / self.reference_window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateWindow {
    pub t_start: f64,
    pub t_stop: f64,
}

impl GateWindow {
    pub fn new(t_start: f64, t_stop: f64) -> Result<Self> {
        if !(t_stop > t_start) {
            return Err(invalid(format!("window [{t_start}, {t_stop}] is empty")));
        }
        Ok(Self { t_start, t_stop })
    }

    pub fn width(&self) -> f64 {
        self.t_stop - self.t_start
    }

    pub fn overlap(&self, other: &GateWindow) -> f64 {
        (self.t_stop.min(other.t_stop) - self.t_start.max(other.t_start)).max(0.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_stop
    }
}

/// Product of stage transmissions.
pub fn chain_transmission(stages: &[StageSpec]) -> Result<f64> {
    if stages.is_empty() {
        return Err(invalid("empty stage list"));
    }
    for s in stages {
        if !(0.0..=1.0).contains(&s.transmission) {
            return Err(invalid(format!("stage `{}` transmission {} outside [0, 1]", s.name, s.transmission)));
        }
    }
    Ok(stages.iter().map(|s| s.transmission).product())
}

/// Bernoulli thinning of a photon through a link of transmission `t`.
pub fn survive<R: Rng + ?Sized>(photon_present: bool, t: f64, rng: &mut R) -> bool {
    photon_present && rng.random::<f64>() < t
}

pub fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Expected background in a counting window. A gated source contributes
/// only on the part of the window outside an active gate.
pub fn expected_noise(noise: &NoiseSpec, window: &GateWindow, gate: Option<&GateWindow>) -> f64 {
    let mut width = window.width();
    if noise.gated {
        if let Some(g) = gate {
            width -= window.overlap(g);
        }
    }
    noise.rate() * width.max(0.0)
}

/// Poisson draw of background counts in `window`.
pub fn noise_counts<R: Rng + ?Sized>(
    noise: &NoiseSpec,
    window: &GateWindow,
    gate: Option<&GateWindow>,
    rng: &mut R,
) -> u64 {
    poisson_draw(expected_noise(noise, window, gate), rng)
}

/// SNR of a weak coherent input of mean photon number `mu_in`.
pub fn snr_linear_model(mu_in: f64, mu1: f64) -> Result<f64> {
    if !(mu1 > 0.0) {
        return Err(invalid("mu1 must be positive"));
    }
    Ok(mu_in / mu1)
}

/// Parsed stage table, one `[[stage]]` entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub stage: Vec<StageSpec>,
}

pub fn parse_stage_table(text: &str) -> Result<Vec<StageSpec>> {
    let t: StageTable = toml::from_str(text)?;
    chain_transmission(&t.stage)?;
    Ok(t.stage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn link() -> Vec<StageSpec> {
        vec![
            StageSpec::new("fs1", 0.72),
            StageSpec::new("qfc1 coupling", 0.44),
            StageSpec::new("qfc1 conversion", 0.56),
            StageSpec::new("qfc1 filtering", 0.68),
            StageSpec::new("qfc2 coupling", 0.51),
            StageSpec::new("qfc2 conversion", 0.60),
            StageSpec::new("qfc2 filtering", 0.75),
            StageSpec::new("qfc2 fiber", 0.64),
            StageSpec::new("fs2", 0.70),
        ]
    }

    #[test]
    fn link_budget() {
        let t = chain_transmission(&link()).unwrap();
        assert!((t - 0.012403).abs() < 1e-6);
        assert!((t - 0.012).abs() <= 0.001);
        // with the first converter's rounded device efficiency 0.17
        let rounded = [0.72, 0.17, 0.51 * 0.60 * 0.75 * 0.64, 0.70]
            .map(|x| StageSpec::new("s", x));
        assert!((chain_transmission(&rounded).unwrap() - 0.0126).abs() < 5e-5);
    }

    #[test]
    fn trivial_chains() {
        assert_eq!(chain_transmission(&[StageSpec::new("a", 1.0)]).unwrap(), 1.0);
        let mut l = link();
        l[3].transmission = 0.0;
        assert_eq!(chain_transmission(&l).unwrap(), 0.0);
        assert!(chain_transmission(&[]).is_err());
    }

    #[test]
    fn survival_fraction() {
        let mut rng = stream_rng(11, 0);
        assert!((0..1000).all(|_| survive(true, 1.0, &mut rng)));
        let n = 1_000_000;
        let t = 0.0126;
        let k = (0..n).filter(|_| survive(true, t, &mut rng)).count();
        let f = k as f64 / n as f64;
        assert!((f - t).abs() < 3.0 * (t / n as f64).sqrt());
    }

    #[test]
    fn survival_is_reproducible() {
        let a: Vec<bool> = { let mut r = stream_rng(5, 9); (0..64).map(|_| survive(true, 0.5, &mut r)).collect() };
        let b: Vec<bool> = { let mut r = stream_rng(5, 9); (0..64).map(|_| survive(true, 0.5, &mut r)).collect() };
        assert_eq!(a, b);
    }

    #[test]
    fn gated_noise_is_silent() {
        let pump = NoiseSpec { mean_noise_per_window: 3.0, reference_window: 400e-9, gated: true };
        let gate = GateWindow::new(1.2e-6, 6.2e-6).unwrap();
        let echo = GateWindow::new(2.3e-6, 2.7e-6).unwrap();
        let mut rng = stream_rng(1, 1);
        assert!((0..1000).all(|_| noise_counts(&pump, &echo, Some(&gate), &mut rng) == 0));
        let open: u64 = (0..1000).map(|_| noise_counts(&pump, &echo, None, &mut rng)).sum();
        assert!((open as f64 / 1000.0 - 3.0).abs() < 0.3);
        let straddling = GateWindow::new(0.8e-6, 1.6e-6).unwrap();
        assert!((expected_noise(&pump, &straddling, Some(&gate)) - 3.0).abs() < 1e-9);
        let zero = NoiseSpec { mean_noise_per_window: 0.0, ..pump };
        assert_eq!(noise_counts(&zero, &echo, None, &mut rng), 0);
    }

    #[test]
    fn poisson_moments() {
        let n = NoiseSpec { mean_noise_per_window: 2.0, reference_window: 1.0, gated: false };
        let w = GateWindow::new(0.0, 1.0).unwrap();
        let mut rng = stream_rng(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| noise_counts(&n, &w, None, &mut rng) as f64).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((m - 2.0).abs() < 0.02);
        assert!((v / m - 1.0).abs() < 0.05);
    }

    #[test]
    fn snr_model() {
        assert!((snr_linear_model(0.022, 0.022).unwrap() - 1.0).abs() < 1e-12);
        assert!((snr_linear_model(0.3, 0.022).unwrap() - 13.636).abs() < 1e-3);
        assert_eq!(snr_linear_model(0.0, 0.022).unwrap(), 0.0);
        assert!(snr_linear_model(0.3, 0.0).is_err());
    }

    #[test]
    fn stage_table_parses() {
        let s = parse_stage_table("[[stage]]\nname = \"a\"\ntransmission = 0.5\n[[stage]]\nname = \"b\"\ntransmission = 0.4\n").unwrap();
        assert!((chain_transmission(&s).unwrap() - 0.2).abs() < 1e-12);
    }
}
