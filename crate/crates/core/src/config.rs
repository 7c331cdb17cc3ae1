//! Layered run configuration: the bundled defaults file with user files
//! merged over it key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qfc::{chain_transmission, StageSpec};
use crate::sim::{DetectorSpec, SequenceConfig};

pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSection {
    pub p_e: f64,
    pub eta_ret: f64,
    pub n_max: usize,
    pub eta_write_path_bounds: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSection {
    pub d1_window: f64,
    pub hbt_efficiency: f64,
    pub d1: DetectorSpec,
    pub d2: DetectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSection {
    pub stage: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySection {
    pub crystal_transmission: f64,
    pub peak_depth: f64,
    pub background_depth: f64,
    pub bandwidth: f64,
    pub single_period: f64,
    pub dual_periods: [f64; 2],
    pub finesse_bounds: [f64; 2],
    pub decoherence_rate: f64,
    pub storage_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSection {
    pub samples: usize,
    pub dt: f64,
    pub t_in: f64,
    pub half_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonSection {
    pub fwhm: f64,
    pub bin_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSection {
    pub window: f64,
    pub pump_per_window: f64,
    pub gate_lead: f64,
    pub gate_length: f64,
    pub record_start: f64,
    pub record_after_echo: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterSection {
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub eta_afc: f64,
    pub eta_dual: f64,
    pub mu1: f64,
    pub snr_pairs: f64,
    pub snr_pairs_p_e: f64,
    pub v0_coherent: f64,
    pub v0_single: f64,
    pub g2_wr: f64,
    pub g2_wr_p_e: f64,
    pub g2_wr_sigma: f64,
    pub rate_low: f64,
    pub rate_low_p_e: f64,
    pub rate_high: f64,
    pub rate_high_p_e: f64,
    pub rate_rel_sigma: f64,
    pub alpha: f64,
    pub alpha_p_e: f64,
    pub g2_ww: f64,
    pub g2_ww_sigma: f64,
    pub g2_rr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    pub trials: u64,
    pub tomo_trials_per_setting: u64,
    pub mc_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub source: SourceSection,
    pub detectors: DetectorSection,
    pub chain: ChainSection,
    pub memory: MemorySection,
    pub engine: EngineSection,
    pub photon: PhotonSection,
    pub noise: NoiseSection,
    pub jitter: JitterSection,
    pub sequence: SequenceConfig,
    pub anchors: Anchors,
    pub run: RunSection,
}

/// Recursive table merge; arrays and scalars in `over` replace `base`.
pub fn deep_merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => deep_merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl Config {
    pub fn defaults() -> Self {
        Self::from_layers(&[]).expect("bundled defaults are valid")
    }

    /// Defaults with each TOML text merged over it in order.
    pub fn from_layers(layers: &[&str]) -> Result<Self> {
        let mut v: toml::Value = toml::from_str(DEFAULTS_TOML)?;
        for text in layers {
            deep_merge(&mut v, toml::from_str(text)?);
        }
        let cfg: Config = v.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Self::from_layers(&[&text])
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence.validate()?;
        self.detectors.d1.validate()?;
        self.detectors.d2.validate()?;
        chain_transmission(&self.chain.stage)?;
        let s = &self.source;
        if !(0.0..1.0).contains(&s.p_e) || s.n_max < 2 {
            return Err(invalid("source p_e must lie in [0, 1) and n_max ≥ 2"));
        }
        let [lo, hi] = s.eta_write_path_bounds;
        if !(0.0 < lo && lo < hi && hi <= 1.0) {
            return Err(invalid("eta_write_path_bounds must satisfy 0 < lo < hi ≤ 1"));
        }
        let [f_lo, f_hi] = self.memory.finesse_bounds;
        if !(1.0 < f_lo && f_lo < f_hi) {
            return Err(invalid("finesse_bounds must satisfy 1 < lo < hi"));
        }
        if !(self.noise.scale >= 0.0 && self.jitter.scale >= 0.0) {
            return Err(invalid("noise and jitter scales must be ≥ 0"));
        }
        if !(self.noise.window > 0.0 && self.noise.gate_length > self.noise.gate_lead) {
            return Err(invalid("noise window must be positive and the gate must cover the echo"));
        }
        Ok(())
    }

    pub fn chain_transmission(&self) -> f64 {
        chain_transmission(&self.chain.stage).expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = Config::defaults();
        assert_eq!(c.chain.stage.len(), 9);
        assert!((c.chain_transmission() - 0.012403).abs() < 1e-6);
        assert_eq!(c.sequence, SequenceConfig::default());
    }

    #[test]
    fn layered_override() {
        let c = Config::from_layers(&["[noise]\nscale = 0.0\n", "[memory]\npeak_depth = 8.0\n"]).unwrap();
        assert_eq!(c.noise.scale, 0.0);
        assert_eq!(c.memory.peak_depth, 8.0);
        assert_eq!(c.noise.window, 400e-9);
        assert!(Config::from_layers(&["[source]\np_e = 1.5\n"]).is_err());
        assert!(Config::from_layers(&["[source]\nbogus = \n"]).is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config::defaults();
        assert_eq!(Config::from_layers(&[&c.to_toml().unwrap()]).unwrap(), c);
    }
}
