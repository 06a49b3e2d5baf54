//! TOML run configuration.
//!
//! ```toml
//! [simulation]
//! pulse_rate = 200.0             # Mbps
//! n_pulses = 1000000
//! rng_seed = 24301
//! phase_mode = "fully-random"    # or "langevin-field", or { fixed = 1.5708 }
//! feedback_time_constant = 1.0   # ms
//! feedback = true
//! hangover = "iid"               # or "correlated"
//! # bias_target = 0.00069        # optional forced raw-bit offset
//!
//! [noise]                        # mV except visibility
//! mean_vs = 251.0
//! # ... every NoiseModel field
//!
//! [timing]                       # ns, edge/jitter in ps
//! t1_best = 7.82
//! # ...
//!
//! [phase]
//! diffusion_coefficient = 10.0
//! below_threshold_time = 3.0
//! initial_amplitude = 1.0
//! ```
//!
//! Every section is optional and falls back to the measured defaults;
//! unknown keys anywhere are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::model::{default_noise_model, NoiseModel, SimConfig, TimingBudget};
use crate::photonics::PhaseProcess;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    pub diffusion_coefficient: f64,
    pub below_threshold_time: f64,
    pub initial_amplitude: f64,
}

impl Default for PhaseParams {
    fn default() -> Self {
        let p = PhaseProcess::<f64>::new(crate::model::PhaseMode::FullyRandom);
        PhaseParams {
            diffusion_coefficient: p.diffusion_coefficient,
            below_threshold_time: p.below_threshold_time,
            initial_amplitude: p.initial_amplitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default = "default_noise_model")]
    pub noise: NoiseModel<f64>,
    #[serde(default)]
    pub timing: TimingBudget<f64>,
    #[serde(default)]
    pub phase: PhaseParams,
}

impl RunConfig {
    pub fn phase_process(&self) -> PhaseProcess<f64> {
        PhaseProcess {
            mode: self.simulation.phase_mode,
            diffusion_coefficient: self.phase.diffusion_coefficient,
            below_threshold_time: self.phase.below_threshold_time,
            initial_amplitude: self.phase.initial_amplitude,
        }
    }

    /// All invariant violations across sections.
    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        self.simulation.check(&mut v);
        self.noise.check(&mut v);
        self.timing.check(&mut v);
        self.phase_process().check(&mut v);
        v.into_result()
    }

    /// Parses and validates.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HangoverMode, PhaseMode};

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut c = RunConfig::default();
        c.simulation.bias_target = Some(6.9e-4);
        c.simulation.phase_mode = PhaseMode::Fixed(1.25);
        c.simulation.hangover = HangoverMode::Correlated;
        let s1 = c.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&s1).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string().unwrap(), s1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[noise]\nsigma_vX = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse(_)), "{err}");
        assert!(RunConfig::from_toml_str("[extra]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.noise.sigma_vref = -1.0;
        let s = c.to_toml_string().unwrap();
        match RunConfig::from_toml_str(&s) {
            Err(Error::Config(v)) => assert_eq!(v.to_string(), "sigma_vRef < 0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_section_needs_all_fields() {
        // a present section must be complete: silently mixing defaults into
        // a hand-written noise model would hide typos
        assert!(RunConfig::from_toml_str("[noise]\nmean_vs = 250.0\n").is_err());
    }
}
