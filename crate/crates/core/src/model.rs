//! Domain types shared by the simulation, digitizer and metrology modules.
//!
//! Voltages are millivolts, times are nanoseconds unless a field name says
//! otherwise (edge uncertainty and jitter are picoseconds).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::real::Real;

/// Means and rms deviations of every technical noise source entering the
/// sampled photodiode voltage, plus visibility and interference swing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct NoiseModel<T> {
    /// Short-path contribution mean (mV).
    pub mean_vs: T,
    /// Long-path contribution mean (mV).
    pub mean_vl: T,
    pub sigma_vs: T,
    pub sigma_vl: T,
    /// Photodetector noise rms (mV).
    pub sigma_vpd: T,
    /// Hangover (delayed response from earlier pulses) rms (mV).
    pub sigma_vho: T,
    /// Comparator reference-level noise rms (mV).
    pub sigma_vref: T,
    /// Visibility after detection, in `[0, 1]`.
    pub visibility: T,
    /// Mean of the combined untrusted noise `v_c` (mV).
    pub mean_vc: T,
    /// Half the peak-to-peak interference range Δv_φ (mV).
    pub half_swing_dvphi: T,
}

/// The measured model: component sigmas de-embedded from oscilloscope
/// noise, fitted visibility and fitted interference swing.
pub fn default_noise_model<T: Real>() -> NoiseModel<T> {
    NoiseModel {
        mean_vs: T::lit(251.0),
        mean_vl: T::lit(251.0),
        sigma_vs: T::lit(1.1),
        sigma_vl: T::lit(1.3),
        sigma_vpd: T::lit(0.8),
        sigma_vho: T::lit(3.8),
        sigma_vref: T::lit(7.7),
        visibility: T::lit(0.955),
        mean_vc: T::lit(3.0),
        half_swing_dvphi: T::lit(483.0),
    }
}

impl<T: Real> Default for NoiseModel<T> {
    fn default() -> Self {
        default_noise_model()
    }
}

impl<T: Real> NoiseModel<T> {
    /// Interference amplitude produced by the Monte Carlo path,
    /// `2·𝒱·√(⟨v_S⟩⟨v_L⟩)`. Differs slightly from the fitted
    /// `half_swing_dvphi` that the analytic path uses.
    pub fn simulated_swing(&self) -> T {
        T::lit(2.0) * self.visibility * (self.mean_vs * self.mean_vl).sqrt()
    }

    /// Center of the analog distribution, where an unbiased comparator sits.
    pub fn center(&self) -> T {
        self.mean_vs + self.mean_vl
    }

    pub fn cast<U: Real>(&self) -> NoiseModel<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        NoiseModel {
            mean_vs: c(self.mean_vs),
            mean_vl: c(self.mean_vl),
            sigma_vs: c(self.sigma_vs),
            sigma_vl: c(self.sigma_vl),
            sigma_vpd: c(self.sigma_vpd),
            sigma_vho: c(self.sigma_vho),
            sigma_vref: c(self.sigma_vref),
            visibility: c(self.visibility),
            mean_vc: c(self.mean_vc),
            half_swing_dvphi: c(self.half_swing_dvphi),
        }
    }

    pub fn check(&self, out: &mut Violations) {
        let zero = T::zero();
        let sigmas = [
            ("sigma_vS", self.sigma_vs),
            ("sigma_vL", self.sigma_vl),
            ("sigma_vPD", self.sigma_vpd),
            ("sigma_vHO", self.sigma_vho),
            ("sigma_vRef", self.sigma_vref),
        ];
        for (name, s) in sigmas {
            // written so that NaN is rejected too
            if !(s >= zero) {
                out.push(name, format!("{name} < 0"));
            }
        }
        for (name, m) in [("mean_vS", self.mean_vs), ("mean_vL", self.mean_vl)] {
            if !(m >= zero) {
                out.push(name, format!("{name} < 0"));
            }
        }
        if !(self.visibility >= zero && self.visibility <= T::one()) {
            out.push("visibility", "visibility outside [0, 1]");
        }
        if !(self.half_swing_dvphi > zero) {
            out.push("half_swing_dvphi", "Δv_φ ≤ 0");
        } else if !(self.mean_vc.abs() < self.half_swing_dvphi) {
            out.push("mean_vc", "|mean_vc| ≥ Δv_φ");
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        self.check(&mut v);
        v.into_result()
    }
}

/// Assumed correlation structure among the untrusted noises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistrustLevel {
    /// Noise sources uncorrelated.
    Ordinary,
    /// The comparator reference conspires with the other noises.
    DigitizerParanoid,
    /// All noise sources conspire.
    FullyParanoid,
}

impl DistrustLevel {
    pub const ALL: [DistrustLevel; 3] = [
        DistrustLevel::Ordinary,
        DistrustLevel::DigitizerParanoid,
        DistrustLevel::FullyParanoid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistrustLevel::Ordinary => "ordinary",
            DistrustLevel::DigitizerParanoid => "digitizer-paranoid",
            DistrustLevel::FullyParanoid => "fully-paranoid",
        }
    }

    /// Row label in the predictability table.
    pub fn label(self) -> &'static str {
        match self {
            DistrustLevel::Ordinary => "Ordinary",
            DistrustLevel::DigitizerParanoid => "Dig. par.",
            DistrustLevel::FullyParanoid => "Fully par.",
        }
    }
}

impl fmt::Display for DistrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistrustLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ordinary" => Ok(DistrustLevel::Ordinary),
            "digitizer-paranoid" | "dig-par" => Ok(DistrustLevel::DigitizerParanoid),
            "fully-paranoid" | "fully-par" => Ok(DistrustLevel::FullyParanoid),
            other => Err(Error::invalid(format!("unknown distrust level `{other}`"))),
        }
    }
}

/// Delays and uncertainties that bound the freshness time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct TimingBudget<T> {
    /// Laser modulation to photodetector output (ns).
    pub t1_best: T,
    /// Photodetector output to XOR input (ns).
    pub t2_best: T,
    /// XOR input to output connector (ns).
    pub t3_best: T,
    /// Per-interval systematic edge uncertainty (ps).
    pub edge_uncertainty: T,
    /// Statistical jitter bound applied to each side (ps).
    pub jitter_bound: T,
    /// Generator clock period (ns).
    pub clock_period: T,
    /// Directly measured `[lb, ub]` sums of the three delays (ns). When
    /// present these replace `Σ t_best ∓ 3·edge_uncertainty`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systematic_bounds: Option<[T; 2]>,
}

impl<T: Real> TimingBudget<T> {
    /// Best-guess delays with the default 100 ps / 200 ps / 5 ns
    /// uncertainties and clock.
    pub fn from_delays(t1: T, t2: T, t3: T) -> Self {
        TimingBudget {
            t1_best: t1,
            t2_best: t2,
            t3_best: t3,
            edge_uncertainty: T::lit(100.0),
            jitter_bound: T::lit(200.0),
            clock_period: T::lit(5.0),
            systematic_bounds: None,
        }
    }

    /// The measured generator: best delays 7.82, 1.16, 1.55 ns with the
    /// cursor-derived systematic sums 10.21 / 10.87 ns.
    pub fn measured() -> Self {
        TimingBudget {
            systematic_bounds: Some([T::lit(10.21), T::lit(10.87)]),
            ..Self::from_delays(T::lit(7.82), T::lit(1.16), T::lit(1.55))
        }
    }

    pub fn check(&self, out: &mut Violations) {
        let zero = T::zero();
        let fields = [
            ("t1_best", self.t1_best),
            ("t2_best", self.t2_best),
            ("t3_best", self.t3_best),
            ("edge_uncertainty", self.edge_uncertainty),
            ("jitter_bound", self.jitter_bound),
            ("clock_period", self.clock_period),
        ];
        for (name, x) in fields {
            if !(x > zero) {
                out.push(name, format!("{name} ≤ 0"));
            }
        }
        if let Some([lb, ub]) = self.systematic_bounds {
            if !(lb > zero && lb < ub) {
                out.push("systematic_bounds", "systematic_bounds must satisfy 0 < lb < ub");
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        self.check(&mut v);
        v.into_result()
    }
}

impl<T: Real> Default for TimingBudget<T> {
    fn default() -> Self {
        Self::measured()
    }
}

/// How the inter-pulse optical phase is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// Each pulse phase is an independent uniform draw.
    FullyRandom,
    /// Phase follows a spontaneous-emission field random walk during the
    /// below-threshold interval.
    LangevinField,
    /// Diagnostic: every interference phase forced to this value (rad).
    Fixed(f64),
}

/// Hangover generation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HangoverMode {
    /// Independent Normal(0, σ_vHO) per pulse.
    #[default]
    Iid,
    /// Deterministic leakage of the previous two pulses' optical signal,
    /// scaled so its rms equals σ_vHO.
    Correlated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Pulse (raw-bit) rate in Mbps.
    pub pulse_rate: f64,
    pub n_pulses: u64,
    pub rng_seed: u64,
    pub phase_mode: PhaseMode,
    /// Forced raw-bit offset: the loop drives ⟨d⟩ toward ½(1 + bias_target).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_target: Option<f64>,
    /// Reference-level integrator time constant (ms).
    pub feedback_time_constant: f64,
    #[serde(default = "default_true")]
    pub feedback: bool,
    #[serde(default)]
    pub hangover: HangoverMode,
}

fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pulse_rate: 200.0,
            n_pulses: 1_000_000,
            rng_seed: 0x5EED,
            phase_mode: PhaseMode::FullyRandom,
            bias_target: None,
            feedback_time_constant: 1.0,
            feedback: true,
            hangover: HangoverMode::Iid,
        }
    }
}

impl SimConfig {
    /// Number of pulses spanned by one feedback time constant.
    pub fn pulses_per_time_constant(&self) -> f64 {
        self.feedback_time_constant * 1e-3 * self.pulse_rate * 1e6
    }

    /// Fraction of ones the comparator loop steers toward.
    pub fn target_ones_fraction(&self) -> f64 {
        0.5 * (1.0 + self.bias_target.unwrap_or(0.0))
    }

    pub fn check(&self, out: &mut Violations) {
        if !(self.pulse_rate > 0.0) {
            out.push("pulse_rate", "pulse_rate ≤ 0");
        }
        if self.n_pulses < 1 {
            out.push("n_pulses", "n_pulses < 1");
        }
        if !(self.feedback_time_constant > 0.0) {
            out.push("feedback_time_constant", "feedback_time_constant ≤ 0");
        }
        if let Some(b) = self.bias_target {
            if !(b > -1.0 && b < 1.0) {
                out.push("bias_target", "bias_target outside (−1, 1)");
            }
        }
        if let PhaseMode::Fixed(phi) = self.phase_mode {
            if !phi.is_finite() {
                out.push("phase_mode", "fixed phase is not finite");
            }
        }
    }
}

/// Reports every invariant violation of the pair.
pub fn validate<T: Real>(config: &SimConfig, noise: &NoiseModel<T>) -> Result<()> {
    let mut v = Violations::default();
    config.check(&mut v);
    noise.check(&mut v);
    v.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(r: Result<()>) -> Vec<String> {
        match r {
            Err(Error::Config(v)) => v.iter().map(|x| x.message.clone()).collect(),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn measured_model_golden() {
        let m: NoiseModel<f64> = default_noise_model();
        assert_eq!(m.mean_vs, 251.0);
        assert_eq!(m.mean_vl, 251.0);
        assert_eq!(m.sigma_vs, 1.1);
        assert_eq!(m.sigma_vl, 1.3);
        assert_eq!(m.sigma_vpd, 0.8);
        assert_eq!(m.sigma_vho, 3.8);
        assert_eq!(m.sigma_vref, 7.7);
        assert_eq!(m.visibility, 0.955);
        assert_eq!(m.mean_vc, 3.0);
        assert_eq!(m.half_swing_dvphi, 483.0);
    }

    #[test]
    fn defaults_validate() {
        validate(&SimConfig::default(), &default_noise_model::<f64>()).unwrap();
        validate(&SimConfig::default(), &default_noise_model::<f32>()).unwrap();
        TimingBudget::<f64>::measured().validate().unwrap();
    }

    #[test]
    fn negative_sigma_named() {
        let mut m: NoiseModel<f64> = default_noise_model();
        m.sigma_vref = -1.0;
        assert_eq!(messages(validate(&SimConfig::default(), &m)), vec!["sigma_vRef < 0"]);
    }

    #[test]
    fn offset_beyond_swing() {
        let mut m: NoiseModel<f64> = default_noise_model();
        m.mean_vc = 500.0;
        m.half_swing_dvphi = 483.0;
        assert_eq!(messages(m.validate()), vec!["|mean_vc| ≥ Δv_φ"]);
    }

    #[test]
    fn all_violations_reported() {
        let mut m: NoiseModel<f64> = default_noise_model();
        m.sigma_vs = -0.1;
        m.visibility = 1.5;
        let c = SimConfig {
            n_pulses: 0,
            pulse_rate: 0.0,
            ..SimConfig::default()
        };
        let msgs = messages(validate(&c, &m));
        assert_eq!(msgs.len(), 4, "{msgs:?}");
    }

    #[test]
    fn nan_rejected() {
        let mut m: NoiseModel<f64> = default_noise_model();
        m.sigma_vpd = f64::NAN;
        assert!(m.validate().is_err());
    }

    #[test]
    fn distrust_parse() {
        for level in DistrustLevel::ALL {
            assert_eq!(level.as_str().parse::<DistrustLevel>().unwrap(), level);
        }
        assert!("paranoid".parse::<DistrustLevel>().is_err());
    }

    #[test]
    fn time_constant_in_pulses() {
        assert!((SimConfig::default().pulses_per_time_constant() - 200_000.0).abs() < 1e-6);
    }
}
