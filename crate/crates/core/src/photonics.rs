//! Per-pulse analog voltages at the comparator decision instant.
//!
//! Each pulse interferes with its predecessor in the unbalanced
//! interferometer, so the sampled voltage is
//! `v = v_S + v_L + 2𝒱√(v_S v_L)·cos φ + v_h/o + v_PD` where φ is the phase
//! difference between consecutive laser pulses. Only the decision-point
//! value is simulated, not the pulse waveform.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violations};
use crate::model::{HangoverMode, NoiseModel, PhaseMode, SimConfig};
use crate::real::{wrap_phase, Real};

/// Euler–Maruyama step for the below-threshold field walk (ns).
pub const LANGEVIN_STEP_NS: f64 = 0.01;

/// Shape of the correlated hangover kernel over the previous two pulses.
const HANGOVER_KERNEL_SHAPE: [f64; 2] = [1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct PhaseProcess<T> {
    pub mode: PhaseMode,
    /// Per-quadrature field diffusion (amplitude² / ns). With the field
    /// amplitude in units of its value at the start of the below-threshold
    /// interval, this is the phase diffusion rate per unit inverse intensity.
    pub diffusion_coefficient: T,
    /// Duration of the below-threshold interval (ns).
    pub below_threshold_time: T,
    /// Field amplitude when the laser drops below threshold.
    pub initial_amplitude: T,
}

impl<T: Real> PhaseProcess<T> {
    pub fn new(mode: PhaseMode) -> Self {
        PhaseProcess {
            mode,
            diffusion_coefficient: T::lit(10.0),
            below_threshold_time: T::lit(3.0),
            initial_amplitude: T::one(),
        }
    }

    pub fn langevin(diffusion_coefficient: T) -> Self {
        PhaseProcess {
            diffusion_coefficient,
            ..Self::new(PhaseMode::LangevinField)
        }
    }

    pub fn check(&self, out: &mut Violations) {
        if self.mode == PhaseMode::LangevinField {
            if !(self.diffusion_coefficient > T::zero()) {
                out.push("diffusion_coefficient", "diffusion_coefficient ≤ 0 in LangevinField mode");
            }
            if !(self.below_threshold_time > T::zero()) {
                out.push("below_threshold_time", "below_threshold_time ≤ 0");
            }
        }
        if !(self.initial_amplitude > T::zero()) {
            out.push("initial_amplitude", "initial_amplitude ≤ 0");
        }
    }

    fn langevin_steps(&self) -> usize {
        (self.below_threshold_time.to_f64_lossy() / LANGEVIN_STEP_NS).round().max(1.0) as usize
    }

    /// Total per-quadrature variance accumulated below threshold.
    pub fn field_variance(&self) -> T {
        self.diffusion_coefficient * self.below_threshold_time
    }

    /// Draws `cos φ` of the interference phase directly. For the field walk
    /// the increment `arg(A₀ + W)` is independent of the previous absolute
    /// phase, so the closed-form Gaussian sum replaces the step-by-step walk.
    #[inline]
    pub fn sample_interference_cos<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.mode {
            PhaseMode::FullyRandom => crate::real::cos_uniform_angle(rng),
            PhaseMode::Fixed(phi) => T::lit(phi.cos()),
            PhaseMode::LangevinField => {
                let s = self.field_variance().sqrt();
                let re = self.initial_amplitude + s * T::standard_normal(rng);
                let im = s * T::standard_normal(rng);
                let r = (re * re + im * im).sqrt();
                if r > T::zero() {
                    re / r
                } else {
                    T::one()
                }
            }
        }
    }
}

/// Advances the absolute laser phase across one below-threshold interval.
///
/// `FullyRandom` ignores `prev_phase`. `LangevinField` starts the field at
/// `A₀·e^{i·prev_phase}` and integrates equal, independent diffusion in both
/// quadratures with Euler–Maruyama steps. `Fixed(φ)` advances by exactly φ.
pub fn next_phase<T: Real, R: Rng + ?Sized>(state: &PhaseProcess<T>, prev_phase: T, rng: &mut R) -> T {
    match state.mode {
        PhaseMode::FullyRandom => T::uniform01(rng) * T::TAU(),
        PhaseMode::Fixed(phi) => wrap_phase(prev_phase + T::lit(phi)),
        PhaseMode::LangevinField => {
            let (sin, cos) = prev_phase.sin_cos();
            let mut re = state.initial_amplitude * cos;
            let mut im = state.initial_amplitude * sin;
            if state.diffusion_coefficient > T::zero() {
                let dt = T::lit(LANGEVIN_STEP_NS);
                let scale = (state.diffusion_coefficient * dt).sqrt();
                for _ in 0..state.langevin_steps() {
                    re += scale * T::standard_normal(rng);
                    im += scale * T::standard_normal(rng);
                }
            }
            wrap_phase(im.atan2(re))
        }
    }
}

/// Per-pulse breakdown of the sampled voltage (mV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components<T> {
    pub vs: T,
    pub vl: T,
    pub vphi: T,
    pub vho: T,
    pub vpd: T,
}

impl<T: Real> Components<T> {
    pub fn total(&self) -> T {
        self.vs + self.vl + self.vphi + self.vho + self.vpd
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSample<T> {
    /// Sampled analog voltage (mV).
    pub v: T,
    /// Interference phase in `[0, 2π)`.
    pub phi: T,
    pub components: Option<Components<T>>,
}

/// Mean and rms deviation of one class of pulses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassStats {
    pub n: u64,
    pub mean: f64,
    pub rms: f64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn finish(&self) -> ClassStats {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        ClassStats {
            n: self.n,
            mean: self.mean,
            rms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterruptedTrainStats {
    /// Short path only, no interference.
    pub first_pulse: ClassStats,
    pub interfering: ClassStats,
    /// Long path plus hangover, no interference.
    pub last_pulse: ClassStats,
}

/// Which interferometer arm is blocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockedArm {
    /// Only the long-path pulse reaches the detector.
    Short,
    /// Only the short-path pulse reaches the detector.
    Long,
}

/// Generates analog pulse samples for one configuration.
#[derive(Debug, Clone)]
pub struct PulseSimulator<T> {
    config: SimConfig,
    noise: NoiseModel<T>,
    phase: PhaseProcess<T>,
    hangover_kernel: [T; 2],
    scope_noise: T,
}

/// Sequential state carried across pulses of one train.
#[derive(Debug, Clone, Copy)]
pub struct TrainState<T> {
    pub abs_phase: T,
    /// Optical part (v_S + v_L + v_φ) of the previous two pulses minus its mean.
    history: [T; 2],
    clamped: u64,
}

impl<T: Real> Default for TrainState<T> {
    fn default() -> Self {
        TrainState {
            abs_phase: T::zero(),
            history: [T::zero(); 2],
            clamped: 0,
        }
    }
}

impl<T: Real> TrainState<T> {
    /// Fresh train with a uniformly random starting laser phase.
    pub fn random_start<R: Rng + ?Sized>(rng: &mut R) -> Self {
        TrainState {
            abs_phase: T::uniform01(rng) * T::TAU(),
            ..TrainState::default()
        }
    }

    /// Negative path-voltage draws clamped so far.
    pub fn clamped(&self) -> u64 {
        self.clamped
    }
}

impl<T: Real> PulseSimulator<T> {
    pub fn new(config: SimConfig, noise: NoiseModel<T>, phase: PhaseProcess<T>) -> Result<Self> {
        let mut v = Violations::default();
        config.check(&mut v);
        noise.check(&mut v);
        phase.check(&mut v);
        v.into_result()?;
        let phase = PhaseProcess {
            mode: config.phase_mode,
            ..phase
        };
        Ok(PulseSimulator {
            hangover_kernel: correlated_hangover_kernel(&noise),
            config,
            noise,
            phase,
            scope_noise: T::zero(),
        })
    }

    /// Default phase-process parameters for `config.phase_mode`.
    pub fn from_config(config: SimConfig, noise: NoiseModel<T>) -> Result<Self> {
        Self::new(config, noise, PhaseProcess::new(config.phase_mode))
    }

    /// Additive Gaussian oscilloscope noise applied to the measurement-style
    /// outputs (interrupted trains and blocked-arm runs).
    pub fn with_scope_noise(mut self, sigma: T) -> Self {
        self.scope_noise = sigma;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn noise(&self) -> &NoiseModel<T> {
        &self.noise
    }

    pub fn phase_process(&self) -> &PhaseProcess<T> {
        &self.phase
    }

    #[inline]
    fn gauss<R: Rng + ?Sized>(rng: &mut R, mean: T, sigma: T) -> T {
        if sigma == T::zero() {
            mean
        } else {
            mean + sigma * T::standard_normal(rng)
        }
    }

    #[inline]
    fn clamp_nonnegative(x: T, state: &mut TrainState<T>) -> T {
        if x < T::zero() {
            state.clamped += 1;
            T::zero()
        } else {
            x
        }
    }

    #[inline]
    fn hangover<R: Rng + ?Sized>(&self, state: &TrainState<T>, rng: &mut R) -> T {
        match self.config.hangover {
            HangoverMode::Iid => Self::gauss(rng, T::zero(), self.noise.sigma_vho),
            HangoverMode::Correlated => {
                self.hangover_kernel[0] * state.history[0] + self.hangover_kernel[1] * state.history[1]
            }
        }
    }

    #[inline]
    fn record_optical(&self, state: &mut TrainState<T>, optical: T) {
        state.history[1] = state.history[0];
        state.history[0] = optical - self.noise.center();
    }

    /// One interfering pulse.
    pub fn pulse<R: Rng + ?Sized>(&self, state: &mut TrainState<T>, rng: &mut R) -> PulseSample<T> {
        let n = &self.noise;
        let prev = state.abs_phase;
        let next = next_phase(&self.phase, prev, rng);
        state.abs_phase = next;
        let phi = wrap_phase(next - prev);

        let vs = Self::clamp_nonnegative(Self::gauss(rng, n.mean_vs, n.sigma_vs), state);
        let vl = Self::clamp_nonnegative(Self::gauss(rng, n.mean_vl, n.sigma_vl), state);
        let vpd = Self::gauss(rng, T::zero(), n.sigma_vpd);
        let vho = self.hangover(state, rng);
        let vphi = T::lit(2.0) * n.visibility * (vs * vl).sqrt() * phi.cos();
        self.record_optical(state, vs + vl + vphi);
        let c = Components { vs, vl, vphi, vho, vpd };
        PulseSample {
            v: c.total(),
            phi,
            components: Some(c),
        }
    }

    /// A train of `config.n_pulses` interfering pulses.
    pub fn train<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<PulseSample<T>> {
        self.train_of(self.config.n_pulses as usize, rng)
    }

    pub fn train_of<R: Rng + ?Sized>(&self, n_pulses: usize, rng: &mut R) -> Vec<PulseSample<T>> {
        let mut state = TrainState {
            abs_phase: T::uniform01(rng) * T::TAU(),
            ..TrainState::default()
        };
        let out: Vec<_> = (0..n_pulses).map(|_| self.pulse(&mut state, rng)).collect();
        if state.clamped > 0 {
            warn!("clamped {} negative path-voltage draws to zero", state.clamped);
        }
        out
    }

    /// Periodically interrupted modulation: pulse 1 carries the short path
    /// only, pulses 2..n−1 interfere, pulse n carries the long path plus
    /// hangover. Trains are separated long enough for hangover to decay.
    pub fn interrupted_trains<R: Rng + ?Sized>(
        &self,
        train_length: usize,
        n_trains: usize,
        rng: &mut R,
    ) -> Result<InterruptedTrainStats> {
        if train_length < 3 {
            return Err(Error::invalid(format!("train_length {train_length} < 3")));
        }
        let n = &self.noise;
        let (mut first, mut mid, mut last) = (RunningStats::default(), RunningStats::default(), RunningStats::default());
        let mut clamped = 0;
        for _ in 0..n_trains {
            let mut state = TrainState {
                abs_phase: T::uniform01(rng) * T::TAU(),
                ..TrainState::default()
            };
            let vs = Self::clamp_nonnegative(Self::gauss(rng, n.mean_vs, n.sigma_vs), &mut state);
            let vpd = Self::gauss(rng, T::zero(), n.sigma_vpd);
            self.record_optical(&mut state, vs);
            first.push(self.measure(vs + vpd, rng));
            for _ in 1..train_length - 1 {
                let p = self.pulse(&mut state, rng);
                mid.push(self.measure(p.v, rng));
            }
            let vl = Self::clamp_nonnegative(Self::gauss(rng, n.mean_vl, n.sigma_vl), &mut state);
            let vpd = Self::gauss(rng, T::zero(), n.sigma_vpd);
            let vho = self.hangover(&state, rng);
            last.push(self.measure(vl + vho + vpd, rng));
            clamped += state.clamped;
        }
        if clamped > 0 {
            warn!("clamped {clamped} negative path-voltage draws to zero");
        }
        Ok(InterruptedTrainStats {
            first_pulse: first.finish(),
            interfering: mid.finish(),
            last_pulse: last.finish(),
        })
    }

    /// Steady pulse train with one arm blocked: no interference, and no
    /// hangover fluctuation since the detected power no longer varies.
    pub fn blocked_arm<R: Rng + ?Sized>(&self, arm: BlockedArm, n_pulses: usize, rng: &mut R) -> ClassStats {
        let n = &self.noise;
        let (mean, sigma) = match arm {
            BlockedArm::Short => (n.mean_vl, n.sigma_vl),
            BlockedArm::Long => (n.mean_vs, n.sigma_vs),
        };
        let mut acc = RunningStats::default();
        for _ in 0..n_pulses {
            let v = Self::gauss(rng, mean, sigma) + Self::gauss(rng, T::zero(), n.sigma_vpd);
            acc.push(self.measure(v, rng));
        }
        acc.finish()
    }

    #[inline]
    fn measure<R: Rng + ?Sized>(&self, v: T, rng: &mut R) -> f64 {
        Self::gauss(rng, v, self.scope_noise).to_f64_lossy()
    }
}

/// Leakage weights over the previous two pulses' optical signal (minus its
/// mean) whose output rms equals σ_vHO for a fully random phase.
pub fn correlated_hangover_kernel<T: Real>(noise: &NoiseModel<T>) -> [T; 2] {
    let swing = noise.simulated_swing();
    let optical_var = noise.sigma_vs * noise.sigma_vs + noise.sigma_vl * noise.sigma_vl + swing * swing / T::lit(2.0);
    let shape_norm: f64 = HANGOVER_KERNEL_SHAPE.iter().map(|w| w * w).sum();
    if optical_var <= T::zero() {
        return [T::zero(); 2];
    }
    let w = noise.sigma_vho / (T::lit(shape_norm) * optical_var).sqrt();
    [w * T::lit(HANGOVER_KERNEL_SHAPE[0]), w * T::lit(HANGOVER_KERNEL_SHAPE[1])]
}

/// Generates `config.n_pulses` samples with the default phase process.
pub fn simulate_pulse_train<T: Real, R: Rng + ?Sized>(
    config: &SimConfig,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> Result<Vec<PulseSample<T>>> {
    Ok(PulseSimulator::from_config(*config, *noise)?.train(rng))
}

/// Runs `n_trains` interrupted trains of `train_length` pulses.
pub fn simulate_interrupted_train<T: Real, R: Rng + ?Sized>(
    config: &SimConfig,
    noise: &NoiseModel<T>,
    train_length: usize,
    n_trains: usize,
    rng: &mut R,
) -> Result<InterruptedTrainStats> {
    PulseSimulator::from_config(*config, *noise)?.interrupted_trains(train_length, n_trains, rng)
}
