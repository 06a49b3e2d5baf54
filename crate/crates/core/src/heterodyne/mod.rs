//! Heterodyne analysis of laser phase diffusion.
//!
//! A beat note `v(t) = |A(t)e^{iΩt} + ℰ(t)/2|²` between a local oscillator
//! of mean amplitude `Ā` and the test field `ℰ` is smoothed into field
//! quadratures, then the phase dispersion over a short lag is binned by
//! `|ℰ|`. Spontaneous emission gives `δφ_RMS ∝ |ℰ|⁻¹`.

pub mod holevo;
pub mod kalman;

use std::io::{BufRead, Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

pub use holevo::{
    classify, fit_scaling, holevo_dispersion, holevo_variance, AmplitudeBinning, BinStatus, DiffusionMechanism,
    HolevoBin, HolevoDispersion, ScalingFit,
};
pub use kalman::{kalman_filter, rts_smooth, smooth_all, KalmanModel};

pub const DEFAULT_SAMPLE_PERIOD_NS: f64 = 0.05;
/// 2π · 3 GHz in rad/ns.
pub const DEFAULT_OMEGA: f64 = 2.0 * std::f64::consts::PI * 3.0;
pub const MIN_SYNTH_SAMPLES: usize = 1000;

/// Sampled beat-note voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterodyneTrace<T> {
    /// mV, sample `i` taken at `t = i · sample_period_ns`.
    pub samples: Vec<T>,
    pub sample_period_ns: f64,
    /// Beat angular frequency, rad/ns.
    pub omega: f64,
    /// `Ā`, sqrt-mV.
    pub lo_amplitude: T,
}

impl<T: Real> HeterodyneTrace<T> {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InsufficientData("empty heterodyne trace".into()));
        }
        if !(self.sample_period_ns > 0.0 && self.sample_period_ns.is_finite()) {
            return Err(Error::invalid("sample period must be positive"));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid("beat frequency must be finite and ≥ 0"));
        }
        // sample rate must exceed twice the beat frequency Ω/2π
        if self.omega * self.sample_period_ns >= std::f64::consts::PI {
            return Err(Error::invalid(format!(
                "beat at {:.3} GHz is not resolvable at {:.3} GSa/s",
                self.omega / (2.0 * std::f64::consts::PI),
                1.0 / self.sample_period_ns
            )));
        }
        if !(self.lo_amplitude > T::zero() && self.lo_amplitude.is_finite()) {
            return Err(Error::invalid("LO amplitude must be positive"));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite sample in trace".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads `time_ns,v_mV` rows; a header line is skipped if present.
    /// The sample period is taken from the time column, which must be
    /// uniformly spaced.
    pub fn read_csv<R: BufRead>(r: R, omega: f64, lo_amplitude: T) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (t, v) = match (cols.next(), cols.next(), cols.next()) {
                (Some(t), Some(v), None) => (t, v),
                _ => return Err(Error::Format(format!("line {}: expected two columns", lineno + 1))),
            };
            match (t.parse::<f64>(), v.parse::<f64>()) {
                (Ok(t), Ok(v)) => {
                    times.push(t);
                    samples.push(T::lit(v));
                }
                _ if lineno == 0 => continue,
                _ => return Err(Error::Format(format!("line {}: not numeric", lineno + 1))),
            }
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData("trace needs at least two samples".into()));
        }
        let period = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for (i, t) in times.iter().enumerate() {
            let expected = times[0] + period * i as f64;
            if (t - expected).abs() > 1e-3 * period {
                return Err(Error::Format(format!("non-uniform time axis at row {i}")));
            }
        }
        let trace = HeterodyneTrace {
            samples,
            sample_period_ns: period,
            omega,
            lo_amplitude,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_ns,v_mV")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.sample_period_ns * i as f64, v.to_f64_lossy())?;
        }
        Ok(())
    }

    /// Raw little-endian `f32` samples.
    pub fn read_f32<R: Read>(mut r: R, sample_period_ns: f64, omega: f64, lo_amplitude: T) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format("f32 trace length is not a multiple of 4 bytes".into()));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let trace = HeterodyneTrace {
            samples,
            sample_period_ns,
            omega,
            lo_amplitude,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn write_f32<W: Write>(&self, mut w: W) -> Result<()> {
        for v in &self.samples {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

/// Per-sample `(δA, Re ℰ, Im ℰ)` with posterior variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEstimate<T> {
    pub delta_a: Vec<T>,
    pub re: Vec<T>,
    pub im: Vec<T>,
    pub var_delta_a: Vec<T>,
    pub var_re: Vec<T>,
    pub var_im: Vec<T>,
    pub sample_period_ns: f64,
}

impl<T: Real> FieldEstimate<T> {
    pub fn with_capacity(n: usize, sample_period_ns: f64) -> Self {
        FieldEstimate {
            delta_a: Vec::with_capacity(n),
            re: Vec::with_capacity(n),
            im: Vec::with_capacity(n),
            var_delta_a: Vec::with_capacity(n),
            var_re: Vec::with_capacity(n),
            var_im: Vec::with_capacity(n),
            sample_period_ns,
        }
    }

    pub fn push(&mut self, x: [T; 3], var: [T; 3]) {
        self.delta_a.push(x[0]);
        self.re.push(x[1]);
        self.im.push(x[2]);
        self.var_delta_a.push(var[0]);
        self.var_re.push(var[1]);
        self.var_im.push(var[2]);
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// `|ℰ|`
    pub fn amplitude(&self, i: usize) -> T {
        self.re[i].hypot(self.im[i])
    }

    /// `φ = atan2(Im ℰ, Re ℰ)`
    pub fn phase(&self, i: usize) -> T {
        self.im[i].atan2(self.re[i])
    }

    pub fn amplitudes(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.amplitude(i)).collect()
    }

    pub fn phases(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.phase(i)).collect()
    }

    /// RMS distance to `other` in the `(Re ℰ, Im ℰ)` plane over `range`.
    pub fn rms_field_error(&self, other: &FieldEstimate<T>, range: std::ops::Range<usize>) -> f64 {
        let n = range.len().max(1) as f64;
        let sum: f64 = range
            .map(|i| {
                let dr = (self.re[i] - other.re[i]).to_f64_lossy();
                let di = (self.im[i] - other.im[i]).to_f64_lossy();
                dr * dr + di * di
            })
            .sum();
        (sum / n).sqrt()
    }
}

/// Deterministic part of the field motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldDynamics {
    /// Free complex random walk.
    RandomWalk,
    /// Below threshold: relaxation towards `ℰ = 0` at `damping` (1/ns).
    BelowThreshold { damping: f64 },
    /// Above threshold: `|ℰ|` relaxes towards `amplitude` at `damping`.
    AboveThreshold { damping: f64, amplitude: f64 },
}

/// How the phase is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseMechanism {
    /// Isotropic kicks to `(Re ℰ, Im ℰ)`; the phase follows the field.
    SpontaneousEmission,
    /// The field dynamics only set `|ℰ|`; the phase walks independently
    /// with diffusion `diffusion_at_reference · (|ℰ|/reference)^{2·exponent}`
    /// in rad²/ns, so `δφ_RMS ∝ |ℰ|^{exponent}`.
    PhaseWalk {
        exponent: f64,
        diffusion_at_reference: f64,
        reference: f64,
    },
}

/// Parameters of a synthetic heterodyne record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams {
    /// Per-component field diffusion `D`: each quadrature gains variance
    /// `2D·dt` per step (units `Ā²/ns`).
    pub diffusion_coefficient: f64,
    pub dynamics: FieldDynamics,
    pub mechanism: PhaseMechanism,
    /// Standard deviation of LO amplitude fluctuations `δA`.
    pub lo_sigma: f64,
    /// Relaxation rate of `δA`, 1/ns.
    pub lo_damping: f64,
    pub lo_amplitude: f64,
    pub omega: f64,
    pub sample_period_ns: f64,
    /// Initial field; drawn from the stationary law when `None` (zero for a
    /// free walk).
    pub initial_field: Option<(f64, f64)>,
}

impl SynthesisParams {
    /// Below-threshold spontaneous-emission diffusion with `Ā = 1`.
    pub fn below_threshold(diffusion_coefficient: f64, damping: f64) -> Self {
        SynthesisParams {
            diffusion_coefficient,
            dynamics: FieldDynamics::BelowThreshold { damping },
            mechanism: PhaseMechanism::SpontaneousEmission,
            lo_sigma: 0.0,
            lo_damping: 1.0,
            lo_amplitude: 1.0,
            omega: DEFAULT_OMEGA,
            sample_period_ns: DEFAULT_SAMPLE_PERIOD_NS,
            initial_field: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.diffusion_coefficient) {
            return Err(Error::invalid("diffusion coefficient must be ≥ 0"));
        }
        if !(finite_nonneg(self.lo_sigma) && finite_nonneg(self.lo_damping)) {
            return Err(Error::invalid("LO fluctuation parameters must be ≥ 0"));
        }
        match self.dynamics {
            FieldDynamics::RandomWalk => {}
            FieldDynamics::BelowThreshold { damping } if damping > 0.0 && damping.is_finite() => {}
            FieldDynamics::AboveThreshold { damping, amplitude }
                if damping > 0.0 && damping.is_finite() && amplitude > 0.0 && amplitude.is_finite() => {}
            _ => return Err(Error::invalid("field damping and amplitude must be positive")),
        }
        if let PhaseMechanism::PhaseWalk {
            exponent,
            diffusion_at_reference,
            reference,
        } = self.mechanism
        {
            if !(exponent.is_finite() && finite_nonneg(diffusion_at_reference) && reference > 0.0) {
                return Err(Error::invalid("phase-walk parameters out of range"));
            }
        }
        Ok(())
    }

    /// Per-step quadrature variance and the deterministic decay factor.
    fn field_step(&self) -> (f64, f64) {
        let dt = self.sample_period_ns;
        let d = self.diffusion_coefficient;
        match self.dynamics {
            FieldDynamics::RandomWalk | FieldDynamics::AboveThreshold { .. } => (2.0 * d * dt, 1.0),
            FieldDynamics::BelowThreshold { damping } => {
                // exact Ornstein-Uhlenbeck step with stationary variance D/γ
                let a = (-damping * dt).exp();
                (d * (1.0 - a * a) / damping, a)
            }
        }
    }
}

impl SynthesisParams {
    /// Phase-walk alternative with `δφ_RMS ∝ |ℰ|^{exponent}` and a slowly
    /// wandering amplitude of stationary quadrature spread `sigma_field`.
    /// `dphi_at_reference` is the per-sample phase step at `|ℰ| = sigma_field`.
    pub fn phase_walk(exponent: f64, dphi_at_reference: f64, sigma_field: f64, amplitude_diffusion: f64) -> Self {
        let dt = DEFAULT_SAMPLE_PERIOD_NS;
        let mut p = SynthesisParams::below_threshold(amplitude_diffusion, amplitude_diffusion / (sigma_field * sigma_field));
        p.mechanism = PhaseMechanism::PhaseWalk {
            exponent,
            diffusion_at_reference: dphi_at_reference * dphi_at_reference / (2.0 * dt),
            reference: sigma_field,
        };
        p
    }

    /// Typical field scale: stationary quadrature spread, or the ring radius
    /// above threshold, or the initial amplitude of a free walk.
    fn field_scale(&self) -> f64 {
        match self.dynamics {
            FieldDynamics::BelowThreshold { damping } => (self.diffusion_coefficient / damping).sqrt(),
            FieldDynamics::AboveThreshold { amplitude, .. } => amplitude / std::f64::consts::SQRT_2,
            FieldDynamics::RandomWalk => {
                let (re, im) = self.initial_field.unwrap_or((0.0, 0.0));
                (re.hypot(im) / std::f64::consts::SQRT_2).max(f64::MIN_POSITIVE)
            }
        }
    }

    /// `E[|ℰ|^k]` for a complex Gaussian field of quadrature spread `σ`.
    fn amplitude_moment(&self, k: f64) -> f64 {
        let s = self.field_scale();
        (2.0 * s * s).powf(k / 2.0) * statrs::function::gamma::gamma(1.0 + k / 2.0)
    }
}

/// Filter model matched to synthesis parameters: the field process noise is
/// the mean per-sample quadrature increment, and `δA` is given enough
/// freedom to absorb the dropped `|ℰ|²/4` term.
pub fn matched_model<T: Real>(params: &SynthesisParams, noise_sigma: f64) -> KalmanModel<T> {
    let dt = params.sample_period_ns;
    let (field_step, _) = params.field_step();
    let tangential = match params.mechanism {
        PhaseMechanism::SpontaneousEmission => 0.0,
        PhaseMechanism::PhaseWalk {
            exponent,
            diffusion_at_reference,
            reference,
        } => {
            // ½ · 2D_ref dt · E[|ℰ|² (|ℰ|/ref)^{2e}] per quadrature
            diffusion_at_reference * dt * params.amplitude_moment(2.0 + 2.0 * exponent) / reference.powf(2.0 * exponent)
        }
    };
    let q_field = field_step + tangential;
    let lo_decay = (-params.lo_damping * dt).exp();
    let q_lo = params.lo_sigma * params.lo_sigma * (1.0 - lo_decay * lo_decay);
    // |ℰ|²/4 enters like 2Ā·δA; its step has variance ≈ E[|ℰ|²]·q/(16Ā²)
    let a2 = params.lo_amplitude * params.lo_amplitude;
    let q_sq = params.amplitude_moment(2.0) * 2.0 * q_field / (16.0 * a2);
    let s2 = params.field_scale().powi(2);
    KalmanModel {
        process_noise: [T::lit(q_lo + q_sq), T::lit(q_field), T::lit(q_field)],
        measurement_sigma: T::lit(noise_sigma.max(1e-6 * params.lo_amplitude * params.lo_amplitude)),
        prior_var: [T::lit(params.lo_sigma.powi(2) + s2 * s2 / a2), T::lit(4.0 * s2), T::lit(4.0 * s2)],
    }
}

/// Synthesises a trace and its ground-truth field.
///
/// The rendered voltage keeps the `δA²`, `δA·ℰ` and `|ℰ|²` terms that the
/// filter model drops.
pub fn synthesize_trace<R: Rng + ?Sized, T: Real>(
    params: &SynthesisParams,
    noise_sigma: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<(HeterodyneTrace<T>, FieldEstimate<T>)> {
    params.validate()?;
    if n_samples < MIN_SYNTH_SAMPLES {
        return Err(Error::invalid(format!("need ≥ {MIN_SYNTH_SAMPLES} samples")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be ≥ 0"));
    }
    let truth = simulate_field::<R, T>(params, n_samples, rng);
    let trace = render_trace(&truth, params.lo_amplitude, params.omega, noise_sigma, rng)?;
    Ok((trace, truth))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    f64::standard_normal(rng)
}

/// Field and LO trajectories only.
pub fn simulate_field<R: Rng + ?Sized, T: Real>(params: &SynthesisParams, n: usize, rng: &mut R) -> FieldEstimate<T> {
    let dt = params.sample_period_ns;
    let (step_var, decay) = params.field_step();
    let step = step_var.sqrt();
    let (mut re, mut im) = match (params.initial_field, params.dynamics) {
        (Some(f), _) => f,
        (None, FieldDynamics::RandomWalk) => (0.0, 0.0),
        (None, FieldDynamics::BelowThreshold { damping }) => {
            let s = (params.diffusion_coefficient / damping).sqrt();
            (s * normal(rng), s * normal(rng))
        }
        (None, FieldDynamics::AboveThreshold { amplitude, .. }) => (amplitude, 0.0),
    };
    let lo_decay = (-params.lo_damping * dt).exp();
    let lo_step = params.lo_sigma * (1.0 - lo_decay * lo_decay).sqrt();
    let mut da = params.lo_sigma * normal(rng);
    let mut phase = im.atan2(re);

    let zero = T::zero();
    let mut out = FieldEstimate::with_capacity(n, dt);
    for i in 0..n {
        if i > 0 {
            re = decay * re + step * normal(rng);
            im = decay * im + step * normal(rng);
            if let FieldDynamics::AboveThreshold { damping, amplitude } = params.dynamics {
                let r = re.hypot(im);
                if r > 0.0 {
                    let pull = damping * (amplitude - r) * dt / r;
                    re += pull * re;
                    im += pull * im;
                }
            }
            da = lo_decay * da + lo_step * normal(rng);
        }
        let (er, ei) = match params.mechanism {
            PhaseMechanism::SpontaneousEmission => (re, im),
            PhaseMechanism::PhaseWalk {
                exponent,
                diffusion_at_reference,
                reference,
            } => {
                let r = re.hypot(im);
                if i > 0 {
                    let d = diffusion_at_reference * (r / reference).powf(2.0 * exponent);
                    phase += (2.0 * d * dt).sqrt() * normal(rng);
                }
                let (s, c) = phase.sin_cos();
                (r * c, r * s)
            }
        };
        out.push([T::lit(da), T::lit(er), T::lit(ei)], [zero; 3]);
    }
    out
}

/// Renders `|(Ā + δA)e^{iΩt} + ℰ/2|² + noise` from a field trajectory.
pub fn render_trace<R: Rng + ?Sized, T: Real>(
    field: &FieldEstimate<T>,
    lo_amplitude: f64,
    omega: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<HeterodyneTrace<T>> {
    let dt = field.sample_period_ns;
    let samples = (0..field.len())
        .map(|i| {
            let a = lo_amplitude + field.delta_a[i].to_f64_lossy();
            let (s, c) = (omega * dt * i as f64).sin_cos();
            let x = a * c + 0.5 * field.re[i].to_f64_lossy();
            let y = a * s + 0.5 * field.im[i].to_f64_lossy();
            let n = if noise_sigma > 0.0 { noise_sigma * normal(rng) } else { 0.0 };
            T::lit(x * x + y * y + n)
        })
        .collect();
    let trace = HeterodyneTrace {
        samples,
        sample_period_ns: dt,
        omega,
        lo_amplitude: T::lit(lo_amplitude),
    };
    trace.validate()?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rng(seed: u64) -> Xoshiro256PlusPlus {
        Xoshiro256PlusPlus::seed_from_u64(seed)
    }

    #[test]
    fn nyquist_check() {
        let mut t = HeterodyneTrace {
            samples: vec![1.0f64; 10],
            sample_period_ns: 0.05,
            omega: DEFAULT_OMEGA,
            lo_amplitude: 1.0,
        };
        assert!(t.validate().is_ok());
        t.omega = 2.0 * std::f64::consts::PI * 11.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn zero_diffusion_keeps_phase() {
        let mut p = SynthesisParams::below_threshold(0.0, 1.0);
        p.dynamics = FieldDynamics::RandomWalk;
        p.initial_field = Some((0.06, 0.08));
        let (trace, truth) = synthesize_trace::<_, f64>(&p, 0.0, 2000, &mut rng(1)).unwrap();
        let phi0 = 0.08f64.atan2(0.06);
        assert!(truth.phases().iter().all(|&p| p == phi0));
        let model = KalmanModel {
            process_noise: [1e-12, 1e-12, 1e-12],
            measurement_sigma: 1e-4,
            prior_var: [1e-2, 1e-2, 1e-2],
        };
        let est = rts_smooth(&trace, &model).unwrap();
        // the dropped |ℰ|²/4 term is constant here and lands in δA
        for i in 0..est.len() {
            assert!((est.phase(i) - phi0).abs() < 1e-6, "{i}: {}", est.phase(i));
        }
    }

    #[test]
    fn amplitude_identity() {
        let p = SynthesisParams::below_threshold(1e-4, 1e-2);
        let (_, truth) = synthesize_trace::<_, f64>(&p, 0.0, 1000, &mut rng(2)).unwrap();
        for i in 0..truth.len() {
            let a = truth.amplitude(i);
            assert!((a * a - (truth.re[i].powi(2) + truth.im[i].powi(2))).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_and_f32_roundtrip() {
        let p = SynthesisParams::below_threshold(1e-4, 1e-2);
        let (trace, _) = synthesize_trace::<_, f64>(&p, 0.01, 1000, &mut rng(3)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = HeterodyneTrace::<f64>::read_csv(&buf[..], trace.omega, 1.0).unwrap();
        assert!((back.sample_period_ns - 0.05).abs() < 1e-12);
        assert_eq!(back.samples, trace.samples);

        let mut raw = Vec::new();
        trace.write_f32(&mut raw).unwrap();
        let back = HeterodyneTrace::<f32>::read_f32(&raw[..], 0.05, trace.omega, 1.0).unwrap();
        assert_eq!(back.len(), trace.len());
        assert!((back.samples[7] as f64 - trace.samples[7]).abs() < 1e-6);
        assert!(HeterodyneTrace::<f32>::read_f32(&raw[..5], 0.05, trace.omega, 1.0).is_err());
    }

    #[test]
    fn csv_rejects_irregular_time() {
        let csv = "time_ns,v_mV\n0,1\n0.05,1\n0.2,1\n";
        assert!(HeterodyneTrace::<f64>::read_csv(csv.as_bytes(), DEFAULT_OMEGA, 1.0).is_err());
    }

    #[test]
    fn short_synthesis_rejected() {
        let p = SynthesisParams::below_threshold(1e-4, 1e-2);
        assert!(synthesize_trace::<_, f64>(&p, 0.0, 999, &mut rng(4)).is_err());
    }
}
