//! One-bit digitization against a noisy, feedback-controlled reference,
//! and the input-output (x-y) procedure that measures the comparator
//! transition width.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::extractor::{BitStream, StreamKind};
use crate::metrology::mean_vc_from_p1;
use crate::model::{NoiseModel, SimConfig};
use crate::numeric::{isotonic, levenberg_marquardt, normal_cdf, normal_pdf, LmOptions};
use crate::photonics::{PulseSample, PulseSimulator, TrainState};
use crate::real::Real;

/// Comparator reference with a single-pole integrator steering the raw-bit
/// mean toward `target`.
///
/// Per pulse the threshold is `v_ref_mean + N(0, sigma_ref)` and the set
/// point moves by `gain·(d − target)`, so an excess of ones raises the
/// threshold and lowers P(d = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparatorState<T> {
    /// Feedback-controlled set point (mV).
    pub v_ref_mean: T,
    pub sigma_ref: T,
    /// Accumulated feedback correction relative to the initial set point (mV).
    pub integrator_state: T,
    /// Loop time constant (ms).
    pub time_constant: f64,
    /// Set-point step per unit bit error (mV).
    pub gain: T,
    /// Ones fraction the loop steers toward.
    pub target: T,
    pub feedback: bool,
}

impl<T: Real> ComparatorState<T> {
    /// Comparator for `config`, with the loop gain chosen so that the
    /// linearized loop relaxes in `config.feedback_time_constant`.
    ///
    /// The set point starts at the analog center. With feedback disabled and
    /// a `bias_target`, it is displaced statically to produce that bias.
    pub fn for_config(config: &SimConfig, noise: &NoiseModel<T>) -> Result<Self> {
        crate::model::validate(config, noise)?;
        let swing = noise.simulated_swing();
        let target = config.target_ones_fraction();
        // the threshold that yields `target` ones, ignoring the small blur
        let vc = if config.bias_target.is_some() && swing > T::zero() {
            mean_vc_from_p1(T::lit(target), T::lit(2.0) * swing)?
        } else {
            T::zero()
        };
        let slope_inv = T::PI() * (swing * swing - vc * vc).max(T::zero()).sqrt();
        let gain = slope_inv / T::lit(config.pulses_per_time_constant());
        Ok(ComparatorState {
            v_ref_mean: noise.center() - vc,
            sigma_ref: noise.sigma_vref,
            integrator_state: T::zero(),
            time_constant: config.feedback_time_constant,
            gain,
            target: T::lit(target),
            feedback: config.feedback,
        })
    }

    /// Fixed-threshold comparator with no feedback.
    pub fn fixed(v_ref: T, sigma_ref: T) -> Self {
        ComparatorState {
            v_ref_mean: v_ref,
            sigma_ref,
            integrator_state: T::zero(),
            time_constant: 1.0,
            gain: T::zero(),
            target: T::lit(0.5),
            feedback: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = crate::error::Violations::default();
        if !(self.sigma_ref >= T::zero()) {
            v.push("sigma_ref", "sigma_ref < 0");
        }
        if !(self.time_constant > 0.0) {
            v.push("time_constant", "time_constant ≤ 0");
        }
        if !self.v_ref_mean.is_finite() {
            v.push("v_ref_mean", "v_ref_mean is not finite");
        }
        v.into_result()
    }

    /// Decision for analog value `v` given a standard-normal reference draw.
    #[inline]
    pub fn decide(&mut self, v: T, ref_z: T) -> bool {
        self.decide_with_offset(v, self.sigma_ref * ref_z)
    }

    /// Decision with the reference fluctuation already scaled to mV.
    #[inline]
    pub fn decide_with_offset(&mut self, v: T, ref_noise: T) -> bool {
        let d = v > self.v_ref_mean + ref_noise;
        if self.feedback {
            let step = self.gain * (if d { T::one() } else { T::zero() } - self.target);
            self.v_ref_mean += step;
            self.integrator_state += step;
        }
        d
    }

    /// Decides up to 64 consecutive values (reference noise already
    /// included) and returns them packed LSB-first.
    ///
    /// Within the word the threshold after `c` ones and `j` decisions is
    /// `base + gain·c − gain·target·j`, so each decision reduces to an
    /// integer comparison of `c` against a precomputed bound. This is the
    /// per-pulse feedback loop with the float rounding rearranged; exact
    /// ties resolve to one.
    #[inline]
    pub fn decide_word(&mut self, values: &[T]) -> u64 {
        debug_assert!(values.len() <= 64);
        let base = self.v_ref_mean;
        let mut word = 0u64;
        if !self.feedback || self.gain <= T::zero() {
            for (j, &v) in values.iter().enumerate() {
                word |= ((v > base) as u64) << j;
            }
            return word;
        }
        let g = self.gain;
        let gt = g * self.target;
        let inv = T::one() / g;
        let offset = T::one() - base * inv;
        let mut c: i32 = 0;
        let mut bounds = [0i32; 64];
        for (j, (b, &v)) in bounds.iter_mut().zip(values).enumerate() {
            // d = 1 iff ⌊(v − base)/g + target·j⌋ ≥ c
            let w = v * inv + offset + self.target * T::lit(j as f64);
            // w ≥ 0 truncates to its floor; w < 0 always gives d = 0
            *b = w.to_i32_saturating() - 1;
        }
        for (j, &k) in bounds[..values.len()].iter().enumerate() {
            let d = (k >= c) as i32;
            c += d;
            word |= (d as u64) << j;
        }
        let step = g * T::lit(c as f64) - gt * T::lit(values.len() as f64);
        self.v_ref_mean = base + step;
        self.integrator_state += step;
        word
    }
}

/// Digitizes analog samples into raw bits.
pub fn digitize<T: Real, R: Rng + ?Sized>(
    samples: &[PulseSample<T>],
    comp: &mut ComparatorState<T>,
    rng: &mut R,
) -> Result<BitStream> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to digitize"));
    }
    comp.validate()?;
    let mut out = BitStream::with_capacity(StreamKind::Raw, samples.len());
    for s in samples {
        let z = if comp.sigma_ref > T::zero() {
            T::standard_normal(rng)
        } else {
            T::zero()
        };
        out.push(comp.decide(s.v, z));
    }
    Ok(out)
}

/// Digitizes plain voltages; `ref_noise` holds pre-drawn reference
/// fluctuations in mV (one per value).
pub fn digitize_values<T: Real>(values: &[T], ref_noise: &[T], comp: &mut ComparatorState<T>, out: &mut BitStream) {
    debug_assert_eq!(values.len(), ref_noise.len());
    let mut buf = [T::zero(); 64];
    for (chunk_v, chunk_n) in values.chunks(64).zip(ref_noise.chunks(64)) {
        for ((b, &v), &n) in buf.iter_mut().zip(chunk_v).zip(chunk_n) {
            *b = v - n;
        }
        out.push_word(comp.decide_word(&buf[..chunk_v.len()]), chunk_v.len());
    }
}

/// One binned point of the transition curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionBin {
    /// Lower edge (mV).
    pub lo: f64,
    pub width: f64,
    pub n0: u64,
    pub n1: u64,
}

impl TransitionBin {
    pub fn n(&self) -> u64 {
        self.n0 + self.n1
    }

    pub fn center(&self) -> f64 {
        self.lo + 0.5 * self.width
    }

    pub fn p1(&self) -> f64 {
        if self.n() == 0 {
            f64::NAN
        } else {
            self.n1 as f64 / self.n() as f64
        }
    }

    /// Half-width of the Wilson score interval at `z`.
    pub fn wilson_halfwidth(&self, z: f64) -> f64 {
        let n = self.n() as f64;
        let p = self.p1();
        z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct TransitionFit {
    /// Reference-noise estimate after splitter de-embedding (mV).
    pub sigma_ref: f64,
    /// Fitted width before de-embedding (mV).
    pub sigma_fit: f64,
    /// Threshold location (mV).
    pub center: f64,
    pub n_events: u64,
    pub rms_residual: f64,
    pub bins: Vec<TransitionBin>,
    /// Isotonic (PAV) fit of the binned frequencies.
    pub isotonic_p1: Vec<f64>,
}

pub const TRANSITION_BIN_MV: f64 = 1.0;
pub const TRANSITION_HALF_WINDOW_MV: f64 = 50.0;
pub const MIN_TRANSITION_EVENTS: u64 = 100_000;

/// Bins `bits` by `samples` in 1 mV bins over ±50 mV around `center`.
pub fn transition_bins<T: Real>(samples: &[T], bits: &BitStream, center: f64) -> Vec<TransitionBin> {
    let n_bins = (2.0 * TRANSITION_HALF_WINDOW_MV / TRANSITION_BIN_MV).round() as usize;
    let lo = center - TRANSITION_HALF_WINDOW_MV;
    let mut bins: Vec<TransitionBin> = (0..n_bins)
        .map(|i| TransitionBin {
            lo: lo + i as f64 * TRANSITION_BIN_MV,
            width: TRANSITION_BIN_MV,
            n0: 0,
            n1: 0,
        })
        .collect();
    for (i, v) in samples.iter().enumerate() {
        let idx = ((v.to_f64_lossy() - lo) / TRANSITION_BIN_MV).floor();
        if idx >= 0.0 && (idx as usize) < n_bins {
            let b = &mut bins[idx as usize];
            if bits.get(i) {
                b.n1 += 1;
            } else {
                b.n0 += 1;
            }
        }
    }
    bins
}

/// Mean of Φ((v − c)/s) over `[a, b]`; reduces to the step fraction as
/// s → 0, so a noiseless threshold is represented exactly.
fn bin_averaged_cdf(a: f64, b: f64, c: f64, s: f64) -> f64 {
    let g = |x: f64| {
        let z = (x - c) / s;
        s * (z * normal_cdf(z) + normal_pdf(z))
    };
    if s < 1e-9 * (b - a) {
        return ((b - c.clamp(a, b)) / (b - a)).clamp(0.0, 1.0);
    }
    ((g(b) - g(a)) / (b - a)).clamp(0.0, 1.0)
}

/// Estimates the reference-noise σ from aligned (analog, bit) pairs.
///
/// P(d = 1 | v) is binned, smoothed isotonically for the initial guess,
/// and fitted by a Gaussian CDF with Wilson-interval weights. The splitter
/// noise on the measured analog copy is removed in quadrature.
pub fn estimate_transition_width<T: Real>(
    samples: &[T],
    bits: &BitStream,
    splitter_noise_sigma: Option<f64>,
) -> Result<TransitionFit> {
    if samples.len() != bits.len() {
        return Err(Error::invalid("samples and bits must be index-aligned"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    // coarse center: median of the analog values splits the ones fraction
    let ones = bits.count_ones() as f64 / bits.len() as f64;
    let mut sorted: Vec<f64> = samples.iter().map(|v| v.to_f64_lossy()).collect();
    let q = ((1.0 - ones) * (sorted.len() - 1) as f64).round() as usize;
    let (_, &mut coarse, _) = sorted.select_nth_unstable_by(q, f64::total_cmp);

    let bins = transition_bins(samples, bits, coarse);
    let n_events: u64 = bins.iter().map(|b| b.n()).sum();
    if n_events < MIN_TRANSITION_EVENTS {
        return Err(Error::InsufficientData(format!(
            "{n_events} events in the transition window, need {MIN_TRANSITION_EVENTS}"
        )));
    }
    let used: Vec<TransitionBin> = bins.iter().copied().filter(|b| b.n() > 0).collect();
    let p: Vec<f64> = used.iter().map(|b| b.p1()).collect();
    let w: Vec<f64> = used.iter().map(|b| b.n() as f64).collect();
    let iso = isotonic(&p, &w);

    let crossing = |level: f64| -> f64 {
        match iso.iter().position(|&y| y >= level) {
            Some(0) | None => used[0].center(),
            Some(i) => {
                let (y0, y1) = (iso[i - 1], iso[i]);
                let (x0, x1) = (used[i - 1].center(), used[i].center());
                if y1 > y0 {
                    x0 + (level - y0) / (y1 - y0) * (x1 - x0)
                } else {
                    x1
                }
            }
        }
    };
    let c0 = crossing(0.5);
    let s0 = (0.5 * (crossing(0.8413) - crossing(0.1587))).max(0.1 * TRANSITION_BIN_MV);

    let sigmas: Vec<f64> = used.iter().map(|b| b.wilson_halfwidth(1.0)).collect();
    // s is fitted through its logarithm to keep it positive
    let residuals = |prm: &[f64]| -> Vec<f64> {
        let (c, s) = (prm[0], prm[1].max(-12.0).exp());
        used.iter()
            .zip(&p)
            .zip(&sigmas)
            .map(|((b, &pi), &si)| (bin_averaged_cdf(b.lo, b.lo + b.width, c, s) - pi) / si)
            .collect()
    };
    let opts = LmOptions {
        // residuals are in units of their own error bars; anything this
        // small is an exact fit, reached when the reference is noiseless
        cost_floor: 1e-9,
        ..LmOptions::default()
    };
    let fit = levenberg_marquardt(residuals, &[c0, s0.ln()], opts)?;
    let sigma_fit = fit.params[1].max(-12.0).exp();
    let sigma_ref = match splitter_noise_sigma {
        Some(split) if split > 0.0 => {
            let r = sigma_fit * sigma_fit - split * split;
            if r < 0.0 {
                log::warn!("splitter noise {split} mV exceeds fitted width {sigma_fit:.3} mV; reporting 0");
                0.0
            } else {
                r.sqrt()
            }
        }
        _ => sigma_fit,
    };
    Ok(TransitionFit {
        sigma_ref,
        sigma_fit,
        center: fit.params[0],
        n_events,
        rms_residual: fit.rms_residual(),
        bins,
        isotonic_p1: iso,
    })
}

/// Emits `v_bin,n0,n1,p1` rows.
pub fn write_transition_csv<W: Write>(bins: &[TransitionBin], mut w: W) -> Result<()> {
    writeln!(w, "v_bin,n0,n1,p1")?;
    for b in bins {
        writeln!(w, "{:.3},{},{},{:.6}", b.center(), b.n0, b.n1, b.p1())?;
    }
    Ok(())
}

/// Simulated x-y measurement: the comparator sees the true analog voltage
/// with a fixed, noisy threshold at the distribution center, while the
/// recorded copy passes a splitter adding `splitter_sigma` of Gaussian noise.
pub fn simulate_xy<T: Real, R: Rng + ?Sized>(
    sim: &PulseSimulator<T>,
    n_pulses: usize,
    splitter_sigma: T,
    rng: &mut R,
) -> (Vec<T>, BitStream) {
    let noise = sim.noise();
    let mut comp = ComparatorState::fixed(noise.center(), noise.sigma_vref);
    let mut state = TrainState::random_start(rng);
    let mut recorded = Vec::with_capacity(n_pulses);
    let mut bits = BitStream::with_capacity(StreamKind::Raw, n_pulses);
    for _ in 0..n_pulses {
        let v = sim.pulse(&mut state, rng).v;
        bits.push(comp.decide(v, T::standard_normal(rng)));
        let split = if splitter_sigma > T::zero() {
            splitter_sigma * T::standard_normal(rng)
        } else {
            T::zero()
        };
        recorded.push(v + split);
    }
    (recorded, bits)
}
