//! Predictability calculus for the one-bit digitized interference signal.
//!
//! The comparator output is `d = θ(v_φ + v_c)` where `v_φ = Δv_φ cos φ` is
//! the trusted interference term and `v_c` collects every untrusted
//! contribution. Knowing `v_c`, the probability of a one follows the
//! arcsine CDF; bounding `|v_c|` at a confidence level bounds the excess
//! predictability `ε = 2·max(P₁, 1 − P₁) − 1` of each raw bit, and the
//! parity of k such bits has excess predictability at most `ε_maxᵏ`.

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::{DistrustLevel, NoiseModel, TimingBudget};
use crate::real::Real;

/// Conditional probability of a one together with a saturation flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitProbability<T> {
    pub p1: T,
    /// `|v_c| ≥ Δv_φ`: the outcome is deterministic.
    pub saturated: bool,
}

impl<T: Real> BitProbability<T> {
    /// `2·max(P₁, 1 − P₁) − 1`.
    pub fn excess_predictability(&self) -> T {
        (T::lit(2.0) * self.p1 - T::one()).abs()
    }
}

/// `P(d = 1 | v_c) = (2/π)·arcsin √(½ + v_c/(2Δv_φ))`.
///
/// Offsets beyond the swing saturate to 0 or 1 and set the flag.
pub fn p1_given_vc<T: Real>(vc: T, dvphi: T) -> Result<BitProbability<T>> {
    if !(dvphi > T::zero()) {
        return Err(Error::invalid("Δv_φ must be positive"));
    }
    if vc.is_nan() {
        return Err(Error::invalid("v_c is NaN"));
    }
    if vc >= dvphi {
        return Ok(BitProbability {
            p1: T::one(),
            saturated: true,
        });
    }
    if vc <= -dvphi {
        return Ok(BitProbability {
            p1: T::zero(),
            saturated: true,
        });
    }
    let half = T::lit(0.5);
    let arg = (half + vc / (T::lit(2.0) * dvphi)).sqrt();
    Ok(BitProbability {
        p1: T::FRAC_2_PI() * arg.asin(),
        saturated: false,
    })
}

/// Inverse of [`p1_given_vc`] averaged over the measured raw-bit mean:
/// `⟨v_c⟩ ≈ 2Δv_φ·(sin²(⟨P₁⟩π/2) − ½)`.
pub fn mean_vc_from_p1<T: Real>(p1_mean: T, two_dvphi: T) -> Result<T> {
    if !(p1_mean > T::zero() && p1_mean < T::one()) {
        return Err(Error::invalid("mean P₁ must lie in (0, 1)"));
    }
    let s = (p1_mean * T::FRAC_PI_2()).sin();
    Ok(two_dvphi * (s * s - T::lit(0.5)))
}

/// Untrusted noise sources entering `v_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NoiseSource {
    VS,
    VL,
    VPD,
    VHO,
    VRef,
}

impl NoiseSource {
    pub const ALL: [NoiseSource; 5] = [
        NoiseSource::VS,
        NoiseSource::VL,
        NoiseSource::VPD,
        NoiseSource::VHO,
        NoiseSource::VRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseSource::VS => "vS",
            NoiseSource::VL => "vL",
            NoiseSource::VPD => "vPD",
            NoiseSource::VHO => "vHO",
            NoiseSource::VRef => "vRef",
        }
    }
}

/// Per-source rms deviations (mV).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBreakdown<T> {
    pub sources: Vec<(NoiseSource, T)>,
}

impl<T: Real> NoiseBreakdown<T> {
    pub fn from_model(noise: &NoiseModel<T>) -> Self {
        NoiseBreakdown {
            sources: vec![
                (NoiseSource::VS, noise.sigma_vs),
                (NoiseSource::VL, noise.sigma_vl),
                (NoiseSource::VPD, noise.sigma_vpd),
                (NoiseSource::VHO, noise.sigma_vho),
                (NoiseSource::VRef, noise.sigma_vref),
            ],
        }
    }

    pub fn sigma(&self, source: NoiseSource) -> Option<T> {
        self.sources.iter().find(|(s, _)| *s == source).map(|&(_, x)| x)
    }

    fn complete(&self) -> Result<[T; 5]> {
        let mut out = [T::zero(); 5];
        for (slot, src) in out.iter_mut().zip(NoiseSource::ALL) {
            let matches: Vec<T> = self
                .sources
                .iter()
                .filter(|(s, _)| *s == src)
                .map(|&(_, x)| x)
                .collect();
            match matches.as_slice() {
                [x] if *x >= T::zero() => *slot = *x,
                [] => return Err(Error::invalid(format!("noise breakdown is missing {}", src.name()))),
                [_] => return Err(Error::invalid(format!("negative sigma for {}", src.name()))),
                _ => return Err(Error::invalid(format!("duplicate noise source {}", src.name()))),
            }
        }
        Ok(out)
    }
}

/// rms deviation of `v_c` under an assumed correlation structure.
///
/// Ordinary: quadrature sum of all five. Digitizer paranoid: σ_vRef added
/// linearly to the quadrature sum of the other four. Fully paranoid: linear
/// sum of all five.
pub fn combine_noise<T: Real>(breakdown: &NoiseBreakdown<T>, level: DistrustLevel) -> Result<T> {
    let s = breakdown.complete()?;
    let quad = |xs: &[T]| xs.iter().map(|&x| x * x).sum::<T>().sqrt();
    Ok(match level {
        DistrustLevel::Ordinary => quad(&s),
        DistrustLevel::DigitizerParanoid => quad(&s[..4]) + s[4],
        DistrustLevel::FullyParanoid => s.iter().copied().sum(),
    })
}

/// Two-sided Gaussian tail probability beyond `n_sigmas`.
pub fn gaussian_two_sided_tail(n_sigmas: f64) -> f64 {
    erfc(n_sigmas / std::f64::consts::SQRT_2)
}

/// Closed interval in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct Interval<T> {
    pub lb: T,
    pub ub: T,
}

impl<T: Real> Interval<T> {
    pub fn width(&self) -> T {
        self.ub - self.lb
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct PredictabilityReport<T> {
    pub distrust: Option<DistrustLevel>,
    pub sigma_vc: T,
    /// `|⟨v_c⟩| + n·σ_vc` (mV).
    pub vc_bound: T,
    /// Interference half swing after the downward fluctuation factor (mV).
    pub dvphi_eff: T,
    pub epsilon_max: T,
    pub k: u32,
    pub epsilon_max_k: T,
    pub confidence_sigmas: u32,
    /// Fraction of raw bits expected to exceed `epsilon_max`.
    pub tail_fraction: f64,
    /// `v_c` bound reached the swing: no randomness is certified.
    pub saturated: bool,
    pub freshness_ns: Option<Interval<T>>,
}

/// Bounds the excess predictability at `n_sigmas` confidence.
///
/// The swing is derated by `√(1 − nσ_vS/⟨v_S⟩)·√(1 − nσ_vL/⟨v_L⟩)` to cover
/// fluctuations in the path powers; a bound that saturates the swing yields
/// `ε = 1` rather than an error.
pub fn epsilon_bound<T: Real>(noise: &NoiseModel<T>, sigma_vc: T, n_sigmas: u32, k: u32) -> Result<PredictabilityReport<T>> {
    if n_sigmas < 1 {
        return Err(Error::invalid("n_sigmas must be ≥ 1"));
    }
    if k < 1 {
        return Err(Error::invalid("k must be ≥ 1"));
    }
    if !(sigma_vc >= T::zero()) {
        return Err(Error::invalid("σ_vc must be non-negative"));
    }
    let n = T::lit(n_sigmas as f64);
    let fs = T::one() - n * noise.sigma_vs / noise.mean_vs;
    let fl = T::one() - n * noise.sigma_vl / noise.mean_vl;
    if !(fs > T::zero() && fl > T::zero()) {
        return Err(Error::Numerical(format!(
            "downward swing factor is not real: {n_sigmas}σ path fluctuation exceeds the mean"
        )));
    }
    let dvphi_eff = noise.half_swing_dvphi * fs.sqrt() * fl.sqrt();
    let vc_bound = noise.mean_vc.abs() + n * sigma_vc;
    let p = p1_given_vc(vc_bound, dvphi_eff)?;
    let epsilon_max = if p.saturated { T::one() } else { p.excess_predictability() };
    Ok(PredictabilityReport {
        distrust: None,
        sigma_vc,
        vc_bound,
        dvphi_eff,
        epsilon_max,
        k,
        epsilon_max_k: epsilon_max.powi(k as i32),
        confidence_sigmas: n_sigmas,
        tail_fraction: gaussian_two_sided_tail(n_sigmas as f64),
        saturated: p.saturated,
        freshness_ns: None,
    })
}

/// One row of the predictability table: combined noise, bound and
/// freshness time for a distrust level.
pub fn predictability_report<T: Real>(
    noise: &NoiseModel<T>,
    level: DistrustLevel,
    n_sigmas: u32,
    k: u32,
    budget: &TimingBudget<T>,
) -> Result<PredictabilityReport<T>> {
    let sigma_vc = combine_noise(&NoiseBreakdown::from_model(noise), level)?;
    let mut r = epsilon_bound(noise, sigma_vc, n_sigmas, k)?;
    r.distrust = Some(level);
    r.freshness_ns = Some(freshness(budget, k)?);
    Ok(r)
}

/// Excess predictability of the XOR of independent bits: `Π εⱼ`.
pub fn parity_epsilon<T: Real>(eps_list: &[T]) -> Result<T> {
    let mut acc = T::one();
    for &e in eps_list {
        if !(e >= T::zero() && e <= T::one()) {
            return Err(Error::invalid("each ε must lie in [0, 1]"));
        }
        acc *= e;
    }
    Ok(acc)
}

/// Quadrature de-embedding `√(total² − Σ bg²)`.
pub fn deembed_sigma<T: Real>(total: T, backgrounds: &[T]) -> Result<T> {
    let bg: T = backgrounds.iter().map(|&b| b * b).sum();
    let radicand = total * total - bg;
    if radicand < T::zero() {
        // exact cancellation can leave a rounding-level negative value
        let scale = total * total + bg;
        if -radicand <= scale * T::epsilon() * T::lit(8.0) {
            return Ok(T::zero());
        }
        return Err(Error::Numerical(format!(
            "imaginary de-embedding: backgrounds exceed total by {:.4} mV²; inconsistent measurements",
            (-radicand).to_f64_lossy()
        )));
    }
    Ok(radicand.sqrt())
}

/// Freshness-time interval for the parity of `k` consecutive raw bits.
///
/// Single-bit bounds are `Σtᵢ ∓ 3·edge_uncertainty ∓ jitter_bound` (or the
/// measured systematic sums ∓ jitter when present); each further bit adds
/// one clock period.
pub fn freshness<T: Real>(budget: &TimingBudget<T>, k: u32) -> Result<Interval<T>> {
    if k < 1 {
        return Err(Error::invalid("k must be ≥ 1"));
    }
    budget.validate()?;
    let ps = T::lit(1e-3);
    let jitter = budget.jitter_bound * ps;
    let [lb_sys, ub_sys] = match budget.systematic_bounds {
        Some(b) => b,
        None => {
            let sum = budget.t1_best + budget.t2_best + budget.t3_best;
            let edge = T::lit(3.0) * budget.edge_uncertainty * ps;
            [sum - edge, sum + edge]
        }
    };
    let extra = budget.clock_period * T::lit((k - 1) as f64);
    Ok(Interval {
        lb: lb_sys - jitter + extra,
        ub: ub_sys + jitter + extra,
    })
}

/// Poisson p-value `P(X ≤ observed)` with mean `window_tail_prob · n_traces`.
pub fn jitter_pvalue(window_tail_prob: f64, n_traces: u64, observed_outside: u64) -> Result<f64> {
    if n_traces < 1 {
        return Err(Error::invalid("n_traces must be ≥ 1"));
    }
    if !(0.0..=1.0).contains(&window_tail_prob) {
        return Err(Error::invalid("tail probability must lie in [0, 1]"));
    }
    let lambda = window_tail_prob * n_traces as f64;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    // P(X ≤ k) = Q(k + 1, λ)
    Ok(gamma_ur(observed_outside as f64 + 1.0, lambda))
}

/// Autocorrelation bound of the extracted stream, `ε_maxᵏ / 4`.
pub fn gamma_bound<T: Real>(epsilon_max: T, k: u32) -> Result<T> {
    if !(epsilon_max >= T::zero() && epsilon_max <= T::one()) {
        return Err(Error::invalid("ε must lie in [0, 1]"));
    }
    Ok(epsilon_max.powi(k as i32) / T::lit(4.0))
}
