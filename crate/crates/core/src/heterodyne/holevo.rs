//! Amplitude-binned phase dispersion and its power-law scaling.

use std::io::Write;

use serde::Serialize;

use super::FieldEstimate;
use crate::error::{Error, Result};
use crate::numeric::weighted_line_fit;
use crate::real::Real;

pub const DEFAULT_LAG_NS: f64 = 0.05;
pub const DEFAULT_AMPLITUDE_BINS: usize = 20;
pub const MIN_PAIRS_PER_BIN: u64 = 100;
pub const MIN_FIT_BINS: usize = 4;
pub const DEFAULT_MIN_SNR: f64 = 10.0;

/// Holevo variance `|⟨e^{iφ}⟩|⁻² − 1` of a set of angles; `None` when the
/// mean resultant vanishes.
pub fn holevo_variance(angles: &[f64]) -> Option<f64> {
    if angles.is_empty() {
        return None;
    }
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| {
        let (sa, ca) = a.sin_cos();
        (s + sa, c + ca)
    });
    let n = angles.len() as f64;
    let r2 = (s * s + c * c) / (n * n);
    if r2 > 0.0 {
        Some(r2.recip() - 1.0)
    } else {
        None
    }
}

/// Logarithmic binning of `|ℰ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeBinning {
    pub n_bins: usize,
    pub min_pairs: u64,
    /// Fixed `[lo, hi)` range; the observed range is used when `None`.
    pub range: Option<(f64, f64)>,
    /// Pairs whose starting amplitude is below `min_snr` posterior standard
    /// deviations of the field are ignored: there the phase estimate is
    /// dominated by estimation noise, which itself scales as `|ℰ|⁻¹`.
    pub min_snr: f64,
}

impl Default for AmplitudeBinning {
    fn default() -> Self {
        AmplitudeBinning {
            n_bins: DEFAULT_AMPLITUDE_BINS,
            min_pairs: MIN_PAIRS_PER_BIN,
            range: None,
            min_snr: DEFAULT_MIN_SNR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinStatus {
    Ok,
    TooFewPairs,
    /// `|⟨e^{iΔφ}⟩|` is statistically indistinguishable from zero.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolevoBin {
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    pub n_pairs: u64,
    /// Pair-averaged `ln |ℰ|`; NaN for an empty bin.
    pub mean_ln_amplitude: f64,
    pub mean_resultant: f64,
    pub dphi_rms: Option<f64>,
    pub status: BinStatus,
}

impl HolevoBin {
    /// Geometric mean of the amplitudes in the bin, or the geometric
    /// midpoint of its edges when empty. The amplitude density is far from
    /// flat across a bin, so the edge midpoint would bias the fitted slope.
    pub fn center(&self) -> f64 {
        if self.n_pairs > 0 {
            self.mean_ln_amplitude.exp()
        } else {
            (self.amplitude_lo * self.amplitude_hi).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolevoDispersion {
    pub lag_samples: usize,
    pub lag_ns: f64,
    pub bins: Vec<HolevoBin>,
}

impl HolevoDispersion {
    pub fn valid_bins(&self) -> impl Iterator<Item = &HolevoBin> {
        self.bins.iter().filter(|b| b.status == BinStatus::Ok)
    }

    pub fn skipped(&self) -> usize {
        self.bins.len() - self.valid_bins().count()
    }

    pub fn any_saturated(&self) -> bool {
        self.bins.iter().any(|b| b.status == BinStatus::Saturated)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "amplitude_lo,amplitude_hi,amplitude_center,n_pairs,dphi_rms,status")?;
        for b in &self.bins {
            let d = b.dphi_rms.map(|d| format!("{d:.6e}")).unwrap_or_default();
            let status = match b.status {
                BinStatus::Ok => "ok",
                BinStatus::TooFewPairs => "too-few-pairs",
                BinStatus::Saturated => "saturated",
            };
            writeln!(
                w,
                "{:.6e},{:.6e},{:.6e},{},{d},{status}",
                b.amplitude_lo,
                b.amplitude_hi,
                b.center(),
                b.n_pairs
            )?;
        }
        Ok(())
    }
}

fn lag_in_samples(lag_ns: f64, period_ns: f64) -> Result<usize> {
    let lag = lag_ns / period_ns;
    let rounded = lag.round();
    if !(rounded >= 1.0) || (lag - rounded).abs() > 1e-6 * rounded {
        return Err(Error::invalid(format!(
            "lag {lag_ns} ns is not a positive multiple of the sample period {period_ns} ns"
        )));
    }
    Ok(rounded as usize)
}

fn resolved<T: Real>(e: &FieldEstimate<T>, i: usize, amplitude: f64, min_snr: f64) -> bool {
    let var = (e.var_re[i] + e.var_im[i]).to_f64_lossy();
    amplitude * amplitude >= min_snr * min_snr * var
}

/// `δφ_RMS` per `|ℰ|` bin over sample pairs `(t, t + lag)`, binned by the
/// amplitude at `t`. Several estimates may be pooled; they must share the
/// sample period.
pub fn holevo_dispersion<T: Real>(
    estimates: &[FieldEstimate<T>],
    lag_ns: f64,
    binning: AmplitudeBinning,
) -> Result<HolevoDispersion> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InsufficientData("no field estimates".into()))?;
    let period = first.sample_period_ns;
    if estimates.iter().any(|e| (e.sample_period_ns - period).abs() > 1e-12 * period) {
        return Err(Error::invalid("estimates have different sample periods"));
    }
    if binning.n_bins == 0 {
        return Err(Error::invalid("need at least one amplitude bin"));
    }
    let lag = lag_in_samples(lag_ns, period)?;

    let (lo, hi) = match binning.range {
        Some(r) => r,
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for e in estimates {
                for i in 0..e.len().saturating_sub(lag) {
                    let a = e.amplitude(i).to_f64_lossy();
                    if a > 0.0 && resolved(e, i, a, binning.min_snr) {
                        lo = lo.min(a);
                        hi = hi.max(a);
                    }
                }
            }
            (lo, hi)
        }
    };
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InsufficientData("amplitude range is empty or degenerate".into()));
    }
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let width = (ln_hi - ln_lo) / binning.n_bins as f64;

    let mut sum_c = vec![0.0f64; binning.n_bins];
    let mut sum_s = vec![0.0f64; binning.n_bins];
    let mut sum_ln = vec![0.0f64; binning.n_bins];
    let mut count = vec![0u64; binning.n_bins];
    for e in estimates {
        for i in 0..e.len().saturating_sub(lag) {
            let (re0, im0) = (e.re[i].to_f64_lossy(), e.im[i].to_f64_lossy());
            let (re1, im1) = (e.re[i + lag].to_f64_lossy(), e.im[i + lag].to_f64_lossy());
            let a0 = re0.hypot(im0);
            let a1 = re1.hypot(im1);
            if !(a0 >= lo && a0 <= hi) || a1 == 0.0 || !resolved(e, i, a0, binning.min_snr) {
                continue;
            }
            let ln_a0 = a0.ln();
            let b = (((ln_a0 - ln_lo) / width) as usize).min(binning.n_bins - 1);
            sum_ln[b] += ln_a0;
            // e^{i(φ₁ − φ₀)} = z₁ z̄₀ / |z₁ z̄₀|
            let norm = a0 * a1;
            sum_c[b] += (re1 * re0 + im1 * im0) / norm;
            sum_s[b] += (im1 * re0 - re1 * im0) / norm;
            count[b] += 1;
        }
    }

    let bins = (0..binning.n_bins)
        .map(|b| {
            let n = count[b];
            let edge = |j: usize| (ln_lo + width * j as f64).exp();
            let (amplitude_lo, amplitude_hi) = (edge(b), if b + 1 == binning.n_bins { hi } else { edge(b + 1) });
            let nf = n as f64;
            let r = if n > 0 { sum_c[b].hypot(sum_s[b]) / nf } else { 0.0 };
            let (dphi_rms, status) = if n < binning.min_pairs {
                (None, BinStatus::TooFewPairs)
            } else if r * r <= 1.0 / nf {
                // a uniform phase leaves |⟨e^{iΔφ}⟩|² ≈ 1/n
                (None, BinStatus::Saturated)
            } else {
                (Some((r.powi(-2) - 1.0).max(0.0).sqrt()), BinStatus::Ok)
            };
            HolevoBin {
                amplitude_lo,
                amplitude_hi,
                n_pairs: n,
                mean_ln_amplitude: if n > 0 { sum_ln[b] / nf } else { f64::NAN },
                mean_resultant: r,
                dphi_rms,
                status,
            }
        })
        .collect();
    Ok(HolevoDispersion {
        lag_samples: lag,
        lag_ns: lag as f64 * period,
        bins,
    })
}

/// Power law `δφ_RMS = e^{intercept} |ℰ|^{slope}` fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub n_bins: usize,
}

impl ScalingFit {
    /// Per-component field diffusion coefficient implied by a −1 law,
    /// `D = (δφ·|ℰ|)² / (2Δt)`.
    pub fn diffusion_coefficient(&self, lag_ns: f64) -> f64 {
        (2.0 * self.intercept).exp() / (2.0 * lag_ns)
    }
}

/// Weighted least squares of `ln δφ` on `ln |ℰ|`, weighted by pair count
/// (the inverse variance of `ln δφ` scales as `n`). Bins with zero
/// dispersion are excluded.
pub fn fit_scaling(dispersion: &HolevoDispersion) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64, f64)> = dispersion
        .valid_bins()
        .filter_map(|b| b.dphi_rms.filter(|&d| d > 0.0).map(|d| (b.center().ln(), d.ln(), b.n_pairs as f64)))
        .collect();
    if pts.len() < MIN_FIT_BINS {
        return Err(Error::InsufficientData(format!(
            "scaling fit needs ≥ {MIN_FIT_BINS} valid bins, got {}",
            pts.len()
        )));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let f = weighted_line_fit(&x, &y, &w)?;
    Ok(ScalingFit {
        slope: f.slope,
        intercept: f.intercept,
        slope_stderr: f.slope_stderr,
        intercept_stderr: f.intercept_stderr,
        n_bins: pts.len(),
    })
}

/// Physical mechanism suggested by the fitted exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMechanism {
    /// `δφ ∝ |ℰ|⁻¹`
    SpontaneousEmission,
    /// `|ℰ|`-independent, e.g. refractive index noise.
    IndexFluctuation,
    /// `δφ ∝ |ℰ|`, e.g. fluctuating nonlinearity.
    Nonlinearity,
}

impl DiffusionMechanism {
    pub fn exponent(self) -> f64 {
        match self {
            DiffusionMechanism::SpontaneousEmission => -1.0,
            DiffusionMechanism::IndexFluctuation => 0.0,
            DiffusionMechanism::Nonlinearity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiffusionMechanism::SpontaneousEmission => "spontaneous-emission",
            DiffusionMechanism::IndexFluctuation => "index-fluctuation",
            DiffusionMechanism::Nonlinearity => "nonlinearity",
        }
    }
}

/// Nearest candidate exponent.
pub fn classify(fit: &ScalingFit) -> DiffusionMechanism {
    [
        DiffusionMechanism::SpontaneousEmission,
        DiffusionMechanism::IndexFluctuation,
        DiffusionMechanism::Nonlinearity,
    ]
    .into_iter()
    .min_by(|a, b| {
        (fit.slope - a.exponent())
            .abs()
            .total_cmp(&(fit.slope - b.exponent()).abs())
    })
    .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn synthetic(slope: f64) -> HolevoDispersion {
        let bins = (0..10)
            .map(|j| {
                let lo = 0.01 * 1.5f64.powi(j);
                let hi = lo * 1.5;
                let c: f64 = (lo * hi).sqrt();
                HolevoBin {
                    amplitude_lo: lo,
                    amplitude_hi: hi,
                    n_pairs: 1000 + 37 * j as u64,
                    mean_ln_amplitude: c.ln(),
                    mean_resultant: 1.0,
                    dphi_rms: Some(0.02 * c.powf(slope)),
                    status: BinStatus::Ok,
                }
            })
            .collect();
        HolevoDispersion {
            lag_samples: 1,
            lag_ns: 0.05,
            bins,
        }
    }

    #[test]
    fn exact_power_laws() {
        for (s, m) in [
            (-1.0, DiffusionMechanism::SpontaneousEmission),
            (0.0, DiffusionMechanism::IndexFluctuation),
            (1.0, DiffusionMechanism::Nonlinearity),
        ] {
            let f = fit_scaling(&synthetic(s)).unwrap();
            assert!((f.slope - s).abs() < 1e-6, "{}", f.slope);
            assert!((f.intercept - 0.02f64.ln()).abs() < 1e-6);
            assert_eq!(classify(&f), m);
        }
    }

    #[test]
    fn too_few_bins() {
        let mut d = synthetic(-1.0);
        d.bins.truncate(3);
        assert!(matches!(fit_scaling(&d), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn holevo_matches_ordinary_variance_for_small_spread() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let d = Normal::new(0.0, 0.05).unwrap();
        let a: Vec<f64> = (0..200_000).map(|_| d.sample(&mut rng)).collect();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64;
        let h = holevo_variance(&a).unwrap();
        assert!(h >= var);
        assert!((h / var - 1.0).abs() < 0.01, "{h} {var}");
    }

    #[test]
    fn holevo_of_gaussian_wrap() {
        // for Gaussian angles |⟨e^{iφ}⟩| = e^{−σ²/2}
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let d = Normal::new(0.0, 0.8).unwrap();
        let a: Vec<f64> = (0..400_000).map(|_| d.sample(&mut rng)).collect();
        let h = holevo_variance(&a).unwrap();
        let expected = (0.64f64).exp() - 1.0;
        assert!((h / expected - 1.0).abs() < 0.02, "{h} {expected}");
    }

    #[test]
    fn lag_must_be_whole_samples() {
        assert_eq!(lag_in_samples(0.05, 0.05).unwrap(), 1);
        assert_eq!(lag_in_samples(0.15, 0.05).unwrap(), 3);
        assert!(lag_in_samples(0.07, 0.05).is_err());
        assert!(lag_in_samples(0.0, 0.05).is_err());
    }
}
