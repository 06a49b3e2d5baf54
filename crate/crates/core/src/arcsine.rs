//! Arcsine law of the interference term and the blurred-arcsine fit of the
//! analog voltage histogram.
//!
//! With a uniform phase, `Δ·cos φ` has density `1/(π√(Δ² − x²))` on
//! `(−Δ, Δ)`. The recorded voltage adds Gaussian noise whose variance
//! depends on the phase, because the path-power fluctuations enter both the
//! offset and the interference amplitude:
//!
//! ```text
//! v | φ ~ Normal(c + Δ cos φ, σ² + (ρ + τ cos φ)²)
//! ```
//!
//! `σ` collects the phase-independent noise, `ρ` the offset part of the
//! power noise and `τ` its amplitude part.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{chi2_sf, levenberg_marquardt, normal_cdf, normal_pdf, LmOptions};
use crate::real::Real;

/// Histogram bin width used for the voltage fit (mV).
pub const DEFAULT_BIN_MV: f64 = 2.0;
/// Adjacent bins are pooled until each fitted cell holds this many counts.
pub const DEFAULT_MIN_CELL_COUNT: u64 = 20;

const N_PARAMS: usize = 5;

/// Density of `Δ·cos φ` for uniform φ.
pub fn arcsine_pdf(x: f64, half_swing: f64) -> f64 {
    if x.abs() >= half_swing {
        0.0
    } else {
        1.0 / (std::f64::consts::PI * (half_swing * half_swing - x * x).sqrt())
    }
}

/// Distribution function of `Δ·cos φ` for uniform φ.
pub fn arcsine_cdf(x: f64, half_swing: f64) -> f64 {
    if x <= -half_swing {
        0.0
    } else if x >= half_swing {
        1.0
    } else {
        std::f64::consts::FRAC_2_PI * (0.5 + x / (2.0 * half_swing)).sqrt().asin()
    }
}

/// Arcsine law convolved with phase-dependent Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurredArcsine {
    pub center: f64,
    /// Δ, half the peak-to-peak interference swing.
    pub half_swing: f64,
    pub sigma: f64,
    pub rho: f64,
    pub tau: f64,
}

impl BlurredArcsine {
    fn from_params(p: &[f64]) -> Self {
        BlurredArcsine {
            center: p[0],
            half_swing: p[1],
            sigma: p[2],
            rho: p[3],
            tau: p[4],
        }
    }

    /// Same law with `Δ > 0` and non-negative `σ`, `ρ`.
    fn canonical(self) -> Self {
        let flip = if self.half_swing < 0.0 { -1.0 } else { 1.0 };
        let sign_rho = if self.rho < 0.0 { -1.0 } else { 1.0 };
        BlurredArcsine {
            center: self.center,
            half_swing: self.half_swing.abs(),
            sigma: self.sigma.abs(),
            rho: self.rho.abs(),
            tau: self.tau * flip * sign_rho,
        }
    }

    pub fn peak_to_peak(&self) -> f64 {
        2.0 * self.half_swing.abs()
    }

    /// Noise standard deviation at phase `φ` with `cos φ = c`.
    pub fn blur_at(&self, cos_phi: f64) -> f64 {
        let a = self.rho + self.tau * cos_phi;
        (self.sigma * self.sigma + a * a).sqrt()
    }

    /// Midpoint nodes over `φ ∈ (0, π)`. The integrand is smooth, even and
    /// periodic in φ, so the midpoint rule converges geometrically once the
    /// node spacing resolves the narrowest Gaussian.
    fn nodes(&self) -> Vec<f64> {
        let s_min = (self.sigma * self.sigma + (self.rho.abs() - self.tau.abs()).max(0.0).powi(2)).sqrt();
        let want = (2.0 * std::f64::consts::PI * self.half_swing.abs() / s_min.max(1e-300)).ceil();
        let m = if want.is_finite() { (want as usize).clamp(256, 1 << 16) } else { 1 << 16 };
        let h = std::f64::consts::PI / m as f64;
        (0..m).map(|j| ((j as f64 + 0.5) * h).cos()).collect()
    }

    fn cdf_on(&self, nodes: &[f64], x: f64) -> f64 {
        let s: f64 = nodes
            .iter()
            .map(|&c| normal_cdf((x - self.center - self.half_swing * c) / self.blur_at(c)))
            .sum();
        s / nodes.len() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_on(&self.nodes(), x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let nodes = self.nodes();
        let s: f64 = nodes
            .iter()
            .map(|&c| {
                let b = self.blur_at(c);
                normal_pdf((x - self.center - self.half_swing * c) / b) / b
            })
            .sum();
        s / nodes.len() as f64
    }

    /// Distribution function at each of `edges`.
    pub fn cdf_many(&self, edges: &[f64]) -> Vec<f64> {
        let nodes = self.nodes();
        edges.par_iter().map(|&e| self.cdf_on(&nodes, e)).collect()
    }
}

/// Fixed-width histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Lower edge of the first bin.
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins aligned to multiples of `width`, spanning every sample.
    pub fn from_samples<T: Real>(samples: &[T], width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("bin width must be finite and > 0"));
        }
        if samples.is_empty() {
            return Err(Error::InsufficientData("histogram of no samples".into()));
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in samples {
            let x = v.to_f64_lossy();
            if !x.is_finite() {
                return Err(Error::invalid("non-finite sample"));
            }
            min = min.min(x);
            max = max.max(x);
        }
        let lo = (min / width).floor() * width;
        let n_bins = (((max - lo) / width).floor() as usize + 1).max(1);
        let mut counts = vec![0u64; n_bins];
        for v in samples {
            let i = ((v.to_f64_lossy() - lo) / width).floor() as usize;
            counts[i.min(n_bins - 1)] += 1;
        }
        Ok(Histogram { lo, width, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + self.width * i as f64
    }

    fn moments(&self) -> (f64, f64) {
        let n = self.total() as f64;
        let mid = |i: usize| self.edge(i) + 0.5 * self.width;
        let mean = self.counts.iter().enumerate().map(|(i, &c)| c as f64 * mid(i)).sum::<f64>() / n;
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (mid(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }

    /// Merges adjacent bins left to right until each cell holds at least
    /// `min_count`; a short remainder joins the last cell. Returns interior
    /// cell boundaries and the cell counts.
    fn pooled(&self, min_count: u64) -> (Vec<f64>, Vec<u64>) {
        let mut cuts = Vec::new();
        let mut cells = Vec::new();
        let mut acc = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            acc += c;
            if acc >= min_count && i + 1 < self.counts.len() {
                cells.push(acc);
                cuts.push(self.edge(i + 1));
                acc = 0;
            }
        }
        if acc > 0 || cells.is_empty() {
            if acc < min_count && !cells.is_empty() {
                *cells.last_mut().unwrap() += acc;
                cuts.pop();
            } else {
                cells.push(acc);
            }
        }
        (cuts, cells)
    }
}

/// Result of fitting a [`BlurredArcsine`] to a voltage histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcsineFit {
    pub model: BlurredArcsine,
    /// Standard errors of `(center, Δ, σ, ρ, τ)` when the curvature matrix
    /// is invertible.
    pub stderr: Option<[f64; N_PARAMS]>,
    /// Pearson χ² over the pooled cells.
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub n_cells: usize,
    pub n_samples: u64,
}

impl ArcsineFit {
    pub fn peak_to_peak(&self) -> f64 {
        self.model.peak_to_peak()
    }

    pub fn peak_to_peak_stderr(&self) -> Option<f64> {
        self.stderr.map(|s| 2.0 * s[1])
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn cell_expectations(model: &BlurredArcsine, cuts: &[f64], n: f64) -> Vec<f64> {
    let f = model.cdf_many(cuts);
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0.0;
    for &fi in f.iter().chain(std::iter::once(&1.0)) {
        out.push(n * (fi - prev));
        prev = fi;
    }
    out
}

/// Fits the blurred arcsine to `hist` by minimum Pearson χ² over cells
/// pooled to at least `min_cell_count` observations, then tests the fit
/// with `cells − 1 − 5` degrees of freedom.
pub fn fit_blurred_arcsine(hist: &Histogram, min_cell_count: u64) -> Result<ArcsineFit> {
    let n_samples = hist.total();
    if min_cell_count == 0 {
        return Err(Error::invalid("min_cell_count must be > 0"));
    }
    let (cuts, observed) = hist.pooled(min_cell_count);
    if observed.len() < N_PARAMS + 4 {
        return Err(Error::InsufficientData(format!(
            "{} pooled cells, need at least {}",
            observed.len(),
            N_PARAMS + 4
        )));
    }
    let n = n_samples as f64;
    let (mean, var) = hist.moments();
    let delta0 = (2.0 * var).sqrt();
    let p0 = [mean, delta0, 0.01 * delta0, 0.005 * delta0, 0.0];
    let obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    let residuals = |p: &[f64]| -> Vec<f64> {
        let e = cell_expectations(&BlurredArcsine::from_params(p), &cuts, n);
        obs.iter()
            .zip(&e)
            .map(|(&o, &e)| (o - e) / e.max(1e-3).sqrt())
            .collect()
    };
    let opts = LmOptions {
        max_iterations: 100,
        cost_tolerance: 1e-9,
        ..LmOptions::default()
    };
    let lm = levenberg_marquardt(residuals, &p0, opts)?;
    let raw = BlurredArcsine::from_params(&lm.params);
    let model = raw.canonical();
    let chi2 = lm.cost;
    let dof = observed.len() - 1 - N_PARAMS;
    let stderr = lm.covariance.as_ref().and_then(|c| {
        let mut s = [0.0; N_PARAMS];
        for (i, si) in s.iter_mut().enumerate() {
            if !(c[i][i] >= 0.0) {
                return None;
            }
            *si = c[i][i].sqrt();
        }
        Some(s)
    });
    log::debug!(
        "arcsine fit: 2Δ = {:.2}, σ = {:.3}, ρ = {:.3}, τ = {:.3}, χ² = {chi2:.1}/{dof}",
        model.peak_to_peak(),
        model.sigma,
        model.rho,
        model.tau
    );
    Ok(ArcsineFit {
        model,
        stderr,
        chi2,
        dof,
        p_value: chi2_sf(chi2, dof as f64),
        n_cells: observed.len(),
        n_samples,
    })
}
