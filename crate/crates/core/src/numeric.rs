//! Small numerical toolkit shared by the fitting and testing code.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper tail of the χ² distribution.
pub fn chi2_sf(stat: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return f64::NAN;
    }
    match ChiSquared::new(dof) {
        Ok(d) => d.sf(stat.max(0.0)),
        Err(_) => f64::NAN,
    }
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` for a (numerically) singular matrix.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse by solving against unit vectors.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a.to_vec(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tolerance: f64,
    /// Stop once the cost is at or below this; zero disables the check.
    pub cost_floor: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            cost_tolerance: 1e-12,
            cost_floor: 0.0,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Sum of squared residuals at the optimum.
    pub cost: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    /// `(JᵀJ)⁻¹` at the optimum; scale by the residual variance for
    /// parameter covariance when residuals are not pre-weighted.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl LmFit {
    pub fn rms_residual(&self) -> f64 {
        (self.cost / self.n_residuals.max(1) as f64).sqrt()
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn jacobian<F>(f: &F, p: &[f64], r0: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = vec![vec![0.0; p.len()]; r0.len()];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        q[j] = p[j];
        for i in 0..r0.len() {
            let d = (rp[i] - rm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::Numerical("non-finite Jacobian entry".into()));
            }
            jac[i][j] = d;
        }
    }
    Ok(jac)
}

/// Minimizes `Σ rᵢ(p)²` with a central-difference Jacobian.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], opts: LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Numerical("non-finite residuals at the initial guess".into()));
    }
    let mut lambda = opts.initial_lambda;
    for it in 1..=opts.max_iterations {
        let jac = jacobian(&residuals, &p, &r)?;
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..n {
                jtr[a] += row[a] * ri;
                for b in a..n {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj.clone();
            for a in 0..n {
                m[a][a] += lambda * jtj[a][a].max(1e-12);
            }
            let rhs: Vec<f64> = jtr.iter().map(|x| -x).collect();
            if let Some(step) = solve(m, rhs) {
                let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
                let rt = residuals(&trial);
                let ct = sum_sq(&rt);
                if ct.is_finite() && ct <= cost {
                    let rel = (cost - ct) / cost.max(1e-300);
                    p = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < opts.cost_tolerance || cost <= opts.cost_floor {
                        return Ok(finish(p, cost, r.len(), it, &jtj));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: a (possibly flat) minimum
            return Ok(finish(p, cost, r.len(), it, &jtj));
        }
    }
    Err(Error::FitNonConvergence {
        iterations: opts.max_iterations,
        rms_residual: (cost / r.len().max(1) as f64).sqrt(),
    })
}

fn finish(params: Vec<f64>, cost: f64, n_residuals: usize, iterations: usize, jtj: &[Vec<f64>]) -> LmFit {
    LmFit {
        params,
        cost,
        n_residuals,
        iterations,
        covariance: invert(jtj),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

/// Weighted least-squares line. Standard errors are scaled by the reduced
/// χ² of the residuals (zero for an exact fit).
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("x, y and weights must have equal length"));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("line fit needs at least 3 points".into()));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Numerical("degenerate abscissae in line fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    // weights are relative, so the scale comes from the scatter
    let s2 = chi2 / (x.len() - 2) as f64;
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: (s2 / sxx).sqrt(),
        intercept_stderr: (s2 * (1.0 / sw + mx * mx / sxx)).sqrt(),
    })
}

/// Weighted isotonic (nondecreasing) regression by pool-adjacent-violators.
pub fn isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            let m = if wt > 0.0 { (m1 * w1 + m2 * w2) / wt } else { 0.5 * (m1 + m2) };
            blocks.push((m, wt, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, c)| std::iter::repeat(m).take(c)).collect()
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF. Returns
/// `(D, p)` with the asymptotic Kolmogorov tail and Stephens' small-sample
/// correction. Sorts `samples` in place.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS test needs at least one sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("KS samples contain NaN"));
    }
    samples.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-9);
        let tail = normal_cdf(-3.0);
        assert!((tail / 0.001_349_898_031_630_093_3 - 1.0).abs() < 1e-9, "{tail:e}");
    }

    #[test]
    fn kolmogorov_reference() {
        // tabulated critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_exact_grid_has_half_step_distance() {
        let n = 1000;
        let mut x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let (d, p) = ks_test(&mut x, |t| t.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        assert!(p > 0.999);
        let mut shifted: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 0.9).collect();
        let (_, p) = ks_test(&mut shifted, |t| t.clamp(0.0, 1.0)).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn chi2_reference() {
        // P(χ²₂ > x) = e^{−x/2}
        assert!((chi2_sf(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn solve_3x3() {
        let a = vec![vec![2.0, 1.0, -1.0], vec![-3.0, -1.0, 2.0], vec![-2.0, 1.0, 2.0]];
        let x = solve(a, vec![8.0, -11.0, -3.0]).unwrap();
        for (got, want) in x.iter().zip([2.0, 3.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn lm_recovers_exponential() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let fit = levenberg_marquardt(
            |p| xs.iter().zip(&ys).map(|(x, y)| p[0] * (-p[1] * x).exp() - y).collect(),
            &[1.0, 0.5],
            LmOptions::default(),
        )
        .unwrap();
        assert!((fit.params[0] - 2.5).abs() < 1e-6);
        assert!((fit.params[1] - 1.3).abs() < 1e-6);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -1.0 * v + 0.5).collect();
        let f = weighted_line_fit(&x, &y, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-9);
    }

    #[test]
    fn pav_pools_violators() {
        let out = isotonic(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]);
        assert_eq!(out, vec![1.0, 2.5, 2.5, 4.0]);
        let out = isotonic(&[3.0, 2.0, 1.0], &[1.0, 1.0, 2.0]);
        assert!(out.iter().all(|&v| (v - 1.75).abs() < 1e-12));
    }
}
