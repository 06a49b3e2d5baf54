//! Forward Kalman filter and Rauch-Tung-Striebel smoother for the
//! linearised beat-note model.
//!
//! State `x = (δA, Re ℰ, Im ℰ)` follows independent random walks; each
//! sample observes `y − Ā² = 2Ā·δA + Ā(cos Ωt·Re ℰ + sin Ωt·Im ℰ) + n`.

use rayon::prelude::*;

use super::{FieldEstimate, HeterodyneTrace};
use crate::error::{Error, Result};
use crate::real::Real;

type Vec3<T> = [T; 3];
type Mat3<T> = [[T; 3]; 3];

/// Noise parameters of the filter model, as variances per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanModel<T> {
    /// Random-walk increment variance of `(δA, Re ℰ, Im ℰ)` per sample.
    pub process_noise: Vec3<T>,
    /// Standard deviation of the additive measurement noise.
    pub measurement_sigma: T,
    /// Prior variance of the initial state (prior mean is zero).
    pub prior_var: Vec3<T>,
}

impl<T: Real> KalmanModel<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: T| x.is_finite() && x >= T::zero();
        if !self.process_noise.iter().all(|&q| ok(q)) {
            return Err(Error::invalid("process noise must be finite and ≥ 0"));
        }
        if !(ok(self.measurement_sigma) && self.measurement_sigma > T::zero()) {
            return Err(Error::invalid("measurement sigma must be finite and > 0"));
        }
        if !self.prior_var.iter().all(|&p| ok(p) && p > T::zero()) {
            return Err(Error::invalid("prior variances must be finite and > 0"));
        }
        Ok(())
    }
}

fn zero3<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

fn diag<T: Real>(d: Vec3<T>) -> Mat3<T> {
    let mut m = zero3();
    for i in 0..3 {
        m[i][i] = d[i];
    }
    m
}

fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = zero3();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

fn mat_mul_bt<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = zero3();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1] + a[i][2] * b[j][2];
        }
    }
    c
}

fn symmetrize<T: Real>(p: &mut Mat3<T>) {
    let half = T::lit(0.5);
    for i in 0..3 {
        for j in i + 1..3 {
            let s = half * (p[i][j] + p[j][i]);
            p[i][j] = s;
            p[j][i] = s;
        }
    }
}

fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Non-negative principal minors up to rounding measured against `scale`,
/// the diagonal of the matrix the covariance was computed from. A sample
/// far more precise than the prior legitimately leaves a nearly singular
/// posterior, so exact definiteness is too strict.
fn is_psd_within<T: Real>(p: &Mat3<T>, scale: &Mat3<T>) -> bool {
    let tol = T::epsilon() * T::lit(256.0);
    let d = [scale[0][0].abs(), scale[1][1].abs(), scale[2][2].abs()];
    if (0..3).any(|i| !p[i][i].is_finite() || p[i][i] < -tol * d[i]) {
        return false;
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if p[i][i] * p[j][j] - p[i][j] * p[j][i] < -tol * d[i] * d[j] {
            return false;
        }
    }
    det3(p) >= -tol * d[0] * d[1] * d[2]
}

struct ForwardPass<T> {
    x: Vec<Vec3<T>>,
    p: Vec<Mat3<T>>,
    innovation: Vec<T>,
    innovation_var: Vec<T>,
    gain: Vec<Vec3<T>>,
}

fn measurement_row<T: Real>(trace: &HeterodyneTrace<T>, i: usize) -> Vec3<T> {
    let a = trace.lo_amplitude;
    let (s, c) = (trace.omega * trace.sample_period_ns * i as f64).sin_cos();
    [T::lit(2.0) * a, a * T::lit(c), a * T::lit(s)]
}

fn check_psd<T: Real>(p: &Mat3<T>, scale: &Mat3<T>, what: &str, i: usize) -> Result<()> {
    if is_psd_within(p, scale) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} covariance lost positive definiteness at sample {i}")))
    }
}

fn forward<T: Real>(trace: &HeterodyneTrace<T>, model: &KalmanModel<T>) -> Result<ForwardPass<T>> {
    trace.validate()?;
    model.validate()?;
    let n = trace.samples.len();
    let r = model.measurement_sigma * model.measurement_sigma;
    let offset = trace.lo_amplitude * trace.lo_amplitude;
    let q = model.process_noise;

    let mut out = ForwardPass {
        x: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        innovation: Vec::with_capacity(n),
        innovation_var: Vec::with_capacity(n),
        gain: Vec::with_capacity(n),
    };
    let mut x = [T::zero(); 3];
    let mut p = diag(model.prior_var);
    for i in 0..n {
        if i > 0 {
            for k in 0..3 {
                p[k][k] += q[k];
            }
        }
        let h = measurement_row(trace, i);
        let ph = [
            p[0][0] * h[0] + p[0][1] * h[1] + p[0][2] * h[2],
            p[1][0] * h[0] + p[1][1] * h[1] + p[1][2] * h[2],
            p[2][0] * h[0] + p[2][1] * h[1] + p[2][2] * h[2],
        ];
        let s = h[0] * ph[0] + h[1] * ph[1] + h[2] * ph[2] + r;
        let k = [ph[0] / s, ph[1] / s, ph[2] / s];
        let e = trace.samples[i] - offset - (h[0] * x[0] + h[1] * x[1] + h[2] * x[2]);
        for j in 0..3 {
            x[j] += k[j] * e;
        }
        // Joseph form: (I − KH) P (I − KH)ᵀ + K R Kᵀ
        let a = identity_minus_outer(&k, &h);
        let mut next = mat_mul_bt(&mat_mul(&a, &p), &a);
        for row in 0..3 {
            for col in 0..3 {
                next[row][col] += k[row] * r * k[col];
            }
        }
        symmetrize(&mut next);
        check_psd(&next, &p, "filter", i)?;
        p = next;
        out.x.push(x);
        out.p.push(p);
        out.innovation.push(e);
        out.innovation_var.push(s);
        out.gain.push(k);
    }
    Ok(out)
}

/// `I − k hᵀ`
fn identity_minus_outer<T: Real>(k: &Vec3<T>, h: &Vec3<T>) -> Mat3<T> {
    let mut a = zero3();
    for row in 0..3 {
        for col in 0..3 {
            let id = if row == col { T::one() } else { T::zero() };
            a[row][col] = id - k[row] * h[col];
        }
    }
    a
}

fn to_estimate<T: Real>(trace: &HeterodyneTrace<T>, x: &[Vec3<T>], p: &[Mat3<T>]) -> FieldEstimate<T> {
    let mut est = FieldEstimate::with_capacity(x.len(), trace.sample_period_ns);
    for (xi, pi) in x.iter().zip(p) {
        est.push(*xi, [pi[0][0], pi[1][1], pi[2][2]]);
    }
    est
}

/// Forward (causal) Kalman filter only.
pub fn kalman_filter<T: Real>(trace: &HeterodyneTrace<T>, model: &KalmanModel<T>) -> Result<FieldEstimate<T>> {
    let fw = forward(trace, model)?;
    Ok(to_estimate(trace, &fw.x, &fw.p))
}

/// Forward filter followed by the backward RTS pass.
///
/// The backward pass uses the Bryson-Frazier adjoint recursion, which
/// yields the RTS estimates without inverting the predicted covariance;
/// that inverse is badly conditioned whenever a sample pins one direction
/// far more tightly than the prior.
pub fn rts_smooth<T: Real>(trace: &HeterodyneTrace<T>, model: &KalmanModel<T>) -> Result<FieldEstimate<T>> {
    let fw = forward(trace, model)?;
    let n = fw.x.len();
    let mut xs = Vec::with_capacity(n);
    let mut ps = Vec::with_capacity(n);
    let mut lambda = [T::zero(); 3];
    let mut big_lambda: Mat3<T> = zero3();
    for t in (0..n).rev() {
        // with λ, Λ carrying the information from samples after t:
        // x_s = x_f − P_f λ,  P_s = P_f − P_f Λ P_f
        let pf = &fw.p[t];
        let xf = &fw.x[t];
        let mut x = [T::zero(); 3];
        for i in 0..3 {
            x[i] = xf[i] - (pf[i][0] * lambda[0] + pf[i][1] * lambda[1] + pf[i][2] * lambda[2]);
        }
        let corr = mat_mul(&mat_mul(pf, &big_lambda), pf);
        let mut p = *pf;
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] -= corr[i][j];
            }
        }
        symmetrize(&mut p);
        check_psd(&p, pf, "smoothed", t)?;
        for i in 0..3 {
            p[i][i] = p[i][i].max(T::zero());
        }
        xs.push(x);
        ps.push(p);

        // fold sample t into the adjoints; identity dynamics carry them
        // back unchanged
        let h = measurement_row(trace, t);
        let s = fw.innovation_var[t];
        let e = fw.innovation[t];
        let a = identity_minus_outer(&fw.gain[t], &h);
        // λ ← −h e / s + (I − k hᵀ)ᵀ λ
        let mut l = [T::zero(); 3];
        for i in 0..3 {
            l[i] = -h[i] * e / s + a[0][i] * lambda[0] + a[1][i] * lambda[1] + a[2][i] * lambda[2];
        }
        // Λ ← h hᵀ / s + (I − k hᵀ)ᵀ Λ (I − k hᵀ)
        let mut at_l = zero3();
        for i in 0..3 {
            for j in 0..3 {
                at_l[i][j] = a[0][i] * big_lambda[0][j] + a[1][i] * big_lambda[1][j] + a[2][i] * big_lambda[2][j];
            }
        }
        let mut bl = mat_mul(&at_l, &a);
        for i in 0..3 {
            for j in 0..3 {
                bl[i][j] += h[i] * h[j] / s;
            }
        }
        symmetrize(&mut bl);
        lambda = l;
        big_lambda = bl;
    }
    xs.reverse();
    ps.reverse();
    Ok(to_estimate(trace, &xs, &ps))
}

/// Smooths independent traces in parallel.
pub fn smooth_all<T: Real>(traces: &[HeterodyneTrace<T>], model: &KalmanModel<T>) -> Result<Vec<FieldEstimate<T>>> {
    traces.par_iter().map(|t| rts_smooth(t, model)).collect()
}
