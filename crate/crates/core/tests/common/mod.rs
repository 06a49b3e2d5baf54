//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

/// Excess predictability `2𝒫 − 1` of the XOR of independent bits, where
/// bit `j` equals one with probability `(1 + signs[j]·eps[j]) / 2`, by
/// enumerating every outcome.
pub fn parity_predictability_brute_force(eps: &[f64], signs: &[f64]) -> f64 {
    let k = eps.len();
    let mut even = 0.0;
    for outcome in 0u32..(1 << k) {
        let mut p = 1.0;
        for j in 0..k {
            let p1 = 0.5 * (1.0 + signs[j] * eps[j]);
            p *= if outcome >> j & 1 == 1 { p1 } else { 1.0 - p1 };
        }
        if outcome.count_ones() % 2 == 0 {
            even += p;
        }
    }
    2.0 * even.max(1.0 - even) - 1.0
}

/// Every sign pattern for `k` bits.
pub fn sign_patterns(k: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u32..(1 << k)).map(move |m| (0..k).map(|j| if m >> j & 1 == 1 { -1.0 } else { 1.0 }).collect())
}
