//! Two-point autocorrelation of a bit stream with integer accumulators.
//!
//! `Γ̂(k) = (1/(N−k))·Σ xᵢx_{i+k} − x̄²`. The pair sums are popcounts of
//! the stream ANDed with itself shifted by k, so the estimate is exact up
//! to the final conversion regardless of stream length.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extractor::BitStream;
use crate::numeric::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AutocorrResult {
    pub k: usize,
    pub gamma_hat: f64,
    /// `1/(4√N)`.
    pub sigma_stat: f64,
    pub n_bits: u64,
    /// `ε_maxᵏ / 4` when a predictability bound is supplied.
    pub bound: Option<f64>,
}

/// Raw integer sums from which every lag is finalized.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub n_bits: u64,
    pub ones: u64,
    /// `pairs[k − 1] = Σᵢ xᵢ x_{i+k}`.
    pub pairs: Vec<u64>,
}

impl PairCounts {
    pub fn finalize(&self, epsilon_max: Option<f64>) -> Vec<AutocorrResult> {
        let n = self.n_bits as f64;
        let mean = self.ones as f64 / n;
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let k = i + 1;
                AutocorrResult {
                    k,
                    gamma_hat: p as f64 / (n - k as f64) - mean * mean,
                    sigma_stat: 1.0 / (4.0 * n.sqrt()),
                    n_bits: self.n_bits,
                    bound: epsilon_max.map(|e| e.powi(k as i32) / 4.0),
                }
            })
            .collect()
    }
}

/// 64 stream bits starting at word `q` shifted right by `k`, read from a
/// window where `w[0]` is word `q`.
#[inline(always)]
fn shifted(w: &VecDeque<u64>, k: usize) -> u64 {
    let (q, r) = (k / 64, k % 64);
    let lo = w[q];
    if r == 0 {
        lo
    } else {
        (lo >> r) | (w[q + 1] << (64 - r))
    }
}

/// Single-pass accumulator over a stream delivered word by word.
///
/// Keeps a look-ahead window of `⌈k_max/64⌉ + 1` words so all lags of a
/// word are summed once its successors arrive.
#[derive(Debug, Clone)]
pub struct AutocorrAccumulator {
    k_max: usize,
    lookahead: usize,
    window: VecDeque<u64>,
    counts: PairCounts,
    finished_partial: bool,
}

impl AutocorrAccumulator {
    pub fn new(k_max: usize) -> Self {
        let lookahead = k_max.div_ceil(64);
        AutocorrAccumulator {
            k_max,
            lookahead,
            window: VecDeque::with_capacity(lookahead + 2),
            counts: PairCounts {
                pairs: vec![0; k_max],
                ..PairCounts::default()
            },
            finished_partial: false,
        }
    }

    /// Appends `n_bits ≤ 64` bits packed LSB-first; bits above `n_bits`
    /// must be zero. Only the final word may be partial.
    pub fn push_word(&mut self, word: u64, n_bits: usize) -> Result<()> {
        if self.finished_partial {
            return Err(Error::invalid("a partial word must be the last one pushed"));
        }
        if n_bits > 64 || (n_bits < 64 && word >> n_bits != 0) {
            return Err(Error::invalid("word has bits beyond its length"));
        }
        self.finished_partial = n_bits < 64;
        self.counts.n_bits += n_bits as u64;
        self.counts.ones += word.count_ones() as u64;
        self.window.push_back(word);
        if self.window.len() > self.lookahead + 1 {
            self.retire();
        }
        Ok(())
    }

    pub fn push_stream(&mut self, s: &BitStream) -> Result<()> {
        let mut left = s.len();
        for &w in s.words() {
            let n = left.min(64);
            self.push_word(w, n)?;
            left -= n;
        }
        Ok(())
    }

    fn retire(&mut self) {
        let w = &self.window;
        let head = w[0];
        for k in 1..=self.k_max {
            self.counts.pairs[k - 1] += (head & shifted(w, k)).count_ones() as u64;
        }
        self.window.pop_front();
    }

    pub fn finish(mut self) -> PairCounts {
        // bits past the end are zero and contribute no pairs
        for _ in 0..=self.lookahead {
            self.window.push_back(0);
        }
        while self.window.len() > self.lookahead + 1 {
            self.retire();
        }
        self.counts
    }
}

fn check_length(x: &BitStream, k_max: usize) -> Result<()> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be ≥ 1"));
    }
    if x.len() <= 10 * k_max {
        return Err(Error::InsufficientData(format!(
            "{} bits is too short for k_max = {k_max} (need > {})",
            x.len(),
            10 * k_max
        )));
    }
    Ok(())
}

/// Single streaming pass over `x` for lags `1..=k_max`.
pub fn autocorrelation(x: &BitStream, k_max: usize) -> Result<Vec<AutocorrResult>> {
    Ok(pair_counts(x, k_max)?.finalize(None))
}

pub fn pair_counts(x: &BitStream, k_max: usize) -> Result<PairCounts> {
    check_length(x, k_max)?;
    let mut acc = AutocorrAccumulator::new(k_max);
    acc.push_stream(x)?;
    Ok(acc.finish())
}

/// Chunk-parallel pair counts: each chunk sums its own words against the
/// shifted view of the whole stream, so boundary cross-terms are included
/// and the merged integers equal the sequential ones.
pub fn pair_counts_par(x: &BitStream, k_max: usize, chunk_words: usize) -> Result<PairCounts> {
    check_length(x, k_max)?;
    let words = x.words();
    let chunk_words = chunk_words.max(1);
    let partial: Vec<Vec<u64>> = (0..words.len().div_ceil(chunk_words))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk_words;
            let hi = (lo + chunk_words).min(words.len());
            let mut pairs = vec![0u64; k_max];
            for q in lo..hi {
                let w = words[q];
                for (k, p) in (1..=k_max).zip(pairs.iter_mut()) {
                    *p += (w & x.bits_at(q * 64 + k)).count_ones() as u64;
                }
            }
            pairs
        })
        .collect();
    let mut pairs = vec![0u64; k_max];
    for p in partial {
        for (a, b) in pairs.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(PairCounts {
        n_bits: x.len() as u64,
        ones: x.count_ones(),
        pairs,
    })
}

/// Parallel [`autocorrelation`]; identical results.
pub fn autocorrelation_par(x: &BitStream, k_max: usize) -> Result<Vec<AutocorrResult>> {
    Ok(pair_counts_par(x, k_max, 1 << 14)?.finalize(None))
}

/// Adds the `ε_maxᵏ/4` bound to each result.
pub fn with_bound(results: &mut [AutocorrResult], epsilon_max: f64) -> Result<()> {
    for r in results {
        r.bound = Some(crate::metrology::gamma_bound(epsilon_max, r.k as u32)?);
    }
    Ok(())
}

/// Emits `k,gamma_hat,4gamma_hat,sigma_stat,bound` rows; `bound` is empty
/// when absent.
pub fn write_autocorr_csv<W: Write>(results: &[AutocorrResult], mut w: W) -> Result<()> {
    writeln!(w, "k,gamma_hat,4gamma_hat,sigma_stat,bound")?;
    for r in results {
        let bound = r.bound.map(|b| format!("{b:.6e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.6e},{:.6e},{:.6e},{}",
            r.k,
            r.gamma_hat,
            4.0 * r.gamma_hat,
            r.sigma_stat,
            bound
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityCheck {
    pub p_value: f64,
    pub chi2: f64,
    pub dof: usize,
    pub n_runs: usize,
}

/// Pearson χ² test that `4Γ̂(k)·√N` over independent runs is standard
/// normal, using `min(20, n/10)` equiprobable bins.
pub fn gamma_distribution_check(streams: &[BitStream], k: usize) -> Result<NormalityCheck> {
    if streams.len() < 100 {
        return Err(Error::InsufficientData(format!("{} runs, need at least 100", streams.len())));
    }
    let z: Vec<f64> = streams
        .par_iter()
        .map(|s| {
            let r = autocorrelation(s, k)?;
            let g = r[k - 1];
            Ok(4.0 * g.gamma_hat * (g.n_bits as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(normality_chi2(&z))
}

/// χ² goodness of fit of `z` against N(0, 1) with equiprobable bins.
pub fn normality_chi2(z: &[f64]) -> NormalityCheck {
    let n = z.len();
    let m = (n / 10).clamp(2, 20);
    let edges: Vec<f64> = (1..m)
        .map(|i| {
            let q = i as f64 / m as f64;
            statrs::distribution::ContinuousCDF::inverse_cdf(&statrs::distribution::Normal::standard(), q)
        })
        .collect();
    let mut counts = vec![0usize; m];
    for &v in z {
        // a value on an edge goes to the upper bin
        counts[edges.partition_point(|&e| e <= v)] += 1;
    }
    let expected = n as f64 / m as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    NormalityCheck {
        p_value: chi2_sf(chi2, (m - 1) as f64),
        chi2,
        dof: m - 1,
        n_runs: n,
    }
}
