//! Packed bit streams, running-parity extraction and k-fold distillation.
//!
//! Bits are packed LSB-first into `u64` words: bit `i` lives in word
//! `i / 64` at position `i % 64`. Unused high bits of the last word are
//! always zero.

pub mod io;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Which stage of the chain produced a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    /// Comparator output `d`.
    Raw,
    /// Running parity `x_i = x_{i−1} ⊕ d_i`.
    Extracted,
    /// Subsampled `z_i = x_{ik}`.
    Distilled(u32),
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Raw => "raw",
            StreamKind::Extracted => "extracted",
            StreamKind::Distilled(_) => "distilled",
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BitStream {
    words: Vec<u64>,
    len: usize,
    kind: StreamKind,
}

impl std::fmt::Debug for BitStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitStream")
            .field("len", &self.len)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitStream {
    pub fn new(kind: StreamKind) -> Self {
        BitStream {
            words: Vec::new(),
            len: 0,
            kind,
        }
    }

    pub fn with_capacity(kind: StreamKind, bits: usize) -> Self {
        BitStream {
            words: Vec::with_capacity(words_for(bits)),
            len: 0,
            kind,
        }
    }

    /// Wraps packed words, rejecting inconsistent lengths or set padding bits.
    pub fn from_words(words: Vec<u64>, len: usize, kind: StreamKind) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::Format(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Error::Format("padding bits of final word are not zero".into()));
            }
        }
        Ok(BitStream { words, len, kind })
    }

    /// Wraps packed words, clearing any padding bits beyond `len`.
    pub fn from_words_truncating(mut words: Vec<u64>, len: usize, kind: StreamKind) -> Self {
        words.truncate(words_for(len));
        assert!(words.len() * 64 >= len, "not enough words for {len} bits");
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        BitStream { words, len, kind }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I, kind: StreamKind) -> Self {
        let mut s = BitStream::new(kind);
        for b in bits {
            s.push(b);
        }
        s
    }

    /// Builds a stream from 0/1 bytes.
    pub fn from_u8s(bits: &[u8], kind: StreamKind) -> Self {
        Self::from_bits(bits.iter().map(|&b| b != 0), kind)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: StreamKind) -> Self {
        self.kind = kind;
        self
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u64> {
        self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let r = self.len % 64;
        if r == 0 {
            self.words.push(bit as u64);
        } else {
            *self.words.last_mut().unwrap() |= (bit as u64) << r;
        }
        self.len += 1;
    }

    /// Appends the low `n` bits of `bits` (LSB first).
    pub fn push_word(&mut self, bits: u64, n: usize) {
        assert!(n <= 64);
        if n == 0 {
            return;
        }
        let bits = if n == 64 { bits } else { bits & ((1u64 << n) - 1) };
        let r = self.len % 64;
        if r == 0 {
            self.words.push(bits);
        } else {
            *self.words.last_mut().unwrap() |= bits << r;
            if r + n > 64 {
                self.words.push(bits >> (64 - r));
            }
        }
        self.len += n;
    }

    pub fn extend_from(&mut self, other: &BitStream) {
        if self.len % 64 == 0 {
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
            return;
        }
        let full = other.len / 64;
        for &w in &other.words[..full] {
            self.push_word(w, 64);
        }
        if other.len % 64 != 0 {
            self.push_word(other.words[full], other.len % 64);
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    pub fn to_u8s(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    /// Bits `[start, start + len)` as a new stream of the same kind.
    pub fn slice(&self, start: usize, len: usize) -> BitStream {
        assert!(start + len <= self.len);
        let mut out = BitStream::with_capacity(self.kind, len);
        let mut i = start;
        let end = start + len;
        while i < end {
            let n = (end - i).min(64);
            out.push_word(self.bits_at(i), n);
            i += n;
        }
        out
    }

    /// 64 bits starting at `i` (zero-filled past the end).
    #[inline]
    pub fn bits_at(&self, i: usize) -> u64 {
        let (q, r) = (i / 64, i % 64);
        let lo = self.words.get(q).copied().unwrap_or(0);
        if r == 0 {
            lo
        } else {
            let hi = self.words.get(q + 1).copied().unwrap_or(0);
            (lo >> r) | (hi << (64 - r))
        }
    }
}

/// In-word running parity: bit j of the result is the XOR of bits 0..=j.
#[inline(always)]
pub fn prefix_parity(mut w: u64) -> u64 {
    w ^= w << 1;
    w ^= w << 2;
    w ^= w << 4;
    w ^= w << 8;
    w ^= w << 16;
    w ^= w << 32;
    w
}

/// Running parity over `words` starting from state `carry`; returns the
/// final state. Padding bits beyond `len_bits` are cleared.
pub fn extract_words(input: &[u64], out: &mut [u64], mut carry: bool) -> bool {
    for (o, &w) in out.iter_mut().zip(input) {
        let p = prefix_parity(w);
        let y = if carry { !p } else { p };
        carry = (y >> 63) & 1 == 1;
        *o = y;
    }
    carry
}

fn require_kind(s: &BitStream, want: StreamKind, op: &str) -> Result<()> {
    if s.kind() != want {
        return Err(Error::invalid(format!(
            "{op} expects a {} stream, got {}",
            want.name(),
            s.kind().name()
        )));
    }
    Ok(())
}

/// Two-state parity machine: `x_i = x_{i−1} ⊕ d_i` with `x_{−1} = x0`.
pub fn extract(raw: &BitStream, x0: bool) -> Result<BitStream> {
    require_kind(raw, StreamKind::Raw, "extract")?;
    let mut out = vec![0u64; raw.words.len()];
    extract_words(&raw.words, &mut out, x0);
    Ok(BitStream::from_words_truncating(out, raw.len, StreamKind::Extracted))
}

/// Chunk-parallel [`extract`]: per-chunk parities are prefix-combined and
/// each chunk re-run with its incoming state. Bit-identical to the
/// sequential version for every `chunk_words`.
pub fn extract_chunked(raw: &BitStream, x0: bool, chunk_words: usize) -> Result<BitStream> {
    require_kind(raw, StreamKind::Raw, "extract")?;
    let chunk_words = chunk_words.max(1);
    // padding bits are zero so whole-word parities are exact
    let parities: Vec<bool> = raw
        .words
        .par_chunks(chunk_words)
        .map(|c| c.iter().fold(0u32, |acc, w| acc ^ (w.count_ones() & 1)) == 1)
        .collect();
    let mut carries = Vec::with_capacity(parities.len());
    let mut state = x0;
    for p in parities {
        carries.push(state);
        state ^= p;
    }
    let mut out = vec![0u64; raw.words.len()];
    out.par_chunks_mut(chunk_words)
        .zip(raw.words.par_chunks(chunk_words))
        .zip(carries.par_iter())
        .for_each(|((o, i), &c)| {
            extract_words(i, o, c);
        });
    Ok(BitStream::from_words_truncating(out, raw.len, StreamKind::Extracted))
}

/// Inverse of [`extract`]: `d_i = x_i ⊕ x_{i−1}` with `x_{−1} = x0`.
pub fn differentiate(x: &BitStream, x0: bool) -> BitStream {
    let mut out = Vec::with_capacity(x.words.len());
    let mut prev_top = x0 as u64;
    for &w in &x.words {
        out.push(w ^ ((w << 1) | prev_top));
        prev_top = w >> 63;
    }
    BitStream::from_words_truncating(out, x.len, StreamKind::Raw)
}

/// k-fold subsampling `z_i = x_{ik}` (indices 0, k, 2k, …); output length
/// is `⌊len / k⌋`.
pub fn distill(x: &BitStream, k: usize) -> Result<BitStream> {
    require_kind(x, StreamKind::Extracted, "distill")?;
    if k == 0 {
        return Err(Error::invalid("distillation factor k must be ≥ 1"));
    }
    let k32 = u32::try_from(k).map_err(|_| Error::invalid("distillation factor too large"))?;
    let n = x.len / k;
    if k == 1 {
        return Ok(x.clone().with_kind(StreamKind::Distilled(1)));
    }
    let mut words = vec![0u64; words_for(n)];
    words.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
        let base = c * 1024 * 64;
        for (j, w) in chunk.iter_mut().enumerate() {
            let start = base + j * 64;
            let stop = (start + 64).min(n);
            let mut acc = 0u64;
            for (b, i) in (start..stop).enumerate() {
                let src = i * k;
                acc |= ((x.words[src / 64] >> (src % 64)) & 1) << b;
            }
            *w = acc;
        }
    });
    Ok(BitStream::from_words_truncating(words, n, StreamKind::Distilled(k32)))
}

/// Parity of each k-block of raw bits between consecutive distilled
/// samples: `D_i = z_{i+1} ⊕ z_i`, length `len − 1`. This is the part of a
/// distilled bit that is not already fixed by the previous output.
pub fn block_parity(z: &BitStream) -> BitStream {
    if z.len() < 2 {
        return BitStream::new(StreamKind::Raw);
    }
    let d = differentiate(z, false);
    d.slice(1, z.len() - 1).with_kind(StreamKind::Raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_stream(n: usize, seed: u64, kind: StreamKind) -> BitStream {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        BitStream::from_bits((0..n).map(|_| rng.random::<bool>()), kind)
    }

    fn naive_extract(d: &[u8], x0: u8) -> Vec<u8> {
        let mut x = x0;
        d.iter()
            .map(|&b| {
                x ^= b;
                x
            })
            .collect()
    }

    #[test]
    fn zeros_stay_zero() {
        let d = BitStream::from_u8s(&[0; 100], StreamKind::Raw);
        assert_eq!(extract(&d, false).unwrap().count_ones(), 0);
    }

    #[test]
    fn ones_toggle() {
        let d = BitStream::from_u8s(&[1, 1, 1, 1], StreamKind::Raw);
        assert_eq!(extract(&d, false).unwrap().to_u8s(), vec![1, 0, 1, 0]);
        assert_eq!(extract(&d, true).unwrap().to_u8s(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn matches_per_bit_loop() {
        let d = random_stream(1_000_000 + 17, 11, StreamKind::Raw);
        let bits = d.to_u8s();
        for x0 in [false, true] {
            let want = naive_extract(&bits, x0 as u8);
            assert_eq!(extract(&d, x0).unwrap().to_u8s(), want);
        }
    }

    #[test]
    fn chunked_is_bit_exact() {
        let d = random_stream(100_003, 12, StreamKind::Raw);
        let seq = extract(&d, true).unwrap();
        for cw in [1, 3, 64, 1000, 5000] {
            assert_eq!(extract_chunked(&d, true, cw).unwrap(), seq);
        }
    }

    #[test]
    fn differentiate_inverts_extract() {
        let d = random_stream(10_000, 13, StreamKind::Raw);
        let x = extract(&d, true).unwrap();
        assert_eq!(differentiate(&x, true), d);
    }

    #[test]
    fn extract_rejects_extracted_input() {
        let d = random_stream(10, 14, StreamKind::Extracted);
        assert!(extract(&d, false).is_err());
    }

    #[test]
    fn distill_identity_and_lengths() {
        let x = random_stream(10, 15, StreamKind::Extracted);
        let z1 = distill(&x, 1).unwrap();
        assert_eq!(z1.to_u8s(), x.to_u8s());
        assert_eq!(z1.kind(), StreamKind::Distilled(1));
        let z3 = distill(&x, 3).unwrap();
        assert_eq!(z3.len(), 3);
        assert_eq!(z3.to_u8s(), vec![x.get(0) as u8, x.get(3) as u8, x.get(6) as u8]);
        assert!(distill(&x, 0).is_err());
    }

    #[test]
    fn distilled_differences_are_block_parities() {
        let d = random_stream(100_000, 16, StreamKind::Raw);
        let x = extract(&d, false).unwrap();
        let raw = d.to_u8s();
        for k in [2usize, 3, 5, 7] {
            let z = distill(&x, k).unwrap();
            let dp = block_parity(&z);
            assert_eq!(dp.len(), z.len() - 1);
            for i in 1..z.len() {
                let brute = raw[(i - 1) * k + 1..=i * k].iter().fold(0u8, |a, &b| a ^ b);
                assert_eq!(dp.get(i - 1) as u8, brute, "k={k} i={i}");
                assert_eq!((z.get(i) ^ z.get(i - 1)) as u8, brute);
            }
        }
    }

    #[test]
    fn push_word_and_slice() {
        let s = random_stream(1000, 17, StreamKind::Raw);
        let mut t = BitStream::new(StreamKind::Raw);
        let mut i = 0;
        for n in [1usize, 63, 64, 5, 200, 667] {
            let part = s.slice(i, n);
            t.extend_from(&part);
            i += n;
        }
        assert_eq!(t, s);
    }

    #[test]
    fn from_words_checks_padding() {
        assert!(BitStream::from_words(vec![0b100], 2, StreamKind::Raw).is_err());
        assert!(BitStream::from_words(vec![0b10], 2, StreamKind::Raw).is_ok());
        assert!(BitStream::from_words(vec![0, 0], 64, StreamKind::Raw).is_err());
    }
}
