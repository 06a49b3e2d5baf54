//! High-throughput simulate → digitize → extract pipeline.
//!
//! Pulses are generated in fixed chunks of [`CHUNK_PULSES`], each from its
//! own RNG seeded by `(seed, chunk index)`, so the analog stream does not
//! depend on how chunks are scheduled across threads. Analog generation is
//! the only parallel stage; the comparator feedback loop and the running
//! parity are inherently sequential and run over each block afterwards.
//!
//! The fast path draws the interference `cos φ` directly (see
//! [`PhaseProcess::sample_interference_cos`]) and, for i.i.d. hangover,
//! merges the photodetector, hangover and reference fluctuations into one
//! Gaussian draw of the same total variance: all three enter the decision
//! only through their sum.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::digitizer::ComparatorState;
use crate::error::{Error, Result};
use crate::extractor::{extract_words, BitStream, StreamKind};
use crate::model::{HangoverMode, NoiseModel, SimConfig};
use crate::photonics::{correlated_hangover_kernel, PhaseProcess};
use crate::real::Real;

/// Pulses per independently seeded chunk.
pub const CHUNK_PULSES: usize = 1 << 16;
/// Chunks generated per block before the sequential stages run.
pub const CHUNKS_PER_BLOCK: usize = 16;
/// Smallest run accepted by [`throughput_bench`].
pub const MIN_BENCH_BITS: u64 = 100_000_000;

const CHUNK_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// RNG of chunk `index` for run seed `seed`.
pub fn chunk_rng(seed: u64, index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(index.wrapping_mul(CHUNK_SEED_STRIDE)))
}

/// Per-pulse analog generator for the chunked pipeline.
#[derive(Debug, Clone)]
pub struct FastGenerator<T> {
    pub seed: u64,
    noise: NoiseModel<T>,
    phase: PhaseProcess<T>,
    /// σ of the merged additive draw.
    sigma_additive: T,
    /// Leakage weights when hangover is correlated.
    kernel: Option<[T; 2]>,
}

impl<T: Real> FastGenerator<T> {
    /// Generator for the full decision variable `v − v_ref` noise budget.
    pub fn new(config: &SimConfig, noise: &NoiseModel<T>, phase: &PhaseProcess<T>) -> Result<Self> {
        Self::build(config, noise, phase, true)
    }

    /// Generator for the analog voltage alone (reference noise excluded),
    /// as an oscilloscope would record it.
    pub fn analog_only(config: &SimConfig, noise: &NoiseModel<T>, phase: &PhaseProcess<T>) -> Result<Self> {
        Self::build(config, noise, phase, false)
    }

    fn build(config: &SimConfig, noise: &NoiseModel<T>, phase: &PhaseProcess<T>, with_ref: bool) -> Result<Self> {
        let mut v = crate::error::Violations::default();
        config.check(&mut v);
        noise.check(&mut v);
        let phase = PhaseProcess {
            mode: config.phase_mode,
            ..*phase
        };
        phase.check(&mut v);
        v.into_result()?;
        let sq = |x: T| x * x;
        let mut var = sq(noise.sigma_vpd);
        if with_ref {
            var += sq(noise.sigma_vref);
        }
        let kernel = match config.hangover {
            HangoverMode::Iid => {
                var += sq(noise.sigma_vho);
                None
            }
            HangoverMode::Correlated => Some(correlated_hangover_kernel(noise)),
        };
        Ok(FastGenerator {
            seed: config.rng_seed,
            noise: *noise,
            phase,
            sigma_additive: var.sqrt(),
            kernel,
        })
    }

    pub fn sigma_additive(&self) -> T {
        self.sigma_additive
    }

    /// Fills one chunk: `optical = v_S + v_L + v_φ`, `additive` the merged
    /// zero-mean noise.
    pub fn fill_chunk(&self, index: u64, optical: &mut [T], additive: &mut [T]) {
        let mut rng = chunk_rng(self.seed, index);
        let n = &self.noise;
        let two_vis = T::lit(2.0) * n.visibility;
        let (ms, ss, ml, sl, sa) = (n.mean_vs, n.sigma_vs, n.mean_vl, n.sigma_vl, self.sigma_additive);
        for (o, a) in optical.iter_mut().zip(additive.iter_mut()) {
            let vs = (ms + ss * T::standard_normal(&mut rng)).max(T::zero());
            let vl = (ml + sl * T::standard_normal(&mut rng)).max(T::zero());
            let c = self.phase.sample_interference_cos(&mut rng);
            *o = vs + vl + two_vis * (vs * vl).sqrt() * c;
            *a = sa * T::standard_normal(&mut rng);
        }
    }

    /// Fills `optical`/`additive` for consecutive chunks starting at
    /// `first_chunk`; the slices hold whole chunks except possibly the last.
    pub fn fill_block(&self, first_chunk: u64, optical: &mut [T], additive: &mut [T], parallel: bool) {
        let job = |(i, (o, a)): (usize, (&mut [T], &mut [T]))| self.fill_chunk(first_chunk + i as u64, o, a);
        if parallel {
            optical
                .par_chunks_mut(CHUNK_PULSES)
                .zip(additive.par_chunks_mut(CHUNK_PULSES))
                .enumerate()
                .for_each(job);
        } else {
            optical
                .chunks_mut(CHUNK_PULSES)
                .zip(additive.chunks_mut(CHUNK_PULSES))
                .enumerate()
                .for_each(job);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Generate chunks on the rayon pool.
    pub parallel: bool,
    pub keep_raw: bool,
    pub keep_extracted: bool,
    /// Initial parity state.
    pub x0: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            parallel: true,
            keep_raw: true,
            keep_extracted: true,
            x0: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub analog: Duration,
    pub digitize: Duration,
    pub extract: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.analog + self.digitize + self.extract
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub n_pulses: u64,
    pub raw_ones: u64,
    pub raw: Option<BitStream>,
    pub extracted: Option<BitStream>,
    /// Final parity state.
    pub x_final: bool,
    pub comparator: ComparatorState<T>,
    pub timings: StageTimings,
    pub wall: Duration,
}

impl<T> PipelineOutput<T> {
    pub fn raw_mean(&self) -> f64 {
        self.raw_ones as f64 / self.n_pulses as f64
    }
}

/// Runs `config.n_pulses` pulses through the full chain with the
/// comparator configured from `config`.
pub fn run_pipeline<T: Real>(
    config: &SimConfig,
    noise: &NoiseModel<T>,
    phase: &PhaseProcess<T>,
    opts: PipelineOptions,
) -> Result<PipelineOutput<T>> {
    let gen = FastGenerator::new(config, noise, phase)?;
    let comp = ComparatorState::for_config(config, noise)?;
    run_with(&gen, comp, config.n_pulses, opts)
}

/// Pipeline over an explicit generator and comparator.
pub fn run_with<T: Real>(
    gen: &FastGenerator<T>,
    mut comp: ComparatorState<T>,
    n_pulses: u64,
    opts: PipelineOptions,
) -> Result<PipelineOutput<T>> {
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses must be ≥ 1"));
    }
    let n = usize::try_from(n_pulses).map_err(|_| Error::invalid("n_pulses exceeds the address space"))?;
    comp.validate()?;
    let wall = Instant::now();
    let block = CHUNK_PULSES * CHUNKS_PER_BLOCK;
    let mut optical = vec![T::zero(); block.min(n)];
    let mut additive = vec![T::zero(); block.min(n)];
    let mut raw_words = vec![0u64; block.min(n).div_ceil(64)];
    let mut x_words = vec![0u64; raw_words.len()];

    let mut raw = opts.keep_raw.then(|| BitStream::with_capacity(StreamKind::Raw, n));
    let mut extracted = opts.keep_extracted.then(|| BitStream::with_capacity(StreamKind::Extracted, n));
    let mut timings = StageTimings::default();
    let mut raw_ones = 0u64;
    let mut carry = opts.x0;
    let center = gen.noise.center();
    let mut history = [T::zero(); 2];

    let mut start = 0usize;
    while start < n {
        let len = block.min(n - start);
        let (o, a) = (&mut optical[..len], &mut additive[..len]);

        let t = Instant::now();
        gen.fill_block((start / CHUNK_PULSES) as u64, o, a, opts.parallel);
        timings.analog += t.elapsed();

        let t = Instant::now();
        let n_words = len.div_ceil(64);
        let mut buf = [T::zero(); 64];
        for (w, (co, ca)) in raw_words[..n_words].iter_mut().zip(o.chunks(64).zip(a.chunks(64))) {
            match gen.kernel {
                None => {
                    for ((b, &vo), &va) in buf.iter_mut().zip(co).zip(ca) {
                        *b = vo + va;
                    }
                }
                Some([k0, k1]) => {
                    for ((b, &vo), &va) in buf.iter_mut().zip(co).zip(ca) {
                        *b = vo + va + k0 * history[0] + k1 * history[1];
                        history = [vo - center, history[0]];
                    }
                }
            }
            let word = comp.decide_word(&buf[..co.len()]);
            raw_ones += word.count_ones() as u64;
            *w = word;
        }
        timings.digitize += t.elapsed();

        let t = Instant::now();
        carry = extract_words(&raw_words[..n_words], &mut x_words[..n_words], carry);
        if len % 64 != 0 {
            // the running parity filled the padding bits of the last word
            x_words[n_words - 1] &= (1u64 << (len % 64)) - 1;
        }
        if let Some(r) = raw.as_mut() {
            append_words(r, &raw_words[..n_words], len);
        }
        if let Some(x) = extracted.as_mut() {
            append_words(x, &x_words[..n_words], len);
        }
        timings.extract += t.elapsed();
        start += len;
    }
    Ok(PipelineOutput {
        n_pulses,
        raw_ones,
        raw,
        extracted,
        x_final: carry,
        comparator: comp,
        timings,
        wall: wall.elapsed(),
    })
}

fn append_words(s: &mut BitStream, words: &[u64], len: usize) {
    let mut left = len;
    for &w in words {
        let take = left.min(64);
        s.push_word(w, take);
        left -= take;
    }
}

/// Analog voltages as recorded by a scope (no reference noise), generated
/// with the chunked fast path.
pub fn analog_samples<T: Real>(
    config: &SimConfig,
    noise: &NoiseModel<T>,
    phase: &PhaseProcess<T>,
    parallel: bool,
) -> Result<Vec<T>> {
    let gen = FastGenerator::analog_only(config, noise, phase)?;
    let n = usize::try_from(config.n_pulses).map_err(|_| Error::invalid("n_pulses exceeds the address space"))?;
    let mut optical = vec![T::zero(); n];
    let mut additive = vec![T::zero(); n];
    gen.fill_block(0, &mut optical, &mut additive, parallel);
    match gen.kernel {
        None => {
            for (o, a) in optical.iter_mut().zip(&additive) {
                *o += *a;
            }
        }
        Some([k0, k1]) => {
            let center = noise.center();
            let mut history = [T::zero(); 2];
            for (o, a) in optical.iter_mut().zip(&additive) {
                let opt = *o;
                *o = opt + *a + k0 * history[0] + k1 * history[1];
                history = [opt - center, history[0]];
            }
        }
    }
    Ok(optical)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub bits: u64,
    pub threads: usize,
    pub seconds: f64,
    pub bits_per_second: f64,
    pub timings: StageTimings,
}

/// End-to-end rate of simulate → digitize → extract for `n_bits` pulses,
/// nothing retained but the final parity. Runs on the current rayon pool.
pub fn measure_throughput<T: Real>(config: &SimConfig, noise: &NoiseModel<T>, n_bits: u64, parallel: bool) -> Result<BenchReport> {
    let cfg = SimConfig {
        n_pulses: n_bits,
        ..*config
    };
    let phase = PhaseProcess::new(cfg.phase_mode);
    let opts = PipelineOptions {
        parallel,
        keep_raw: false,
        keep_extracted: false,
        x0: false,
    };
    let out = run_pipeline(&cfg, noise, &phase, opts)?;
    let seconds = out.wall.as_secs_f64();
    Ok(BenchReport {
        bits: n_bits,
        threads: if parallel { rayon::current_num_threads() } else { 1 },
        seconds,
        bits_per_second: n_bits as f64 / seconds,
        timings: out.timings,
    })
}

/// Throughput benchmark with the single-precision fast path; requires
/// at least 10⁸ bits so start-up costs are amortized.
pub fn throughput_bench(config: &SimConfig, n_bits: u64, parallel: bool) -> Result<BenchReport> {
    if n_bits < MIN_BENCH_BITS {
        return Err(Error::invalid(format!("benchmark needs ≥ {MIN_BENCH_BITS} bits, got {n_bits}")));
    }
    measure_throughput(config, &crate::model::default_noise_model::<f32>(), n_bits, parallel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::model::{default_noise_model, PhaseMode};

    fn cfg(n: u64) -> SimConfig {
        SimConfig {
            n_pulses: n,
            ..SimConfig::default()
        }
    }

    #[test]
    fn parallel_equals_serial() {
        let c = cfg(3 * CHUNK_PULSES as u64 + 1234);
        let m = default_noise_model::<f32>();
        let p = PhaseProcess::new(PhaseMode::FullyRandom);
        let par = run_pipeline(&c, &m, &p, PipelineOptions::default()).unwrap();
        let ser = run_pipeline(
            &c,
            &m,
            &p,
            PipelineOptions {
                parallel: false,
                ..PipelineOptions::default()
            },
        )
        .unwrap();
        assert_eq!(par.raw, ser.raw);
        assert_eq!(par.extracted, ser.extracted);
        assert_eq!(par.comparator, ser.comparator);
    }

    #[test]
    fn extracted_is_running_parity_of_raw() {
        let c = cfg(200_001);
        let out = run_pipeline(&c, &default_noise_model::<f64>(), &PhaseProcess::new(PhaseMode::FullyRandom), PipelineOptions::default()).unwrap();
        let raw = out.raw.unwrap();
        assert_eq!(raw.count_ones(), out.raw_ones);
        assert_eq!(extract(&raw, false).unwrap(), out.extracted.unwrap());
    }

    #[test]
    fn block_boundaries_do_not_matter() {
        // a run spanning two blocks matches the first block of a longer run
        let m = default_noise_model::<f32>();
        let p = PhaseProcess::new(PhaseMode::FullyRandom);
        let long = run_pipeline(&cfg(1_100_000), &m, &p, PipelineOptions::default()).unwrap();
        let short = run_pipeline(&cfg(70_000), &m, &p, PipelineOptions::default()).unwrap();
        assert_eq!(long.raw.unwrap().slice(0, 70_000), short.raw.unwrap());
    }

    #[test]
    fn correlated_hangover_runs() {
        let c = SimConfig {
            hangover: HangoverMode::Correlated,
            ..cfg(100_000)
        };
        let out = run_pipeline(&c, &default_noise_model::<f64>(), &PhaseProcess::new(PhaseMode::FullyRandom), PipelineOptions::default()).unwrap();
        assert!((out.raw_mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn bench_requires_1e8() {
        assert!(throughput_bench(&SimConfig::default(), 1000, false).is_err());
    }
}
