use pdqrng::extractor::{block_parity, distill, extract};
use pdqrng::metrology::gamma_bound;
use pdqrng::numeric::ks_test;
use pdqrng::stats::*;
use pdqrng::{BitStream, StreamKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

fn ideal(n_bits: usize, seed: u64) -> BitStream {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let words: Vec<u64> = (0..n_bits.div_ceil(64)).map(|_| rng.random()).collect();
    BitStream::from_words_truncating(words, n_bits, StreamKind::Extracted)
}

/// i.i.d. raw bits with `P(1) = (1 + eps)/2`.
fn biased_raw(n: usize, eps: f64, seed: u64) -> BitStream {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let threshold = ((1.0 + eps) / 2.0 * 2f64.powi(64)) as u64;
    BitStream::from_bits((0..n).map(|_| rng.random::<u64>() < threshold), StreamKind::Raw)
}

#[test]
fn ideal_gamma_is_normal_in_a_single_check() {
    let runs: Vec<BitStream> = (0..200).into_par_iter().map(|i| ideal(10_000_000, 1000 + i)).collect();
    let check = gamma_distribution_check(&runs, 4).unwrap();
    assert!(check.p_value > 0.01, "p = {}", check.p_value);
}

#[test]
fn normality_p_values_are_uniform_across_repetitions() {
    let mut p: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let runs: Vec<BitStream> = (0..200).map(|i| ideal(100_000, rep * 1000 + i)).collect();
            gamma_distribution_check(&runs, 4).unwrap().p_value
        })
        .collect();
    let (_, pv) = ks_test(&mut p, |x| x.clamp(0.0, 1.0)).unwrap();
    assert!(pv > 0.001, "KS p = {pv}");
}

#[test]
fn constant_runs_fail_normality() {
    let runs: Vec<BitStream> = (0..100).map(|_| BitStream::from_u8s(&[1; 1000], StreamKind::Extracted)).collect();
    assert!(gamma_distribution_check(&runs, 4).unwrap().p_value < 1e-10);
    assert!(gamma_distribution_check(&runs[..50], 4).is_err());
}

#[test]
fn three_sigma_exceedances_match_the_normal_tail() {
    let k_max = 10;
    let (hits, total) = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let r = autocorrelation(&ideal(1_000_000, 50_000 + i), k_max).unwrap();
            // σ_stat is the rms of Γ̂ itself for ideal bits
            (r.iter().filter(|g| g.gamma_hat.abs() > 3.0 * g.sigma_stat).count(), k_max)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let frac = hits as f64 / total as f64;
    let p = 0.0027;
    let se = (p * (1.0 - p) / total as f64).sqrt();
    assert!(frac <= 0.006 + 3.0 * se, "fraction {frac}");
    assert!((frac - p).abs() < 4.0 * se, "fraction {frac} vs {p}");
}

#[test]
fn bound_dominates_biased_extraction() {
    for (eps, seed) in [(0.05, 1u64), (0.2, 2), (0.4, 3)] {
        let x = extract(&biased_raw(20_000_000, eps, seed), false).unwrap();
        for g in autocorrelation_par(&x, 8).unwrap() {
            let bound = gamma_bound(eps, g.k as u32).unwrap();
            assert!(
                g.gamma_hat.abs() - 6.0 * g.sigma_stat <= bound,
                "ε = {eps}, k = {}: |Γ̂| = {:e}, bound {bound:e}",
                g.k,
                g.gamma_hat.abs()
            );
        }
    }
}

#[test]
fn battery_p_values_are_uniform_under_the_null() {
    let reports: Vec<BatteryReport> = (0..300u64)
        .into_par_iter()
        .map(|i| mini_battery(&ideal(1_000_000, 7000 + i)).unwrap())
        .collect();
    for name in ["monobit", "block-frequency", "runs", "serial-1", "serial-2", "longest-run"] {
        let mut p: Vec<f64> = reports.iter().map(|r| r.get(name).unwrap().p_value).collect();
        let (_, pv) = ks_test(&mut p, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(pv > 0.001, "{name}: KS p = {pv}");
    }
}

#[test]
fn biased_single_fold_fails_monobit() {
    let d = block_parity(&distill(&extract(&biased_raw(2_000_000, 0.02, 4), false).unwrap(), 1).unwrap());
    let report = mini_battery(&d).unwrap();
    assert!(report.get("monobit").unwrap().verdict >= Verdict::Fail);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parallel_pair_counts_are_exact(seed in any::<u64>(), n in 200usize..20_000, chunk in 1usize..40, k_max in 1usize..16) {
        let x = ideal(n, seed);
        prop_assert_eq!(pair_counts_par(&x, k_max, chunk).unwrap(), pair_counts(&x, k_max).unwrap());
    }

    #[test]
    fn sigma_stat_definition(seed in any::<u64>(), n in 200usize..5000) {
        for r in autocorrelation(&ideal(n, seed), 5).unwrap() {
            prop_assert!((r.sigma_stat - 1.0 / (4.0 * (n as f64).sqrt())).abs() < 1e-12);
        }
    }
}
