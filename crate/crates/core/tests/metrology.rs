mod common;

use common::{parity_predictability_brute_force, sign_patterns};
use pdqrng::metrology::*;
use pdqrng::model::{NoiseModel, TimingBudget};
use pdqrng::{default_noise_model, DistrustLevel};
use proptest::prelude::*;

fn grid() -> impl Iterator<Item = f64> {
    (0..=10).map(|i| i as f64 / 10.0)
}

#[test]
fn parity_matches_enumeration_on_grid() {
    for k in 1..=10usize {
        for e in grid() {
            let eps = vec![e; k];
            let want = parity_epsilon(&eps).unwrap();
            // the bias direction of each bit must not matter
            for signs in sign_patterns(k).step_by(1 + (1 << k) / 64) {
                let got = parity_predictability_brute_force(&eps, &signs);
                assert!((got - want).abs() < 1e-12, "k = {k}, ε = {e}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn fully_predictable_bit_adds_nothing() {
    for e in grid() {
        assert!((parity_epsilon(&[e, 1.0]).unwrap() - e).abs() < 1e-15);
    }
    assert!(parity_epsilon(&[1.2]).is_err());
}

#[test]
fn deembedding_degenerate_and_inconsistent() {
    assert_eq!(deembed_sigma(3.0f64, &[3.0]).unwrap(), 0.0);
    assert!(deembed_sigma(1.0f64, &[3.0]).is_err());
}

fn model(mean_vc: f64, dvphi: f64) -> NoiseModel<f64> {
    NoiseModel {
        mean_vc,
        half_swing_dvphi: dvphi,
        ..default_noise_model()
    }
}

proptest! {
    #[test]
    fn parity_matches_enumeration_for_mixed_lists(
        eps in prop::collection::vec(0.0f64..=1.0, 1..=10),
        flips in any::<u16>(),
    ) {
        let signs: Vec<f64> = (0..eps.len()).map(|j| if flips >> j & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let got = parity_predictability_brute_force(&eps, &signs);
        prop_assert!((got - parity_epsilon(&eps).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn p1_is_increasing_and_symmetric(a in -0.999f64..0.999, b in -0.999f64..0.999, d in 1.0f64..2000.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        let p = |x: f64| p1_given_vc(x * d, d).unwrap().p1;
        prop_assert!(p(lo) < p(hi));
        prop_assert!((p(-a) - (1.0 - p(a))).abs() < 1e-12);
    }

    #[test]
    fn mean_vc_inverts_p1(p in 0.01f64..0.99, d in 10.0f64..2000.0) {
        let vc = mean_vc_from_p1(p, 2.0 * d).unwrap();
        prop_assert!((p1_given_vc(vc, d).unwrap().p1 - p).abs() < 1e-12);
    }

    #[test]
    fn epsilon_is_monotone(
        sigma in 0.0f64..15.0,
        d_sigma in 0.0f64..5.0,
        mean_vc in -20.0f64..20.0,
        d_mean in 0.0f64..10.0,
        dvphi in 300.0f64..600.0,
        d_dvphi in 0.0f64..100.0,
        n in 1u32..6,
    ) {
        let eps = |m: &NoiseModel<f64>, s: f64, n: u32| epsilon_bound(m, s, n, 1).unwrap().epsilon_max;
        let base = eps(&model(mean_vc, dvphi), sigma, n);
        prop_assert!(eps(&model(mean_vc, dvphi), sigma + d_sigma, n) >= base);
        prop_assert!(eps(&model(mean_vc, dvphi), sigma, n + 1) >= base);
        let wider = mean_vc.abs() + d_mean;
        prop_assert!(eps(&model(wider, dvphi), sigma, n) >= base);
        prop_assert!(eps(&model(-wider, dvphi), sigma, n) >= base);
        prop_assert!(eps(&model(mean_vc, dvphi + d_dvphi), sigma, n) <= base);
    }

    #[test]
    fn epsilon_k_is_a_power(sigma in 0.0f64..15.0, k in 1u32..12) {
        let m = default_noise_model::<f64>();
        let one = epsilon_bound(&m, sigma, 6, 1).unwrap();
        let r = epsilon_bound(&m, sigma, 6, k).unwrap();
        prop_assert!((r.epsilon_max_k - one.epsilon_max.powi(k as i32)).abs() <= 1e-12 * r.epsilon_max_k.abs());
        prop_assert!((0.0..=1.0).contains(&r.epsilon_max));
    }

    #[test]
    fn distrust_levels_are_ordered(s in prop::collection::vec(0.0f64..20.0, 5)) {
        let b = NoiseBreakdown {
            sources: NoiseSource::ALL.iter().copied().zip(s.iter().copied()).collect(),
        };
        let o = combine_noise(&b, DistrustLevel::Ordinary).unwrap();
        let d = combine_noise(&b, DistrustLevel::DigitizerParanoid).unwrap();
        let f = combine_noise(&b, DistrustLevel::FullyParanoid).unwrap();
        prop_assert!(o <= d + 1e-12 && d <= f + 1e-12);
    }

    #[test]
    fn freshness_width_is_independent_of_k(
        edge in 1.0f64..500.0,
        jitter in 1.0f64..500.0,
        k in 1u32..20,
    ) {
        let budget = TimingBudget {
            edge_uncertainty: edge,
            jitter_bound: jitter,
            ..TimingBudget::from_delays(7.82, 1.16, 1.55)
        };
        let w = freshness(&budget, k).unwrap().width();
        let want = 2.0 * (3.0 * edge + jitter) * 1e-3;
        prop_assert!((w - want).abs() < 1e-9);
        let lb = freshness(&budget, k).unwrap().lb;
        prop_assert!(lb < freshness(&budget, k).unwrap().ub);
    }
}
