use pdqrng::digitizer::*;
use pdqrng::metrology::p1_given_vc;
use pdqrng::model::NoiseModel;
use pdqrng::photonics::{PulseSimulator, TrainState};
use pdqrng::{default_noise_model, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Ones fraction over the last `measure` of `n` pulses, streaming.
fn ones_fraction(sim: &PulseSimulator<f64>, comp: &mut ComparatorState<f64>, n: usize, measure: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut state = TrainState::random_start(&mut r);
    let mut ones = 0u64;
    for i in 0..n {
        let v = sim.pulse(&mut state, &mut r).v;
        let z: f64 = StandardNormal.sample(&mut r);
        let d = comp.decide(v, z);
        if i >= n - measure {
            ones += d as u64;
        }
    }
    ones as f64 / measure as f64
}

#[test]
fn displaced_threshold_without_feedback_follows_arcsine_offset() {
    let noise = default_noise_model::<f64>();
    let sim = PulseSimulator::from_config(SimConfig::default(), noise).unwrap();
    let mut comp = ComparatorState::fixed(noise.center() + 54.6, noise.sigma_vref);
    let n = 10_000_000;
    let zeros = 1.0 - ones_fraction(&sim, &mut comp, n, n, 1);
    // the simulated interference swing sets the arcsine scale
    let want = p1_given_vc(54.6, noise.simulated_swing()).unwrap().p1;
    assert!((zeros - want).abs() < 0.002, "P(d=0) = {zeros}, arcsine predicts {want}");
    assert!((zeros - 0.537).abs() < 0.002, "P(d=0) = {zeros}");
}

#[test]
fn transition_width_is_recovered() {
    let sim = PulseSimulator::from_config(SimConfig::default(), default_noise_model::<f64>()).unwrap();
    let (v, bits) = simulate_xy(&sim, 4_000_000, 0.0, &mut rng(2));
    let fit = estimate_transition_width(&v, &bits, None).unwrap();
    assert!((fit.sigma_ref - 7.7).abs() < 0.3, "σ_ref = {}", fit.sigma_ref);
    assert!(fit.n_events >= MIN_TRANSITION_EVENTS);
}

#[test]
fn splitter_noise_is_deembedded() {
    let sim = PulseSimulator::from_config(SimConfig::default(), default_noise_model::<f64>()).unwrap();
    let (v, bits) = simulate_xy(&sim, 4_000_000, 1.32, &mut rng(3));
    let fit = estimate_transition_width(&v, &bits, Some(1.32)).unwrap();
    assert!(fit.sigma_fit > fit.sigma_ref);
    assert!((fit.sigma_ref - 7.7).abs() < 0.3, "σ_ref = {}", fit.sigma_ref);
}

#[test]
fn noiseless_reference_gives_a_step() {
    let noise = NoiseModel {
        sigma_vref: 0.0,
        ..default_noise_model::<f64>()
    };
    let sim = PulseSimulator::from_config(SimConfig::default(), noise).unwrap();
    let (v, bits) = simulate_xy(&sim, 2_000_000, 0.0, &mut rng(4));
    let fit = estimate_transition_width(&v, &bits, None).unwrap();
    assert!(fit.sigma_fit <= TRANSITION_BIN_MV, "width {}", fit.sigma_fit);
    assert!(fit.isotonic_p1.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn digitize_is_deterministic_per_seed() {
    let noise = default_noise_model::<f64>();
    let config = SimConfig::default();
    let sim = PulseSimulator::from_config(config, noise).unwrap();
    let train = sim.train_of(100_000, &mut rng(5));
    let run = |seed| {
        let mut comp = ComparatorState::for_config(&config, &noise).unwrap();
        digitize(&train, &mut comp, &mut rng(seed)).unwrap()
    };
    assert_eq!(run(6), run(6));
    assert_ne!(run(6), run(7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn feedback_recenters_from_any_start(offset in -450.0f64..450.0, seed in any::<u64>()) {
        let noise = default_noise_model::<f64>();
        let config = SimConfig::default();
        let sim = PulseSimulator::from_config(config, noise).unwrap();
        let mut comp = ComparatorState::for_config(&config, &noise).unwrap();
        comp.v_ref_mean += offset;
        // ten loop time constants to settle, then one million pulses
        let settle = 10 * config.pulses_per_time_constant() as usize;
        let f = ones_fraction(&sim, &mut comp, settle + 1_000_000, 1_000_000, seed);
        // 1e6 bits carry 5e-4 of binomial noise; the loop adds slow wander
        prop_assert!((f - 0.5).abs() < 3e-3, "ones fraction {}", f);
    }
}
