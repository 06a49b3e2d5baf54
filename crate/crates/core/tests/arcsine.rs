use pdqrng::arcsine::*;
use pdqrng::model::default_noise_model;
use pdqrng::photonics::PhaseProcess;
use pdqrng::pipeline::analog_samples;
use pdqrng::{PhaseMode, SimConfig};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Draws `c + A cos φ + noise` with amplitude and offset fluctuations taken
/// directly from two power terms, the way a two-path interferometer would.
fn interferometer(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let z: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let (s, l) = (100.0 + 0.6 * z[0], 100.0 + 0.8 * z[1]);
            s + l + 1.8 * (s * l).sqrt() * phi.cos() + 1.5 * z[2]
        })
        .collect()
}

#[test]
fn recovers_known_swing_from_independent_draws() {
    let v = interferometer(2_000_000, 1);
    let hist = Histogram::from_samples(&v, 1.0).unwrap();
    let fit = fit_blurred_arcsine(&hist, DEFAULT_MIN_CELL_COUNT).unwrap();
    // ⟨√(s l)⟩ = 100 to second order, so 2Δ = 2·0.9·100
    let se = fit.peak_to_peak_stderr().unwrap();
    assert!((fit.peak_to_peak() - 180.0).abs() < 5.0 * se + 0.05, "2Δ = {} ± {se}", fit.peak_to_peak());
    assert!((fit.model.center - 200.0).abs() < 0.05);
    assert!((fit.model.sigma - 1.5).abs() < 0.15, "σ = {}", fit.model.sigma);
    assert!(fit.p_value > 1e-3, "χ² = {} / {}", fit.chi2, fit.dof);
}

#[test]
fn wrong_law_fails_the_chi2_test() {
    // a uniform band is not an arcsine
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    let v: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>() * 200.0).collect();
    let hist = Histogram::from_samples(&v, 1.0).unwrap();
    let fit = fit_blurred_arcsine(&hist, DEFAULT_MIN_CELL_COUNT).unwrap();
    assert!(fit.p_value < 1e-6, "p = {}", fit.p_value);
}

#[test]
fn default_model_histogram() {
    let config = SimConfig {
        n_pulses: 2_000_000,
        ..SimConfig::default()
    };
    let noise = default_noise_model::<f64>();
    let v = analog_samples(&config, &noise, &PhaseProcess::new(PhaseMode::FullyRandom), true).unwrap();
    let fit = fit_blurred_arcsine(&Histogram::from_samples(&v, DEFAULT_BIN_MV).unwrap(), DEFAULT_MIN_CELL_COUNT).unwrap();
    let swing = 2.0 * noise.simulated_swing();
    assert!((fit.peak_to_peak() / swing - 1.0).abs() < 2e-3, "2Δ = {} vs {swing}", fit.peak_to_peak());
    assert!(fit.passes(0.001), "χ² = {} / {}", fit.chi2, fit.dof);
}
