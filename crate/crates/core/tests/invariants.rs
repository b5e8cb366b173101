//! Statistical invariants checked on seeded synthetic data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volmix::distribution::{empirical_density, quantile, rescale, sample_skewness, Domain};
use volmix::mixture::{AsymptoticTail, ScalingFunction, VolatilityModel};
use volmix::returns::{log_returns, windowed_volatility};
use volmix::synth::{generate, rng_from_seed, SynthSpec, VolatilitySampler};
use volmix::tailfit::{fit_power_law_at, fit_stretched_exponential, log_log_slope};

const LAMBDA: f64 = 61.38;
const BETA: f64 = 0.1772;

fn spec(model: VolatilityModel, window_length: usize, target: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        model,
        window_length,
        total_returns: target.div_ceil(window_length) * window_length,
        seed,
        initial_price: 100.0,
    }
}

#[test]
fn power_law_mle_with_known_cutoff_is_consistent() {
    let n = 10_000;
    for alpha in [2.5, 4.0] {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
            let x: Vec<f64> = (0..n)
                .map(|_| 0.5 * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
                .collect();
            let fit = fit_power_law_at(&x, 0.5).unwrap();
            let bound = 3.0 * (alpha - 1.0) / (n as f64).sqrt();
            assert!(
                (fit.alpha - alpha).abs() < bound,
                "alpha {alpha}, seed {seed}: {} outside ±{bound}",
                fit.alpha
            );
        }
    }
}

#[test]
fn stretched_fit_residual_shrinks_with_sample_size() {
    let model = VolatilityModel::stretched_exp(LAMBDA, BETA, 1e-3).unwrap();
    let sampler = VolatilitySampler::new(&model).unwrap();
    let mut rng = rng_from_seed(7100);
    let big: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
    let small = &big[..10_000];
    let residual = |x: &[f64]| {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let range = (quantile(&s, 0.5), quantile(&s, 0.999));
        let d = empirical_density(x, Domain::Absolute, 60).unwrap();
        fit_stretched_exponential(&d, range).unwrap().residual
    };
    let (r_small, r_big) = (residual(small), residual(&big));
    assert!(r_big <= r_small, "{r_big} > {r_small}");
}

#[test]
fn pareto_scaling_function_tail_slope() {
    let (alpha, sigma_min) = (4.0, 2e-3);
    let scaling = ScalingFunction::new(VolatilityModel::pareto_tail(alpha, sigma_min).unwrap());
    let zs: Vec<f64> = (0..=40)
        .map(|i| 10.0 * sigma_min * 10f64.powf(i as f64 / 40.0))
        .collect();
    let fs: Vec<f64> = zs.iter().map(|z| scaling.evaluate(*z).unwrap()).collect();
    let slope = log_log_slope(&zs, &fs).unwrap();
    assert!((slope + alpha).abs() <= 0.05, "{slope}");
}

#[test]
fn generated_returns_are_symmetric() {
    // The 5/√N band assumes near-Gaussian sixth moments, so heavy volatility tails are excluded.
    for model in [
        VolatilityModel::point_mass(1e-3).unwrap(),
        VolatilityModel::lognormal(-6.9, 0.1).unwrap(),
    ] {
        let (prices, _) = generate(&spec(model.clone(), 390, 1 << 20, 7200)).unwrap();
        let r = log_returns(&prices, 1).unwrap();
        let skew = sample_skewness(&r.values);
        let band = 5.0 / (r.len() as f64).sqrt();
        assert!(skew.abs() < band, "{:?}: skew {skew} vs {band}", model.kind());
    }
}

#[test]
fn stretched_exponential_recovered_end_to_end() {
    let model = VolatilityModel::stretched_exp(LAMBDA, BETA, 1e-3).unwrap();
    let scaling = ScalingFunction::new(model.clone());
    for l in [390usize, 180] {
        let (prices, _) = generate(&spec(model.clone(), l, 1 << 24, 7300)).unwrap();
        let base = log_returns(&prices, 1).unwrap();
        let vol = windowed_volatility(&base, l).unwrap();
        let mut sorted = vol.sigmas.clone();
        sorted.sort_by(f64::total_cmp);
        let range = (quantile(&sorted, 0.5), quantile(&sorted, 0.999));
        let dist = empirical_density(&vol.sigmas, Domain::Absolute, 60).unwrap();
        let fit = fit_stretched_exponential(&dist, range).unwrap();
        assert!((fit.beta - BETA).abs() <= 0.05, "L = {l}: beta {}", fit.beta);

        // Returns whose dominant volatility lies in the fitted range: z = sqrt(λβ σ^{β+2}).
        let z_of = |s: f64| (LAMBDA * BETA * s.powf(BETA + 2.0)).sqrt();
        let (z_lo, z_hi) = (z_of(range.0), z_of(range.1));
        let r = log_returns(&prices, 5).unwrap();
        let total = r.len() as f64;
        let tail: Vec<f64> = rescale(&r.values, 5)
            .unwrap()
            .into_iter()
            .map(f64::abs)
            .filter(|z| *z >= z_lo && *z <= z_hi)
            .collect();
        let frac = tail.len() as f64 / total;
        let d = empirical_density(&tail, Domain::Absolute, 20).unwrap();
        let asym = AsymptoticTail::matched(&scaling, LAMBDA, BETA, z_lo).unwrap();

        // Amplitude by count-weighted least squares; bins under 100 counts are too noisy.
        let points: Vec<(f64, f64, f64)> = d
            .centers()
            .iter()
            .zip(&d.densities)
            .zip(&d.counts)
            .filter(|(_, k)| **k >= 100)
            .map(|((c, dens), k)| ((dens * frac / 2.0).ln(), asym.ln_value(*c).unwrap(), *k as f64))
            .collect();
        let weight: f64 = points.iter().map(|p| p.2).sum();
        let offset = points.iter().map(|(e, a, w)| w * (e - a)).sum::<f64>() / weight;
        let mut worst: f64 = 0.0;
        for (emp, a, _) in &points {
            let a = a + offset;
            // relative log error is undefined where the log density is near zero
            if a.abs() >= 1.0 {
                worst = worst.max(((emp - a) / a).abs());
            }
        }
        assert!(worst < 0.10, "L = {l}: worst relative log-density error {worst}");
    }
}
