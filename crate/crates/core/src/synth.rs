//! Synthetic conditionally independent returns.
//!
//! Each epoch of `window_length` minutes draws one volatility `σ ~ h` and then
//! `window_length` i.i.d. `Normal(0, σ²)` log returns. Epochs are independent, so
//! returns are uncorrelated while their magnitudes cluster within an epoch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distribution::{collapse_metric, empirical_density, quantile, CollapseReport, Domain};
use crate::error::{Error, Result};
use crate::ingest::PriceSeries;
use crate::mixture::{stretched_ln_survival, ModelKind, VolatilityModel};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::returns::{autocorrelation, log_returns, ReturnSeries, VolatilitySeries};
use crate::tailfit::tail_slope;

/// 2020-01-01T00:00:00Z, the first timestamp of every generated series.
pub const SYNTH_START: i64 = 1_577_836_800;

const TABLE_POINTS: usize = 100_000;
const TABLE_TAIL_MASS: f64 = 1e-13;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws volatilities from a [`VolatilityModel`].
#[derive(Debug, Clone)]
pub enum VolatilitySampler {
    PointMass(f64),
    Pareto { alpha: f64, sigma_min: f64 },
    LogNormal { mu: f64, s: f64 },
    /// Inverse CDF interpolated linearly in `ln σ` on a tabulated grid.
    Tabulated { ln_sigma: Vec<f64>, cdf: Vec<f64> },
    Histogram { edges: Vec<f64>, cumulative: Vec<f64> },
}

impl VolatilitySampler {
    pub fn new(model: &VolatilityModel) -> Result<Self> {
        Ok(match model.kind() {
            ModelKind::PointMass { sigma0 } => Self::PointMass(*sigma0),
            ModelKind::ParetoTail { alpha, sigma_min } => Self::Pareto {
                alpha: *alpha,
                sigma_min: *sigma_min,
            },
            ModelKind::LogNormal { mu, s } => Self::LogNormal { mu: *mu, s: *s },
            ModelKind::StretchedExp {
                lambda,
                beta,
                sigma_lo,
            } => stretched_table(model, *lambda, *beta, *sigma_lo)?,
            ModelKind::Empirical { edges, densities } => {
                let mut cumulative = Vec::with_capacity(densities.len());
                let mut acc = 0.0;
                for (d, w) in densities.iter().zip(edges.windows(2)) {
                    acc += d * (w[1] - w[0]);
                    cumulative.push(acc);
                }
                if !(acc > 0.0) {
                    return Err(Error::Degenerate("empirical model has zero mass".into()));
                }
                for c in &mut cumulative {
                    *c /= acc;
                }
                Self::Histogram {
                    edges: edges.clone(),
                    cumulative,
                }
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::PointMass(s) => *s,
            Self::Pareto { alpha, sigma_min } => {
                let u: f64 = rng.random();
                sigma_min * (1.0 - u).powf(-1.0 / (alpha - 1.0))
            }
            Self::LogNormal { mu, s } => (mu + s * standard_normal(rng)).exp(),
            Self::Tabulated { ln_sigma, cdf } => {
                let u: f64 = rng.random();
                let i = cdf.partition_point(|c| *c <= u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
                (ln_sigma[i - 1] + frac * (ln_sigma[i] - ln_sigma[i - 1])).exp()
            }
            Self::Histogram { edges, cumulative } => {
                let u: f64 = rng.random();
                let i = cumulative
                    .partition_point(|c| *c <= u)
                    .min(cumulative.len() - 1);
                let v: f64 = rng.random();
                edges[i] + v * (edges[i + 1] - edges[i])
            }
        }
    }
}

fn stretched_table(
    model: &VolatilityModel,
    lambda: f64,
    beta: f64,
    sigma_lo: f64,
) -> Result<VolatilitySampler> {
    // Truncate where the remaining mass drops below TABLE_TAIL_MASS.
    let ln_total = stretched_ln_survival(lambda, beta, sigma_lo)?;
    let target = TABLE_TAIL_MASS.ln();
    let log_tail = |ln_x: f64| -> Result<f64> {
        Ok(stretched_ln_survival(lambda, beta, ln_x.exp())? - ln_total)
    };
    let lo = sigma_lo.ln();
    let mut hi = lo + 1.0;
    while log_tail(hi)? > target {
        hi += 1.0;
    }
    let mut a = hi - 1.0;
    for _ in 0..60 {
        let m = 0.5 * (a + hi);
        if log_tail(m)? > target {
            a = m;
        } else {
            hi = m;
        }
    }

    let ln_sigma: Vec<f64> = (0..TABLE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (TABLE_POINTS - 1) as f64)
        .collect();
    let opts = QuadratureOptions::default().with_rel_tol(1e-10);
    let mut cdf = Vec::with_capacity(TABLE_POINTS);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in ln_sigma.windows(2) {
        // ∫ h(σ) dσ over the cell, in t = ln σ
        acc += integrate(|t: f64| model.density(t.exp()) * t.exp(), w[0], w[1], &opts)?.value;
        cdf.push(acc);
    }
    for c in &mut cdf {
        *c /= acc;
    }
    Ok(VolatilitySampler::Tabulated { ln_sigma, cdf })
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub model: VolatilityModel,
    /// Returns per constant-volatility epoch.
    pub window_length: usize,
    pub total_returns: usize,
    pub seed: u64,
    pub initial_price: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 {
            return Err(Error::invalid("window length must be at least 2"));
        }
        if self.total_returns == 0 || self.total_returns % self.window_length != 0 {
            return Err(Error::invalid(format!(
                "total returns {} is not a positive multiple of window length {}",
                self.total_returns, self.window_length
            )));
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            return Err(Error::invalid("initial price must be positive"));
        }
        Ok(())
    }
}

/// Generates a contiguous one-minute price path and the volatility of each epoch.
pub fn generate(spec: &SynthSpec) -> Result<(PriceSeries, VolatilitySeries)> {
    spec.validate()?;
    let sampler = VolatilitySampler::new(&spec.model)?;
    let mut rng = rng_from_seed(spec.seed);
    let epochs = spec.total_returns / spec.window_length;
    let mut returns = Vec::with_capacity(spec.total_returns);
    let mut sigmas = Vec::with_capacity(epochs);
    let mut window_starts = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let sigma = sampler.sample(&mut rng);
        sigmas.push(sigma);
        window_starts.push(SYNTH_START + 60 * (e * spec.window_length) as i64 + 60);
        for _ in 0..spec.window_length {
            returns.push(sigma * standard_normal(&mut rng));
        }
    }
    let prices = PriceSeries::from_log_returns(SYNTH_START, 1, spec.initial_price, &returns)?;
    Ok((
        prices,
        VolatilitySeries {
            sigmas,
            window_length: spec.window_length,
            window_starts,
        },
    ))
}

/// The same base returns in random order, as a contiguous price path.
pub fn shuffled(series: &PriceSeries, seed: u64) -> Result<PriceSeries> {
    let mut values = log_returns(series, 1)?.values;
    values.shuffle(&mut rng_from_seed(seed));
    PriceSeries::from_log_returns(
        series.timestamps()[0],
        series.base_interval(),
        series.prices()[0],
        &values,
    )
}

pub const STYLIZED_MIN_RETURNS: usize = 100_000;
pub const STYLIZED_MAX_LAG: usize = 20;
pub const STYLIZED_SCALES: [usize; 4] = [5, 15, 30, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedFactsReport {
    pub return_count: usize,
    /// `3/√N`, the band a null autocorrelation should stay inside.
    pub null_band: f64,
    /// Lags 1..=20.
    pub acf_returns: Vec<f64>,
    /// Lags 1..=20.
    pub acf_abs_returns: Vec<f64>,
    pub abs_tail_slope: f64,
    pub abs_tail_range: (f64, f64),
    pub collapse: CollapseReport,
}

pub fn stylized_facts_report(series: &PriceSeries) -> Result<StylizedFactsReport> {
    let base = log_returns(series, 1)?;
    if base.len() < STYLIZED_MIN_RETURNS {
        return Err(Error::insufficient(format!(
            "stylized facts need at least {STYLIZED_MIN_RETURNS} base returns, got {}",
            base.len()
        )));
    }
    let n = base.len();
    let acf = autocorrelation(&base.values, STYLIZED_MAX_LAG)?;
    let abs: Vec<f64> = base.values.iter().map(|r| r.abs()).collect();
    let acf_abs = autocorrelation(&abs, STYLIZED_MAX_LAG)?;

    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let range = (quantile(&sorted, 0.95), quantile(&sorted, 0.9999));
    let tail: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v >= range.0 && *v <= range.1)
        .collect();
    let tail_density = empirical_density(&tail, Domain::Absolute, 20)?;
    let abs_tail_slope = tail_slope(&tail_density, range)?;

    let scales: Vec<ReturnSeries> = STYLIZED_SCALES
        .iter()
        .map(|&k| log_returns(series, k))
        .collect::<Result<_>>()?;
    let collapse = collapse_metric(&scales)?;

    Ok(StylizedFactsReport {
        return_count: n,
        null_band: 3.0 / (n as f64).sqrt(),
        acf_returns: acf[1..].to_vec(),
        acf_abs_returns: acf_abs[1..].to_vec(),
        abs_tail_slope,
        abs_tail_range: range,
        collapse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::returns::windowed_volatility;

    fn spec(model: VolatilityModel, window_length: usize, total: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            model,
            window_length,
            total_returns: total,
            seed,
            initial_price: 100.0,
        }
    }

    #[test]
    fn point_mass_volatility_within_chi_error() {
        let sigma0 = 1e-3;
        let l = 390;
        let s = spec(VolatilityModel::point_mass(sigma0).unwrap(), l, l * 200, 5);
        let (prices, truth) = generate(&s).unwrap();
        assert!(truth.sigmas.iter().all(|v| *v == sigma0));
        let est = windowed_volatility(&log_returns(&prices, 1).unwrap(), l).unwrap();
        assert_eq!(est.len(), 200);
        let band = 3.0 * sigma0 / (2.0 * l as f64).sqrt();
        let outside = est.sigmas.iter().filter(|v| (*v - sigma0).abs() > band).count();
        // 3σ band: expect about 0.3% outside
        assert!(outside <= 3, "{outside} windows outside ±{band}");
    }

    #[test]
    fn lognormal_parameters_recovered_from_true_sigmas() {
        let l = 390;
        let total = (1 << 20) / l * l;
        let s = spec(VolatilityModel::lognormal(-6.9, 0.5).unwrap(), l, total, 11);
        let (_, truth) = generate(&s).unwrap();
        let logs: Vec<f64> = truth.sigmas.iter().map(|v| v.ln()).collect();
        let mu = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / logs.len() as f64;
        assert!((mu + 6.9).abs() < 0.05, "{mu}");
        assert!((var.sqrt() - 0.5).abs() < 0.05);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = spec(VolatilityModel::pareto_tail(4.0, 1e-3).unwrap(), 10, 1000, 99);
        let (a, va) = generate(&s).unwrap();
        let (b, vb) = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(va, vb);
        let mut c = s.clone();
        c.seed = 100;
        assert_ne!(generate(&c).unwrap().0, a);
    }

    #[test]
    fn invalid_specs_rejected() {
        let m = VolatilityModel::point_mass(1e-3).unwrap();
        assert!(generate(&spec(m.clone(), 390, 1000, 1)).is_err());
        assert!(generate(&spec(m.clone(), 1, 1000, 1)).is_err());
        let mut bad = spec(m, 10, 100, 1);
        bad.initial_price = 0.0;
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn tabulated_stretched_sampler_matches_cdf() {
        let m = VolatilityModel::stretched_exp(61.38, 0.1772, 1e-3).unwrap();
        let sampler = VolatilitySampler::new(&m).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let mut x: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        x.sort_by(f64::total_cmp);
        assert!(x[0] >= 1e-3);
        // Compare with survival computed independently by quadrature of h.
        let ln_total = stretched_ln_survival(61.38, 0.1772, 1e-3).unwrap();
        for q in [0.1, 0.5, 0.9, 0.99] {
            let xq = quantile(&x, q);
            let surv = (stretched_ln_survival(61.38, 0.1772, xq).unwrap() - ln_total).exp();
            assert!(((1.0 - surv) - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt() + 1e-4);
        }
    }

    #[test]
    fn histogram_sampler_stays_in_support() {
        let m = VolatilityModel::new(ModelKind::Empirical {
            edges: vec![1.0, 2.0, 4.0],
            densities: vec![0.0, 1.0],
        })
        .unwrap();
        let sampler = VolatilitySampler::new(&m).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let s = sampler.sample(&mut rng);
            assert!((2.0..=4.0).contains(&s));
        }
    }

    #[test]
    fn short_series_rejected_by_report() {
        let s = spec(VolatilityModel::point_mass(1e-3).unwrap(), 10, 1000, 1);
        let (prices, _) = generate(&s).unwrap();
        assert!(matches!(
            stylized_facts_report(&prices),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn shuffle_preserves_return_multiset() {
        let s = spec(VolatilityModel::lognormal(-7.0, 0.5).unwrap(), 10, 1000, 4);
        let (prices, _) = generate(&s).unwrap();
        let mut a = log_returns(&prices, 1).unwrap().values;
        let mut b = log_returns(&shuffled(&prices, 8).unwrap(), 1).unwrap().values;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
