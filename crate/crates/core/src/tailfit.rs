//! Tail models for volatility and rescaled-return samples.
//!
//! Power laws are fitted with the continuous maximum-likelihood estimator
//! `α̂ = 1 + m / ∑ ln(x_i / x_min)` over the `m` samples above `x_min`, with
//! `x_min` chosen to minimise the Kolmogorov distance between the empirical and
//! fitted tail distributions. Stretched exponentials `C e^{−λσ^β}` are fitted by
//! count-weighted least squares on the log density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::EmpiricalDistribution;
use crate::error::{Error, Result};

const MIN_POWER_LAW_SAMPLES: usize = 500;
const MIN_TAIL_SAMPLES: usize = 50;
const MAX_XMIN_CANDIDATES: usize = 2000;
const MIN_STRETCHED_BINS: usize = 8;
const MIN_SLOPE_BINS: usize = 5;
const BETA_RANGE: (f64, f64) = (0.02, 1.0);
const BETA_TOL: f64 = 1e-4;
const BETA_SCAN_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Density exponent: `p(x) ∝ x^{−α}` for `x ≥ x_min`.
    pub alpha: f64,
    pub x_min: f64,
    pub ks_distance: f64,
    pub tail_sample_count: usize,
}

impl PowerLawFit {
    /// Fitted tail CDF conditional on `x ≥ x_min`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.x_min {
            0.0
        } else {
            1.0 - (x / self.x_min).powf(1.0 - self.alpha)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpFit {
    /// Amplitude `C` of `C e^{−λσ^β}`.
    pub amplitude: f64,
    pub lambda: f64,
    pub beta: f64,
    pub fit_range: (f64, f64),
    /// Count-weighted mean squared residual of the log density.
    pub residual: f64,
}

impl StretchedExpFit {
    pub fn ln_density(&self, sigma: f64) -> f64 {
        self.amplitude.ln() - self.lambda * sigma.powf(self.beta)
    }
}

/// Kolmogorov distance between a sorted tail sample and a model CDF.
pub fn tail_ks_distance<F: Fn(f64) -> f64>(tail_sorted: &[f64], cdf: F) -> f64 {
    let m = tail_sorted.len() as f64;
    tail_sorted
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = cdf(x);
            ((j + 1) as f64 / m - f).abs().max((f - j as f64 / m).abs())
        })
        .fold(0.0, f64::max)
}

fn mle_alpha(tail: &[f64], x_min: f64) -> f64 {
    let s: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    1.0 + tail.len() as f64 / s
}

pub fn fit_power_law(samples: &[f64]) -> Result<PowerLawFit> {
    if samples.len() < MIN_POWER_LAW_SAMPLES {
        return Err(Error::insufficient(format!(
            "power-law fit needs at least {MIN_POWER_LAW_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid("power-law samples must be positive and finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(Error::Degenerate("all samples are equal".into()));
    }

    // First index of every distinct value leaving enough samples in the tail,
    // excluding the maximum (a single-valued tail has no likelihood maximum).
    let max = sorted[n - 1];
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || sorted[i] != sorted[i - 1]) && n - i >= MIN_TAIL_SAMPLES)
        .filter(|&i| sorted[i] < max)
        .collect();
    if candidates.is_empty() {
        return Err(Error::insufficient(format!(
            "fewer than {MIN_TAIL_SAMPLES} samples above every candidate x_min"
        )));
    }
    if candidates.len() > MAX_XMIN_CANDIDATES {
        let last = candidates.len() - 1;
        candidates = (0..MAX_XMIN_CANDIDATES)
            .map(|k| candidates[(k * last + (MAX_XMIN_CANDIDATES - 1) / 2) / (MAX_XMIN_CANDIDATES - 1)])
            .collect();
        candidates.dedup();
    }

    // Suffix sums of ln x make each candidate's α̂ O(1).
    let mut suffix_ln = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix_ln[i] = suffix_ln[i + 1] + sorted[i].ln();
    }

    let scored: Vec<(f64, f64, usize)> = candidates
        .par_iter()
        .map(|&i| {
            let x_min = sorted[i];
            let tail = &sorted[i..];
            let m = tail.len() as f64;
            let alpha = 1.0 + m / (suffix_ln[i] - m * x_min.ln());
            let ks = tail_ks_distance(tail, |x| 1.0 - (x / x_min).powf(1.0 - alpha));
            (ks, x_min, i)
        })
        .collect();
    let (_, x_min, i) = scored
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .expect("non-empty candidate set");

    // Recompute at the winner directly so the report does not carry suffix-sum rounding.
    let tail = &sorted[i..];
    let alpha = mle_alpha(tail, x_min);
    let ks_distance = tail_ks_distance(tail, |x| 1.0 - (x / x_min).powf(1.0 - alpha));
    Ok(PowerLawFit {
        alpha,
        x_min,
        ks_distance,
        tail_sample_count: tail.len(),
    })
}

/// Power-law fit with a known lower cutoff: closed-form α̂ on `x ≥ x_min`.
pub fn fit_power_law_at(samples: &[f64], x_min: f64) -> Result<PowerLawFit> {
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(Error::invalid(format!("x_min must be positive, got {x_min}")));
    }
    let mut tail: Vec<f64> = samples.iter().copied().filter(|x| *x >= x_min).collect();
    if tail.len() < 2 {
        return Err(Error::insufficient("fewer than two samples at or above x_min"));
    }
    tail.sort_by(f64::total_cmp);
    if tail[tail.len() - 1] == x_min {
        return Err(Error::Degenerate("every tail sample equals x_min".into()));
    }
    let alpha = mle_alpha(&tail, x_min);
    let ks_distance = tail_ks_distance(&tail, |x| 1.0 - (x / x_min).powf(1.0 - alpha));
    Ok(PowerLawFit {
        alpha,
        x_min,
        ks_distance,
        tail_sample_count: tail.len(),
    })
}

struct WeightedPoints {
    sigma: Vec<f64>,
    ln_density: Vec<f64>,
    weight: Vec<f64>,
}

/// Weighted least squares of `y = a − λ x` with `x = σ^β`; returns `(a, λ, SSR)`.
fn solve_linear(points: &WeightedPoints, beta: f64) -> (f64, f64, f64) {
    let x: Vec<f64> = points.sigma.iter().map(|s| s.powf(beta)).collect();
    let sw: f64 = points.weight.iter().sum();
    let mx = x.iter().zip(&points.weight).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = points
        .ln_density
        .iter()
        .zip(&points.weight)
        .map(|(y, w)| y * w)
        .sum::<f64>()
        / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((xi, yi), w) in x.iter().zip(&points.ln_density).zip(&points.weight) {
        sxx += w * (xi - mx) * (xi - mx);
        sxy += w * (xi - mx) * (yi - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(&points.ln_density)
        .zip(&points.weight)
        .map(|((xi, yi), w)| {
            let r = yi - (intercept + slope * xi);
            w * r * r
        })
        .sum();
    (intercept, -slope, ssr)
}

pub fn fit_stretched_exponential(
    dist: &EmpiricalDistribution,
    fit_range: (f64, f64),
) -> Result<StretchedExpFit> {
    let (lo, hi) = fit_range;
    if !(lo < hi) || !(lo > 0.0) {
        return Err(Error::invalid(format!(
            "fit range [{lo}, {hi}] is empty or not positive"
        )));
    }
    let in_range: Vec<usize> = dist
        .centers()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c >= lo && **c <= hi)
        .map(|(i, _)| i)
        .collect();
    let nonempty: Vec<usize> = in_range
        .iter()
        .copied()
        .filter(|&i| dist.densities[i] > 0.0 && dist.counts[i] > 0)
        .collect();
    if !in_range.is_empty() && nonempty.is_empty() {
        return Err(Error::Degenerate(
            "all densities are zero inside the fit range".into(),
        ));
    }
    if nonempty.len() < MIN_STRETCHED_BINS {
        return Err(Error::insufficient(format!(
            "stretched-exponential fit needs {MIN_STRETCHED_BINS} nonempty bins in range, got {}",
            nonempty.len()
        )));
    }
    let centers = dist.centers();
    let points = WeightedPoints {
        sigma: nonempty.iter().map(|&i| centers[i]).collect(),
        ln_density: nonempty.iter().map(|&i| dist.densities[i].ln()).collect(),
        weight: nonempty.iter().map(|&i| dist.counts[i] as f64).collect(),
    };
    let ssr = |beta: f64| solve_linear(&points, beta).2;

    // Coarse scan to bracket the global minimum, then golden-section refinement.
    let grid: Vec<f64> = (0..BETA_SCAN_POINTS)
        .map(|k| {
            BETA_RANGE.0
                + (BETA_RANGE.1 - BETA_RANGE.0) * k as f64 / (BETA_SCAN_POINTS - 1) as f64
        })
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| ssr(grid[a]).total_cmp(&ssr(grid[b])))
        .expect("non-empty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (ssr(c), ssr(d));
    while b - a > BETA_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ssr(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ssr(d);
        }
    }
    let mut beta = 0.5 * (a + b);
    // The optimum may sit on the boundary of the search interval.
    for edge in [BETA_RANGE.0, BETA_RANGE.1] {
        if ssr(edge) < ssr(beta) {
            beta = edge;
        }
    }

    let (intercept, lambda, total) = solve_linear(&points, beta);
    if !(lambda > 0.0) {
        return Err(Error::Degenerate(
            "density does not decay over the fit range".into(),
        ));
    }
    let sw: f64 = points.weight.iter().sum();
    Ok(StretchedExpFit {
        amplitude: intercept.exp(),
        lambda,
        beta,
        fit_range,
        residual: total / sw,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    weighted_log_log_slope(xs, ys, &vec![1.0; xs.len()])
}

/// Weighted least-squares slope of `ln y` against `ln x`.
pub fn weighted_log_log_slope(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() != weights.len() || xs.len() < 2 {
        return Err(Error::insufficient("log-log slope needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log slope needs positive values"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let sw: f64 = weights.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    let mx = lx.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ly.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in lx.iter().zip(&ly).zip(weights) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    Ok(sxy / sxx)
}

/// Slope of the log density against the log bin centre over `range`,
/// weighting each bin by its count.
pub fn tail_slope(dist: &EmpiricalDistribution, range: (f64, f64)) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for ((c, d), n) in dist.centers().into_iter().zip(&dist.densities).zip(&dist.counts) {
        if c >= range.0 && c <= range.1 && *d > 0.0 {
            xs.push(c);
            ys.push(*d);
            ws.push(*n as f64);
        }
    }
    if xs.len() < MIN_SLOPE_BINS {
        return Err(Error::insufficient(format!(
            "tail slope needs {MIN_SLOPE_BINS} nonempty bins in [{}, {}], got {}",
            range.0,
            range.1,
            xs.len()
        )));
    }
    weighted_log_log_slope(&xs, &ys, &ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{empirical_density, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pareto(n: usize, alpha: f64, x_min: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| x_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
            .collect()
    }

    fn exponential(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect()
    }

    fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins)
            .map(|i| lo * (hi / lo).powf(i as f64 / bins as f64))
            .collect()
    }

    #[test]
    fn recovers_pareto_exponent() {
        let fit = fit_power_law(&pareto(10_000, 2.5, 1.0, 42)).unwrap();
        assert!((fit.alpha - 2.5).abs() < 0.1, "{fit:?}");
        assert!(fit.x_min <= 1.2);
        assert!((0.0..=1.0).contains(&fit.ks_distance));
    }

    #[test]
    fn mle_on_known_xmin_matches_closed_form() {
        let x = pareto(20_000, 3.0, 2.0, 1);
        let s: f64 = x.iter().map(|v| (v / 2.0).ln()).sum();
        assert!((mle_alpha(&x, 2.0) - (1.0 + 20_000.0 / s)).abs() < 1e-12);
    }

    #[test]
    fn equal_samples_rejected() {
        assert!(matches!(
            fit_power_law(&[3.0; 600]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn power_law_preconditions() {
        assert!(fit_power_law(&[1.0; 10]).is_err());
        let mut x = pareto(600, 2.5, 1.0, 3);
        x[0] = -1.0;
        assert!(fit_power_law(&x).is_err());
    }

    #[test]
    fn exponential_data_is_misspecified() {
        let mut ks_pareto = Vec::new();
        let mut ks_exp = Vec::new();
        let mut alpha_pareto = Vec::new();
        let mut alpha_exp = Vec::new();
        for seed in 0..10 {
            let p = fit_power_law(&pareto(10_000, 2.5, 1.0, 100 + seed)).unwrap();
            let e = fit_power_law(&exponential(10_000, 200 + seed)).unwrap();
            ks_pareto.push(p.ks_distance);
            ks_exp.push(e.ks_distance);
            alpha_pareto.push(p.alpha);
            alpha_exp.push(e.alpha);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        assert!(
            mean(&ks_exp) > 1.5 * mean(&ks_pareto),
            "{ks_exp:?} vs {ks_pareto:?}"
        );
        assert!(
            sd(&alpha_exp) > 3.0 * sd(&alpha_pareto),
            "{alpha_exp:?} vs {alpha_pareto:?}"
        );
    }

    fn exact_histogram(lambda: f64, beta: f64, edges: &[f64]) -> EmpiricalDistribution {
        let dist = EmpiricalDistribution {
            bin_edges: edges.to_vec(),
            densities: vec![0.0; edges.len() - 1],
            counts: vec![0; edges.len() - 1],
            sample_count: 0,
            underflow_count: 0,
            domain: Domain::Absolute,
        };
        let centers = dist.centers();
        let densities: Vec<f64> = centers
            .iter()
            .map(|c| 1e8 * (-lambda * c.powf(beta)).exp())
            .collect();
        let counts = densities
            .iter()
            .zip(dist.widths())
            .map(|(d, w)| ((d * w).round() as u64).max(1))
            .collect();
        EmpiricalDistribution::from_parts(edges.to_vec(), densities, counts, Domain::Absolute)
            .unwrap()
    }

    #[test]
    fn stretched_exponential_round_trip() {
        let edges = log_edges(1e-3, 1e-2, 40);
        let h = exact_histogram(61.38, 0.1772, &edges);
        let fit = fit_stretched_exponential(&h, (1e-3, 1e-2)).unwrap();
        assert!((fit.lambda / 61.38 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.beta / 0.1772 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.amplitude / 1e8 - 1.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn pure_exponential_gives_unit_beta() {
        // Linear fit of ln density against σ is the closed-form oracle at β = 1.
        let edges: Vec<f64> = (0..=30).map(|i| 0.1 + 0.1 * i as f64).collect();
        let h = exact_histogram(2.0, 1.0, &edges);
        let fit = fit_stretched_exponential(&h, (0.1, 3.1)).unwrap();
        assert!((fit.beta - 1.0).abs() < 0.02, "{fit:?}");
        assert!((fit.lambda - 2.0).abs() < 0.02, "{fit:?}");
    }

    #[test]
    fn stretched_fit_preconditions() {
        let edges = log_edges(1.0, 10.0, 20);
        let h = exact_histogram(1.0, 0.5, &edges);
        assert!(fit_stretched_exponential(&h, (5.0, 5.0)).is_err());
        assert!(fit_stretched_exponential(&h, (9.0, 10.0)).is_err());
        let zero = EmpiricalDistribution::from_parts(
            edges.clone(),
            vec![0.0; 20],
            vec![0; 20],
            Domain::Absolute,
        )
        .unwrap();
        assert!(matches!(
            fit_stretched_exponential(&zero, (1.0, 10.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn exact_power_law_slope() {
        let edges = log_edges(1.0, 100.0, 20);
        let tmp = EmpiricalDistribution::from_parts(
            edges.clone(),
            vec![1.0; 20],
            vec![1; 20],
            Domain::Absolute,
        )
        .unwrap();
        let densities = tmp.centers().iter().map(|c| c.powi(-4)).collect();
        let d = EmpiricalDistribution::from_parts(edges, densities, vec![1; 20], Domain::Absolute)
            .unwrap();
        assert!((tail_slope(&d, (1.0, 100.0)).unwrap() + 4.0).abs() < 1e-6);
        assert!((tail_slope(&tmp, (1.0, 100.0)).unwrap()).abs() < 1e-6);
        assert!(tail_slope(&d, (50.0, 100.0)).is_err());
    }

    #[test]
    fn pareto_sample_slope() {
        let x = pareto(300_000, 3.0, 1.0, 8);
        let d = empirical_density(&x, Domain::Absolute, 60).unwrap();
        let slope = tail_slope(&d, (1.0, 50.0)).unwrap();
        assert!((slope + 3.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn zero_weight_points_are_ignored() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys = [1.0, 0.25, 0.0625, 1e6];
        let w = [1.0, 2.0, 3.0, 0.0];
        assert!((weighted_log_log_slope(&xs, &ys, &w).unwrap() + 2.0).abs() < 1e-12);
        assert!(weighted_log_log_slope(&xs, &ys, &[0.0; 4]).is_err());
        assert!(weighted_log_log_slope(&xs, &ys, &[1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn known_cutoff_fit() {
        let x = pareto(20_000, 3.0, 2.0, 12);
        let fit = fit_power_law_at(&x, 2.0).unwrap();
        assert_eq!(fit.tail_sample_count, 20_000);
        assert!((fit.alpha - 3.0).abs() < 3.0 * 2.0 / (20_000f64).sqrt());
        assert!(fit_power_law_at(&x, 0.0).is_err());
        assert!(fit_power_law_at(&[1.0, 1.0], 1.0).is_err());
    }
}
