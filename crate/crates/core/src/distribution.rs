//! Empirical densities, diffusive rescaling and the data-collapse metric.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::ReturnSeries;

pub const DEFAULT_BIN_COUNT: usize = 60;
const MIN_DENSITY_SAMPLES: usize = 100;
const MIN_COLLAPSE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `|x|` on logarithmically spaced bins; zeros go to the underflow bucket.
    Absolute,
    /// `x` on uniform bins.
    Signed,
}

/// Binned probability density.
///
/// `densities[i]` is probability per unit value on `[bin_edges[i], bin_edges[i + 1])`
/// (the last bin is closed). Mass not covered by bins is kept in `underflow_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<u64>,
    pub sample_count: usize,
    pub underflow_count: usize,
    pub domain: Domain,
}

impl EmpiricalDistribution {
    /// Assembles a distribution from precomputed parts (used for exact fixtures).
    pub fn from_parts(
        bin_edges: Vec<f64>,
        densities: Vec<f64>,
        counts: Vec<u64>,
        domain: Domain,
    ) -> Result<Self> {
        if bin_edges.len() < 2 || densities.len() + 1 != bin_edges.len() {
            return Err(Error::invalid("need one more bin edge than densities"));
        }
        if counts.len() != densities.len() {
            return Err(Error::invalid("counts and densities differ in length"));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("bin edges must be strictly increasing"));
        }
        if domain == Domain::Absolute && bin_edges[0] <= 0.0 {
            return Err(Error::invalid("absolute-domain bin edges must be positive"));
        }
        if densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::invalid("densities must be non-negative"));
        }
        let sample_count = counts.iter().sum::<u64>() as usize;
        Ok(Self {
            bin_edges,
            densities,
            counts,
            sample_count,
            underflow_count: 0,
            domain,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.densities.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Geometric bin centres for the absolute domain, arithmetic otherwise.
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| match self.domain {
                Domain::Absolute => (w[0] * w[1]).sqrt(),
                Domain::Signed => 0.5 * (w[0] + w[1]),
            })
            .collect()
    }

    /// `∑ density · width` plus the underflow fraction.
    pub fn total_mass(&self) -> f64 {
        let binned: f64 = self
            .densities
            .iter()
            .zip(self.widths())
            .map(|(d, w)| d * w)
            .sum();
        let under = if self.sample_count == 0 {
            0.0
        } else {
            self.underflow_count as f64 / self.sample_count as f64
        };
        binned + under
    }

    /// Plotting contract: `bin_center,density`, one row per bin.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_center", "density"])?;
        for (c, d) in self.centers().iter().zip(&self.densities) {
            w.write_record([c.to_string(), d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn empirical_density(
    values: &[f64],
    domain: Domain,
    bin_count: usize,
) -> Result<EmpiricalDistribution> {
    if bin_count == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    if values.len() < MIN_DENSITY_SAMPLES {
        return Err(Error::insufficient(format!(
            "density estimate needs at least {MIN_DENSITY_SAMPLES} samples, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    let n = values.len();
    match domain {
        Domain::Absolute => {
            let (lo, hi) = values
                .iter()
                .map(|v| v.abs())
                .filter(|v| *v > 0.0)
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                return Err(Error::Degenerate(
                    "all values are zero; no logarithmic binning possible".into(),
                ));
            }
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo * 0.5, hi * 2.0) };
            let log_lo = lo.ln();
            let log_span = hi.ln() - log_lo;
            let mut edges: Vec<f64> = (0..=bin_count)
                .map(|i| (log_lo + log_span * i as f64 / bin_count as f64).exp())
                .collect();
            edges[0] = lo;
            edges[bin_count] = hi;
            let mut counts = vec![0u64; bin_count];
            let mut underflow = 0usize;
            for v in values.iter().map(|v| v.abs()) {
                if v == 0.0 {
                    underflow += 1;
                    continue;
                }
                counts[locate(&edges, v)] += 1;
            }
            Ok(finish(edges, counts, n, underflow, domain))
        }
        Domain::Signed => {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
            let span = hi - lo;
            let mut edges: Vec<f64> = (0..=bin_count)
                .map(|i| lo + span * i as f64 / bin_count as f64)
                .collect();
            edges[bin_count] = hi;
            let mut counts = vec![0u64; bin_count];
            for v in values {
                counts[locate(&edges, *v)] += 1;
            }
            Ok(finish(edges, counts, n, 0, domain))
        }
    }
}

/// Bin index for a value inside `[edges[0], edges[last]]`.
fn locate(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    edges.partition_point(|e| *e <= v).saturating_sub(1).min(bins - 1)
}

fn finish(
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
    sample_count: usize,
    underflow_count: usize,
    domain: Domain,
) -> EmpiricalDistribution {
    let total = sample_count as f64;
    let densities = counts
        .iter()
        .zip(bin_edges.windows(2))
        .map(|(c, w)| *c as f64 / (total * (w[1] - w[0])))
        .collect();
    EmpiricalDistribution {
        bin_edges,
        densities,
        counts,
        sample_count,
        underflow_count,
        domain,
    }
}

/// Diffusive rescaling `z = r / √n`.
///
/// A density estimated from the result represents `√n · F_n(√n z)`.
pub fn rescale(values: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("rescaling needs n ≥ 1"));
    }
    if n == 1 {
        return Ok(values.to_vec());
    }
    let root = (n as f64).sqrt();
    Ok(values.iter().map(|r| r / root).collect())
}

/// Two-sample Kolmogorov statistic `sup |F_a − F_b|` on sorted samples.
pub fn ks_two_sample(a_sorted: &[f64], b_sorted: &[f64]) -> f64 {
    if a_sorted.is_empty() || b_sorted.is_empty() {
        return if a_sorted.len() == b_sorted.len() { 0.0 } else { 1.0 };
    }
    let (na, nb) = (a_sorted.len() as f64, b_sorted.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a_sorted.len() && j < b_sorted.len() {
        let x = a_sorted[i].min(b_sorted[j]);
        while i < a_sorted.len() && a_sorted[i] <= x {
            i += 1;
        }
        while j < b_sorted.len() && b_sorted[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Pairwise Kolmogorov distances between rescaled return samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub scales: Vec<usize>,
    pub pairwise_distance: Vec<Vec<f64>>,
    pub max_distance: f64,
}

impl CollapseReport {
    /// `n_a,n_b,distance` for every unordered pair.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n_a", "n_b", "distance"])?;
        for i in 0..self.scales.len() {
            for j in i + 1..self.scales.len() {
                w.write_record([
                    self.scales[i].to_string(),
                    self.scales[j].to_string(),
                    self.pairwise_distance[i][j].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn collapse_metric(series: &[ReturnSeries]) -> Result<CollapseReport> {
    if series.len() < 2 {
        return Err(Error::invalid(format!(
            "collapse needs at least 2 scales, got {}",
            series.len()
        )));
    }
    if let Some(s) = series.iter().find(|s| s.len() < MIN_COLLAPSE_SAMPLES) {
        return Err(Error::insufficient(format!(
            "scale n = {} has {} returns; at least {MIN_COLLAPSE_SAMPLES} required",
            s.n,
            s.len()
        )));
    }
    let rescaled: Vec<Vec<f64>> = series
        .par_iter()
        .map(|s| {
            let mut z = rescale(&s.values, s.n)?;
            z.sort_by(f64::total_cmp);
            Ok(z)
        })
        .collect::<Result<_>>()?;

    let k = series.len();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();
    let distances: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| ks_two_sample(&rescaled[i], &rescaled[j]))
        .collect();

    let mut matrix = vec![vec![0.0; k]; k];
    for (&(i, j), d) in pairs.iter().zip(&distances) {
        matrix[i][j] = *d;
        matrix[j][i] = *d;
    }
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(CollapseReport {
        scales: series.iter().map(|s| s.n).collect(),
        pairwise_distance: matrix,
        max_distance,
    })
}

/// Moment estimate of skewness, `m3 / m2^{3/2}`.
pub fn sample_skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(m2, m3), v| {
        let d = v - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    (m3 / n) / (m2 / n).powf(1.5)
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn normals(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                sd * z
            })
            .collect()
    }

    fn series(values: Vec<f64>, n: usize) -> ReturnSeries {
        let len = values.len();
        ReturnSeries {
            values,
            n,
            timestamps: (0..len as i64).collect(),
            session_ids: vec![0; len],
        }
    }

    #[test]
    fn uniform_density_is_flat() {
        let mut r = rng(11);
        let x: Vec<f64> = (0..1_000_000).map(|_| r.random::<f64>()).collect();
        let d = empirical_density(&x, Domain::Signed, 60).unwrap();
        for dens in &d.densities[1..59] {
            assert!((dens - 1.0).abs() < 0.05, "{dens}");
        }
    }

    #[test]
    fn normal_density_normalized() {
        let x = normals(50_000, 1.0, 3);
        for domain in [Domain::Signed, Domain::Absolute] {
            let d = empirical_density(&x, domain, 60).unwrap();
            assert!((d.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zeros_counted_in_underflow() {
        let mut x = normals(200, 1.0, 5);
        x.extend(std::iter::repeat_n(0.0, 50));
        let d = empirical_density(&x, Domain::Absolute, 20).unwrap();
        assert_eq!(d.underflow_count, 50);
        assert_eq!(d.sample_count, 250);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pareto_log_binned_slope() {
        // Pareto(α = 3.5, x_min = 1): density ∝ x^{-3.5}.
        let mut r = rng(17);
        let x: Vec<f64> = (0..200_000)
            .map(|_| (1.0 - r.random::<f64>()).powf(-1.0 / 2.5))
            .collect();
        let d = empirical_density(&x, Domain::Absolute, 60).unwrap();
        let slope = crate::tailfit::tail_slope(&d, (1.0, 30.0)).unwrap();
        assert!((slope + 3.5).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn density_preconditions() {
        assert!(empirical_density(&[1.0; 10], Domain::Signed, 10).is_err());
        assert!(matches!(
            empirical_density(&[0.0; 200], Domain::Absolute, 10),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rescale_cases() {
        assert_eq!(rescale(&[0.3, -0.1], 1).unwrap(), vec![0.3, -0.1]);
        assert!((rescale(&[0.02], 4).unwrap()[0] - 0.01).abs() < 1e-18);
        assert!(rescale(&[1.0], 0).is_err());
    }

    #[test]
    fn rescaled_gaussians_agree() {
        let n_samples = 100_000;
        let a = series(normals(n_samples, 2.0, 1), 4);
        let b = series(normals(n_samples, 4.0, 2), 16);
        let report = collapse_metric(&[a, b]).unwrap();
        assert!(report.max_distance < 3.0 / (n_samples as f64).sqrt());
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let x = normals(5000, 1.0, 9);
        let report = collapse_metric(&[series(x.clone(), 1), series(x, 1)]).unwrap();
        assert_eq!(report.max_distance, 0.0);
        assert_eq!(report.pairwise_distance[0][0], 0.0);
    }

    #[test]
    fn doubled_sigma_is_detected() {
        // sup |Φ(x) − Φ(x/2)| ≈ 0.1807 at x ≈ 1.36.
        let a = series(normals(50_000, 1.0, 4), 1);
        let b = series(normals(50_000, 2.0, 5), 1);
        let d = collapse_metric(&[a, b]).unwrap().max_distance;
        assert!(d > 0.1, "{d}");
    }

    #[test]
    fn collapse_preconditions() {
        let a = series(normals(5000, 1.0, 1), 1);
        assert!(collapse_metric(std::slice::from_ref(&a)).is_err());
        let short = series(normals(10, 1.0, 1), 2);
        assert!(collapse_metric(&[a, short]).is_err());
    }

    #[test]
    fn ks_handles_ties() {
        assert_eq!(ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]), 0.0);
        assert!((ks_two_sample(&[1.0, 1.0], &[1.0, 2.0]) - 0.5).abs() < 1e-15);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]), 1.0);
    }

    #[test]
    fn gaussian_skew_is_small() {
        let n = 200_000;
        let x = normals(n, 1.0, 21);
        assert!(sample_skewness(&x).abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!((quantile(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
