//! Volatility mixtures of zero-mean Gaussians.
//!
//! The rescaled return density is
//!
//! ```text
//! 𝓕(z) = (2π)^{-1/2} ∫ σ^{-1} exp(−z² / 2σ²) h(σ) dσ,
//! ```
//!
//! and the unscaled density at aggregation level `n` is `F_n(r) = n^{-1/2} 𝓕(r/√n)`.
//! Quadrature runs in `t = ln σ`, where the integrand becomes
//! `h(e^t) exp(−z² e^{−2t} / 2)`: log-concave for every parametric family here, so
//! the integration range is split at its single peak.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::distribution::{Domain, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::quadrature::{
    integrate, integrate_from_neg_infinity, integrate_to_infinity, QuadratureOptions,
};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Parameters of a volatility distribution `h(σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    PointMass { sigma0: f64 },
    /// `h(σ) = (α − 1) σ_min^{α−1} σ^{−α}` on `[σ_min, ∞)`.
    ParetoTail { alpha: f64, sigma_min: f64 },
    /// `h(σ) = C e^{−λσ^β}` on `[σ_lo, ∞)`; `C` is fixed by normalisation.
    StretchedExp { lambda: f64, beta: f64, sigma_lo: f64 },
    /// `ln σ ~ Normal(μ, s²)`.
    LogNormal { mu: f64, s: f64 },
    /// Piecewise-constant density on `edges`.
    Empirical { edges: Vec<f64>, densities: Vec<f64> },
}

/// A validated, normalised volatility distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelKind", into = "ModelKind")]
pub struct VolatilityModel {
    kind: ModelKind,
    /// `ln C` for the stretched exponential, unused otherwise.
    ln_norm: f64,
}

impl TryFrom<ModelKind> for VolatilityModel {
    type Error = Error;

    fn try_from(kind: ModelKind) -> Result<Self> {
        VolatilityModel::new(kind)
    }
}

impl From<VolatilityModel> for ModelKind {
    fn from(m: VolatilityModel) -> Self {
        m.kind
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl VolatilityModel {
    pub fn new(kind: ModelKind) -> Result<Self> {
        let mut ln_norm = 0.0;
        let kind = match kind {
            ModelKind::PointMass { sigma0 } => {
                positive("sigma0", sigma0)?;
                kind
            }
            ModelKind::ParetoTail { alpha, sigma_min } => {
                if !(alpha > 1.0 && alpha.is_finite()) {
                    return Err(Error::invalid(format!(
                        "pareto tail exponent must exceed 1, got {alpha}"
                    )));
                }
                positive("sigma_min", sigma_min)?;
                kind
            }
            ModelKind::StretchedExp {
                lambda,
                beta,
                sigma_lo,
            } => {
                positive("lambda", lambda)?;
                positive("sigma_lo", sigma_lo)?;
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
                }
                ln_norm = -stretched_ln_survival(lambda, beta, sigma_lo)?;
                kind
            }
            ModelKind::LogNormal { mu, s } => {
                if !mu.is_finite() {
                    return Err(Error::invalid("lognormal mu must be finite"));
                }
                positive("s", s)?;
                kind
            }
            ModelKind::Empirical { edges, densities } => {
                if edges.len() < 2 || densities.len() + 1 != edges.len() {
                    return Err(Error::invalid("empirical model needs one more edge than densities"));
                }
                if edges.windows(2).any(|w| !(w[1] > w[0])) || !(edges[0] > 0.0) {
                    return Err(Error::invalid(
                        "empirical edges must be positive and strictly increasing",
                    ));
                }
                if densities.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                    return Err(Error::invalid("empirical densities must be non-negative"));
                }
                let mass: f64 = densities
                    .iter()
                    .zip(edges.windows(2))
                    .map(|(d, w)| d * (w[1] - w[0]))
                    .sum();
                if !(mass > 0.0) {
                    return Err(Error::Degenerate("empirical model has zero mass".into()));
                }
                ModelKind::Empirical {
                    edges,
                    densities: densities.into_iter().map(|d| d / mass).collect(),
                }
            }
        };
        Ok(Self { kind, ln_norm })
    }

    pub fn point_mass(sigma0: f64) -> Result<Self> {
        Self::new(ModelKind::PointMass { sigma0 })
    }

    pub fn pareto_tail(alpha: f64, sigma_min: f64) -> Result<Self> {
        Self::new(ModelKind::ParetoTail { alpha, sigma_min })
    }

    pub fn stretched_exp(lambda: f64, beta: f64, sigma_lo: f64) -> Result<Self> {
        Self::new(ModelKind::StretchedExp {
            lambda,
            beta,
            sigma_lo,
        })
    }

    pub fn lognormal(mu: f64, s: f64) -> Result<Self> {
        Self::new(ModelKind::LogNormal { mu, s })
    }

    /// Piecewise-constant model from a binned volatility distribution.
    ///
    /// Zero volatilities (the underflow bucket) are dropped and the remaining
    /// mass renormalised; the leftmost edge is the smallest observed positive σ.
    pub fn from_histogram(dist: &EmpiricalDistribution) -> Result<Self> {
        if dist.domain != Domain::Absolute {
            return Err(Error::invalid(
                "empirical volatility model needs an absolute-domain histogram",
            ));
        }
        Self::new(ModelKind::Empirical {
            edges: dist.bin_edges.clone(),
            densities: dist.densities.clone(),
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// Normalisation constant `C` of the stretched exponential.
    pub fn stretched_amplitude(&self) -> Option<f64> {
        matches!(self.kind, ModelKind::StretchedExp { .. }).then(|| self.ln_norm.exp())
    }

    /// `[lo, hi]` of the support (`hi` may be infinite).
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            ModelKind::PointMass { sigma0 } => (*sigma0, *sigma0),
            ModelKind::ParetoTail { sigma_min, .. } => (*sigma_min, f64::INFINITY),
            ModelKind::StretchedExp { sigma_lo, .. } => (*sigma_lo, f64::INFINITY),
            ModelKind::LogNormal { .. } => (0.0, f64::INFINITY),
            ModelKind::Empirical { edges, .. } => (edges[0], edges[edges.len() - 1]),
        }
    }

    /// Typical volatility, used to scale semi-infinite transforms.
    pub fn scale(&self) -> f64 {
        match &self.kind {
            ModelKind::PointMass { sigma0 } => *sigma0,
            ModelKind::ParetoTail { sigma_min, .. } => *sigma_min,
            ModelKind::StretchedExp { sigma_lo, .. } => *sigma_lo,
            ModelKind::LogNormal { mu, .. } => mu.exp(),
            ModelKind::Empirical { edges, densities } => {
                let (i, _) = densities
                    .iter()
                    .zip(edges.windows(2))
                    .map(|(d, w)| d * (w[1] - w[0]))
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("validated non-empty");
                (edges[i] * edges[i + 1]).sqrt()
            }
        }
    }

    /// `ln h(σ)`; `−∞` outside the support. Not defined for a point mass.
    pub fn ln_density(&self, sigma: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(sigma >= lo && sigma <= hi) || sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match &self.kind {
            ModelKind::PointMass { .. } => f64::NEG_INFINITY,
            ModelKind::ParetoTail { alpha, sigma_min } => {
                (alpha - 1.0).ln() + (alpha - 1.0) * sigma_min.ln() - alpha * sigma.ln()
            }
            ModelKind::StretchedExp { lambda, beta, .. } => {
                self.ln_norm - lambda * sigma.powf(*beta)
            }
            ModelKind::LogNormal { mu, s } => {
                let u = (sigma.ln() - mu) / s;
                -0.5 * u * u - sigma.ln() - (s * (2.0 * PI).sqrt()).ln()
            }
            ModelKind::Empirical { edges, densities } => {
                let i = edges.partition_point(|e| *e <= sigma).saturating_sub(1);
                densities[i.min(densities.len() - 1)].ln()
            }
        }
    }

    pub fn density(&self, sigma: f64) -> f64 {
        self.ln_density(sigma).exp()
    }

    /// `ln h(e^t)` with its first two `t`-derivatives, for the smooth families.
    fn log_kernel(&self, t: f64) -> (f64, f64, f64) {
        match &self.kind {
            ModelKind::ParetoTail { alpha, sigma_min } => (
                (alpha - 1.0).ln() + (alpha - 1.0) * sigma_min.ln() - alpha * t,
                -alpha,
                0.0,
            ),
            ModelKind::StretchedExp { lambda, beta, .. } => {
                let e = (beta * t).exp();
                (
                    self.ln_norm - lambda * e,
                    -lambda * beta * e,
                    -lambda * beta * beta * e,
                )
            }
            ModelKind::LogNormal { mu, s } => {
                let u = (t - mu) / s;
                (
                    -0.5 * u * u - t - (s * (2.0 * PI).sqrt()).ln(),
                    -u / s - 1.0,
                    -1.0 / (s * s),
                )
            }
            _ => unreachable!("log_kernel is only used for smooth families"),
        }
    }
}

/// `ln ∫_x^∞ e^{−λσ^β} dσ`, evaluated in scaled form so it never underflows.
pub(crate) fn stretched_ln_survival(lambda: f64, beta: f64, x: f64) -> Result<f64> {
    let xb = x.powf(beta);
    let decay_length = x.powf(1.0 - beta) / (lambda * beta);
    let opts = QuadratureOptions::default().with_rel_tol(1e-12);
    let inner = integrate_to_infinity(
        |s| (-lambda * (s.powf(beta) - xb)).exp(),
        x,
        decay_length,
        &opts,
    )?;
    Ok(-lambda * xb + inner.value.ln())
}

/// The predicted rescaled density 𝓕 for a volatility model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFunction {
    pub model: VolatilityModel,
    pub options: QuadratureOptions,
}

impl ScalingFunction {
    pub fn new(model: VolatilityModel) -> Self {
        Self {
            model,
            options: QuadratureOptions::default(),
        }
    }

    pub fn with_options(model: VolatilityModel, options: QuadratureOptions) -> Self {
        Self { model, options }
    }

    /// 𝓕(z); even in `z` by construction.
    pub fn evaluate(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::invalid("z must be finite"));
        }
        let z2 = z * z;
        let opts = &self.options;
        match &self.model.kind {
            ModelKind::PointMass { sigma0 } => {
                Ok(INV_SQRT_2PI / sigma0 * (-0.5 * z2 / (sigma0 * sigma0)).exp())
            }
            ModelKind::Empirical { edges, densities } => {
                let mut total = 0.0;
                for (d, w) in densities.iter().zip(edges.windows(2)) {
                    if *d == 0.0 {
                        continue;
                    }
                    let part = integrate(
                        |t| (-0.5 * z2 * (-2.0 * t).exp()).exp(),
                        w[0].ln(),
                        w[1].ln(),
                        opts,
                    )?;
                    total += d * part.value;
                }
                Ok(INV_SQRT_2PI * total)
            }
            _ => {
                let model = &self.model;
                // z²e^{−2t}, kept at zero for z = 0 where e^{−2t} may overflow
                let q = |t: f64| if z2 == 0.0 { 0.0 } else { z2 * (-2.0 * t).exp() };
                let integrand = |t: f64| {
                    let (lh, _, _) = model.log_kernel(t);
                    (lh - 0.5 * q(t)).exp()
                };
                let slope = |t: f64| model.log_kernel(t).1 + q(t);
                let t_lo = match model.kind {
                    ModelKind::LogNormal { .. } => None,
                    _ => Some(model.support().0.ln()),
                };
                let peak = log_concave_peak(slope, t_lo, model.scale().ln());
                let (_, _, curv) = model.log_kernel(peak);
                let curvature = -(curv - 2.0 * q(peak));
                let width = if curvature > 0.0 {
                    (1.0 / curvature.sqrt()).clamp(1e-6, 10.0)
                } else {
                    1.0
                };
                let right = integrate_to_infinity(integrand, peak, width, opts)?.value;
                let left = match t_lo {
                    Some(lo) if lo < peak => integrate(integrand, lo, peak, opts)?.value,
                    Some(_) => 0.0,
                    None => integrate_from_neg_infinity(integrand, peak, width, opts)?.value,
                };
                Ok(INV_SQRT_2PI * (left + right))
            }
        }
    }

    /// `F_n(r) = n^{−1/2} 𝓕(r / √n)`.
    pub fn evaluate_unscaled(&self, n: usize, r: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("aggregation level n must be at least 1"));
        }
        let root = (n as f64).sqrt();
        Ok(self.evaluate(r / root)? / root)
    }

    /// `∫ 𝓕(z) dz` by an outer quadrature over `z`.
    pub fn total_mass(&self, outer: &QuadratureOptions) -> Result<f64> {
        let scale = self.model.scale();
        let half = integrate_to_infinity(
            |z| self.evaluate(z).unwrap_or(f64::NAN),
            0.0,
            scale,
            outer,
        )?;
        Ok(2.0 * half.value)
    }
}

/// Maximiser of a log-concave function given its decreasing derivative `slope`.
fn log_concave_peak<F: Fn(f64) -> f64>(slope: F, lower: Option<f64>, guess: f64) -> f64 {
    if let Some(lo) = lower {
        if slope(lo) <= 0.0 {
            return lo;
        }
    }
    let mut a = lower.unwrap_or(guess);
    let mut step = 1.0;
    while slope(a) <= 0.0 {
        a -= step;
        step *= 2.0;
    }
    let mut b = a.max(guess);
    step = 1.0;
    while slope(b) > 0.0 {
        b += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

pub fn evaluate_scaling_function(model: &VolatilityModel, z: f64) -> Result<f64> {
    ScalingFunction::new(model.clone()).evaluate(z)
}

pub fn predicted_unscaled_density(model: &VolatilityModel, n: usize, r: f64) -> Result<f64> {
    ScalingFunction::new(model.clone()).evaluate_unscaled(n, r)
}

/// Tail exponent of 𝓕 implied by a Pareto volatility tail: the volatility exponent itself.
pub fn scaling_function_tail_exponent(model: &VolatilityModel) -> Result<f64> {
    match model.kind() {
        ModelKind::ParetoTail { alpha, .. } if *alpha > 1.0 => Ok(*alpha),
        ModelKind::ParetoTail { alpha, .. } => Err(Error::invalid(format!(
            "tail exponent must exceed 1, got {alpha}"
        ))),
        _ => Err(Error::invalid(
            "tail exponent is defined for pareto-tail models only",
        )),
    }
}

fn check_asymptotic_args(z: f64, lambda: f64, beta: f64) -> Result<()> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::invalid(format!("z must be positive, got {z}")));
    }
    positive("lambda", lambda)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(())
}

/// Log of the stretched-exponential mixture asymptote, up to an additive constant:
/// `−β/(2+β) ln z − (β+2)/(2β) (λβ z^β)^{2/(β+2)}`.
pub fn ln_asymptotic_tail(z: f64, lambda: f64, beta: f64) -> Result<f64> {
    check_asymptotic_args(z, lambda, beta)?;
    let p = 2.0 / (beta + 2.0);
    Ok(-beta / (2.0 + beta) * z.ln()
        - (beta + 2.0) / (2.0 * beta) * (lambda * beta * z.powf(beta)).powf(p))
}

/// Unit-amplitude asymptote `z^{−β/(2+β)} exp(−(β+2)/(2β) (λβ z^β)^{2/(β+2)})`.
pub fn asymptotic_tail(z: f64, lambda: f64, beta: f64) -> Result<f64> {
    Ok(ln_asymptotic_tail(z, lambda, beta)?.exp())
}

/// The asymptote with its amplitude fixed by matching 𝓕 at one reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticTail {
    pub lambda: f64,
    pub beta: f64,
    pub z_ref: f64,
    pub ln_amplitude: f64,
}

impl AsymptoticTail {
    pub fn matched(scaling: &ScalingFunction, lambda: f64, beta: f64, z_ref: f64) -> Result<Self> {
        let ln_shape = ln_asymptotic_tail(z_ref, lambda, beta)?;
        let value = scaling.evaluate(z_ref)?;
        if !(value > 0.0) {
            return Err(Error::Degenerate(format!(
                "scaling function vanishes at the matching point z = {z_ref}"
            )));
        }
        Ok(Self {
            lambda,
            beta,
            z_ref,
            ln_amplitude: value.ln() - ln_shape,
        })
    }

    pub fn ln_value(&self, z: f64) -> Result<f64> {
        Ok(self.ln_amplitude + ln_asymptotic_tail(z, self.lambda, self.beta)?)
    }

    pub fn value(&self, z: f64) -> Result<f64> {
        Ok(self.ln_value(z)?.exp())
    }
}
