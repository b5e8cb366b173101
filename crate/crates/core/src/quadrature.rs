//! Adaptive Gauss–Kronrod (10/21 point) quadrature on finite and semi-infinite intervals.
//!
//! The finite-interval driver bisects the interval with the largest error
//! estimate until the summed estimate satisfies the tolerance. Semi-infinite
//! ranges are mapped onto `[0, 1)` with `x = a + scale * u / (1 - u)`; the
//! Kronrod abscissae never touch the endpoint `u = 1`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Tolerances for the adaptive driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureOptions {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// One 21-point Kronrod evaluation with the embedded 10-point Gauss error estimate.
fn kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = f(center);

    let mut res_g = 0.0;
    let mut res_k = f_center * WGK[10];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_k += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (f_center - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let err = (res_k - res_g) * half;
    let abs_half = half.abs();
    (
        res_k * half,
        rescale_error(err, res_abs * abs_half, res_asc * abs_half),
    )
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!(
            "integration bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        });
    }

    let (value, error) = kronrod21(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut subdivisions = 1;

    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::QuadratureNonConvergence {
                estimate: total,
                error_bound: total_err,
                subdivisions,
            });
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if subdivisions >= opts.max_subdivisions {
            return Err(Error::QuadratureNonConvergence {
                estimate: total,
                error_bound: total_err,
                subdivisions,
            });
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // Interval cannot be split further in floating point.
            return Err(Error::QuadratureNonConvergence {
                estimate: total,
                error_bound: total_err,
                subdivisions,
            });
        }
        let (v1, e1) = kronrod21(&f, worst.a, mid);
        let (v2, e2) = kronrod21(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        subdivisions += 1;
    }

    // Re-sum to shed the drift accumulated by incremental updates.
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Ok(Estimate {
        value,
        error,
        subdivisions,
    })
}

/// Integrates `f` over `[a, ∞)` using `x = a + scale * u / (1 - u)`.
pub fn integrate_to_infinity<F>(
    f: F,
    a: f64,
    scale: f64,
    opts: &QuadratureOptions,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    check_scale(scale)?;
    integrate(
        |u| {
            let w = 1.0 - u;
            let x = a + scale * u / w;
            let y = f(x);
            if y == 0.0 {
                0.0
            } else {
                y * scale / (w * w)
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Integrates `f` over `(-∞, b]` using `x = b - scale * u / (1 - u)`.
pub fn integrate_from_neg_infinity<F>(
    f: F,
    b: f64,
    scale: f64,
    opts: &QuadratureOptions,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    integrate_to_infinity(|x| f(2.0 * b - x), b, scale, opts)
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "semi-infinite transform scale must be positive, got {scale}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn opts() -> QuadratureOptions {
        QuadratureOptions::default().with_rel_tol(1e-12)
    }

    #[test]
    fn polynomial_is_exact() {
        let est = integrate(|x| 3.0 * x * x - x + 2.0, -1.0, 2.0, &opts()).unwrap();
        // x^3 - x^2/2 + 2x on [-1, 2] = (8 - 2 + 4) - (-1 - 0.5 - 2) = 13.5
        assert!((est.value - 13.5).abs() < 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        let est = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, &opts()).unwrap();
        let exact = 2.0 * (1.0 / 1e-2_f64).atan() / 1e-2;
        assert!((est.value / exact - 1.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn gaussian_on_half_line() {
        let est = integrate_to_infinity(|x| (-0.5 * x * x).exp(), 0.0, 1.0, &opts()).unwrap();
        assert!((est.value - (PI / 2.0).sqrt()).abs() < 1e-11);
        let est =
            integrate_from_neg_infinity(|x| (-0.5 * x * x).exp(), 0.0, 1.0, &opts()).unwrap();
        assert!((est.value - (PI / 2.0).sqrt()).abs() < 1e-11);
    }

    #[test]
    fn algebraic_tail() {
        // ∫_1^∞ x^{-3.5} dx = 1/2.5
        let est = integrate_to_infinity(|x| x.powf(-3.5), 1.0, 1.0, &opts()).unwrap();
        assert!((est.value - 0.4).abs() < 1e-11);
    }

    #[test]
    fn empty_interval_is_zero() {
        let est = integrate(|x| x, 1.0, 1.0, &opts()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn non_convergence_carries_partial_estimate() {
        let tight = QuadratureOptions {
            rel_tol: 1e-14,
            abs_tol: 0.0,
            max_subdivisions: 3,
        };
        let err = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0, &tight).unwrap_err();
        match err {
            Error::QuadratureNonConvergence {
                estimate,
                error_bound,
                subdivisions,
            } => {
                assert_eq!(subdivisions, 3);
                assert!(estimate > 0.0 && error_bound > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_scale_rejected() {
        assert!(integrate_to_infinity(|x| x, 0.0, 0.0, &opts()).is_err());
    }
}
