//! Standard normal distribution functions.
//!
//! The CDF is evaluated through the complementary error function so that both
//! tails keep full relative precision. The quantile starts from a rational
//! approximation and is polished with Halley steps on the lower tail.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// Density of the standard normal distribution.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Cumulative distribution function of the standard normal distribution.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("std_normal_cdf of non-finite value {z}")));
    }
    Ok(cdf(z))
}

#[inline]
fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Inverse of [`std_normal_cdf`] for `p` in the open interval (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "std_normal_quantile requires 0 < p < 1, got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work on the lower tail where erfc keeps relative precision.
    let (q, sign) = if p < 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    Ok(sign * lower_tail_quantile(q))
}

/// Upper-tail quantile: the `z` with `P(Z > z) = q`.
///
/// Equivalent to `std_normal_quantile(1 - q)` without the cancellation in
/// `1 - q` when `q` is tiny.
pub fn std_normal_upper_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "std_normal_upper_quantile requires 0 < q < 1, got {q}"
        )));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    if q < 0.5 {
        Ok(-lower_tail_quantile(q))
    } else {
        Ok(lower_tail_quantile(1.0 - q))
    }
}

/// Quantile for `q <= 0.5`, returned as a nonpositive number.
fn lower_tail_quantile(q: f64) -> f64 {
    let mut x = acklam_guess(q);
    for _ in 0..4 {
        let err = cdf(x) - q;
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let u = err / pdf;
        // Halley update for Phi(x) - q = 0.
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

// Rational approximation of the normal quantile (relative error ~1e-9),
// used only as a starting point.
fn acklam_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
