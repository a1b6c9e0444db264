//! Standard normal CDF/quantile and chi-square quantile.
//!
//! Quantiles are refined by safeguarded Newton iteration on the matching CDF,
//! so every [`QuantileResult`] carries the residual it actually achieved.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// A quantile together with `|CDF(value) - p|` as evaluated at the returned value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileResult {
    pub value: f64,
    pub achieved_accuracy: f64,
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Complementary error function.
///
/// Positive-term series `erf(x) = 2/√π e^{-x²} Σ 2^k x^{2k+1} / (2k+1)!!` below
/// `x = 2.5`, Lentz continued fraction above.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * x2 / (2.0 * k + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    std::f64::consts::FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// erfc(x) = e^{-x²}/√π · 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = x + a / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * PI.sqrt())
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal CDF `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Acklam's rational approximation, used only as a starting point.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
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
    const LOW: f64 = 0.02425;
    if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Inverse of [`normal_cdf`] on `(0, 1)`.
pub fn normal_quantile(p: f64) -> Result<QuantileResult> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            p,
            domain: "(0, 1)",
        });
    }
    if p == 0.5 {
        return Ok(QuantileResult {
            value: 0.0,
            achieved_accuracy: 0.0,
        });
    }
    let guess = acklam(p);
    let (value, achieved_accuracy) = refine(guess, p, normal_cdf, normal_pdf, (-40.0, 40.0));
    Ok(QuantileResult {
        value,
        achieved_accuracy,
    })
}

/// Safeguarded Newton on a monotone CDF. The bracket shrinks on every
/// evaluation and a bisection step replaces any Newton step that leaves it.
fn refine(
    start: f64,
    p: f64,
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    bracket: (f64, f64),
) -> (f64, f64) {
    let (mut lo, mut hi) = bracket;
    let mut x = start.clamp(lo, hi);
    let mut best = (x, f64::INFINITY);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() < best.1 {
            best = (x, f.abs());
        }
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let newton = if d > 0.0 { x - f / d } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300)
            || hi - lo <= f64::EPSILON * hi.abs()
        {
            let f_next = (cdf(next) - p).abs();
            if f_next < best.1 {
                best = (next, f_next);
            }
            break;
        }
        x = next;
    }
    best
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi_square_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

fn chi_square_pdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return if dof == 2 { 0.5 } else { 0.0 };
    }
    let k = 0.5 * dof as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
}

/// Inverse chi-square CDF on `[0, 1)`.
pub fn chi_square_quantile(p: f64, dof: u32) -> Result<QuantileResult> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain {
            p,
            domain: "[0, 1)",
        });
    }
    if dof == 0 {
        return Err(Error::Dimension(
            "chi-square needs at least one degree of freedom".into(),
        ));
    }
    if p == 0.0 {
        return Ok(QuantileResult {
            value: 0.0,
            achieved_accuracy: 0.0,
        });
    }
    let k = dof as f64;
    // Wilson-Hilferty start
    let z = acklam(p);
    let h = 2.0 / (9.0 * k);
    let start = (k * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);
    let mut hi = start.max(k) * 2.0 + 10.0;
    while chi_square_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let (value, achieved_accuracy) = refine(
        start.min(hi),
        p,
        |x| chi_square_cdf(x, dof),
        |x| chi_square_pdf(x, dof),
        (0.0, hi),
    );
    Ok(QuantileResult {
        value: value.max(0.0),
        achieved_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent erfc oracle: statrs implements a different algorithm.
    fn oracle_cdf(z: f64) -> f64 {
        0.5 * libm::erfc(-z / 2f64.sqrt())
    }

    fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_basics() {
        assert_eq!(normal_cdf(0.0), 0.5);
        for z in [0.5, 1.0, 2.0] {
            assert_abs_diff_eq!(normal_cdf(-z), 1.0 - normal_cdf(z), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(normal_cdf(1.036433), 0.85, epsilon = 1e-6);
    }

    #[test]
    fn cdf_matches_oracle_over_range() {
        let mut z = -8.0;
        while z <= 8.0 {
            assert_abs_diff_eq!(normal_cdf(z), oracle_cdf(z), epsilon = 1e-12);
            z += 0.01;
        }
    }

    #[test]
    fn normal_quantile_values() {
        assert_eq!(normal_quantile(0.5).unwrap().value, 0.0);
        // frozen from bisection on the oracle cdf
        let q85 = bisect(oracle_cdf, 0.85, -10.0, 10.0);
        let q975 = bisect(oracle_cdf, 0.975, -10.0, 10.0);
        assert_abs_diff_eq!(q85, 1.036433, epsilon = 1e-6);
        assert_abs_diff_eq!(q975, 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(
            normal_quantile(0.85).unwrap().value,
            1.036433,
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            normal_quantile(0.975).unwrap().value,
            1.959964,
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(normal_quantile(0.85).unwrap().value, q85, epsilon = 1e-10);
    }

    #[test]
    fn normal_quantile_domain() {
        for p in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn extreme_tails_reach_accuracy() {
        for p in [1e-12, 1e-9, 1e-6, 1.0 - 1e-6, 1.0 - 1e-9, 1.0 - 1e-12] {
            let q = normal_quantile(p).unwrap();
            assert!(
                q.achieved_accuracy <= 1e-10,
                "p={p} acc={}",
                q.achieved_accuracy
            );
            assert!((normal_cdf(q.value) - p).abs() <= 1e-10);
        }
    }

    #[test]
    fn chi_square_values() {
        for n in [1, 2, 5, 30] {
            assert_eq!(chi_square_quantile(0.0, n).unwrap().value, 0.0);
        }
        let closed = -2.0 * 0.15f64.ln();
        assert_abs_diff_eq!(closed, 3.794240, epsilon = 1e-6);
        assert_abs_diff_eq!(
            chi_square_quantile(0.85, 2).unwrap().value,
            closed,
            epsilon = 1e-10
        );
        let z = bisect(oracle_cdf, 0.975, -10.0, 10.0);
        assert_abs_diff_eq!(
            chi_square_quantile(0.95, 1).unwrap().value,
            z * z,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            chi_square_quantile(0.95, 1).unwrap().value,
            3.841459,
            epsilon = 1e-6
        );
    }

    #[test]
    fn chi_square_matches_statrs() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for n in [1u32, 2, 3, 4, 7, 12, 40] {
            let d = ChiSquared::new(n as f64).unwrap();
            for p in [0.01, 0.3, 0.5, 0.85, 0.95, 0.999] {
                let ours = chi_square_quantile(p, n).unwrap();
                assert!(ours.achieved_accuracy <= 1e-10);
                assert_abs_diff_eq!(d.cdf(ours.value), p, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn chi_square_domain() {
        assert!(chi_square_quantile(1.0, 2).is_err());
        assert!(chi_square_quantile(1.2, 2).is_err());
        assert!(chi_square_quantile(-0.1, 2).is_err());
        assert!(chi_square_quantile(0.5, 0).is_err());
    }

    #[test]
    fn round_trip_grid() {
        for i in 0..1000 {
            let p = 1e-6 + (1.0 - 2e-6) * i as f64 / 999.0;
            let q = normal_quantile(p).unwrap();
            assert!((normal_cdf(q.value) - p).abs() <= 1e-10, "p={p}");
        }
    }

    #[test]
    fn chi_square_two_dof_closed_form() {
        for i in 0..100 {
            let p = i as f64 / 100.0;
            let q = chi_square_quantile(p, 2).unwrap().value;
            assert_abs_diff_eq!(q, -2.0 * (1.0 - p).ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn chi_square_dominates_squared_normal() {
        for n in 1..=6 {
            for i in 0..50 {
                let p = 0.5 + 0.49 * i as f64 / 49.0;
                let chi = chi_square_quantile(p, n).unwrap().value;
                let z = normal_quantile(p).unwrap().value;
                assert!(chi + 1e-10 >= z * z, "n={n} p={p}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normal_quantile_is_increasing(a in 1e-9..0.999_999_999f64, b in 1e-9..0.999_999_999f64) {
                prop_assume!((a - b).abs() > 1e-12);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(normal_quantile(lo).unwrap().value < normal_quantile(hi).unwrap().value);
            }

            #[test]
            fn chi_square_monotone(p in 0.0..0.999f64, dp in 1e-6..0.0009f64, n in 1u32..20) {
                let base = chi_square_quantile(p, n).unwrap().value;
                prop_assert!(chi_square_quantile(p + dp, n).unwrap().value >= base);
                prop_assert!(chi_square_quantile(p, n + 1).unwrap().value >= base);
            }
        }
    }
}
