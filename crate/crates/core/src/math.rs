//! Scalar special functions shared by the density kernels and the classical
//! estimators. Everything here is `no_std` and built on `libm`.

use core::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// `ln(sqrt(2 pi))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    libm::log(p) - libm::log1p(-p)
}

#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = if a > b { a } else { b };
    m + libm::log1p(libm::exp(-(a - b).abs()))
}

/// Standard normal log-density.
#[inline]
pub fn ln_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn ndtr(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Log of the standard normal CDF, accurate deep into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x > 6.0 {
        libm::log1p(-0.5 * libm::erfc(x * FRAC_1_SQRT_2))
    } else if x > -20.0 {
        libm::log(0.5 * libm::erfc(-x * FRAC_1_SQRT_2))
    } else {
        // Asymptotic expansion of the Mills ratio.
        let r = 1.0 / (x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            term *= -((2 * k - 1) as f64) * r;
            sum += term;
        }
        ln_std_normal_pdf(x) - libm::log(-x) + libm::log(sum)
    }
}

/// `phi(x) / Phi(x)`, the inverse Mills ratio, stable for large negative x.
pub fn inv_mills(x: f64) -> f64 {
    libm::exp(ln_std_normal_pdf(x) - log_ndtr(x))
}

/// Standard normal quantile: rational approximation followed by a single
/// Halley correction against `erfc`.
pub fn ndtri(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        // Work with the smaller tail; 1 - p is exact for p > 0.5.
        return -ndtri(1.0 - p);
    }
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
    let x = if p < 0.024_25 {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Normal quantile of `exp(log_p)`; keeps working when `p` underflows.
pub fn ndtri_log(log_p: f64) -> f64 {
    if log_p >= 0.0 {
        return f64::INFINITY;
    }
    if log_p > -0.693 {
        return -ndtri(-libm::expm1(log_p));
    }
    if log_p > -700.0 {
        return ndtri(libm::exp(log_p));
    }
    let mut x = -libm::sqrt(-2.0 * log_p);
    for _ in 0..50 {
        let f = log_ndtr(x) - log_p;
        let step = f / inv_mills(x);
        x -= step;
        if step.abs() <= 1e-15 * x.abs() {
            break;
        }
    }
    x
}

/// Digamma for `x > 0` (recurrence up to 10, then the asymptotic series).
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    let tail = f
        * (1.0 / 12.0
            - f * (1.0 / 120.0
                - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f * (1.0 / 132.0)))));
    acc + libm::log(x) - 0.5 / x - tail
}

/// `ln B(a, b)` through log-gamma.
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * libm::exp(-x + a * libm::log(x) - libm::lgamma(a))
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
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 2.0 * f64::EPSILON {
            break;
        }
    }
    libm::exp(-x + a * libm::log(x) - libm::lgamma(a)) * h
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    gamma_q(0.5 * df, 0.5 * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ndtri_inverts_ndtr() {
        for &p in &[1e-300, 1e-20, 1e-8, 0.001, 0.024, 0.025, 0.3, 0.5, 0.77, 0.975, 0.999_999] {
            let x = ndtri(p);
            let back = ndtr(x);
            assert!((back - p).abs() <= 1e-14 * p.max(1e-300) + 1e-16, "p={p} back={back}");
        }
        assert_abs_diff_eq!(ndtri(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
    }

    #[test]
    fn ndtri_log_reaches_far_tail() {
        let x = ndtri_log(-1000.0);
        assert_abs_diff_eq!(log_ndtr(x), -1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ndtri_log(libm::log(0.2)), ndtri(0.2), epsilon = 1e-13);
        assert_abs_diff_eq!(ndtri_log(libm::log(0.9)), ndtri(0.9), epsilon = 1e-12);
    }

    #[test]
    fn log_ndtr_is_continuous_across_branches() {
        for &x in &[-20.0, 6.0] {
            let lo = log_ndtr(x - 1e-9);
            let hi = log_ndtr(x + 1e-9);
            assert!((lo - hi).abs() < 1e-7 * lo.abs().max(1e-12), "x={x} {lo} {hi}");
        }
        // Known value: ln Phi(-30) = -454.3212439...
        assert_abs_diff_eq!(log_ndtr(-30.0), -454.321_243_956_343_27, epsilon = 1e-8);
    }

    #[test]
    fn digamma_known_values() {
        assert_abs_diff_eq!(digamma(1.0), -0.577_215_664_901_532_9, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(0.5), -1.963_510_026_021_423_5, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(10.0), 2.251_752_589_066_721, epsilon = 1e-13);
    }

    #[test]
    fn chi_square_table() {
        assert_abs_diff_eq!(chi_square_sf(3.841, 1.0), 0.05, epsilon = 5e-4);
        assert_abs_diff_eq!(chi_square_sf(16.81, 6.0), 0.01, epsilon = 5e-4);
        assert_abs_diff_eq!(chi_square_sf(0.0, 3.0), 1.0, epsilon = 1e-15);
        // df = 2 has the closed form exp(-x/2).
        assert_abs_diff_eq!(chi_square_sf(7.3, 2.0), libm::exp(-3.65), epsilon = 1e-14);
    }

    #[test]
    fn sigmoid_helpers_are_stable() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_abs_diff_eq!(log_sigmoid(-800.0), -800.0, epsilon = 1e-12);
        assert_abs_diff_eq!(logit(0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(log_sum_exp(0.0, 0.0), libm::log(2.0), epsilon = 1e-15);
    }
}
