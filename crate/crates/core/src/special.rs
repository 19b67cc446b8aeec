//! Special functions: the normal distribution in log space, the regularised
//! incomplete gamma function and its inverse.
//!
//! Everything here works with logarithms where tails matter. The radial model
//! evaluates gamma survival probabilities far above the mode and the process
//! simulator maps Gaussian values of 8 or more standard deviations onto
//! exponential margins, so naive `1 - cdf` forms are not good enough.

use std::f64::consts::{LN_2, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_ITER: usize = 100_000;
const EPS: f64 = 1e-16;

#[inline]
pub fn ln_gamma(a: f64) -> f64 {
    libm::lgamma(a)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[inline]
pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`.
#[inline]
pub fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `ln(1 - Φ(z))`, accurate far into the upper tail.
pub fn ln_norm_sf(z: f64) -> f64 {
    if z < 30.0 {
        return norm_sf(z).ln();
    }
    // Mills ratio by continued fraction: sf(z) = φ(z) / (z + 1/(z + 2/(z + ...)))
    let mut t = z;
    for k in (1..=60).rev() {
        t = z + k as f64 / t;
    }
    ln_norm_pdf(z) - t.ln()
}

/// `ln Φ(z)`.
#[inline]
pub fn ln_norm_cdf(z: f64) -> f64 {
    ln_norm_sf(-z)
}

// Wichura (1988), algorithm AS 241.
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Tail branch of AS 241 given `r = sqrt(-ln p)` for the smaller tail
/// probability `p`; returns the positive quantile magnitude.
fn as241_tail(r: f64) -> f64 {
    if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    }
}

/// Inverse of the standard normal distribution function.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let val = as241_tail((-tail.ln()).sqrt());
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Returns `z` such that `ln(1 - Φ(z)) = ln_q`; stays accurate when
/// `exp(ln_q)` underflows.
pub fn norm_upper_quantile_ln(ln_q: f64) -> f64 {
    if ln_q >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ln_q == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let q = ln_q.exp();
    if q >= 0.075 {
        return -norm_quantile(q);
    }
    as241_tail((-ln_q).sqrt())
}

/// Standard normal value mapped onto standard exponential margins,
/// `x = -ln(1 - Φ(z))`.
#[inline]
pub fn gaussian_to_exponential(z: f64) -> f64 {
    -ln_norm_sf(z)
}

/// Inverse of [`gaussian_to_exponential`].
#[inline]
pub fn exponential_to_gaussian(x: f64) -> f64 {
    if x < std::f64::consts::LN_2 {
        // lower half: work with 1 − e^{−x} directly
        return norm_quantile(-(-x).exp_m1());
    }
    norm_upper_quantile_ln(-x)
}

/// Logarithms of the regularised lower and upper incomplete gamma functions,
/// `(ln P(a, x), ln Q(a, x))`.
pub fn ln_gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if x.is_infinite() {
        return (0.0, f64::NEG_INFINITY);
    }
    let prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let ln_p = prefix + (sum).ln();
        let ln_q = ln_one_minus_exp(ln_p);
        (ln_p, ln_q)
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        let ln_q = prefix + h.ln();
        let ln_p = ln_one_minus_exp(ln_q);
        (ln_p, ln_q)
    }
}

/// `ln(1 - e^{v})` for `v <= 0`.
#[inline]
pub fn ln_one_minus_exp(v: f64) -> f64 {
    if v > -LN_2 {
        (-v.exp_m1()).ln()
    } else {
        (-v.exp()).ln_1p()
    }
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-density of a gamma distribution with shape `a` and rate `rate`.
#[inline]
pub fn gamma_ln_pdf(r: f64, a: f64, rate: f64) -> f64 {
    if r <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * rate.ln() + (a - 1.0) * r.ln() - rate * r - ln_gamma(a)
}

/// Log survival function of a gamma distribution with shape `a` and rate `rate`.
#[inline]
pub fn gamma_ln_sf(r: f64, a: f64, rate: f64) -> f64 {
    ln_gamma_pq(a, rate * r).1
}

#[inline]
pub fn gamma_ln_cdf(r: f64, a: f64, rate: f64) -> f64 {
    ln_gamma_pq(a, rate * r).0
}

/// Inverts the upper regularised incomplete gamma function: returns `x > 0`
/// with `ln Q(a, x) = ln_q`.
///
/// Safeguarded Newton iteration on whichever of `ln P` or `ln Q` is better
/// conditioned, inside a bisection bracket.
pub fn gamma_upper_inverse_ln(a: f64, ln_q: f64) -> f64 {
    if ln_q >= 0.0 {
        return 0.0;
    }
    if ln_q == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let use_lower = ln_q > -LN_2;
    let target = if use_lower {
        ln_one_minus_exp(ln_q)
    } else {
        ln_q
    };
    // h(x) is increasing when solving in ln P, decreasing in ln Q
    let h = |x: f64| {
        let (lp, lq) = ln_gamma_pq(a, x);
        if use_lower {
            lp - target
        } else {
            target - lq
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = a.max(1.0);
    while h(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    // initial guess: Wilson–Hilferty when informative, else midpoint
    let mut x = {
        let ln_p_or_q = target;
        let p = if use_lower {
            ln_p_or_q.exp()
        } else {
            -ln_p_or_q.exp_m1()
        };
        let z = norm_quantile(p.clamp(1e-300, 1.0 - 1e-16));
        let c = 1.0 / (9.0 * a);
        let g = a * (1.0 - c + z * c.sqrt()).powi(3);
        if g.is_finite() && g > lo && g < hi {
            g
        } else {
            0.5 * (lo + hi)
        }
    };
    for _ in 0..200 {
        let (lp, lq) = ln_gamma_pq(a, x);
        let val = if use_lower { lp - target } else { target - lq };
        if val < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // ln P and ln Q carry round-off of a few ulps of the target
        if val.abs() <= 4.0 * f64::EPSILON * target.abs().max(1.0) || (hi - lo) <= 1e-15 * x.max(1e-300) {
            break;
        }
        // d/dx ln P = pdf/P ; d/dx (-ln Q) = pdf/Q
        let ln_pdf = (a - 1.0) * x.ln() - x - ln_gamma(a);
        let deriv = if use_lower {
            (ln_pdf - lp).exp()
        } else {
            (ln_pdf - lq).exp()
        };
        let mut next = x - val / deriv;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Exact bivariate standard-normal orthant probability
/// `P(Z1 > q, Z2 > q)` with correlation `rho`, by adaptive Gauss–Kronrod
/// integration of `φ(z) Φ̄((q - ρz)/√(1-ρ²))` over `z > q`.
pub fn bivariate_normal_upper_orthant(q: f64, rho: f64, tol: f64) -> f64 {
    if rho.abs() < 1e-300 {
        return norm_sf(q).powi(2);
    }
    let s = (1.0 - rho * rho).sqrt();
    let integrand = |z: f64| norm_pdf(z) * norm_sf((q - rho * z) / s);
    // φ(z) is negligible beyond q + 40
    let upper = q.max(0.0) + 40.0;
    crate::quadrature::adaptive_gauss_kronrod(&integrand, q, upper, tol, 60)
}
