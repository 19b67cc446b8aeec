//! Left-truncated gamma distribution: log-density and sampling.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{GeomxError, Result};
use crate::special::{gamma_ln_pdf, gamma_upper_inverse_ln, ln_gamma_pq};

/// `ln f(r; a, rate) − ln F̄(lower; a, rate)` for `r > lower`.
pub fn ln_pdf(r: f64, a: f64, rate: f64, lower: f64) -> f64 {
    if r <= lower {
        return f64::NEG_INFINITY;
    }
    gamma_ln_pdf(r, a, rate) - ln_gamma_pq(a, rate * lower).1
}

/// `P(R ≤ r | R > lower)`.
pub fn cdf(r: f64, a: f64, rate: f64, lower: f64) -> f64 {
    if r <= lower {
        return 0.0;
    }
    let lq0 = ln_gamma_pq(a, rate * lower).1;
    let lq = ln_gamma_pq(a, rate * r).1;
    -(lq - lq0).exp_m1()
}

/// `ln F̄(k·r0) − ln F̄(r0)`, the log survival ratio used for extrapolation.
pub fn ln_survival_ratio(a: f64, rate: f64, r0: f64, k: f64) -> f64 {
    ln_gamma_pq(a, rate * k * r0).1 - ln_gamma_pq(a, rate * r0).1
}

/// Below this `ln F̄(lower)` the inverse CDF loses its footing and the
/// sampler switches to rejection from an exponential tail envelope.
const LN_TAIL_SWITCH: f64 = -32.236_191_301_916_64; // ln(1e-14)
const MAX_REJECTIONS: usize = 10_000;

/// Draws `R ~ Gamma(a, rate)` conditioned on `R > lower`.
pub fn sample<R: Rng + ?Sized>(a: f64, rate: f64, lower: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && rate > 0.0 && lower >= 0.0) || !a.is_finite() || !rate.is_finite() || !lower.is_finite() {
        return Err(GeomxError::InvalidParameter(format!(
            "truncated gamma needs a > 0, rate > 0, lower >= 0; got a={a}, rate={rate}, lower={lower}"
        )));
    }
    let x = rate * lower;
    let lq = ln_gamma_pq(a, x).1;
    if lq > LN_TAIL_SWITCH {
        for _ in 0..MAX_REJECTIONS {
            let v: f64 = rng.random();
            let target = lq + (-v).ln_1p();
            let y = gamma_upper_inverse_ln(a, target);
            if y > x && y.is_finite() {
                return Ok(y / rate);
            }
        }
        return Err(GeomxError::NumericalError(format!(
            "inverse-CDF truncated gamma draw stuck at the truncation point (a={a}, x={x})"
        )));
    }
    sample_tail(a, x, rng).map(|y| y / rate)
}

/// Rejection sampler for `Gamma(a, 1) | Y > x` far in the tail.
fn sample_tail<R: Rng + ?Sized>(a: f64, x: f64, rng: &mut R) -> Result<f64> {
    if a >= 1.0 {
        // tangent exponential envelope at x; valid because x > a − 1 here
        let b = 1.0 - (a - 1.0) / x;
        if b <= 0.0 {
            return Err(GeomxError::NumericalError(format!(
                "tail envelope undefined for a={a}, x={x}"
            )));
        }
        for _ in 0..MAX_REJECTIONS {
            let e: f64 = Exp1.sample(rng);
            let y = x + e / b;
            let ln_acc = (a - 1.0) * ((y / x).ln() - (y - x) / x);
            let u: f64 = rng.random();
            if u.ln() < ln_acc {
                return Ok(y);
            }
        }
    } else {
        for _ in 0..MAX_REJECTIONS {
            let e: f64 = Exp1.sample(rng);
            let y = x + e;
            let u: f64 = rng.random();
            if u.ln() < (a - 1.0) * (y / x).ln() {
                return Ok(y);
            }
        }
    }
    Err(GeomxError::NumericalError(format!(
        "truncated gamma rejection sampler exceeded {MAX_REJECTIONS} attempts (a={a}, x={x})"
    )))
}
