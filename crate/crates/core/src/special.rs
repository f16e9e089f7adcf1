//! Scalar special functions: log-gamma, the regularized incomplete gamma
//! functions and the principal branch of Lambert W.

use crate::error::{Error, Result};
use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const MAX_SERIES_TERMS: usize = 100_000;
const LAMBERT_MAX_ITER: usize = 50;

/// `ln Gamma(a)` for `a > 0`.
pub fn ln_gamma<T: Real>(a: T) -> Result<T> {
    if !(a > T::zero()) || !a.is_finite() {
        return Err(Error::domain("ln_gamma", format!("a = {a} must be positive and finite")));
    }
    Ok(ln_gamma_unchecked(a))
}

fn ln_gamma_unchecked<T: Real>(a: T) -> T {
    let half = T::lit(0.5);
    let pi = T::lit(std::f64::consts::PI);
    if a < half {
        // reflection: Gamma(a) Gamma(1 - a) = pi / sin(pi a)
        return (pi / (pi * a).sin()).ln() - ln_gamma_unchecked(T::one() - a);
    }
    let x = a - T::one();
    let mut sum = T::lit(LANCZOS_COEFFS[0]);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        sum = sum + T::lit(c) / (x + T::lit(i as f64));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    half * (T::lit(2.0) * pi).ln() + (x + half) * t.ln() - t + sum.ln()
}

fn check_gamma_args<T: Real>(function: &'static str, a: T, z: T) -> Result<()> {
    if !(a > T::zero()) || !a.is_finite() {
        return Err(Error::domain(function, format!("a = {a} must be positive and finite")));
    }
    if !(z >= T::zero()) {
        return Err(Error::domain(function, format!("z = {z} must be nonnegative")));
    }
    Ok(())
}

/// Regularized upper incomplete gamma function `Q(a, z) = Gamma(a, z) / Gamma(a)`.
pub fn reg_gamma_q<T: Real>(a: T, z: T) -> Result<T> {
    check_gamma_args("reg_gamma_q", a, z)?;
    if z == T::zero() {
        return Ok(T::one());
    }
    if z.is_infinite() {
        return Ok(T::zero());
    }
    let q = if z < a + T::one() {
        T::one() - lower_series(a, z)
    } else {
        upper_continued_fraction(a, z)
    };
    Ok(q.max(T::zero()).min(T::one()))
}

/// Regularized lower incomplete gamma function `P(a, z) = 1 - Q(a, z)`.
pub fn reg_gamma_p<T: Real>(a: T, z: T) -> Result<T> {
    check_gamma_args("reg_gamma_p", a, z)?;
    if z == T::zero() {
        return Ok(T::zero());
    }
    if z.is_infinite() {
        return Ok(T::one());
    }
    let p = if z < a + T::one() {
        lower_series(a, z)
    } else {
        T::one() - upper_continued_fraction(a, z)
    };
    Ok(p.max(T::zero()).min(T::one()))
}

/// `exp(-z + a ln z - ln Gamma(a))`, the common prefactor of both expansions.
fn gamma_prefactor<T: Real>(a: T, z: T) -> T {
    (-z + a * z.ln() - ln_gamma_unchecked(a)).exp()
}

fn lower_series<T: Real>(a: T, z: T) -> T {
    let eps = T::epsilon();
    let mut denom = a;
    let mut term = T::one() / a;
    let mut sum = term;
    for _ in 0..MAX_SERIES_TERMS {
        denom = denom + T::one();
        term = term * z / denom;
        sum = sum + term;
        if term.abs() < sum.abs() * eps {
            break;
        }
    }
    sum * gamma_prefactor(a, z)
}

// Modified Lentz evaluation of the continued fraction for Gamma(a, z).
fn upper_continued_fraction<T: Real>(a: T, z: T) -> T {
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let two = T::lit(2.0);
    let mut b = z + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_SERIES_TERMS {
        let i = T::lit(i as f64);
        let an = -i * (i - a);
        b = b + two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h = h * delta;
        if (delta - T::one()).abs() < eps {
            break;
        }
    }
    gamma_prefactor(a, z) * h
}

/// Principal branch `W0` of the Lambert W function, `W(z) e^{W(z)} = z`, for `z >= -1/e`.
pub fn lambert_w0<T: Real>(z: T) -> Result<T> {
    let inv_e = T::lit((-1.0f64).exp());
    if z.is_nan() {
        return Err(Error::domain("lambert_w0", "z is NaN"));
    }
    // a few ulps of slack so that w e^w evaluated at w = -1 stays in the domain
    let branch_slack = T::lit(4.0) * T::epsilon() * inv_e;
    if z < -inv_e - branch_slack {
        return Err(Error::domain("lambert_w0", format!("z = {z} is below -1/e")));
    }
    if z <= -inv_e {
        return Ok(-T::one());
    }
    if z == T::zero() {
        return Ok(T::zero());
    }
    if z.is_infinite() {
        return Ok(z);
    }

    let one = T::one();
    let two = T::lit(2.0);
    let mut w = if z < T::lit(-0.25) {
        // branch point series in p = sqrt(2 (e z + 1))
        let p = (two * (T::lit(std::f64::consts::E) * z + one)).max(T::zero()).sqrt();
        -one + p - p * p / T::lit(3.0) + T::lit(11.0 / 72.0) * p * p * p
    } else if z < T::lit(3.0) {
        (one + z).ln()
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    for _ in 0..LAMBERT_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + one;
        if wp1 == T::zero() {
            break;
        }
        let denom = ew * wp1 - (w + two) * f / (two * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w = w - step;
        if step.abs() <= T::epsilon() * (one + w.abs()) {
            break;
        }
    }
    Ok(w.max(-one))
}
