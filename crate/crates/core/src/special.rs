//! Special functions: log-gamma, the regularised incomplete beta function,
//! the Student-t distribution and the principal branch of Lambert W.

use std::f64::consts::{E, PI};

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7); reflection for `x < 0.5`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `dof` degrees of freedom (real, positive).
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(0.5 * dof, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Principal branch `W₀(z)`, `z ≥ -1/e`, by Halley iteration.
pub fn lambert_w0(z: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if z.is_nan() || z < branch {
        return Err(Error::WDomain(z));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if z == branch {
        return Ok(-1.0);
    }
    let mut w = if z < -0.25 {
        // series about the branch point
        let p = (2.0 * (E * z + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z < 3.0 {
        z.ln_1p() * (1.0 - z.ln_1p() / (2.0 + z.ln_1p()))
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn lambert_known_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambert_w0(-1.0 / E).unwrap() + 1.0).abs() < 1e-12);
        assert!(lambert_w0(-0.5).is_err());
    }

    #[test]
    fn lambert_matches_fixed_point_oracle() {
        // w <- (w^2 + z e^{-w}) / (w + 1)  (Newton on w e^w = z)
        for &z in &[0.1, 1.0, 2.5, 10.0, 100.0] {
            let mut w: f64 = 1.0;
            for _ in 0..200 {
                w = (w * w + z * (-w).exp()) / (w + 1.0);
            }
            assert!((lambert_w0(z).unwrap() - w).abs() < 1e-13, "z = {z}");
        }
        assert!((lambert_w0(1.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn student_t_symmetry_and_known_values() {
        assert_eq!(student_t_cdf(0.0, 3.0), 0.5);
        // dof = 1 is Cauchy: F(t) = 1/2 + atan(t)/π
        for &t in &[-3.0, -0.4, 0.7, 5.0] {
            let want = 0.5 + f64::atan(t) / PI;
            assert!((student_t_cdf(t, 1.0) - want).abs() < 1e-13);
        }
        // dof = 2: F(t) = 1/2 + t / (2 sqrt(2 + t²))
        for &t in &[-2.0f64, 0.3, 4.0] {
            let want = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - want).abs() < 1e-13);
        }
        assert!((student_t_cdf(1.3, 7.5) + student_t_cdf(-1.3, 7.5) - 1.0).abs() < 1e-14);
    }
}
