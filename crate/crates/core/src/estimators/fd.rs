use nalgebra::DMatrix;

use crate::integrator::Trajectory;
use crate::{Error, Result};

// Rows: stencil offsets relative to the evaluation point, divided by the
// common denominator times h.
const O2_CENTRAL: [f64; 3] = [-1.0, 0.0, 1.0]; // / 2h
const O2_FORWARD: [f64; 3] = [-3.0, 4.0, -1.0]; // / 2h
const O4_CENTRAL: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0]; // / 12h
const O4_FORWARD0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0]; // / 12h, at x0
const O4_FORWARD1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0]; // / 12h, at x1

/// Derivative estimates of a homogeneous-grid trajectory, `K × n`.
///
/// Central differences of `order` (2 or 4) in the interior, one-sided
/// stencils of the same order at the ends.
pub fn finite_difference(traj: &Trajectory, order: u8) -> Result<DMatrix<f64>> {
    let h = traj
        .uniform_step()
        .ok_or_else(|| Error::InvalidInput("finite differences need a homogeneous grid".into()))?;
    finite_difference_states(&traj.states, h, order)
}

pub fn finite_difference_states(x: &DMatrix<f64>, h: f64, order: u8) -> Result<DMatrix<f64>> {
    let k = x.nrows();
    if order != 2 && order != 4 {
        return Err(Error::InvalidInput(format!(
            "unsupported finite-difference order {order}"
        )));
    }
    if k < order as usize + 1 {
        return Err(Error::InvalidInput(format!(
            "order {order} differences need at least {} samples, got {k}",
            order + 1
        )));
    }
    let mut d = DMatrix::zeros(k, x.ncols());
    let mut put = |row: usize, start: usize, coef: &[f64], denom: f64, sign: f64| {
        for c in 0..x.ncols() {
            let mut acc = 0.0;
            for (o, w) in coef.iter().enumerate() {
                acc += w * x[(start + o, c)];
            }
            d[(row, c)] = sign * acc / denom;
        }
    };
    if order == 2 {
        let den = 2.0 * h;
        put(0, 0, &O2_FORWARD, den, 1.0);
        for i in 1..k - 1 {
            put(i, i - 1, &O2_CENTRAL, den, 1.0);
        }
        let rev: Vec<f64> = O2_FORWARD.iter().rev().copied().collect();
        put(k - 1, k - 3, &rev, den, -1.0);
    } else {
        let den = 12.0 * h;
        put(0, 0, &O4_FORWARD0, den, 1.0);
        put(1, 0, &O4_FORWARD1, den, 1.0);
        for i in 2..k - 2 {
            put(i, i - 2, &O4_CENTRAL, den, 1.0);
        }
        let rev1: Vec<f64> = O4_FORWARD1.iter().rev().copied().collect();
        let rev0: Vec<f64> = O4_FORWARD0.iter().rev().copied().collect();
        put(k - 2, k - 5, &rev1, den, -1.0);
        put(k - 1, k - 5, &rev0, den, -1.0);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::homogeneous_grid;

    fn states(times: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(times.len(), 1, |i, _| f(times[i]))
    }

    #[test]
    fn constants_and_linears_are_exact() {
        let t = homogeneous_grid(1.0, 21);
        let h = t[1];
        for order in [2, 4] {
            let d = finite_difference_states(&states(&t, |_| 3.0), h, order).unwrap();
            assert!(d.amax() < 1e-12);
            let d = finite_difference_states(&states(&t, |s| 2.0 * s - 1.0), h, order).unwrap();
            assert!(d.iter().all(|v| (v - 2.0).abs() < 1e-10));
        }
    }

    #[test]
    fn exponential_errors_scale_with_order() {
        let t = homogeneous_grid(1.0, 512);
        let h = t[1];
        let x = states(&t, f64::exp);
        let err = |order| {
            let d = finite_difference_states(&x, h, order).unwrap();
            (0..t.len())
                .map(|i| (d[(i, 0)] - t[i].exp()).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(2) <= 5e-5);
        assert!(err(4) <= 1e-9);
    }

    #[test]
    fn quartic_is_exact_at_fourth_order() {
        let t = homogeneous_grid(1.0, 11);
        let d = finite_difference_states(&states(&t, |s| s.powi(4)), t[1], 4).unwrap();
        for (i, ti) in t.iter().enumerate() {
            assert!((d[(i, 0)] - 4.0 * ti.powi(3)).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_short_or_bad_order() {
        let x = DMatrix::zeros(4, 1);
        assert!(finite_difference_states(&x, 0.1, 4).is_err());
        assert!(finite_difference_states(&x, 0.1, 3).is_err());
        assert!(finite_difference_states(&x, 0.1, 2).is_ok());
    }
}
