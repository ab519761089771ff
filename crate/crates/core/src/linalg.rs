//! Dense linear-algebra helpers: SVD spectra, the matrix exponential and
//! small utilities shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

fn svd_iteration_cap(n: usize) -> usize {
    10_000 + 200 * n
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let cap = svd_iteration_cap(a.nrows().max(a.ncols()));
    match a.clone().try_svd_unordered(false, false, f64::EPSILON, cap) {
        Some(s) if s.singular_values.iter().all(|v| v.is_finite()) => {
            Ok(sorted_desc(s.singular_values.iter().copied()))
        }
        _ => Ok(jacobi_svd(a)?.sigma),
    }
}

/// Singular values of `A - λI` over the complex field, descending.
pub fn shifted_singular_values(a: &DMatrix<f64>, lambda: Complex64) -> Result<Vec<f64>> {
    if lambda.im == 0.0 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= lambda.re;
        }
        return singular_values(&m);
    }
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    });
    let cap = svd_iteration_cap(n);
    match m.clone().try_svd_unordered(false, false, f64::EPSILON, cap) {
        Some(s) if s.singular_values.iter().all(|v| v.is_finite()) => {
            Ok(sorted_desc(s.singular_values.iter().copied()))
        }
        _ => {
            // the real embedding [[Re, -Im], [Im, Re]] repeats each value twice
            let re = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
                let z = m[(i % n, j % n)];
                match (i < n, j < n) {
                    (true, true) | (false, false) => z.re,
                    (true, false) => -z.im,
                    (false, true) => z.im,
                }
            });
            Ok(jacobi_svd(&re)?.sigma.into_iter().step_by(2).collect())
        }
    }
}

fn sorted_desc(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.map(|s| s.max(0.0)).collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Full SVD `A = U Σ Vᵀ` with singular values sorted descending.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: DMatrix<f64>,
}

pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = a.nrows().max(a.ncols());
    let cap = svd_iteration_cap(n);
    let s = match a.clone().try_svd_unordered(true, true, f64::EPSILON, cap) {
        Some(s) if s.singular_values.iter().all(|v| v.is_finite()) => s,
        _ => return jacobi_svd(a),
    };
    let u = s.u.expect("requested U");
    let v = s.v_t.expect("requested Vᵀ").transpose();
    let mut order: Vec<usize> = (0..s.singular_values.len()).collect();
    order.sort_by(|&i, &j| s.singular_values[j].total_cmp(&s.singular_values[i]));
    let sigma = order
        .iter()
        .map(|&i| s.singular_values[i].max(0.0))
        .collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    Ok(Svd { u, sigma, v })
}

impl Svd {
    /// Minimum-norm least-squares solution, dropping singular values at or
    /// below `rcond · σ_max`.
    pub fn solve(&self, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
        let cut = rcond * self.sigma.first().copied().unwrap_or(0.0);
        let mut x = DVector::zeros(self.v.nrows());
        for (k, &s) in self.sigma.iter().enumerate() {
            if s > cut && s > 0.0 {
                let coef = self.u.column(k).dot(b) / s;
                x.axpy(coef, &self.v.column(k), 1.0);
            }
        }
        x
    }
}

/// One-sided Jacobi SVD; slower than the bidiagonal route but robust on
/// degenerate inputs, so it backs up the library SVD.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let transposed = a.nrows() < a.ncols();
    let mut w = if transposed { a.transpose() } else { a.clone() };
    let (m, n) = w.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    const SWEEPS: usize = 80;
    let tol = f64::EPSILON * (m as f64).sqrt();
    let negligible = (f64::EPSILON * w.norm()).powi(2) * 1e-6;
    let mut converged = false;
    for _ in 0..SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let (x, y) = (w[(r, p)], w[(r, q)]);
                    w[(r, p)] = c * x - s * y;
                    w[(r, q)] = s * x + c * y;
                }
                for r in 0..n {
                    let (x, y) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * x - s * y;
                    v[(r, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure {
            what: "Jacobi SVD",
            iterations: SWEEPS,
        });
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let k = m.min(n);
    let sigma: Vec<f64> = order[..k].iter().map(|&j| norms[j]).collect();
    let mut u = DMatrix::zeros(m, k);
    for (c, &j) in order[..k].iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(c, &(w.column(j) / norms[j]));
        }
    }
    let v = DMatrix::from_fn(n, k, |r, c| v[(r, order[c])]);
    Ok(if transposed {
        Svd { u: v, sigma, v: u }
    } else {
        Svd { u, sigma, v }
    })
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE_ORDER: usize = 6;

/// Matrix exponential by scaling and squaring with a diagonal [6/6] Padé
/// approximant. The scaling `s` makes `‖A/2^s‖₁ ≤ 1/2`.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput("expm needs a square matrix".into()));
    }
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow("matrix exponential input"));
    }
    let norm = norm1(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let x = a * 2f64.powi(-s);

    let mut c = 1.0;
    let mut num = DMatrix::<f64>::identity(n, n);
    let mut den = DMatrix::<f64>::identity(n, n);
    let mut xk = DMatrix::<f64>::identity(n, n);
    let q = PADE_ORDER as f64;
    for k in 1..=PADE_ORDER {
        let kf = k as f64;
        c *= (q - kf + 1.0) / (kf * (2.0 * q - kf + 1.0));
        xk = &xk * &x;
        num += &xk * c;
        if k % 2 == 0 {
            den += &xk * c;
        } else {
            den -= &xk * c;
        }
    }
    let mut e = den.lu().solve(&num).ok_or(Error::NumericalFailure {
        what: "Padé denominator solve",
        iterations: 0,
    })?;
    for _ in 0..s {
        e = &e * &e;
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow("matrix exponential"));
    }
    Ok(e)
}

/// Trapezoid weights for an arbitrary increasing grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let k = times.len();
    let mut w = vec![0.0; k];
    for i in 0..k.saturating_sub(1) {
        let h = times[i + 1] - times[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Orthogonal projection of `x` onto the span of the orthonormal columns of `basis`.
pub fn project(basis: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return DVector::zeros(x.len());
    }
    basis * (basis.transpose() * x)
}
