//! Eigenvalues of a general real matrix.
//!
//! Parlett–Reinsch balancing, reduction to upper Hessenberg form by
//! Gaussian elimination with pivoting, then Francis double-shift QR on the
//! Hessenberg matrix (eigenvalues only).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

const RADIX: f64 = 2.0;
/// Iterations allowed per eigenvalue before giving up.
const MAX_ITS_PER_ROOT: usize = 60;

/// All `n` eigenvalues with multiplicity. Complex eigenvalues come in exact
/// conjugate pairs; real eigenvalues have an imaginary part of exactly zero.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput(
            "eigenvalues need a square matrix".into(),
        ));
    }
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).collect())
        .collect();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(&mut h)
}

fn balance(a: &mut [Vec<f64>]) {
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            a.swap(piv, m);
            for row in a.iter_mut() {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        let amj = a[m][j];
                        a[i][j] -= y * amj;
                    }
                    for row in a.iter_mut() {
                        let rji = row[i];
                        row[m] += y * rji;
                    }
                }
            }
        }
    }
    // drop the elimination multipliers stored below the subdiagonal
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<Complex64>> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut its = 0usize;
    let mut total_its = 0usize;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 0 {
        let nu = nn as usize;
        // look for a single small subdiagonal element
        let mut l = nu;
        while l >= 1 {
            let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[l][l - 1].abs() + s == s {
                a[l][l - 1] = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a[nu][nu];
        if l == nu {
            wr[nu] = x + t;
            wi[nu] = 0.0;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[nu - 1][nu - 1];
        let mut w = a[nu][nu - 1] * a[nu - 1][nu];
        if l == nu - 1 {
            p = 0.5 * (y - x);
            q = p * p + w;
            let mut z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                z = p + sign(z, p);
                wr[nu - 1] = x + z;
                wr[nu] = x + z;
                if z != 0.0 {
                    wr[nu] = x - w / z;
                }
                wi[nu - 1] = 0.0;
                wi[nu] = 0.0;
            } else {
                wr[nu - 1] = x + p;
                wr[nu] = x + p;
                wi[nu - 1] = -z;
                wi[nu] = z;
            }
            nn -= 2;
            its = 0;
            continue;
        }
        if its == MAX_ITS_PER_ROOT {
            return Err(Error::NumericalFailure {
                what: "Hessenberg QR iteration",
                iterations: total_its,
            });
        }
        if its == 10 || its == 20 || its == 40 {
            // exceptional shift
            t += x;
            for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                row[i] -= x;
            }
            let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total_its += 1;
        // form the shift and look for two consecutive small subdiagonal elements
        let mut m = nu - 2;
        loop {
            let z = a[m][m];
            let r0 = x - z;
            let s0 = y - z;
            p = (r0 * s0 - w) / a[m + 1][m] + a[m][m + 1];
            q = a[m + 1][m + 1] - z - r0 - s0;
            r = a[m + 2][m + 1];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[m][m - 1].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
            if u + v == v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nu {
            a[i][i - 2] = 0.0;
            if i != m + 2 {
                a[i][i - 3] = 0.0;
            }
        }
        // double QR step on rows l..=nn, columns m..=nn
        let mut k = m;
        while k < nu {
            if k != m {
                p = a[k][k - 1];
                q = a[k + 1][k - 1];
                r = 0.0;
                if k != nu - 1 {
                    r = a[k + 2][k - 1];
                }
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = sign((p * p + q * q + r * r).sqrt(), p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[k][k - 1] = -a[k][k - 1];
                    }
                } else {
                    a[k][k - 1] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[k][j] + q * a[k + 1][j];
                    if k != nu - 1 {
                        pp += r * a[k + 2][j];
                        a[k + 2][j] -= pp * z;
                    }
                    a[k + 1][j] -= pp * y;
                    a[k][j] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for row in a.iter_mut().take(mmin + 1).skip(l) {
                    let mut pp = x * row[k] + y * row[k + 1];
                    if k != nu - 1 {
                        pp += z * row[k + 2];
                        row[k + 2] -= pp * r;
                    }
                    row[k + 1] -= pp * q;
                    row[k] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex64::new(re, im))
        .collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .into_iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        v
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![3.0, 1.0, 2.0]);
        let ev = sorted_re(eigenvalues(&a).unwrap());
        for (e, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((e.re - want).abs() < 1e-14 && e.im == 0.0);
        }
    }

    #[test]
    fn rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = sorted_re(eigenvalues(&a).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let a = DMatrix::from_row_slice(3, 3, &[6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ev = sorted_re(eigenvalues(&a).unwrap());
        for (e, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((e.re - want).abs() < 1e-10, "{e}");
            assert!(e.im.abs() < 1e-10);
        }
    }

    #[test]
    fn trace_and_conjugate_pairs_on_random_matrices() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::stream(5, 0);
        for n in 1..15 {
            for _ in 0..20 {
                let a = DMatrix::from_fn(n, n, |_, _| {
                    if rng.random_bool(0.4) {
                        0.0
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    }
                });
                let ev = eigenvalues(&a).unwrap();
                let sum: Complex64 = ev.iter().sum();
                assert!((sum.re - a.trace()).abs() < 1e-9 * (1.0 + a.norm()));
                assert!(sum.im.abs() < 1e-9);
                for e in &ev {
                    if e.im != 0.0 {
                        assert!(ev.iter().any(|f| (f - e.conj()).norm() < 1e-9));
                    }
                    let resid = crate::linalg::shifted_singular_values(&a, *e).unwrap();
                    assert!(*resid.last().unwrap() <= 1e-6 * a.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_and_nilpotent() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert!(eigenvalues(&z).unwrap().iter().all(|e| e.norm() == 0.0));
        let mut j = DMatrix::<f64>::zeros(3, 3);
        j[(0, 1)] = 1.0;
        j[(1, 2)] = 1.0;
        assert!(eigenvalues(&j).unwrap().iter().all(|e| e.norm() < 1e-12));
    }
}
