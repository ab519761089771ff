use std::collections::hash_map::Entry;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, Svd};
use crate::{Error, Result};

pub const STLSQ_MAX_ITER: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct StlsqFit {
    pub a_hat: DMatrix<f64>,
    pub iterations: usize,
    /// Active set stabilised within the iteration cap.
    pub converged: bool,
}

/// Sequentially thresholded ridge regression of `ẋ` on `x`.
///
/// Row `i` of `Â` regresses column `i` of `xdot` on the active columns of
/// `x`; coefficients with magnitude below `threshold` are pruned and the
/// rest refitted until the active set stops changing. The surviving
/// coefficients are then refitted by ordinary least squares.
pub fn stlsq_fit(
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_iter: usize,
) -> Result<StlsqFit> {
    stlsq_fit_cached(
        x,
        xdot,
        threshold,
        ridge,
        max_iter,
        &mut SvdCache::default(),
    )
}

/// Thin SVDs of column subsets of one state matrix, shared between fits.
#[derive(Default)]
pub struct SvdCache {
    svds: HashMap<Vec<usize>, Svd>,
}

/// [`stlsq_fit`] reusing least-squares factorisations from `cache`, which
/// must only ever see the same `x`.
pub fn stlsq_fit_cached(
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_iter: usize,
    cache: &mut SvdCache,
) -> Result<StlsqFit> {
    if x.shape() != xdot.shape() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: xdot.nrows(),
        });
    }
    if !(threshold > 0.0 && ridge > 0.0) {
        return Err(Error::InvalidInput(
            "threshold and ridge weight must be positive".into(),
        ));
    }
    let n = x.ncols();
    let gram = x.transpose() * x;
    let rhs = x.transpose() * xdot;
    let mut active = DMatrix::from_element(n, n, true);
    let mut a_hat = DMatrix::zeros(n, n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let cols: Vec<usize> = (0..n).filter(|&j| active[(i, j)]).collect();
            let w = ridge_solve(&gram, &rhs.column(i).into_owned(), &cols, ridge, true)
                .expect("pseudo-inverse fallback always yields a solution");
            for j in 0..n {
                a_hat[(i, j)] = 0.0;
            }
            for (c, &j) in cols.iter().enumerate() {
                a_hat[(i, j)] = w[c];
            }
        }
        let mut changed = false;
        for (v, act) in a_hat.iter_mut().zip(active.iter_mut()) {
            if *act && v.abs() < threshold {
                *act = false;
                *v = 0.0;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    // unbiased refit on the final support
    for i in 0..n {
        let cols: Vec<usize> = (0..n).filter(|&j| active[(i, j)]).collect();
        if cols.is_empty() {
            continue;
        }
        let w = match ridge_solve(&gram, &rhs.column(i).into_owned(), &cols, 0.0, false) {
            Some(w) => w,
            None => {
                let svd = match cache.svds.entry(cols.clone()) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => e.insert(linalg::svd(&DMatrix::from_fn(
                        x.nrows(),
                        cols.len(),
                        |r, c| x[(r, cols[c])],
                    ))?),
                };
                svd.solve(&xdot.column(i).into_owned(), 1e-12)
            }
        };
        for (c, &j) in cols.iter().enumerate() {
            a_hat[(i, j)] = w[c];
        }
    }
    Ok(StlsqFit {
        a_hat,
        iterations,
        converged,
    })
}

/// Solves `(G_SS + αI) w = b_S` by Cholesky; with `pinv_fallback` a
/// numerically singular system goes through the pseudo-inverse instead.
fn ridge_solve(
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    cols: &[usize],
    ridge: f64,
    pinv_fallback: bool,
) -> Option<DVector<f64>> {
    let m = cols.len();
    if m == 0 {
        return Some(DVector::zeros(0));
    }
    let mut g = DMatrix::from_fn(m, m, |r, c| gram[(cols[r], cols[c])]);
    for d in 0..m {
        g[(d, d)] += ridge;
    }
    let rhs = DVector::from_fn(m, |r, _| b[cols[r]]);
    if let Some(ch) = g.clone().cholesky() {
        let w = ch.solve(&rhs);
        if w.iter().all(|v| v.is_finite()) {
            return Some(w);
        }
    }
    if !pinv_fallback {
        return None;
    }
    Some(match linalg::svd(&g) {
        Ok(s) => s.solve(&rhs, 1e-12),
        Err(_) => DVector::zeros(m),
    })
}
