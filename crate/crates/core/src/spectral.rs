//! System-level identifiability analysis.
//!
//! A system `x' = Ax` is globally unidentifiable iff some eigenvalue has more
//! than one Jordan block, i.e. `rank(A - λI) < n - 1` for some `λ`. Numeric
//! ranks use an absolute singular-value tolerance (default `1e-6`).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::SystemMatrix;
use crate::matching::{hall_witness, hopcroft_karp, Bipartite};
use crate::{eigen, linalg, Error, Result};

pub const DEFAULT_SVD_TOL: f64 = 1e-6;

/// Relative spacing under which two computed eigenvalues are treated as one
/// cluster; the cluster mean is tested as an extra rank-drop candidate.
const CLUSTER_RADIUS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub dim: usize,
    pub rank: usize,
    /// Condition (i): `rank(A) < n - 1`.
    pub rank_deficient2: bool,
    /// Second-smallest singular value (0 for `n = 1`).
    pub sigma2: f64,
    pub sigma_min: f64,
    pub eigenvalues: Vec<Complex64>,
    /// Condition (iii): zero is an eigenvalue, decided as `σ_min < tol`.
    pub has_zero_eig: bool,
    /// Condition (ii): `∃λ: rank(A - λI) < n - 1`.
    pub exists_lambda_rank_drop: bool,
    pub witness: Option<Complex64>,
    pub globally_unidentifiable: bool,
    pub structural_rank_upper: usize,
    pub matching_lower: usize,
    pub svd_tol: f64,
}

impl IdentReport {
    pub fn cond_i(&self) -> bool {
        self.rank_deficient2
    }
    pub fn cond_ii(&self) -> bool {
        self.exists_lambda_rank_drop
    }
    pub fn cond_iii(&self) -> bool {
        self.has_zero_eig
    }
}

/// CSV row for one analysed matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentRow {
    pub kind: String,
    pub n: usize,
    pub p: f64,
    pub seed: u64,
    pub draw_index: u64,
    pub rank: usize,
    pub sigma2: f64,
    pub has_zero_eig: bool,
    pub cond_i: bool,
    pub cond_ii: bool,
    pub cond_iii: bool,
    pub match_lower: usize,
    pub struct_upper: usize,
}

impl IdentRow {
    pub fn new(m: &SystemMatrix, r: &IdentReport) -> Self {
        IdentRow {
            kind: m.spec.kind.to_string(),
            n: m.dim(),
            p: m.spec.sparsity,
            seed: m.spec.seed,
            draw_index: m.draw_index,
            rank: r.rank,
            sigma2: r.sigma2,
            has_zero_eig: r.has_zero_eig,
            cond_i: r.cond_i(),
            cond_ii: r.cond_ii(),
            cond_iii: r.cond_iii(),
            match_lower: r.matching_lower,
            struct_upper: r.structural_rank_upper,
        }
    }
}

/// Singular values, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    linalg::singular_values(a)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )))
    }
}

pub fn numeric_rank(a: &DMatrix<f64>, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    Ok(singular_values(a)?.into_iter().filter(|&s| s > tol).count())
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    eigen::eigenvalues(a)
}

/// Candidate shifts for the rank-drop test: zero, every computed eigenvalue
/// and the centre of every tight eigenvalue cluster.
fn rank_drop_candidates(eigs: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0)];
    for (i, &l) in eigs.iter().enumerate() {
        // conjugates give the same singular values
        if l.im < 0.0 {
            continue;
        }
        out.push(l);
        for &m in &eigs[i + 1..] {
            if (l - m).norm() <= CLUSTER_RADIUS * (1.0 + l.norm()) && l != m {
                out.push((l + m) * 0.5);
            }
        }
    }
    out
}

fn second_smallest(sv: &[f64]) -> f64 {
    let n = sv.len();
    if n >= 2 {
        sv[n - 2]
    } else {
        0.0
    }
}

/// Tests `∃λ: rank(A - λI) < n - 1` over the candidate shifts; returns the
/// first witness. For `n = 1` the system is unidentifiable iff `A = 0`.
pub fn is_globally_unidentifiable(a: &DMatrix<f64>, tol: f64) -> Result<Option<Complex64>> {
    check_tol(tol)?;
    let eigs = eigenvalues(a)?;
    witness_from_eigs(a, &eigs, tol)
}

fn witness_from_eigs(a: &DMatrix<f64>, eigs: &[Complex64], tol: f64) -> Result<Option<Complex64>> {
    let n = a.nrows();
    if n == 1 {
        return Ok((a[(0, 0)] == 0.0).then_some(Complex64::new(0.0, 0.0)));
    }
    for lambda in rank_drop_candidates(eigs) {
        let sv = linalg::shifted_singular_values(a, lambda)?;
        if second_smallest(&sv) <= tol {
            return Ok(Some(lambda));
        }
    }
    Ok(None)
}

/// Smallest singular value of `A - λI`, i.e. the eigenpair residual
/// `min_{‖v‖=1} ‖Av - λv‖`.
pub fn eigen_residual(a: &DMatrix<f64>, lambda: Complex64) -> Result<f64> {
    Ok(linalg::shifted_singular_values(a, lambda)?
        .last()
        .copied()
        .unwrap_or(0.0))
}

/// `(matching_lower, structural_rank_upper)` for a nonzero pattern.
pub fn structural_rank_bounds(pattern: &DMatrix<bool>) -> Result<(usize, usize)> {
    if !pattern.is_square() {
        return Err(Error::InvalidInput("pattern must be square".into()));
    }
    let g = Bipartite::from_pattern(pattern);
    let m = hopcroft_karp(&g);
    let upper = pattern.nrows() - hall_witness(&g, &m).deficiency();
    assert_eq!(m.size, upper, "König duality violated");
    Ok((m.size, upper))
}

pub fn nonzero_pattern(a: &DMatrix<f64>) -> DMatrix<bool> {
    a.map(|v| v != 0.0)
}

/// Full system-level report.
pub fn analyze(a: &DMatrix<f64>, tol: f64) -> Result<IdentReport> {
    check_tol(tol)?;
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::InvalidInput("need a non-empty square matrix".into()));
    }
    let n = a.nrows();
    let sv = singular_values(a)?;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let sigma2 = second_smallest(&sv);
    let sigma_min = *sv.last().unwrap();
    let eigs = eigenvalues(a)?;
    let witness = witness_from_eigs(a, &eigs, tol)?;
    let (matching_lower, structural_rank_upper) = structural_rank_bounds(&nonzero_pattern(a))?;
    Ok(IdentReport {
        dim: n,
        rank,
        rank_deficient2: n >= 2 && rank + 1 < n,
        sigma2,
        sigma_min,
        eigenvalues: eigs,
        has_zero_eig: sigma_min <= tol,
        exists_lambda_rank_drop: witness.is_some(),
        witness,
        globally_unidentifiable: witness.is_some(),
        structural_rank_upper,
        matching_lower,
        svd_tol: tol,
    })
}

/// Closed-form bounds for a sparse-continuous `n × n` matrix at sparsity `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEval {
    pub dim: usize,
    pub sparsity: f64,
    pub lower_bound: f64,
    /// `None` for `n = 1`, where the threshold is undefined.
    pub p_critical: Option<f64>,
}

pub fn bound_eval(n: usize, p: f64) -> Result<BoundEval> {
    Ok(BoundEval {
        dim: n,
        sparsity: p,
        lower_bound: unident_lower_bound(n, p)?,
        p_critical: if n >= 2 {
            Some(critical_sparsity(n)?)
        } else {
            None
        },
    })
}

/// Lower bound on `P(globally unidentifiable)`: the probability of at least
/// two all-zero columns, `1 - (1-q)^n - n q (1-q)^(n-1)` with `q = p^n`.
/// Equals `p` for `n = 1`.
pub fn unident_lower_bound(n: usize, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("sparsity {p} outside [0, 1]")));
    }
    if n == 1 {
        return Ok(p);
    }
    let nf = n as f64;
    let q = p.powi(n as i32);
    let v = 1.0 - (1.0 - q).powi(n as i32) - nf * q * (1.0 - q).powi(n as i32 - 1);
    Ok(v.clamp(0.0, 1.0))
}

/// Critical sparsity `1 - ln(n)/n`.
pub fn critical_sparsity(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput("critical sparsity needs n >= 2".into()));
    }
    let nf = n as f64;
    Ok(1.0 - nf.ln() / nf)
}
