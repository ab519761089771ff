//! Trajectory-level identifiability metrics and near-unidentifiability
//! bounds.
//!
//! The distance of `x0` to the nearest proper `A`-invariant subspace is
//! approximated by its distance to `ker(A)`. For a confusable system `A'`
//! agreeing with `A` on `ker(A)`,
//!
//! ```text
//! ‖e^{At}x0 − e^{A't}x0‖ ≤ C(t) ‖A − A'‖ ‖w‖,   C(t) = ∫₀ᵗ ‖e^{A(t−s)}‖ ‖e^{A's}‖ ds
//! ```
//!
//! where `w` is the component of `x0` orthogonal to the kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::integrator::{matrix_exp_norm, Trajectory};
use crate::special::{lambert_w0, ln_gamma};
use crate::{eigen, linalg, rng, Error, Result};

/// Condition numbers above this are reported as `+∞`.
pub const SCN_CAP: f64 = 1e15;
/// Horizon over which the growth constants `(M, α)` are fitted.
pub const HORIZON_T_MAX: f64 = 2.0;
const HORIZON_GRID: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajMetricReport {
    pub d_a0: f64,
    pub d0: usize,
    pub scn: f64,
    pub gram: DMatrix<f64>,
}

/// Orthonormal kernel basis of a matrix, reusable across many `x0`.
#[derive(Clone, Debug)]
pub struct KernelProjector {
    dim: usize,
    basis: DMatrix<f64>,
}

impl KernelProjector {
    /// Kernel from right singular vectors whose singular value is `≤ tol`.
    pub fn new(a: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let n = a.nrows();
        let s = linalg::svd(a)?;
        let cols: Vec<usize> = (0..n).filter(|&i| s.sigma[i] <= tol).collect();
        let basis = DMatrix::from_fn(n, cols.len(), |r, c| s.v[(r, cols[c])]);
        Ok(KernelProjector { dim: n, basis })
    }

    pub fn kernel_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Component of `x` orthogonal to the kernel.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        x - linalg::project(&self.basis, x)
    }

    /// `‖x − Π_ker x‖ / ‖x‖`, in `[0, 1]`.
    pub fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        let norm = x.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidInput(
                "initial condition must be nonzero".into(),
            ));
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        match self.kernel_dim() {
            0 => Ok(1.0),
            d if d == self.dim => Ok(0.0),
            _ => {
                let u = x / norm;
                Ok(self.residual(&u).norm().clamp(0.0, 1.0))
            }
        }
    }
}

/// Normalised distance of `x0` to `ker(A)` and the kernel dimension.
pub fn kernel_distance(a: &DMatrix<f64>, x0: &DVector<f64>, tol: f64) -> Result<(f64, usize)> {
    let k = KernelProjector::new(a, tol)?;
    Ok((k.distance(x0)?, k.kernel_dim()))
}

/// Trapezoid Gram matrix `Σxx = ∫ x xᵀ dt`.
pub fn gram_matrix(traj: &Trajectory) -> Result<DMatrix<f64>> {
    if traj.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    let w = linalg::trapezoid_weights(&traj.times);
    let y = &traj.states;
    let mut weighted = y.clone();
    for (k, wk) in w.iter().enumerate() {
        weighted.row_mut(k).scale_mut(*wk);
    }
    let g = y.transpose() * weighted;
    // symmetrise rounding noise
    Ok((&g + g.transpose()) * 0.5)
}

/// Condition number of a Gram matrix, `+∞` beyond double precision.
pub fn condition_number(g: &DMatrix<f64>) -> Result<f64> {
    let sv = linalg::singular_values(g)?;
    let (max, min) = (sv[0], *sv.last().unwrap());
    if max == 0.0 || min < f64::EPSILON * max {
        return Ok(f64::INFINITY);
    }
    let k = max / min;
    Ok(if k > SCN_CAP { f64::INFINITY } else { k })
}

/// Smoothed condition number of the trajectory and its Gram matrix.
pub fn smoothed_condition_number(traj: &Trajectory) -> Result<(f64, DMatrix<f64>)> {
    let g = gram_matrix(traj)?;
    Ok((condition_number(&g)?, g))
}

pub fn trajectory_metrics(
    a: &DMatrix<f64>,
    traj: &Trajectory,
    tol: f64,
) -> Result<TrajMetricReport> {
    let (d_a0, d0) = kernel_distance(a, &traj.x0(), tol)?;
    let (scn, gram) = smoothed_condition_number(traj)?;
    Ok(TrajMetricReport {
        d_a0,
        d0,
        scn,
        gram,
    })
}

/// CSV row for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMetricRow {
    pub n: usize,
    pub p: f64,
    pub matrix_seed: u64,
    pub draw_index: u64,
    pub x0_seed: u64,
    pub d_a0: f64,
    pub d0: usize,
    #[serde(with = "crate::serde_float")]
    pub scn: f64,
    pub sigma2: f64,
}

/// `A' = A + u vᵀ` with `v ⟂ ker(A)` and `u` random, both unit vectors, so
/// `A'` agrees with `A` on the kernel and `‖A − A'‖₂ = 1`.
pub fn confusable_system(a: &DMatrix<f64>, tol: f64, seed: u64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let k = KernelProjector::new(a, tol)?;
    let d0 = k.kernel_dim();
    if d0 == 0 || d0 == n {
        return Err(Error::NoWitness {
            kernel_dim: d0,
            dim: n,
        });
    }
    let mut rng = rng::stream(seed, 0);
    let gauss =
        |rng: &mut rng::StreamRng| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = loop {
        let v = k.residual(&gauss(&mut rng));
        let norm = v.norm();
        if norm > 1e-8 {
            break v / norm;
        }
    };
    let u = loop {
        let u = gauss(&mut rng);
        let norm = u.norm();
        if norm > 1e-8 {
            break u / norm;
        }
    };
    Ok(a + u * v.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceBound {
    pub t: f64,
    /// `C(t, A, A')`.
    pub c: f64,
    pub delta_norm: f64,
    /// Normalised kernel distance of `x0`.
    pub d: f64,
    /// `C ‖A − A'‖ ‖x0‖ d`.
    pub bound: f64,
}

/// Measured `‖e^{At}x0 − e^{A't}x0‖₂` (exact exponentials).
pub fn measured_divergence(
    a: &DMatrix<f64>,
    a_prime: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let xa = linalg::expm(&(a * t))? * x0;
    let xb = linalg::expm(&(a_prime * t))? * x0;
    Ok((xa - xb).norm())
}

fn check_agreement(a: &DMatrix<f64>, a_prime: &DMatrix<f64>, k: &KernelProjector) -> Result<()> {
    if k.kernel_dim() == 0 {
        return Ok(());
    }
    let resid = ((a - a_prime) * k.basis()).amax();
    if resid > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "A - A' does not annihilate ker(A) (residual {resid:e})"
        )));
    }
    Ok(())
}

/// Adaptive Simpson quadrature with an evaluation budget.
fn adaptive_simpson<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64> {
    const MAX_EVALS: usize = 200_000;
    struct Ctx<'a, F> {
        f: &'a mut F,
        evals: usize,
    }
    fn rec<F: FnMut(f64) -> Result<f64>>(
        ctx: &mut Ctx<'_, F>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (ctx.f)(lm)?;
        let frm = (ctx.f)(rm)?;
        ctx.evals += 2;
        if ctx.evals > MAX_EVALS {
            return Err(Error::NumericalFailure {
                what: "adaptive quadrature",
                iterations: ctx.evals,
            });
        }
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(rec(ctx, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + rec(ctx, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let fm = f(0.5 * (a + b))?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut ctx = Ctx {
        f: &mut f,
        evals: 3,
    };
    rec(&mut ctx, a, b, fa, fm, fb, whole, tol, 40)
}

/// `C(t, A, A') = ∫₀ᵗ ‖e^{A(t−s)}‖₂ ‖e^{A's}‖₂ ds`.
pub fn divergence_constant(a: &DMatrix<f64>, a_prime: &DMatrix<f64>, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let integrand =
        |s: f64| -> Result<f64> { Ok(matrix_exp_norm(a, t - s)? * matrix_exp_norm(a_prime, s)?) };
    // the integrand is at least e^{-‖A‖t}e^{-‖A'‖t}; scale the tolerance on the endpoint value
    let scale = integrand(0.0)?.max(integrand(t)?);
    adaptive_simpson(integrand, 0.0, t, 1e-10 * scale.max(1e-300) * t)
}

pub fn divergence_bound(
    a: &DMatrix<f64>,
    a_prime: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
    tol: f64,
) -> Result<DivergenceBound> {
    let k = KernelProjector::new(a, tol)?;
    check_agreement(a, a_prime, &k)?;
    let d = k.distance(x0)?;
    let delta_norm = linalg::spectral_norm(&(a - a_prime))?;
    let c = divergence_constant(a, a_prime, t)?;
    Ok(DivergenceBound {
        t,
        c,
        delta_norm,
        d,
        bound: c * delta_norm * x0.norm() * d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    /// Guaranteed ε-closeness horizon; `+∞` when the bound stays below ε on
    /// the whole fitted range.
    pub horizon_t: f64,
    pub alpha: f64,
    pub m: f64,
    pub epsilon: f64,
}

/// `(M, α)` with `‖e^{Bt}‖ ≤ M e^{αt}` for `B ∈ {A, A'}` on `[0, T_max]`:
/// `α` is the larger spectral abscissa, `M` the largest sampled ratio.
pub fn growth_constants(a: &DMatrix<f64>, a_prime: &DMatrix<f64>) -> Result<(f64, f64)> {
    let alpha = eigen::spectral_abscissa(a)?.max(eigen::spectral_abscissa(a_prime)?);
    let mut m: f64 = 1.0;
    for i in 0..HORIZON_GRID {
        let t = HORIZON_T_MAX * i as f64 / (HORIZON_GRID - 1) as f64;
        let damp = (-alpha * t).exp();
        m = m
            .max(matrix_exp_norm(a, t)? * damp)
            .max(matrix_exp_norm(a_prime, t)? * damp);
    }
    Ok((m, alpha))
}

/// Time horizon `T = W(α ε / (‖A−A'‖ M² ‖w‖)) / α` up to which the two
/// trajectories provably stay ε-close.
pub fn epsilon_horizon(
    a: &DMatrix<f64>,
    a_prime: &DMatrix<f64>,
    x0: &DVector<f64>,
    epsilon: f64,
    tol: f64,
) -> Result<Horizon> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let k = KernelProjector::new(a, tol)?;
    check_agreement(a, a_prime, &k)?;
    let w = k.distance(x0)? * x0.norm();
    let delta = linalg::spectral_norm(&(a - a_prime))?;
    let (m, alpha) = growth_constants(a, a_prime)?;
    let horizon_t = horizon_from_constants(alpha, delta * m * m * w, epsilon)?;
    Ok(Horizon {
        horizon_t,
        alpha,
        m,
        epsilon,
    })
}

/// Solves `c T e^{αT} = ε` for the first crossing; `+∞` if there is none on
/// `[0, T_max]`.
pub fn horizon_from_constants(alpha: f64, c: f64, epsilon: f64) -> Result<f64> {
    if c == 0.0 {
        return Ok(f64::INFINITY);
    }
    let t = if alpha.abs() < 1e-12 {
        epsilon / c
    } else {
        let z = alpha * epsilon / c;
        match lambert_w0(z) {
            Ok(w) => w / alpha,
            // α < 0 and the bound peaks below ε
            Err(Error::WDomain(_)) if alpha < 0.0 => f64::INFINITY,
            Err(e) => return Err(e),
        }
    };
    Ok(if t > HORIZON_T_MAX { f64::INFINITY } else { t })
}

/// `E[d | n, d0]` for `x0` uniform on the sphere and a `d0`-dimensional
/// subspace.
pub fn expected_kernel_distance(n: usize, d0: usize) -> Result<f64> {
    if d0 >= n {
        return Err(Error::InvalidInput(format!(
            "need 0 <= d0 < n, got d0={d0}, n={n}"
        )));
    }
    if d0 == 0 {
        return Ok(1.0);
    }
    let nf = n as f64;
    let df = d0 as f64;
    Ok((ln_gamma(nf / 2.0) + ln_gamma((nf - df + 1.0) / 2.0)
        - ln_gamma((nf - df) / 2.0)
        - ln_gamma((nf + 1.0) / 2.0))
    .exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{solve_expm, SolveConfig};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn kernel_distance_examples() {
        let x = dvector![0.6, 0.8];
        assert_eq!(
            kernel_distance(&DMatrix::identity(2, 2), &x, 1e-6).unwrap(),
            (1.0, 0)
        );
        assert_eq!(
            kernel_distance(&DMatrix::zeros(2, 2), &x, 1e-6).unwrap(),
            (0.0, 2)
        );
        let a = dmatrix![1.0, 0.0; 0.0, 0.0];
        for theta in [0.1f64, 0.7, 1.3, 2.9, -2.0] {
            let x = dvector![theta.cos(), theta.sin()];
            let (d, d0) = kernel_distance(&a, &x, 1e-6).unwrap();
            assert_eq!(d0, 1);
            assert!((d - theta.cos().abs()).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_distance_is_scale_invariant() {
        let a = dmatrix![1.0, 2.0, 0.0; 0.0, 0.0, 0.0; 3.0, 6.0, 1.0];
        let x = dvector![0.2, -0.5, 0.9];
        let k = KernelProjector::new(&a, 1e-6).unwrap();
        let d = k.distance(&x).unwrap();
        assert_eq!(k.distance(&(&x * 4.0)).unwrap(), d);
        assert!((k.distance(&(&x * -3.7)).unwrap() - d).abs() < 1e-15);
    }

    fn traj(times: Vec<f64>, states: DMatrix<f64>) -> Trajectory {
        Trajectory {
            times,
            states,
            system_ref: None,
            x0_ref: None,
            solver: crate::integrator::SolverKind::Expm,
            rtol: 0.0,
            atol: 0.0,
        }
    }

    #[test]
    fn scn_examples() {
        let t = crate::integrator::homogeneous_grid(1.0, 101);
        let (scn, g) =
            smoothed_condition_number(&traj(t.clone(), DMatrix::from_element(101, 1, 1.0)))
                .unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((scn - 1.0).abs() < 1e-14);
        let mut s = DMatrix::zeros(101, 2);
        s.column_mut(0)
            .copy_from(&DVector::from_iterator(101, t.iter().map(|v| 1.0 + v)));
        let (scn, _) = smoothed_condition_number(&traj(t, s)).unwrap();
        assert!(scn.is_infinite());
    }

    #[test]
    fn scn_matches_closed_form_gram() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let tr = solve_expm(&a, &dvector![1.0, 1.0], &SolveConfig::default()).unwrap();
        let (scn, g) = smoothed_condition_number(&tr).unwrap();
        let lam = [1.0f64, 2.0];
        let exact = DMatrix::from_fn(2, 2, |i, j| {
            let s = lam[i] + lam[j];
            (1.0 - (-s).exp()) / s
        });
        assert!((&g - &exact).amax() < 1e-5);
        let want = condition_number(&exact).unwrap();
        assert!((scn - want).abs() / want < 1e-3);
    }

    #[test]
    fn confusable_pair_agrees_on_kernel() {
        let a = dmatrix![1.0, 0.0; 0.0, 0.0];
        let ap = confusable_system(&a, 1e-6, 1).unwrap();
        let e2 = dvector![0.0, 1.0];
        assert!(((&a - &ap) * e2).amax() < 1e-15);
        assert!((linalg::spectral_norm(&(&a - &ap)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            confusable_system(&DMatrix::zeros(3, 3), 1e-6, 1),
            Err(Error::NoWitness { .. })
        ));
        assert!(matches!(
            confusable_system(&DMatrix::identity(3, 3), 1e-6, 1),
            Err(Error::NoWitness { .. })
        ));
    }

    #[test]
    fn bound_vanishes_at_zero_time_and_on_kernel() {
        let a = dmatrix![-1.0, 0.5, 0.0; 0.0, 0.0, 0.0; 0.3, 0.0, -0.5];
        let ap = confusable_system(&a, 1e-6, 9).unwrap();
        let x0 = dvector![0.3, 0.5, -0.2].normalize();
        let b = divergence_bound(&a, &ap, &x0, 0.0, 1e-6).unwrap();
        assert_eq!((b.c, b.bound), (0.0, 0.0));
        // x0 inside ker(A)
        let k = KernelProjector::new(&a, 1e-6).unwrap();
        let x_in = k.basis().column(0).into_owned();
        let b = divergence_bound(&a, &ap, &x_in, 1.0, 1e-6).unwrap();
        assert!(b.bound < 1e-12);
        assert!(measured_divergence(&a, &ap, &x_in, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn bound_holds_on_random_pairs() {
        use crate::ensemble::{draw, draw_unit_sphere, EnsembleSpec};
        let spec = EnsembleSpec::sparse_continuous(5, 0.8, 4).unwrap();
        let mut checked = 0;
        for k in 0..200 {
            let a = draw(&spec, k).unwrap().entries;
            let Ok(ap) = confusable_system(&a, 1e-6, k) else {
                continue;
            };
            let x0 = draw_unit_sphere(5, 1000 + k).unwrap().values;
            for t in [0.5, 1.0] {
                let b = divergence_bound(&a, &ap, &x0, t, 1e-6).unwrap();
                let m = measured_divergence(&a, &ap, &x0, t).unwrap();
                assert!(m <= b.bound, "measured {m} > bound {}", b.bound);
            }
            checked += 1;
            if checked == 10 {
                break;
            }
        }
        assert_eq!(checked, 10);
    }

    #[test]
    fn horizon_formula_examples() {
        // α = 1, c = 1, ε = e  →  T = W(e) = 1
        assert!(
            (horizon_from_constants(1.0, 1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-14
        );
        assert!(horizon_from_constants(1.0, 1.0, 1e-12).unwrap() < 1e-11);
        assert!((horizon_from_constants(0.0, 2.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        // α < 0 with the bound peaking below ε
        assert!(horizon_from_constants(-1.0, 0.1, 1.0)
            .unwrap()
            .is_infinite());
        assert!(horizon_from_constants(1.0, 0.0, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn expected_distance_values() {
        assert_eq!(expected_kernel_distance(7, 0).unwrap(), 1.0);
        assert!(
            (expected_kernel_distance(2, 1).unwrap() - 2.0 / std::f64::consts::PI).abs() < 1e-14
        );
        assert!(expected_kernel_distance(3, 3).is_err());
    }

    #[test]
    fn expected_distance_matches_monte_carlo() {
        use crate::ensemble::draw_unit_sphere;
        for (n, d0) in [(2usize, 1usize), (10, 3)] {
            // kernel = first d0 coordinates
            let a = DMatrix::from_fn(n, n, |i, j| {
                if j < d0 {
                    0.0
                } else {
                    ((i + 3 * j) % 7) as f64 + 1.0
                }
            });
            let k = KernelProjector::new(&a, 1e-6).unwrap();
            assert_eq!(k.kernel_dim(), d0);
            let draws = 20_000;
            let vals: Vec<f64> = (0..draws)
                .map(|s| k.distance(&draw_unit_sphere(n, s).unwrap().values).unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let se = (var / draws as f64).sqrt();
            let want = expected_kernel_distance(n, d0).unwrap();
            assert!(
                (mean - want).abs() < 3.0 * se,
                "n={n} d0={d0}: {mean} vs {want}"
            );
        }
    }
}
