//! System estimators: sequentially thresholded least squares on
//! finite-difference derivatives, and L1-regularised trajectory matching.

mod fd;
mod gradfit;
mod stlsq;

pub use fd::{finite_difference, finite_difference_states};
pub use gradfit::{
    expm_frechet_adjoint, gradfit_data, gradfit_l1, numerical_gradient, GradFit, GradFitConfig,
    TrajectoryData,
};
pub use stlsq::{stlsq_fit, stlsq_fit_cached, StlsqFit, SvdCache, STLSQ_MAX_ITER};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::integrator::{propagate, Trajectory};
use crate::{Error, Result};

/// Entries with `|a| ≤ HAMMING_TOL` count as zero.
pub const HAMMING_TOL: f64 = 1e-5;
pub const WELL_FIT_R2: f64 = 0.99;
pub const WELL_FIT_MSE: f64 = 1e-4;
/// R² values closer than this are treated as tied during selection.
pub const R2_TIE: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "stlsq")]
    Stlsq,
    #[serde(rename = "gradfit_l1")]
    GradFitL1,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Stlsq, Method::GradFitL1];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stlsq => "stlsq",
            Method::GradFitL1 => "gradfit_l1",
        }
    }

    /// STLSQ requires both criteria, trajectory matching either one.
    pub fn is_well_fit(self, r2: f64, mse: f64) -> bool {
        let r2_ok = r2 > WELL_FIT_R2;
        let mse_ok = mse < WELL_FIT_MSE;
        match self {
            Method::Stlsq => r2_ok && mse_ok,
            Method::GradFitL1 => r2_ok || mse_ok,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "stlsq" => Ok(Method::Stlsq),
            "gradfit_l1" | "gradfit" => Ok(Method::GradFitL1),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub stlsq_thresholds: Vec<f64>,
    pub ridge_weights: Vec<f64>,
    pub l1_weights: Vec<f64>,
    pub fd_orders: Vec<u8>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            stlsq_thresholds: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            ridge_weights: vec![0.001, 0.05, 0.1],
            l1_weights: vec![0.0, 1e-1, 1e-2],
            fd_orders: vec![2, 4],
        }
    }
}

impl HyperGrid {
    pub fn validate(&self, method: Method) -> Result<()> {
        let pos = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite());
        let ok = match method {
            Method::Stlsq => {
                pos(&self.stlsq_thresholds)
                    && pos(&self.ridge_weights)
                    && !self.fd_orders.is_empty()
                    && self.fd_orders.iter().all(|o| *o == 2 || *o == 4)
            }
            Method::GradFitL1 => {
                !self.l1_weights.is_empty()
                    && self.l1_weights.iter().all(|x| *x >= 0.0 && x.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid hyperparameter grid for {method}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub threshold: Option<f64>,
    pub ridge: Option<f64>,
    pub l1: Option<f64>,
    pub fd_order: Option<u8>,
    pub iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub a_hat: DMatrix<f64>,
    pub method: Method,
    pub hyper: Hyper,
    pub r2: f64,
    pub mse: f64,
    pub well_fit: bool,
    /// Against the generating system, when it is known.
    pub hamming: Option<f64>,
    pub converged: bool,
}

/// Re-integrates `Â` from `x0` on the observed grid; pooled `R²` and MSE.
///
/// Integration failure yields `(−∞, +∞)`.
pub fn fit_quality(observed: &Trajectory, a_hat: &DMatrix<f64>) -> Result<(f64, f64)> {
    if a_hat.nrows() != observed.dim() || !a_hat.is_square() {
        return Err(Error::DimensionMismatch {
            expected: observed.dim(),
            found: a_hat.nrows(),
        });
    }
    let pred = match propagate(a_hat, &observed.x0(), &observed.times) {
        Ok(p) => p,
        Err(_) => return Ok((f64::NEG_INFINITY, f64::INFINITY)),
    };
    Ok(r2_mse(&observed.states, &pred))
}

pub fn r2_mse(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> (f64, f64) {
    let ss_res: f64 = (observed - predicted).iter().map(|v| v * v).sum();
    let means = observed.row_mean();
    let mut ss_tot = 0.0;
    for r in 0..observed.nrows() {
        for c in 0..observed.ncols() {
            let d = observed[(r, c)] - means[c];
            ss_tot += d * d;
        }
    }
    let mse = ss_res / observed.len() as f64;
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    (r2, mse)
}

/// Fraction of entries whose zero/nonzero status (`|a| > τ`) differs.
pub fn hamming_distance(a: &DMatrix<f64>, a_hat: &DMatrix<f64>, tau: f64) -> Result<f64> {
    if a.shape() != a_hat.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a_hat.nrows(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a
        .iter()
        .zip(a_hat.iter())
        .filter(|(x, y)| (x.abs() > tau) != (y.abs() > tau))
        .count();
    Ok(diff as f64 / a.len() as f64)
}

pub fn nonzero_count(a: &DMatrix<f64>, tau: f64) -> usize {
    a.iter().filter(|v| v.abs() > tau).count()
}

struct Candidate {
    a_hat: DMatrix<f64>,
    hyper: Hyper,
    r2: f64,
    mse: f64,
    converged: bool,
}

fn finish(c: Candidate, method: Method, a_true: Option<&DMatrix<f64>>) -> Result<EstimationResult> {
    let hamming = a_true
        .map(|a| hamming_distance(a, &c.a_hat, HAMMING_TOL))
        .transpose()?;
    Ok(EstimationResult {
        well_fit: method.is_well_fit(c.r2, c.mse),
        a_hat: c.a_hat,
        method,
        hyper: c.hyper,
        r2: c.r2,
        mse: c.mse,
        hamming,
        converged: c.converged,
    })
}

/// Higher R² first; near-ties go to the sparser estimate, then the smaller
/// regularisation weight.
fn better_by_r2(c: &Candidate, best: &Candidate) -> bool {
    let r2 = |x: &Candidate| {
        if x.r2.is_nan() {
            f64::NEG_INFINITY
        } else {
            x.r2
        }
    };
    if (r2(c) - r2(best)).abs() > R2_TIE || r2(c).is_infinite() || r2(best).is_infinite() {
        return r2(c) > r2(best);
    }
    tie_break(c, best)
}

fn tie_break(c: &Candidate, best: &Candidate) -> bool {
    let (nc, nb) = (
        nonzero_count(&c.a_hat, HAMMING_TOL),
        nonzero_count(&best.a_hat, HAMMING_TOL),
    );
    if nc != nb {
        return nc < nb;
    }
    let weight = |h: &Hyper| h.threshold.or(h.l1).unwrap_or(0.0);
    weight(&c.hyper) < weight(&best.hyper)
}

/// Grid search for STLSQ maximising the re-integrated R².
pub fn select_stlsq(
    traj: &Trajectory,
    a_true: Option<&DMatrix<f64>>,
    grid: &HyperGrid,
) -> Result<EstimationResult> {
    grid.validate(Method::Stlsq)?;
    let mut best: Option<Candidate> = None;
    let mut cache = SvdCache::default();
    for &order in &grid.fd_orders {
        let xdot = finite_difference(traj, order)?;
        for &threshold in &grid.stlsq_thresholds {
            for &ridge in &grid.ridge_weights {
                let fit = stlsq_fit_cached(
                    &traj.states,
                    &xdot,
                    threshold,
                    ridge,
                    STLSQ_MAX_ITER,
                    &mut cache,
                )?;
                let (r2, mse) = fit_quality(traj, &fit.a_hat)?;
                let c = Candidate {
                    a_hat: fit.a_hat,
                    hyper: Hyper {
                        threshold: Some(threshold),
                        ridge: Some(ridge),
                        l1: None,
                        fd_order: Some(order),
                        iters: fit.iterations,
                    },
                    r2,
                    mse,
                    converged: fit.converged,
                };
                if best.as_ref().is_none_or(|b| better_by_r2(&c, b)) {
                    best = Some(c);
                }
            }
        }
    }
    finish(
        best.expect("validated grid is nonempty"),
        Method::Stlsq,
        a_true,
    )
}

/// Trajectory matching over the L1 grid. Among well-fit candidates the one
/// whose zero count is closest to the generating system's wins; without a
/// reference, or with no well-fit candidate, the best R² is kept.
pub fn select_gradfit(
    traj: &Trajectory,
    a_true: Option<&DMatrix<f64>>,
    grid: &HyperGrid,
    base: &GradFitConfig,
) -> Result<EstimationResult> {
    grid.validate(Method::GradFitL1)?;
    let data = TrajectoryData::new(traj)?;
    let mut cands = Vec::with_capacity(grid.l1_weights.len());
    for &l1 in &grid.l1_weights {
        let fit = gradfit_data(&data, &GradFitConfig { l1, ..*base })?;
        let (r2, mse) = fit_quality(traj, &fit.a_hat)?;
        cands.push(Candidate {
            a_hat: fit.a_hat,
            hyper: Hyper {
                threshold: None,
                ridge: None,
                l1: Some(l1),
                fd_order: None,
                iters: fit.iterations,
            },
            r2,
            mse,
            converged: fit.converged,
        });
    }
    let mismatch = |c: &Candidate, a: &DMatrix<f64>| {
        let zeros = |m: &DMatrix<f64>| m.len() - nonzero_count(m, HAMMING_TOL);
        zeros(&c.a_hat).abs_diff(zeros(a))
    };
    let mut best: Option<Candidate> = None;
    for c in cands.drain(..) {
        let replace = match (&best, a_true) {
            (None, _) => true,
            (Some(b), Some(a)) => {
                let (cw, bw) = (
                    Method::GradFitL1.is_well_fit(c.r2, c.mse),
                    Method::GradFitL1.is_well_fit(b.r2, b.mse),
                );
                match (cw, bw) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => {
                        let (mc, mb) = (mismatch(&c, a), mismatch(b, a));
                        mc < mb || (mc == mb && tie_break(&c, b))
                    }
                    (false, false) => better_by_r2(&c, b),
                }
            }
            (Some(b), None) => better_by_r2(&c, b),
        };
        if replace {
            best = Some(c);
        }
    }
    finish(
        best.expect("validated grid is nonempty"),
        Method::GradFitL1,
        a_true,
    )
}

pub fn select_hypers(
    method: Method,
    traj: &Trajectory,
    a_true: Option<&DMatrix<f64>>,
    grid: &HyperGrid,
    gradfit: &GradFitConfig,
) -> Result<EstimationResult> {
    match method {
        Method::Stlsq => select_stlsq(traj, a_true, grid),
        Method::GradFitL1 => select_gradfit(traj, a_true, grid, gradfit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{solve_rk45, SolveConfig};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn hamming_examples() {
        let a = dmatrix![1.0, 0.0, 0.0; 0.0, 2.0, 0.0; 0.0, 0.0, 3.0];
        assert_eq!(hamming_distance(&a, &a, HAMMING_TOL).unwrap(), 0.0);
        let b = dmatrix![1.0, 0.0, 0.5; 0.0, 0.0, 0.0; 0.0, 0.0, 3.0];
        assert!((hamming_distance(&a, &b, HAMMING_TOL).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        let c = dmatrix![1.0, 0.0; 0.0, 1.0];
        let d = dmatrix![0.0, 1.0; 1.0, 0.0];
        assert_eq!(hamming_distance(&c, &d, HAMMING_TOL).unwrap(), 1.0);
        // sub-threshold entries count as zero regardless of sign
        let e = dmatrix![-1e-6, 0.0; 0.0, 1.0];
        assert_eq!(hamming_distance(&c, &e, HAMMING_TOL).unwrap(), 0.25);
    }

    #[test]
    fn fit_quality_examples() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.2];
        let traj = solve_rk45(&a, &dvector![1.0, 0.0], &SolveConfig::default()).unwrap();
        let (r2, mse) = fit_quality(&traj, &a).unwrap();
        assert!(r2 >= 0.999_999 && mse <= 1e-10, "{r2} {mse}");
        let (r2, _) = fit_quality(&traj, &DMatrix::zeros(2, 2)).unwrap();
        assert!(r2 <= 0.0);
        let (r2, mse) = fit_quality(&traj, &dmatrix![1e4, 0.0; 0.0, 1e4]).unwrap();
        assert_eq!((r2, mse), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn well_fit_rules() {
        assert!(Method::Stlsq.is_well_fit(0.995, 1e-5));
        assert!(!Method::Stlsq.is_well_fit(0.995, 1e-3));
        assert!(Method::GradFitL1.is_well_fit(0.995, 1e-3));
        assert!(Method::GradFitL1.is_well_fit(0.5, 1e-5));
        assert!(!Method::GradFitL1.is_well_fit(0.5, 1e-3));
    }

    #[test]
    fn stlsq_selection_recovers_dense_system() {
        let a = dmatrix![-0.6, 0.4, 0.9; -1.2, 0.3, 0.5; 0.7, -0.8, -0.4];
        let traj = solve_rk45(&a, &dvector![0.3, -0.8, 0.52], &SolveConfig::default()).unwrap();
        let res = select_stlsq(&traj, Some(&a), &HyperGrid::default()).unwrap();
        assert_eq!(res.hamming, Some(0.0));
        assert!(res.well_fit);
        assert!((&res.a_hat - &a).amax() < 1e-3);
    }

    #[test]
    fn single_element_grid_is_selected() {
        let a = dmatrix![-1.0, 0.0; 0.5, -0.3];
        let traj = solve_rk45(&a, &dvector![0.6, 0.8], &SolveConfig::default()).unwrap();
        let grid = HyperGrid {
            stlsq_thresholds: vec![1e-3],
            ridge_weights: vec![0.05],
            l1_weights: vec![0.0],
            fd_orders: vec![4],
        };
        let res = select_stlsq(&traj, None, &grid).unwrap();
        assert_eq!(res.hyper.threshold, Some(1e-3));
        assert_eq!(res.hyper.ridge, Some(0.05));
        assert_eq!(res.hyper.fd_order, Some(4));
        assert_eq!(res.hamming, None);
    }

    #[test]
    fn failing_candidates_are_flagged() {
        let a = dmatrix![-1.0, 2.0; -2.0, -1.0];
        let traj = solve_rk45(&a, &dvector![1.0, 0.0], &SolveConfig::default()).unwrap();
        let grid = HyperGrid {
            stlsq_thresholds: vec![10.0],
            ..Default::default()
        };
        let res = select_stlsq(&traj, Some(&a), &grid).unwrap();
        assert!(!res.well_fit);
        assert_eq!(res.a_hat, DMatrix::zeros(2, 2));
    }

    proptest::proptest! {
        #[test]
        fn hamming_is_a_metric(
            x in proptest::collection::vec(-1.0f64..1.0, 9),
            y in proptest::collection::vec(-1.0f64..1.0, 9),
            z in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            // push roughly a third of the entries to exact zeros
            let m = |v: &Vec<f64>| DMatrix::from_iterator(3, 3, v.iter().map(|e| if e.abs() < 0.33 { 0.0 } else { *e }));
            let (a, b, c) = (m(&x), m(&y), m(&z));
            let d = |p: &DMatrix<f64>, q: &DMatrix<f64>| hamming_distance(p, q, HAMMING_TOL).unwrap();
            proptest::prop_assert_eq!(d(&a, &a), 0.0);
            proptest::prop_assert_eq!(d(&a, &b), d(&b, &a));
            proptest::prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
            proptest::prop_assert!((0.0..=1.0).contains(&d(&a, &b)));
        }
    }
}
