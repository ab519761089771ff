//! L1-regularised trajectory matching for a linear vector field.
//!
//! The model trajectory is propagated exactly on the sample grid,
//! `x̂_{k+1} = Φ x̂_k` with `Φ = e^{hÂ}`, and the mean absolute error against
//! the observations is minimised by RMSprop with a proximal L1 step. The
//! gradient is obtained by a discrete adjoint sweep followed by the adjoint
//! Fréchet derivative of the matrix exponential.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::integrator::Trajectory;
use crate::{linalg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradFitConfig {
    pub l1: f64,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    /// Stop once the data loss drops below this.
    pub loss_tol: f64,
}

impl Default for GradFitConfig {
    fn default() -> Self {
        GradFitConfig {
            l1: 0.0,
            max_iters: 10_000,
            learning_rate: 1e-3,
            rho: 0.99,
            eps: 1e-8,
            loss_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradFit {
    pub a_hat: DMatrix<f64>,
    /// Data loss (mean absolute error) of `a_hat`.
    pub loss: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Observations on a uniform grid, ready for repeated loss evaluations.
#[derive(Clone, Debug)]
pub struct TrajectoryData {
    h: f64,
    /// `K × n` observed states.
    y: DMatrix<f64>,
}

impl TrajectoryData {
    pub fn new(traj: &Trajectory) -> Result<Self> {
        let h = traj.uniform_step().ok_or_else(|| {
            Error::InvalidInput("trajectory matching needs a homogeneous grid".into())
        })?;
        Self::from_states(traj.states.clone(), h)
    }

    pub fn from_states(y: DMatrix<f64>, h: f64) -> Result<Self> {
        if y.nrows() < 2 || !(h > 0.0) {
            return Err(Error::InvalidInput(
                "need at least 2 samples and a positive step".into(),
            ));
        }
        Ok(TrajectoryData { h, y })
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    fn predict(&self, phi: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let (k, n) = self.y.shape();
        let mut xs = DMatrix::zeros(k, n);
        let mut x: DVector<f64> = self.y.row(0).transpose();
        xs.row_mut(0).copy_from(&x.transpose());
        for i in 1..k {
            x = phi * x;
            xs.row_mut(i).copy_from(&x.transpose());
        }
        xs.iter().all(|v| v.is_finite()).then_some(xs)
    }

    /// Mean absolute error of the exactly propagated model `Â`.
    pub fn loss(&self, a_hat: &DMatrix<f64>) -> Result<f64> {
        let phi = linalg::expm(&(a_hat * self.h))?;
        let xs = self
            .predict(&phi)
            .ok_or(Error::Overflow("model trajectory"))?;
        Ok((xs - &self.y).abs().mean())
    }

    /// Data loss and its gradient with respect to `Â`.
    pub fn loss_and_grad(&self, a_hat: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (k, n) = self.y.shape();
        let ha = a_hat * self.h;
        let phi = linalg::expm(&ha)?;
        let xs = self
            .predict(&phi)
            .ok_or(Error::Overflow("model trajectory"))?;
        let resid = &xs - &self.y;
        let scale = 1.0 / (k * n) as f64;
        let loss = resid.abs().sum() * scale;
        // backward sweep: λ_k = r_k + Φᵀ λ_{k+1}
        let phi_t = phi.transpose();
        let mut lam = DVector::<f64>::zeros(n);
        let mut g_phi = DMatrix::<f64>::zeros(n, n);
        for i in (1..k).rev() {
            let r = resid.row(i).transpose().map(|v| signum0(v) * scale);
            lam = r + &phi_t * &lam;
            // x̂_i = Φ x̂_{i-1}
            g_phi += &lam * xs.row(i - 1);
        }
        Ok((loss, self.h * expm_frechet_adjoint(&ha, &g_phi)?))
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `L_exp(X)ᵀ[G] = L_exp(Xᵀ)[G]`, the upper-right block of
/// `expm([[Xᵀ, G], [0, Xᵀ]])`.
pub fn expm_frechet_adjoint(x: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let xt = x.transpose();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&xt);
    big.view_mut((n, n), (n, n)).copy_from(&xt);
    big.view_mut((0, n), (n, n)).copy_from(g);
    let e = linalg::expm(&big)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

fn objective(loss: f64, a: &DMatrix<f64>, l1: f64) -> f64 {
    loss + l1 * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Fits `Â` from zero; returns the best iterate seen.
pub fn gradfit_l1(traj: &Trajectory, cfg: &GradFitConfig) -> Result<GradFit> {
    gradfit_data(&TrajectoryData::new(traj)?, cfg)
}

pub fn gradfit_data(data: &TrajectoryData, cfg: &GradFitConfig) -> Result<GradFit> {
    if !(cfg.l1 >= 0.0 && cfg.learning_rate > 0.0 && (0.0..1.0).contains(&cfg.rho)) {
        return Err(Error::InvalidInput(
            "invalid optimiser configuration".into(),
        ));
    }
    let n = data.dim();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    let mut best: Option<GradFit> = None;
    let mut iterations = 0;
    let mut diverged = false;
    loop {
        let (loss, grad) = match data.loss_and_grad(&a) {
            Ok(lg) if lg.0.is_finite() && lg.1.iter().all(|g| g.is_finite()) => lg,
            _ => {
                diverged = true;
                break;
            }
        };
        let obj = objective(loss, &a, cfg.l1);
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(GradFit {
                a_hat: a.clone(),
                loss,
                objective: obj,
                iterations,
                converged: true,
            });
        }
        if loss < cfg.loss_tol || iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;
        for ((aij, vij), gij) in a.iter_mut().zip(v.iter_mut()).zip(grad.iter()) {
            *vij = cfg.rho * *vij + (1.0 - cfg.rho) * gij * gij;
            let step = cfg.learning_rate / (vij.sqrt() + cfg.eps);
            let z = *aij - step * gij;
            // proximal step for the L1 penalty
            *aij = z.signum() * (z.abs() - step * cfg.l1).max(0.0);
        }
    }
    let mut fit = best.ok_or(Error::NumericalFailure {
        what: "trajectory matching",
        iterations,
    })?;
    fit.iterations = iterations;
    fit.converged = !diverged;
    Ok(fit)
}

/// Central finite-difference gradient of the data loss, for checking.
pub fn numerical_gradient(
    data: &TrajectoryData,
    a_hat: &DMatrix<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = a_hat.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut ap = a_hat.clone();
            ap[(i, j)] += step;
            let mut am = a_hat.clone();
            am[(i, j)] -= step;
            g[(i, j)] = (data.loss(&ap)? - data.loss(&am)?) / (2.0 * step);
        }
    }
    Ok(g)
}
