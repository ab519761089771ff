//! Solvers for the linear IVP `x' = Ax, x(0) = x0` on a homogeneous grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{linalg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Rk45,
    Expm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub t_end: f64,
    /// Number of grid points, including both endpoints.
    pub steps: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            t_end: 1.0,
            steps: 512,
            rtol: 1e-6,
            atol: 1e-9,
        }
    }
}

impl SolveConfig {
    /// Tolerances used inside the trajectory-matching estimator.
    pub fn estimator() -> Self {
        SolveConfig {
            rtol: 1e-3,
            atol: 1e-6,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.steps < 2 {
            return Err(Error::InvalidInput("need at least 2 grid points".into()));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        homogeneous_grid(self.t_end, self.steps)
    }
}

/// `k` equally spaced points on `[0, t_end]` with exact endpoints.
pub fn homogeneous_grid(t_end: f64, k: usize) -> Vec<f64> {
    let last = (k - 1) as f64;
    (0..k)
        .map(|i| {
            if i + 1 == k {
                t_end
            } else {
                t_end * i as f64 / last
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `K × n`, one row per time point.
    pub states: DMatrix<f64>,
    /// `(seed, draw_index)` of the generating matrix, when known.
    pub system_ref: Option<(u64, u64)>,
    pub x0_ref: Option<u64>,
    pub solver: SolverKind,
    pub rtol: f64,
    pub atol: f64,
}

/// JSON envelope written next to the CSV samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dim: usize,
    pub samples: usize,
    pub t_end: f64,
    pub system_ref: Option<(u64, u64)>,
    pub x0_ref: Option<u64>,
    pub solver: SolverKind,
    pub rtol: f64,
    pub atol: f64,
}

impl Trajectory {
    /// Wraps externally sampled data; tolerances are unknown and left NaN.
    pub fn from_samples(times: Vec<f64>, states: DMatrix<f64>) -> Result<Self> {
        let traj = Trajectory {
            times,
            states,
            system_ref: None,
            x0_ref: None,
            solver: SolverKind::Rk45,
            rtol: f64::NAN,
            atol: f64::NAN,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x0(&self) -> DVector<f64> {
        self.states.row(0).transpose()
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            dim: self.dim(),
            samples: self.len(),
            t_end: *self.times.last().unwrap_or(&0.0),
            system_ref: self.system_ref,
            x0_ref: self.x0_ref,
            solver: self.solver,
            rtol: self.rtol,
            atol: self.atol,
        }
    }

    /// Columns `t, x_1, …, x_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:e}")];
            row.extend(self.states.row(k).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`Trajectory::write_csv`]; metadata defaults
    /// to an RK45 solve with unknown provenance.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let n = r.headers()?.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::InvalidInput(
                "trajectory CSV has no state columns".into(),
            ));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(str::parse::<f64>).collect();
            let vals = vals
                .map_err(|e| Error::InvalidInput(format!("bad number in trajectory CSV: {e}")))?;
            if vals.len() != n + 1 {
                return Err(Error::DimensionMismatch {
                    expected: n + 1,
                    found: vals.len(),
                });
            }
            times.push(vals[0]);
            data.extend_from_slice(&vals[1..]);
        }
        let k = times.len();
        Trajectory::from_samples(times, DMatrix::from_row_slice(k, n, &data))
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 || self.states.nrows() != self.times.len() {
            return Err(Error::InvalidInput(
                "trajectory needs at least 2 samples".into(),
            ));
        }
        if self.times[0] != 0.0 || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "times must start at 0 and increase".into(),
            ));
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "trajectory has non-finite states".into(),
            ));
        }
        Ok(())
    }

    /// Grid spacing if the grid is homogeneous (relative tolerance 1e-9).
    pub fn uniform_step(&self) -> Option<f64> {
        let k = self.times.len();
        if k < 2 {
            return None;
        }
        let h = (self.times[k - 1] - self.times[0]) / (k - 1) as f64;
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1e-300))
            .then_some(h)
    }
}

fn check_dims(a: &DMatrix<f64>, x0: &DVector<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput("system matrix must be square".into()));
    }
    if a.nrows() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: x0.len(),
        });
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau; the system is autonomous so the nodes are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 1_000_000;

fn err_norm(
    err: &DVector<f64>,
    y: &DVector<f64>,
    y_new: &DVector<f64>,
    rtol: f64,
    atol: f64,
) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y.iter().zip(y_new.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Hairer's starting step heuristic for a 5th-order method.
fn initial_step(
    a: &DMatrix<f64>,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    t_end: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    let scale = y0.map(|v| atol + rtol * v.abs());
    let n = y0.len() as f64;
    let rms = |v: &DVector<f64>| (v.component_div(&scale).norm_squared() / n).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(t_end);
    let y1 = y0 + f0 * h0;
    let f1 = a * &y1;
    let d2 = rms(&(f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(t_end)
}

/// Adaptive Dormand–Prince 5(4) with the 4th-order continuous extension
/// sampled at the homogeneous grid of `cfg`.
pub fn solve_rk45(a: &DMatrix<f64>, x0: &DVector<f64>, cfg: &SolveConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(a, x0)?;
    let times = cfg.times();
    let n = x0.len();
    let k_pts = times.len();
    let mut states = DMatrix::zeros(k_pts, n);
    states.row_mut(0).copy_from(&x0.transpose());

    let t_end = cfg.t_end;
    let mut t = 0.0;
    let mut y = x0.clone();
    let mut k1 = a * &y;
    let mut h = initial_step(a, &y, &k1, t_end, cfg.rtol, cfg.atol);
    let mut next = 1;
    let mut steps = 0;

    while next < k_pts {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::NumericalFailure {
                what: "RK45 integration",
                iterations: MAX_STEPS,
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let k2 = a * (&y + &k1 * (h * A21));
        let k3 = a * (&y + (&k1 * A31 + &k2 * A32) * h);
        let k4 = a * (&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h);
        let k5 = a * (&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h);
        let k6 = a * (&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h);
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = a * &y_new;
        let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let en = err_norm(&err, &y, &y_new, cfg.rtol, cfg.atol);
        if !en.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::Overflow("RK45 state"));
            }
            h *= FAC_MIN;
            continue;
        }
        if en <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            // dense output on (t, t_new]
            let ydiff = &y_new - &y;
            let bspl = &k1 * h - &ydiff;
            let r4 = &ydiff - &k7 * h - &bspl;
            let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
            while next < k_pts && times[next] <= t_new {
                let row = if next + 1 == k_pts && last {
                    y_new.clone()
                } else {
                    let theta = (times[next] - t) / h;
                    let th1 = 1.0 - theta;
                    &y + (&ydiff + (&bspl + (&r4 + &r5 * th1) * theta) * th1) * theta
                };
                states.row_mut(next).copy_from(&row.transpose());
                next += 1;
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            let fac = if en == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            h *= fac;
        } else {
            let fac = (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }

    Ok(Trajectory {
        times,
        states,
        system_ref: None,
        x0_ref: None,
        solver: SolverKind::Rk45,
        rtol: cfg.rtol,
        atol: cfg.atol,
    })
}

/// Exact solution `expm(A t_k) x0`, one exponential per grid point.
pub fn solve_expm(a: &DMatrix<f64>, x0: &DVector<f64>, cfg: &SolveConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(a, x0)?;
    let times = cfg.times();
    let n = x0.len();
    let mut states = DMatrix::zeros(times.len(), n);
    states.row_mut(0).copy_from(&x0.transpose());
    for (k, &t) in times.iter().enumerate().skip(1) {
        let x = linalg::expm(&(a * t))? * x0;
        states.row_mut(k).copy_from(&x.transpose());
    }
    Ok(Trajectory {
        times,
        states,
        system_ref: None,
        x0_ref: None,
        solver: SolverKind::Expm,
        rtol: 0.0,
        atol: 0.0,
    })
}

/// Exact propagation on an arbitrary grid: one exponential per distinct
/// step length. Returns the `K × n` state matrix.
pub fn propagate(a: &DMatrix<f64>, x0: &DVector<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(a, x0)?;
    let n = x0.len();
    let mut states = DMatrix::zeros(times.len(), n);
    if times.is_empty() {
        return Ok(states);
    }
    let mut x = if times[0] == 0.0 {
        x0.clone()
    } else {
        linalg::expm(&(a * times[0]))? * x0
    };
    states.row_mut(0).copy_from(&x.transpose());
    let mut cached: Option<(f64, DMatrix<f64>)> = None;
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        let phi = match &cached {
            Some((hc, phi)) if (hc - h).abs() <= 1e-12 * h.abs() => phi,
            _ => {
                cached = Some((h, linalg::expm(&(a * h))?));
                &cached.as_ref().unwrap().1
            }
        };
        x = phi * x;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("trajectory propagation"));
        }
        states.row_mut(k).copy_from(&x.transpose());
    }
    Ok(states)
}

/// `‖expm(A t)‖₂`.
pub fn matrix_exp_norm(a: &DMatrix<f64>, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    linalg::spectral_norm(&linalg::expm(&(a * t))?)
}
