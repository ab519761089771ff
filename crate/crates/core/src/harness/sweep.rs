use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SweepConfig;
use crate::ensemble::{draw, draw_unit_sphere, EnsembleSpec, SystemMatrix};
use crate::estimators::{nonzero_count, select_hypers, EstimationResult, Method, HAMMING_TOL};
use crate::integrator::solve_rk45;
use crate::rng::derive_seed;
use crate::spectral::{analyze, IdentRow};
use crate::traj_metrics::{smoothed_condition_number, KernelProjector, TrajMetricRow};
use crate::{Error, Result};

/// CSV row for one fitted trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub method: Method,
    pub n: usize,
    pub p: f64,
    pub matrix_seed: u64,
    pub draw_index: u64,
    pub x0_seed: u64,
    pub threshold: Option<f64>,
    pub ridge: Option<f64>,
    pub l1: Option<f64>,
    pub fd_order: Option<u8>,
    pub iters: usize,
    #[serde(with = "crate::serde_float")]
    pub r2: f64,
    #[serde(with = "crate::serde_float")]
    pub mse: f64,
    pub well_fit: bool,
    pub hamming: Option<f64>,
    pub converged: bool,
    pub nnz_true: usize,
    pub nnz_hat: usize,
}

impl EstimationRow {
    fn new(m: &SystemMatrix, x0_seed: u64, r: &EstimationResult) -> Self {
        EstimationRow {
            method: r.method,
            n: m.dim(),
            p: m.spec.sparsity,
            matrix_seed: m.spec.seed,
            draw_index: m.draw_index,
            x0_seed,
            threshold: r.hyper.threshold,
            ridge: r.hyper.ridge,
            l1: r.hyper.l1,
            fd_order: r.hyper.fd_order,
            iters: r.hyper.iters,
            r2: r.r2,
            mse: r.mse,
            well_fit: r.well_fit,
            hamming: r.hamming,
            converged: r.converged,
            nnz_true: nonzero_count(&m.entries, HAMMING_TOL),
            nnz_hat: nonzero_count(&r.a_hat, HAMMING_TOL),
        }
    }
}

/// Everything computed for one `(n, p)` cell, in draw order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub p: f64,
    pub config_hash: String,
    pub idents: Vec<IdentRow>,
    pub trajectories: Vec<TrajMetricRow>,
    pub estimates: Vec<EstimationRow>,
    /// Matrices the ensemble could not produce.
    pub n_rejected: usize,
    /// Matrices whose spectral analysis failed.
    pub n_failed: usize,
    pub traj_failed: usize,
    pub fit_failed: usize,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

/// Ensemble seed of a cell.
pub fn cell_seed(master: u64, n: usize, p: f64) -> u64 {
    derive_seed(&[master, n as u64, p.to_bits()])
}

pub fn x0_seed(master: u64, n: usize, p: f64, matrix: u64, x0: u64) -> u64 {
    derive_seed(&[master, n as u64, p.to_bits(), matrix, x0])
}

#[derive(Default)]
struct MatrixOutcome {
    ident: Option<IdentRow>,
    trajectories: Vec<TrajMetricRow>,
    estimates: Vec<EstimationRow>,
    rejected: bool,
    failed: bool,
    traj_failed: usize,
    fit_failed: usize,
    failures: Vec<String>,
}

fn run_matrix(cfg: &SweepConfig, spec: &EnsembleSpec, m: u64) -> MatrixOutcome {
    let mut out = MatrixOutcome::default();
    let (n, p) = (spec.dim, spec.sparsity);
    let sys = match draw(spec, m) {
        Ok(s) => s,
        Err(Error::Rejection { .. }) => {
            out.rejected = true;
            return out;
        }
        Err(e) => {
            out.failed = true;
            out.failures.push(format!("n={n} p={p} m={m}: draw: {e}"));
            return out;
        }
    };
    let report = match analyze(&sys.entries, cfg.tol) {
        Ok(r) => r,
        Err(e) => {
            out.failed = true;
            out.failures
                .push(format!("n={n} p={p} m={m}: analyze: {e}"));
            return out;
        }
    };
    out.ident = Some(IdentRow::new(&sys, &report));
    let kernel = match KernelProjector::new(&sys.entries, cfg.tol) {
        Ok(k) => k,
        Err(e) => {
            out.traj_failed = cfg.x0_per_matrix;
            out.failures.push(format!("n={n} p={p} m={m}: kernel: {e}"));
            return out;
        }
    };
    let gradfit_allowed = cfg
        .estimators
        .gradfit_matrices
        .is_none_or(|cap| (m as usize) < cap);
    for j in 0..cfg.x0_per_matrix as u64 {
        let seed = x0_seed(cfg.master_seed, n, p, m, j);
        let step = || -> Result<_> {
            let x0 = draw_unit_sphere(n, seed)?.values;
            let mut traj = solve_rk45(&sys.entries, &x0, &cfg.solver)?;
            traj.system_ref = Some((spec.seed, m));
            traj.x0_ref = Some(seed);
            let d_a0 = kernel.distance(&x0)?;
            let (scn, _) = smoothed_condition_number(&traj)?;
            Ok((traj, d_a0, scn))
        };
        let (traj, d_a0, scn) = match step() {
            Ok(v) => v,
            Err(e) => {
                out.traj_failed += 1;
                out.failures.push(format!("n={n} p={p} m={m} x0={j}: {e}"));
                continue;
            }
        };
        out.trajectories.push(TrajMetricRow {
            n,
            p,
            matrix_seed: spec.seed,
            draw_index: m,
            x0_seed: seed,
            d_a0,
            d0: kernel.kernel_dim(),
            scn,
            sigma2: report.sigma2,
        });
        if (j as usize) >= cfg.estimators.fits_per_matrix {
            continue;
        }
        for &method in &cfg.estimators.methods {
            if method == Method::GradFitL1 && !gradfit_allowed {
                continue;
            }
            match select_hypers(
                method,
                &traj,
                Some(&sys.entries),
                &cfg.estimators.grid,
                &cfg.estimators.gradfit,
            ) {
                Ok(r) => out.estimates.push(EstimationRow::new(&sys, seed, &r)),
                Err(e) => {
                    out.fit_failed += 1;
                    out.failures
                        .push(format!("n={n} p={p} m={m} x0={j} {method}: {e}"));
                }
            }
        }
    }
    out
}

/// Runs one cell; matrices are processed in parallel on the current rayon
/// pool and reassembled in draw order.
pub fn run_cell(cfg: &SweepConfig, n: usize, p: f64) -> Result<CellResult> {
    let spec = EnsembleSpec::new(cfg.ensemble, n, p, cell_seed(cfg.master_seed, n, p))?;
    let outcomes: Vec<MatrixOutcome> = (0..cfg.matrices_per_cell as u64)
        .into_par_iter()
        .map(|m| run_matrix(cfg, &spec, m))
        .collect();
    let mut cell = CellResult {
        n,
        p,
        config_hash: cfg.config_hash(),
        idents: Vec::new(),
        trajectories: Vec::new(),
        estimates: Vec::new(),
        n_rejected: 0,
        n_failed: 0,
        traj_failed: 0,
        fit_failed: 0,
        failures: Vec::new(),
    };
    for o in outcomes {
        cell.idents.extend(o.ident);
        cell.trajectories.extend(o.trajectories);
        cell.estimates.extend(o.estimates);
        cell.n_rejected += o.rejected as usize;
        cell.n_failed += o.failed as usize;
        cell.traj_failed += o.traj_failed;
        cell.fit_failed += o.fit_failed;
        cell.failures.extend(o.failures);
    }
    Ok(cell)
}

fn checkpoint_path(dir: &Path, n: usize, p: f64) -> PathBuf {
    dir.join("cells").join(format!("n{n}_p{p}.json"))
}

fn load_cell(path: &Path, hash: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.config_hash == hash).then_some(cell)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    run_sweep_with(cfg, |_| {})
}

/// Runs (or resumes) a sweep and writes the aggregate tables. `progress` is
/// called once per finished cell.
pub fn run_sweep_with<F: FnMut(&CellResult)>(
    cfg: &SweepConfig,
    mut progress: F,
) -> Result<SweepResult> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    fs::create_dir_all(cfg.output_dir.join("cells"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut cells = Vec::new();
    for (n, p) in cfg.cells() {
        let path = checkpoint_path(&cfg.output_dir, n, p);
        let cell = match load_cell(&path, &hash) {
            Some(c) => c,
            None => {
                let c = pool.install(|| run_cell(cfg, n, p))?;
                write_atomic(&path, &serde_json::to_vec(&c)?)?;
                c
            }
        };
        progress(&cell);
        cells.push(cell);
    }
    let result = SweepResult { cells };
    super::tables::aggregate_to_tables(&result, cfg, &cfg.output_dir)?;
    Ok(result)
}

/// Checkpointed cells under `dir/cells` written with the given config hash,
/// in `(n, p)` order.
pub fn load_checkpoints(dir: &Path, hash: &str) -> Result<SweepResult> {
    let mut cells = Vec::new();
    let cell_dir = dir.join("cells");
    if cell_dir.is_dir() {
        for entry in fs::read_dir(cell_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(c) = load_cell(&path, hash) {
                    cells.push(c);
                }
            }
        }
    }
    cells.sort_by(|a, b| a.n.cmp(&b.n).then(a.p.total_cmp(&b.p)));
    Ok(SweepResult { cells })
}

/// Bottom and top `fraction` of the rows by `σ₂`, as indices into `rows`;
/// ties are broken by draw index.
pub fn sigma2_subgroups(rows: &[IdentRow], fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    const MIN_ROWS: usize = 20;
    if rows.len() < MIN_ROWS {
        return Err(Error::SubgroupTooSmall {
            needed: MIN_ROWS,
            found: rows.len(),
        });
    }
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "subgroup fraction must be in (0, 0.5], got {fraction}"
        )));
    }
    let size = ((rows.len() as f64 * fraction + 1e-9).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .sigma2
            .total_cmp(&rows[b].sigma2)
            .then(rows[a].draw_index.cmp(&rows[b].draw_index))
    });
    let low = order[..size].to_vec();
    let high = order[order.len() - size..].to_vec();
    Ok((low, high))
}
