use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sparseid::ensemble::{self, EnsembleKind, EnsembleSpec, MatrixRecord, SystemMatrix};
use sparseid::estimators::{self, GradFitConfig, HyperGrid, Method};
use sparseid::harness::{self, Profile, SweepConfig};
use sparseid::integrator::{self, SolveConfig, Trajectory};
use sparseid::{spectral, traj_metrics, DMatrix, DVector, Error};

#[derive(Parser, Debug)]
#[command(
    name = "sparseid",
    version,
    about = "Identifiability analysis of sparse linear ODE systems"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Random seed (master seed for sweeps)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration profile
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Singular-value tolerance for rank decisions [default: 1e-6, or the
    /// sweep configuration's value]
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    SparseContinuous,
    FixedZerosPerRow,
    NoZeroRows,
    NoZeroColumns,
}

impl From<KindArg> for EnsembleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::SparseContinuous => EnsembleKind::SparseContinuous,
            KindArg::FixedZerosPerRow => EnsembleKind::FixedZerosPerRow,
            KindArg::NoZeroRows => EnsembleKind::NoZeroRows,
            KindArg::NoZeroColumns => EnsembleKind::NoZeroColumns,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Rk45,
    Expm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Stlsq,
    GradfitL1,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Stlsq => Method::Stlsq,
            MethodArg::GradfitL1 => Method::GradFitL1,
        }
    }
}

#[derive(Args, Debug)]
struct MatrixInput {
    /// Matrix file: JSON record, array of records, or nested rows
    #[arg(long)]
    matrix: PathBuf,
    /// Which matrix to use when the file holds several
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Integration horizon
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    /// Number of samples including both endpoints
    #[arg(long, default_value_t = 512)]
    steps: usize,
    /// Relative tolerance
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    /// Absolute tolerance
    #[arg(long, default_value_t = 1e-9)]
    atol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw random system matrices
    Gen {
        /// Dimension
        #[arg(long)]
        n: usize,
        /// Probability of a zero entry
        #[arg(long)]
        p: f64,
        /// Matrix ensemble
        #[arg(long, value_enum, default_value_t = KindArg::SparseContinuous)]
        kind: KindArg,
        /// Number of matrices
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// First draw index
        #[arg(long, default_value_t = 0)]
        start: u64,
    },
    /// Identifiability report for matrices in a file
    Analyze {
        /// Matrix file: JSON record, array of records, or nested rows
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Solve the initial value problem on a homogeneous grid
    Solve {
        #[command(flatten)]
        input: MatrixInput,
        /// Comma-separated initial condition (default: unit-sphere draw from --seed)
        #[arg(long)]
        x0: Option<String>,
        /// Solver
        #[arg(long, value_enum, default_value_t = SolverArg::Rk45)]
        solver: SolverArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Trajectory metrics, divergence bound and closeness horizon
    Metrics {
        #[command(flatten)]
        input: MatrixInput,
        /// Trajectory CSV written by `solve`
        #[arg(long)]
        trajectory: PathBuf,
        /// Times at which to evaluate the divergence bound for a confusable system
        #[arg(long, value_delimiter = ',')]
        bound_t: Vec<f64>,
        /// Closeness level for the horizon estimate
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Estimate the system matrix from a trajectory
    Fit {
        /// Trajectory CSV written by `solve`
        #[arg(long)]
        trajectory: PathBuf,
        /// Estimator
        #[arg(long, value_enum, default_value_t = MethodArg::Stlsq)]
        method: MethodArg,
        /// Generating matrix, for Hamming distance and sparsity-matched selection
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Iteration budget for trajectory matching
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
    },
    /// Evaluate the closed-form probability bounds
    Bound {
        /// Dimension
        #[arg(long)]
        n: usize,
        /// Probability of a zero entry
        #[arg(long)]
        p: f64,
        /// Kernel dimension for the expected initial-condition distance
        #[arg(long)]
        d0: Option<usize>,
    },
    /// Run a Monte Carlo sweep and write aggregate tables
    Sweep {
        /// TOML configuration (default: the selected profile)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild aggregate tables from checkpointed cells
    Report {
        /// TOML configuration (default: the selected profile)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_io() {
        4
    } else {
        2
    }
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("NaN")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn rows(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| json!(m.row(i).iter().collect::<Vec<_>>()))
            .collect(),
    )
}

fn print_json(v: &Value) -> sparseid::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn read_matrices(path: &Path) -> sparseid::Result<Vec<DMatrix<f64>>> {
    let v: Value = serde_json::from_reader(io::BufReader::new(File::open(path)?))?;
    let parse_one = |v: &Value| -> sparseid::Result<DMatrix<f64>> {
        if v.is_object() {
            let rec: MatrixRecord = serde_json::from_value(v.clone())?;
            return Ok(SystemMatrix::from_record(&rec)?.entries);
        }
        let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("matrix must be square".into()));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    };
    match &v {
        Value::Array(items) if items.first().is_some_and(|f| f.is_object()) => {
            items.iter().map(parse_one).collect()
        }
        _ => Ok(vec![parse_one(&v)?]),
    }
}

fn read_matrix(input: &MatrixInput) -> sparseid::Result<DMatrix<f64>> {
    let mut all = read_matrices(&input.matrix)?;
    if input.index >= all.len() {
        return Err(Error::InvalidInput(format!(
            "index {} out of range ({} matrices)",
            input.index,
            all.len()
        )));
    }
    Ok(all.swap_remove(input.index))
}

fn read_trajectory(path: &Path) -> sparseid::Result<Trajectory> {
    Trajectory::read_csv(io::BufReader::new(File::open(path)?))
}

fn sweep_config(common: &Common, config: &Option<PathBuf>) -> sparseid::Result<SweepConfig> {
    let mut cfg = match config {
        Some(path) => SweepConfig::from_file(path)?,
        None => SweepConfig::profile(common.profile.into()),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.jobs = common.jobs;
    if let Some(tol) = common.tol {
        cfg.tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> sparseid::Result<()> {
    let c = &cli.common;
    let seed = c.seed.unwrap_or(0);
    let tol = c.tol.unwrap_or(spectral::DEFAULT_SVD_TOL);
    match cli.command {
        Command::Gen {
            n,
            p,
            kind,
            count,
            start,
        } => {
            let spec = EnsembleSpec::new(kind.into(), n, p, seed)?;
            let mats = (start..start + count)
                .map(|k| ensemble::draw(&spec, k))
                .collect::<sparseid::Result<Vec<_>>>()?;
            match &c.out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    for (i, m) in mats.iter().enumerate() {
                        m.write_csv(&mut w, i == 0)?;
                    }
                    w.flush()?;
                    print_json(&json!({"written": path, "count": mats.len()}))
                }
                None => {
                    let recs: Vec<MatrixRecord> =
                        mats.iter().map(SystemMatrix::to_record).collect();
                    print_json(&serde_json::to_value(recs)?)
                }
            }
        }
        Command::Analyze { matrix } => {
            let reports = read_matrices(&matrix)?
                .iter()
                .map(|a| {
                    let r = spectral::analyze(a, tol)?;
                    let mut v = serde_json::to_value(&r)?;
                    v["cond_i"] = json!(r.cond_i());
                    v["cond_ii"] = json!(r.cond_ii());
                    v["cond_iii"] = json!(r.cond_iii());
                    Ok(v)
                })
                .collect::<sparseid::Result<Vec<_>>>()?;
            let out = if reports.len() == 1 {
                reports.into_iter().next().unwrap()
            } else {
                Value::Array(reports)
            };
            print_json(&out)
        }
        Command::Solve {
            input,
            x0,
            solver,
            grid,
        } => {
            let a = read_matrix(&input)?;
            let x0 = match x0 {
                Some(s) => DVector::from_vec(
                    s.split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::InvalidInput(format!("bad x0 component '{t}'")))
                        })
                        .collect::<sparseid::Result<Vec<_>>>()?,
                ),
                None => ensemble::draw_unit_sphere(a.nrows(), seed)?.values,
            };
            let cfg = SolveConfig {
                t_end: grid.t_end,
                steps: grid.steps,
                rtol: grid.rtol,
                atol: grid.atol,
            };
            let traj = match solver {
                SolverArg::Rk45 => integrator::solve_rk45(&a, &x0, &cfg)?,
                SolverArg::Expm => integrator::solve_expm(&a, &x0, &cfg)?,
            };
            match &c.out {
                Some(path) => {
                    traj.write_csv(BufWriter::new(File::create(path)?))?;
                    print_json(&serde_json::to_value(traj.meta())?)
                }
                None => traj.write_csv(io::stdout().lock()),
            }
        }
        Command::Metrics {
            input,
            trajectory,
            bound_t,
            epsilon,
        } => {
            let a = read_matrix(&input)?;
            let traj = read_trajectory(&trajectory)?;
            let m = traj_metrics::trajectory_metrics(&a, &traj, tol)?;
            let mut out = json!({
                "d_a0": num(m.d_a0),
                "kernel_dim": m.d0,
                "scn": num(m.scn),
                "gram": rows(&m.gram),
            });
            if m.d0 > 0 && m.d0 < a.nrows() {
                out["expected_d_a0"] =
                    num(traj_metrics::expected_kernel_distance(a.nrows(), m.d0)?);
            }
            if !bound_t.is_empty() || epsilon.is_some() {
                let ap = traj_metrics::confusable_system(&a, tol, seed)?;
                let x0 = traj.x0();
                let mut bounds = Vec::new();
                for t in bound_t {
                    let b = traj_metrics::divergence_bound(&a, &ap, &x0, t, tol)?;
                    bounds.push(json!({
                        "t": t,
                        "c": num(b.c),
                        "bound": num(b.bound),
                        "measured": num(traj_metrics::measured_divergence(&a, &ap, &x0, t)?),
                    }));
                }
                out["confusable"] = rows(&ap);
                out["bounds"] = Value::Array(bounds);
                if let Some(eps) = epsilon {
                    let h = traj_metrics::epsilon_horizon(&a, &ap, &x0, eps, tol)?;
                    out["horizon"] = json!({
                        "epsilon": eps,
                        "horizon_t": num(h.horizon_t),
                        "alpha": num(h.alpha),
                        "m": num(h.m),
                    });
                }
            }
            print_json(&out)
        }
        Command::Fit {
            trajectory,
            method,
            matrix,
            max_iters,
        } => {
            let traj = read_trajectory(&trajectory)?;
            let a_true = match &matrix {
                Some(path) => Some(read_matrix(&MatrixInput {
                    matrix: path.clone(),
                    index: 0,
                })?),
                None => None,
            };
            let gf = GradFitConfig {
                max_iters,
                ..Default::default()
            };
            let r = estimators::select_hypers(
                method.into(),
                &traj,
                a_true.as_ref(),
                &HyperGrid::default(),
                &gf,
            )?;
            print_json(&json!({
                "method": r.method,
                "a_hat": rows(&r.a_hat),
                "hyper": r.hyper,
                "r2": num(r.r2),
                "mse": num(r.mse),
                "well_fit": r.well_fit,
                "hamming": r.hamming,
                "converged": r.converged,
            }))
        }
        Command::Bound { n, p, d0 } => {
            let b = spectral::bound_eval(n, p)?;
            let mut out = json!({
                "n": n,
                "p": p,
                "lower_bound": num(b.lower_bound),
                "p_critical": b.p_critical.map(num),
            });
            if let Some(d0) = d0 {
                out["d0"] = json!(d0);
                out["expected_d_a0"] = num(traj_metrics::expected_kernel_distance(n, d0)?);
            }
            print_json(&out)
        }
        Command::Sweep { config } => {
            let cfg = sweep_config(c, &config)?;
            let total = cfg.cells().count();
            let mut done = 0;
            let res = harness::run_sweep_with(&cfg, |cell| {
                done += 1;
                eprintln!(
                    "[{done}/{total}] n={} p={} matrices={}",
                    cell.n,
                    cell.p,
                    cell.idents.len()
                );
            })?;
            let failures: usize = res.cells.iter().map(|c| c.failures.len()).sum();
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "config_hash": cfg.config_hash(),
                "cells": res.cells.len(),
                "sample_failures": failures,
            }))
        }
        Command::Report { config } => {
            let cfg = sweep_config(c, &config)?;
            let res = harness::load_checkpoints(&cfg.output_dir, &cfg.config_hash())?;
            let manifest = harness::aggregate_to_tables(&res, &cfg, &cfg.output_dir)?;
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "config_hash": manifest.config_hash,
                "cells": manifest.cells,
                "expected_cells": cfg.cells().count(),
                "files": manifest.files,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
