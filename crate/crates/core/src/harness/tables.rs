use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SweepConfig;
use super::sweep::{sigma2_subgroups, CellResult, SweepResult};
use crate::estimators::{Method, HAMMING_TOL, WELL_FIT_MSE, WELL_FIT_R2};
use crate::spectral::{critical_sparsity, unident_lower_bound};
use crate::stats::{mean, median, quantile, welch_one_sided, Direction};
use crate::traj_metrics::SCN_CAP;
use crate::Result;

pub const SCHEMA_VERSION: &str = "1.0.0";
const SUBGROUP_FRACTION: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub n: usize,
    pub p: f64,
    pub freq_i: f64,
    pub freq_ii: f64,
    pub freq_iii: f64,
    pub lower_bound: f64,
    pub n_valid: usize,
    pub n_rejected: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub p: f64,
    pub sigma2_mean: f64,
    pub sigma2_q25: f64,
    pub sigma2_median: f64,
    pub sigma2_q75: f64,
    pub d_a0_mean: f64,
    pub d_a0_median: f64,
    pub log10_scn_mean: f64,
    pub log10_scn_median: f64,
    pub scn_inf_frac: f64,
    pub n_traj: usize,
    pub traj_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub n: usize,
    pub p: f64,
    pub method: Method,
    /// Over well-fit estimates only.
    pub mean_hamming: f64,
    pub median_hamming: f64,
    pub n_wellfit: usize,
    pub n_fits: usize,
    pub fit_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub n: usize,
    pub p: f64,
    /// Grid point closest to the critical sparsity for this `n`.
    pub is_pstar: bool,
    pub metric: String,
    pub group: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// One-sided Welch p-value of the pair; empty when undefined.
    pub p_value: Option<f64>,
    /// `;`-separated sample values.
    pub values: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub package: String,
    pub version: String,
    pub config_hash: String,
    pub config: SweepConfig,
    pub cells: usize,
    pub files: Vec<String>,
    pub r2_pooling: String,
    pub well_fit_r2: f64,
    pub well_fit_mse: f64,
    pub hamming_tol: f64,
    pub scn_cap: f64,
    pub failures: Vec<String>,
}

/// `log10(SCN)`, with `+∞` mapped to `log10(SCN_CAP)`.
pub fn capped_log10_scn(scn: f64) -> f64 {
    scn.min(SCN_CAP).log10()
}

fn frac(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean(xs)
    }
}

pub fn contour_rows(result: &SweepResult) -> Vec<ContourRow> {
    result
        .cells
        .iter()
        .map(|c| {
            let v = c.idents.len();
            let count = |f: fn(&crate::spectral::IdentRow) -> bool| {
                c.idents.iter().filter(|r| f(r)).count()
            };
            ContourRow {
                n: c.n,
                p: c.p,
                freq_i: frac(count(|r| r.cond_i), v),
                freq_ii: frac(count(|r| r.cond_ii), v),
                freq_iii: frac(count(|r| r.cond_iii), v),
                lower_bound: unident_lower_bound(c.n, c.p).unwrap_or(f64::NAN),
                n_valid: v,
                n_rejected: c.n_rejected,
                n_failed: c.n_failed,
            }
        })
        .collect()
}

pub fn summary_rows(result: &SweepResult) -> Vec<SummaryRow> {
    result
        .cells
        .iter()
        .map(|c| {
            let s2: Vec<f64> = c.idents.iter().map(|r| r.sigma2).collect();
            let d: Vec<f64> = c.trajectories.iter().map(|r| r.d_a0).collect();
            let scn: Vec<f64> = c
                .trajectories
                .iter()
                .map(|r| capped_log10_scn(r.scn))
                .collect();
            let inf = c
                .trajectories
                .iter()
                .filter(|r| r.scn.is_infinite())
                .count();
            SummaryRow {
                n: c.n,
                p: c.p,
                sigma2_mean: mean_or_nan(&s2),
                sigma2_q25: quantile(&s2, 0.25),
                sigma2_median: median(&s2),
                sigma2_q75: quantile(&s2, 0.75),
                d_a0_mean: mean_or_nan(&d),
                d_a0_median: median(&d),
                log10_scn_mean: mean_or_nan(&scn),
                log10_scn_median: median(&scn),
                scn_inf_frac: frac(inf, scn.len()),
                n_traj: c.trajectories.len(),
                traj_failed: c.traj_failed,
            }
        })
        .collect()
}

pub fn heatmap_rows(result: &SweepResult, methods: &[Method]) -> Vec<HeatmapRow> {
    let mut rows = Vec::new();
    for c in &result.cells {
        for &m in methods {
            let fits: Vec<_> = c.estimates.iter().filter(|e| e.method == m).collect();
            let ham: Vec<f64> = fits
                .iter()
                .filter(|e| e.well_fit)
                .filter_map(|e| e.hamming)
                .collect();
            rows.push(HeatmapRow {
                n: c.n,
                p: c.p,
                method: m,
                mean_hamming: mean_or_nan(&ham),
                median_hamming: median(&ham),
                n_wellfit: ham.len(),
                n_fits: fits.len(),
                fit_failed: c.fit_failed,
            });
        }
    }
    rows
}

fn pstar_cells(result: &SweepResult) -> BTreeSet<(usize, u64)> {
    let dims: BTreeSet<usize> = result.cells.iter().map(|c| c.n).collect();
    let mut out = BTreeSet::new();
    for n in dims {
        let Ok(pc) = critical_sparsity(n) else {
            continue;
        };
        let best = result.cells.iter().filter(|c| c.n == n).min_by(|a, b| {
            (a.p - pc)
                .abs()
                .total_cmp(&(b.p - pc).abs())
                .then(a.p.total_cmp(&b.p))
        });
        if let Some(c) = best {
            out.insert((n, c.p.to_bits()));
        }
    }
    out
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// σ₂ subgroup comparisons per cell: log-SCN (`H1: max < min`) and `d_A0`
/// (`H1: min < max`), pooled over each group's trajectories.
pub fn subgroup_rows(result: &SweepResult) -> Vec<SubgroupRow> {
    let pstar = pstar_cells(result);
    let mut rows = Vec::new();
    for c in &result.cells {
        let Ok((lo, hi)) = sigma2_subgroups(&c.idents, SUBGROUP_FRACTION) else {
            continue;
        };
        let members = |idx: &[usize]| -> BTreeSet<u64> {
            idx.iter().map(|&i| c.idents[i].draw_index).collect()
        };
        let (lo, hi) = (members(&lo), members(&hi));
        let collect =
            |set: &BTreeSet<u64>, f: fn(&crate::traj_metrics::TrajMetricRow) -> f64| -> Vec<f64> {
                c.trajectories
                    .iter()
                    .filter(|t| set.contains(&t.draw_index))
                    .map(f)
                    .collect()
            };
        let metrics: [(&str, fn(&crate::traj_metrics::TrajMetricRow) -> f64, bool); 2] = [
            ("log10_scn", |t| capped_log10_scn(t.scn), true),
            ("d_a0", |t| t.d_a0, false),
        ];
        for (name, f, max_is_smaller) in metrics {
            let (vmin, vmax) = (collect(&lo, f), collect(&hi, f));
            let test = if max_is_smaller {
                welch_one_sided(&vmax, &vmin, Direction::Less)
            } else {
                welch_one_sided(&vmin, &vmax, Direction::Less)
            };
            let p_value = test.ok().map(|t| t.p_value);
            for (group, vals) in [("sigma2_min", &vmin), ("sigma2_max", &vmax)] {
                rows.push(SubgroupRow {
                    n: c.n,
                    p: c.p,
                    is_pstar: pstar.contains(&(c.n, c.p.to_bits())),
                    metric: name.to_string(),
                    group: group.to_string(),
                    count: vals.len(),
                    mean: mean_or_nan(vals),
                    median: median(vals),
                    p_value,
                    values: join(vals),
                });
            }
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    // explicit header so empty tables still carry their columns
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cells_flat<'a, T: 'a>(
    result: &'a SweepResult,
    f: impl Fn(&'a CellResult) -> &'a [T],
) -> Vec<&'a T> {
    result.cells.iter().flat_map(|c| f(c).iter()).collect()
}

/// Writes the aggregate and per-sample CSVs plus `manifest.json` into `dir`.
pub fn aggregate_to_tables(
    result: &SweepResult,
    cfg: &SweepConfig,
    dir: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&dir.join(name))?;
        files.push(name.to_string());
        Ok(())
    };
    emit("contour.csv", &|p| {
        write_csv(
            p,
            &contour_rows(result),
            &[
                "n",
                "p",
                "freq_i",
                "freq_ii",
                "freq_iii",
                "lower_bound",
                "n_valid",
                "n_rejected",
                "n_failed",
            ],
        )
    })?;
    emit("heatmap.csv", &|p| {
        write_csv(
            p,
            &heatmap_rows(result, &cfg.estimators.methods),
            &[
                "n",
                "p",
                "method",
                "mean_hamming",
                "median_hamming",
                "n_wellfit",
                "n_fits",
                "fit_failed",
            ],
        )
    })?;
    emit("subgroups.csv", &|p| {
        write_csv(
            p,
            &subgroup_rows(result),
            &[
                "n", "p", "is_pstar", "metric", "group", "count", "mean", "median", "p_value",
                "values",
            ],
        )
    })?;
    emit("summary.csv", &|p| {
        write_csv(
            p,
            &summary_rows(result),
            &[
                "n",
                "p",
                "sigma2_mean",
                "sigma2_q25",
                "sigma2_median",
                "sigma2_q75",
                "d_a0_mean",
                "d_a0_median",
                "log10_scn_mean",
                "log10_scn_median",
                "scn_inf_frac",
                "n_traj",
                "traj_failed",
            ],
        )
    })?;
    emit("identification.csv", &|p| {
        write_csv(
            p,
            &cells_flat(result, |c| &c.idents),
            &[
                "kind",
                "n",
                "p",
                "seed",
                "draw_index",
                "rank",
                "sigma2",
                "has_zero_eig",
                "cond_i",
                "cond_ii",
                "cond_iii",
                "match_lower",
                "struct_upper",
            ],
        )
    })?;
    emit("trajectories.csv", &|p| {
        write_csv(
            p,
            &cells_flat(result, |c| &c.trajectories),
            &[
                "n",
                "p",
                "matrix_seed",
                "draw_index",
                "x0_seed",
                "d_a0",
                "d0",
                "scn",
                "sigma2",
            ],
        )
    })?;
    emit("estimates.csv", &|p| {
        write_csv(
            p,
            &cells_flat(result, |c| &c.estimates),
            &[
                "method",
                "n",
                "p",
                "matrix_seed",
                "draw_index",
                "x0_seed",
                "threshold",
                "ridge",
                "l1",
                "fd_order",
                "iters",
                "r2",
                "mse",
                "well_fit",
                "hamming",
                "converged",
                "nnz_true",
                "nnz_hat",
            ],
        )
    })?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.config_hash(),
        config: cfg.clone(),
        cells: result.cells.len(),
        files,
        r2_pooling: "total_variance".to_string(),
        well_fit_r2: WELL_FIT_R2,
        well_fit_mse: WELL_FIT_MSE,
        hamming_tol: HAMMING_TOL,
        scn_cap: SCN_CAP,
        failures: result
            .cells
            .iter()
            .flat_map(|c| c.failures.iter().cloned())
            .collect(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
