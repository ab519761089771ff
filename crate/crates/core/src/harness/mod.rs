//! Seeded Monte Carlo sweeps over `(n, p)` grids.
//!
//! Each cell draws its matrices and initial conditions from seeds derived
//! from `(master_seed, n, p, matrix_index, x0_index)`, so results do not
//! depend on the number of worker threads. Finished cells are checkpointed
//! as JSON under `output_dir/cells/` and reused on the next run with the
//! same configuration.

mod config;
mod sweep;
mod tables;

pub use config::{EstimatorSettings, Profile, SweepConfig};
pub use sweep::{
    cell_seed, load_checkpoints, run_cell, run_sweep, run_sweep_with, sigma2_subgroups, x0_seed,
    CellResult, EstimationRow, SweepResult,
};
pub use tables::{
    aggregate_to_tables, capped_log10_scn, contour_rows, heatmap_rows, subgroup_rows, summary_rows,
    ContourRow, HeatmapRow, Manifest, SubgroupRow, SummaryRow, SCHEMA_VERSION,
};
