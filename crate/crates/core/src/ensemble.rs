//! Random system matrices and initial conditions.
//!
//! All generators are pure functions of `(spec.seed, draw_index)`; masked
//! entries are stored as exact `0.0` so that zero patterns survive
//! downstream binarisation and matching.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Rejection cap for the constrained ensembles.
pub const DEFAULT_MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Entry-wise Bernoulli(1 - p) mask times a standard normal.
    SparseContinuous,
    /// Exactly `floor(n p)` zeros per row at uniformly random positions.
    FixedZerosPerRow,
    /// Sparse-continuous, rejecting draws with an all-zero row.
    NoZeroRows,
    /// Sparse-continuous, rejecting draws with an all-zero column.
    NoZeroColumns,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 4] = [
        EnsembleKind::SparseContinuous,
        EnsembleKind::FixedZerosPerRow,
        EnsembleKind::NoZeroRows,
        EnsembleKind::NoZeroColumns,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::SparseContinuous => "sparse_continuous",
            EnsembleKind::FixedZerosPerRow => "fixed_zeros_per_row",
            EnsembleKind::NoZeroRows => "no_zero_rows",
            EnsembleKind::NoZeroColumns => "no_zero_columns",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        EnsembleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown ensemble kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub dim: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, dim: usize, sparsity: f64, seed: u64) -> Result<Self> {
        let spec = EnsembleSpec {
            kind,
            dim,
            sparsity,
            seed,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sparse_continuous(dim: usize, sparsity: f64, seed: u64) -> Result<Self> {
        Self::new(EnsembleKind::SparseContinuous, dim, sparsity, seed)
    }

    pub fn with_max_attempts(mut self, max_attempts: usize) -> Result<Self> {
        self.max_attempts = max_attempts;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::InvalidInput(format!(
                "sparsity {} outside [0, 1]",
                self.sparsity
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidInput("max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// `floor(n p)`, guarded against products like `0.29 * 100 = 28.999...`.
    pub fn zeros_per_row(&self) -> usize {
        let raw = self.dim as f64 * self.sparsity;
        ((raw + 1e-9).floor() as usize).min(self.dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    pub entries: DMatrix<f64>,
    pub spec: EnsembleSpec,
    pub draw_index: u64,
}

/// JSON form of a [`SystemMatrix`]; `entries` are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub kind: EnsembleKind,
    pub dim: usize,
    pub p: f64,
    pub seed: u64,
    pub draw_index: u64,
    pub entries: Vec<f64>,
}

impl SystemMatrix {
    /// Wraps user-provided entries, e.g. a matrix read from disk.
    pub fn from_entries(
        entries: DMatrix<f64>,
        spec: EnsembleSpec,
        draw_index: u64,
    ) -> Result<Self> {
        if !entries.is_square() || entries.nrows() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: entries.nrows(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(SystemMatrix {
            entries,
            spec,
            draw_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn to_record(&self) -> MatrixRecord {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(self.entries[(i, j)]);
            }
        }
        MatrixRecord {
            kind: self.spec.kind,
            dim: n,
            p: self.spec.sparsity,
            seed: self.spec.seed,
            draw_index: self.draw_index,
            entries,
        }
    }

    pub fn from_record(rec: &MatrixRecord) -> Result<Self> {
        if rec.entries.len() != rec.dim * rec.dim {
            return Err(Error::DimensionMismatch {
                expected: rec.dim * rec.dim,
                found: rec.entries.len(),
            });
        }
        let spec = EnsembleSpec::new(rec.kind, rec.dim, rec.p, rec.seed)?;
        let entries = DMatrix::from_row_slice(rec.dim, rec.dim, &rec.entries);
        Self::from_entries(entries, spec, rec.draw_index)
    }

    /// One CSV row per entry: `kind,dim,p,seed,draw_index,i,j,value`.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        if header {
            w.write_record(["kind", "dim", "p", "seed", "draw_index", "i", "j", "value"])?;
        }
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                w.write_record(&[
                    self.spec.kind.to_string(),
                    n.to_string(),
                    self.spec.sparsity.to_string(),
                    self.spec.seed.to_string(),
                    self.draw_index.to_string(),
                    i.to_string(),
                    j.to_string(),
                    self.entries[(i, j)].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn has_zero_row(&self) -> bool {
        self.entries.row_iter().any(|r| r.iter().all(|&v| v == 0.0))
    }

    pub fn has_zero_column(&self) -> bool {
        self.entries
            .column_iter()
            .any(|c| c.iter().all(|&v| v == 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialCondition {
    pub values: DVector<f64>,
    pub seed: u64,
}

/// Draws according to `spec.kind`.
pub fn draw(spec: &EnsembleSpec, draw_index: u64) -> Result<SystemMatrix> {
    spec.validate()?;
    match spec.kind {
        EnsembleKind::SparseContinuous => Ok(draw_sparse_continuous(spec, draw_index)),
        EnsembleKind::FixedZerosPerRow => Ok(draw_fixed_zeros_per_row(spec, draw_index)),
        EnsembleKind::NoZeroRows | EnsembleKind::NoZeroColumns => {
            draw_constrained(spec, draw_index)
        }
    }
}

fn fill_sparse_continuous(rng: &mut StreamRng, n: usize, p: f64) -> DMatrix<f64> {
    // Both variates are always consumed so the stream layout does not depend on p.
    DMatrix::from_fn(n, n, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        let zero = rng.random_bool(p);
        if zero {
            0.0
        } else {
            g
        }
    })
}

pub fn draw_sparse_continuous(spec: &EnsembleSpec, draw_index: u64) -> SystemMatrix {
    let mut rng = rng::stream(spec.seed, draw_index);
    let entries = fill_sparse_continuous(&mut rng, spec.dim, spec.sparsity);
    SystemMatrix {
        entries,
        spec: *spec,
        draw_index,
    }
}

pub fn draw_fixed_zeros_per_row(spec: &EnsembleSpec, draw_index: u64) -> SystemMatrix {
    let n = spec.dim;
    let zeros = spec.zeros_per_row();
    let mut rng = rng::stream(spec.seed, draw_index);
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut keep = vec![true; n];
        for j in rand::seq::index::sample(&mut rng, n, zeros) {
            keep[j] = false;
        }
        for (j, &k) in keep.iter().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            if k {
                entries[(i, j)] = g;
            }
        }
    }
    SystemMatrix {
        entries,
        spec: *spec,
        draw_index,
    }
}

/// Rejection sampling for [`EnsembleKind::NoZeroRows`] / [`EnsembleKind::NoZeroColumns`].
pub fn draw_constrained(spec: &EnsembleSpec, draw_index: u64) -> Result<SystemMatrix> {
    let mut rng = rng::stream(spec.seed, draw_index);
    for _ in 0..spec.max_attempts {
        let entries = fill_sparse_continuous(&mut rng, spec.dim, spec.sparsity);
        let candidate = SystemMatrix {
            entries,
            spec: *spec,
            draw_index,
        };
        let ok = match spec.kind {
            EnsembleKind::NoZeroRows => !candidate.has_zero_row(),
            EnsembleKind::NoZeroColumns => !candidate.has_zero_column(),
            _ => true,
        };
        if ok {
            return Ok(candidate);
        }
    }
    Err(Error::Rejection {
        attempts: spec.max_attempts,
    })
}

/// Uniform draw from the unit sphere `S^{n-1}` (normalised Gaussian).
pub fn draw_unit_sphere(dim: usize, seed: u64) -> Result<InitialCondition> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, 0);
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm >= 1e-12 {
            return Ok(InitialCondition {
                values: v / norm,
                seed,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: EnsembleKind, n: usize, p: f64) -> EnsembleSpec {
        EnsembleSpec::new(kind, n, p, 42).unwrap()
    }

    #[test]
    fn full_sparsity_gives_zero_matrix() {
        let m = draw_sparse_continuous(&spec(EnsembleKind::SparseContinuous, 4, 1.0), 0);
        assert!(m.entries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_sparsity_gives_dense_matrix() {
        let m = draw_sparse_continuous(&spec(EnsembleKind::SparseContinuous, 3, 0.0), 0);
        assert!(m.entries.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn zero_rate_matches_bernoulli_mean() {
        let s = spec(EnsembleKind::SparseContinuous, 2, 0.5);
        let draws = 100_000;
        let zeros: usize = (0..draws)
            .map(|k| {
                draw_sparse_continuous(&s, k)
                    .entries
                    .iter()
                    .filter(|&&v| v == 0.0)
                    .count()
            })
            .sum();
        let frac = zeros as f64 / (4 * draws) as f64;
        assert!((frac - 0.5).abs() < 0.01, "zero fraction {frac}");
    }

    #[test]
    fn fixed_zeros_edge_cases() {
        let m = draw_fixed_zeros_per_row(&spec(EnsembleKind::FixedZerosPerRow, 3, 0.0), 1);
        assert!(m.entries.iter().all(|&v| v != 0.0));
        let m = draw_fixed_zeros_per_row(&spec(EnsembleKind::FixedZerosPerRow, 3, 1.0), 1);
        assert!(m.entries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_zeros_positions_are_uniform() {
        let s = spec(EnsembleKind::FixedZerosPerRow, 10, 0.5);
        let draws = 4000;
        let mut counts = vec![0usize; 10];
        for k in 0..draws {
            let m = draw_fixed_zeros_per_row(&s, k);
            for row in m.entries.row_iter() {
                assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 5);
            }
            for (j, c) in counts.iter_mut().enumerate() {
                *c += (0..10).filter(|&i| m.entries[(i, j)] == 0.0).count();
            }
        }
        // each position is zero with probability 1/2
        for c in counts {
            let frac = c as f64 / (draws as f64 * 10.0);
            assert!((frac - 0.5).abs() < 0.02, "marginal {frac}");
        }
    }

    #[test]
    fn zeros_per_row_guards_rounding() {
        let s = spec(EnsembleKind::FixedZerosPerRow, 100, 0.29);
        assert_eq!(s.zeros_per_row(), 29);
    }

    #[test]
    fn constrained_rejects_hopeless_cells() {
        let s = spec(EnsembleKind::NoZeroRows, 3, 0.99);
        let rejected = (0..20)
            .filter(|&k| draw_constrained(&s, k).is_err())
            .count();
        assert!(rejected >= 19);
    }

    #[test]
    fn constrained_accepts_easy_cells() {
        for kind in [EnsembleKind::NoZeroRows, EnsembleKind::NoZeroColumns] {
            let s = spec(kind, 5, 0.1);
            for k in 0..50 {
                let m = draw_constrained(&s, k).unwrap();
                assert!(!m.has_zero_row() || kind == EnsembleKind::NoZeroColumns);
                assert!(!m.has_zero_column() || kind == EnsembleKind::NoZeroRows);
            }
            let s0 = spec(kind, 4, 0.0);
            assert!(draw_constrained(&s0, 0).is_ok());
        }
    }

    #[test]
    fn unit_sphere_scalar_and_norm() {
        let x = draw_unit_sphere(1, 3).unwrap();
        assert_eq!(x.values[0].abs(), 1.0);
        for seed in 0..50 {
            let x = draw_unit_sphere(7, seed).unwrap();
            assert!((x.values.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_sphere_is_centered() {
        let draws = 100_000u64;
        let mut mean = DVector::<f64>::zeros(3);
        for seed in 0..draws {
            mean += draw_unit_sphere(3, seed).unwrap().values;
        }
        mean /= draws as f64;
        assert!(mean.amax() < 0.01, "{mean}");
    }

    #[test]
    fn draws_are_reproducible() {
        let s = spec(EnsembleKind::SparseContinuous, 6, 0.4);
        assert_eq!(draw(&s, 17).unwrap(), draw(&s, 17).unwrap());
        assert_ne!(draw(&s, 17).unwrap().entries, draw(&s, 18).unwrap().entries);
    }

    #[test]
    fn record_roundtrip() {
        let m = draw(&spec(EnsembleKind::SparseContinuous, 3, 0.3), 2).unwrap();
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let back: MatrixRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(SystemMatrix::from_record(&back).unwrap(), m);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(EnsembleSpec::new(EnsembleKind::SparseContinuous, 0, 0.5, 1).is_err());
        assert!(EnsembleSpec::new(EnsembleKind::SparseContinuous, 3, 1.5, 1).is_err());
        assert!("no-zero-rows".parse::<EnsembleKind>().is_ok());
        assert!("bogus".parse::<EnsembleKind>().is_err());
    }
}
