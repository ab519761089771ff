use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleKind;
use crate::estimators::{GradFitConfig, HyperGrid, Method};
use crate::integrator::SolveConfig;
use crate::spectral::DEFAULT_SVD_TOL;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small grid for a laptop run.
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub methods: Vec<Method>,
    /// Initial conditions per matrix that are also fitted.
    pub fits_per_matrix: usize,
    /// Cap on matrices per cell fitted by trajectory matching.
    pub gradfit_matrices: Option<usize>,
    pub grid: HyperGrid,
    pub gradfit: GradFitConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            methods: Method::ALL.to_vec(),
            fits_per_matrix: 1,
            gradfit_matrices: None,
            grid: HyperGrid::default(),
            gradfit: GradFitConfig::default(),
        }
    }
}

/// Sweep configuration, read from TOML.
///
/// ```toml
/// dims = [3, 5, 10]
/// sparsities = [0.1, 0.5, 0.9]
/// matrices_per_cell = 50
/// x0_per_matrix = 20
/// ensemble = "sparse_continuous"
/// master_seed = 1
/// tol = 1e-6
/// output_dir = "out"
/// jobs = 4
///
/// [solver]
/// t_end = 1.0
/// steps = 512
/// rtol = 1e-6
/// atol = 1e-9
///
/// [estimators]
/// methods = ["stlsq", "gradfit_l1"]
/// fits_per_matrix = 1
/// gradfit_matrices = 2
///
/// [estimators.gradfit]
/// max_iters = 300
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub matrices_per_cell: usize,
    pub x0_per_matrix: usize,
    pub ensemble: EnsembleKind,
    pub solver: SolveConfig,
    pub estimators: EstimatorSettings,
    pub master_seed: u64,
    /// Singular-value tolerance for rank and kernel decisions.
    pub tol: f64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means all cores. Does not affect results.
    pub jobs: usize,
}

fn default_sparsities() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig::paper()
    }
}

impl SweepConfig {
    pub fn paper() -> Self {
        SweepConfig {
            dims: vec![3, 5, 10, 20, 30, 40, 50],
            sparsities: default_sparsities(),
            matrices_per_cell: 100,
            x0_per_matrix: 100,
            ensemble: EnsembleKind::SparseContinuous,
            solver: SolveConfig::default(),
            estimators: EstimatorSettings::default(),
            master_seed: 0,
            tol: DEFAULT_SVD_TOL,
            output_dir: PathBuf::from("sweep-out"),
            jobs: 0,
        }
    }

    pub fn desk() -> Self {
        SweepConfig {
            dims: vec![3, 5, 10, 20],
            matrices_per_cell: 50,
            x0_per_matrix: 20,
            estimators: EstimatorSettings {
                gradfit_matrices: Some(2),
                gradfit: GradFitConfig {
                    max_iters: 300,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..SweepConfig::paper()
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => SweepConfig::desk(),
            Profile::Paper => SweepConfig::paper(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.dims.is_empty() || self.sparsities.is_empty() {
            return fail("dims and sparsities must be nonempty");
        }
        if self.dims.contains(&0) {
            return fail("dimensions must be positive");
        }
        if self.sparsities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("sparsities must lie in [0, 1]");
        }
        if self.matrices_per_cell == 0 || self.x0_per_matrix == 0 {
            return fail("matrices_per_cell and x0_per_matrix must be at least 1");
        }
        if self.estimators.fits_per_matrix > self.x0_per_matrix {
            return fail("fits_per_matrix cannot exceed x0_per_matrix");
        }
        if !(self.tol > 0.0) {
            return fail("tol must be positive");
        }
        self.solver.validate()?;
        for &m in &self.estimators.methods {
            self.estimators.grid.validate(m)?;
        }
        Ok(())
    }

    /// SHA-256 of everything that influences results (excludes `jobs` and
    /// `output_dir`).
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.jobs = 0;
        canon.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.dims
            .iter()
            .flat_map(move |&n| self.sparsities.iter().map(move |&p| (n, p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        SweepConfig::desk().validate().unwrap();
        SweepConfig::paper().validate().unwrap();
        assert_eq!(SweepConfig::paper().cells().count(), 77);
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let cfg = SweepConfig::desk();
        let back = SweepConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial =
            SweepConfig::from_toml_str("dims = [4]\nsparsities = [0.5]\nmaster_seed = 7\n")
                .unwrap();
        assert_eq!(partial.dims, vec![4]);
        assert_eq!(partial.matrices_per_cell, 100);
        assert!(SweepConfig::from_toml_str("dims = []").is_err());
        assert!(SweepConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_ignores_jobs_and_output() {
        let a = SweepConfig::desk();
        let mut b = a.clone();
        b.jobs = 8;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.master_seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
