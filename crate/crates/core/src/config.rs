//! File-backed run configuration (TOML). Unknown keys are fatal everywhere —
//! a typo in a config must never silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random consumer derives a named substream from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            baseline: BaselineConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Observations CSV (`lon,lat,age_bp,value_c,source`).
    pub observations: PathBuf,
    /// Source tag of the simulation used for leave-one-slice-out splits.
    pub simulation_id: String,
    /// Gridded mid-Holocene fields the baseline is fitted on.
    pub baseline_slices: Vec<SliceRef>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            observations: PathBuf::from("observations.csv"),
            simulation_id: "sim".into(),
            baseline_slices: Vec::new(),
        }
    }
}

/// Gridded slice CSV (`lon,lat,value_c`) plus its sidecar metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRef {
    pub path: PathBuf,
    pub age_bp: f64,
    pub simulation_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Dense RBF solves are cubic; larger slices are subsampled to this many
    /// nodes.
    pub max_nodes: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { max_nodes: 5000 }
    }
}

/// Shape of the generated synthetic corpus: a regular simulation grid over
/// several time slices plus scattered pollen-like records, all drawn from
/// the model's own prior with known hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    /// Simulation slice ages, years BP.
    pub sim_ages: Vec<f64>,
    pub n_pollen_sites: usize,
    pub pollen_ages: Vec<f64>,
    pub ell_lon: f64,
    pub ell_lat: f64,
    /// ka.
    pub ell_t: f64,
    pub sigma_f: f64,
    pub sigma: f64,
    /// Constant part of the spatial baseline field.
    pub baseline_const: f64,
    /// Per-degree-latitude slope of the baseline field.
    pub baseline_lat_slope: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_nx: 12,
            grid_ny: 10,
            lon_range: (-10.0, 40.0),
            lat_range: (35.0, 70.0),
            sim_ages: vec![6000.0, 9000.0, 12000.0, 15000.0, 18000.0, 21000.0],
            n_pollen_sites: 60,
            pollen_ages: vec![1000.0, 4000.0, 7000.0, 10000.0, 13000.0],
            ell_lon: 19.6,
            ell_lat: 13.2,
            ell_t: 9.9,
            sigma_f: 2.9,
            sigma: 1.6,
            baseline_const: 8.0,
            baseline_lat_slope: -0.25,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization; stored in checkpoints so a
    /// checkpoint can be matched to the run that produced it.
    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
