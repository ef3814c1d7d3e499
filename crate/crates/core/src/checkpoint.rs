//! Versioned text checkpoints. The payload is TOML whose floats use Rust's
//! shortest round-trip formatting, so save → load reproduces the model
//! bit-exactly and identical runs produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineModel, TpsInterpolant};
use crate::error::{Error, Result};
use crate::kernels::{SpatialParams, TemporalParams};
use crate::linalg::Mat;
use crate::sparse_gp::{build_prior_chain, BoundingBox, Hyperparams, InducingStructure};
use crate::state_space::{kalman_filter_smooth, GaussianSite};
use crate::training::FittedModel;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// SHA-256 of the run configuration that produced this model.
    pub config_sha256: String,
    pub jitter: f64,
    pub ell_lon: f64,
    pub ell_lat: f64,
    pub ell_t: f64,
    pub sigma_f: f64,
    pub sigma: f64,
    pub bbox: [f64; 4],
    pub z_s: Vec<[f64; 2]>,
    pub t_z: Vec<f64>,
    pub sites: Vec<SiteDump>,
    pub baseline: Vec<InterpDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteDump {
    pub lambda1: Vec<f64>,
    /// Row-major m_s × m_s.
    pub lambda2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpDump {
    pub centers: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub affine: [f64; 3],
}

/// Standalone baseline file written by preprocess and consumed by fit (the
/// final model embeds its own copy).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFile {
    pub interpolants: Vec<InterpDump>,
}

impl BaselineFile {
    pub fn from_model(baseline: &BaselineModel) -> Self {
        BaselineFile {
            interpolants: baseline
                .interpolants
                .iter()
                .map(|i| InterpDump {
                    centers: i.centers.iter().map(|&(a, b)| [a, b]).collect(),
                    weights: i.weights.clone(),
                    affine: i.affine,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<BaselineModel> {
        if self.interpolants.is_empty() {
            return Err(Error::Parse("baseline file has no interpolants".into()));
        }
        Ok(BaselineModel {
            interpolants: self
                .interpolants
                .iter()
                .map(|i| TpsInterpolant {
                    centers: i.centers.iter().map(|c| (c[0], c[1])).collect(),
                    weights: i.weights.clone(),
                    affine: i.affine,
                })
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("baseline serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

impl Checkpoint {
    pub fn from_model(model: &FittedModel, config_sha256: &str) -> Self {
        let h = &model.hyper;
        let bb = h.inducing.bounding_box;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_sha256: config_sha256.to_string(),
            jitter: model.jitter,
            ell_lon: h.spatial.ell_lon,
            ell_lat: h.spatial.ell_lat,
            ell_t: h.temporal.ell_t,
            sigma_f: h.temporal.sigma_f,
            sigma: h.noise_sigma,
            bbox: [bb.lon_min, bb.lon_max, bb.lat_min, bb.lat_max],
            z_s: h.inducing.z_s.iter().map(|&(a, b)| [a, b]).collect(),
            t_z: h.inducing.t_z.clone(),
            sites: model
                .state
                .sites
                .iter()
                .map(|s| SiteDump {
                    lambda1: s.lambda1.clone(),
                    lambda2: s.lambda2.as_slice().to_vec(),
                })
                .collect(),
            baseline: model
                .baseline
                .interpolants
                .iter()
                .map(|i| InterpDump {
                    centers: i.centers.iter().map(|&(a, b)| [a, b]).collect(),
                    weights: i.weights.clone(),
                    affine: i.affine,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let bbox = BoundingBox {
            lon_min: self.bbox[0],
            lon_max: self.bbox[1],
            lat_min: self.bbox[2],
            lat_max: self.bbox[3],
        };
        let inducing = InducingStructure::new(
            self.z_s.iter().map(|c| (c[0], c[1])).collect(),
            self.t_z.clone(),
            bbox,
        )?;
        let m_s = inducing.m_s();
        let hyper = Hyperparams::new(
            SpatialParams::new(self.ell_lon, self.ell_lat)?,
            TemporalParams::new(self.ell_t, self.sigma_f)?,
            self.sigma,
            inducing,
        )?;
        let sites: Vec<GaussianSite<f64>> = self
            .sites
            .iter()
            .map(|s| {
                if s.lambda1.len() != m_s || s.lambda2.len() != m_s * m_s {
                    return Err(Error::Parse("site dimension mismatch".into()));
                }
                Ok(GaussianSite {
                    lambda1: s.lambda1.clone(),
                    lambda2: Mat::from_fn(m_s, m_s, |i, j| s.lambda2[i * m_s + j]),
                })
            })
            .collect::<Result<_>>()?;
        if sites.len() != self.t_z.len() {
            return Err(Error::Parse("site count does not match knot count".into()));
        }
        let prior = build_prior_chain(&hyper, self.jitter)?;
        let cache = kalman_filter_smooth(&prior.chain, &sites)?;
        let baseline = BaselineModel {
            interpolants: self
                .baseline
                .iter()
                .map(|i| TpsInterpolant {
                    centers: i.centers.iter().map(|c| (c[0], c[1])).collect(),
                    weights: i.weights.clone(),
                    affine: i.affine,
                })
                .collect(),
        };
        if baseline.interpolants.is_empty() {
            return Err(Error::Parse("checkpoint has no baseline".into()));
        }
        Ok(FittedModel {
            hyper,
            state: crate::sparse_gp::VariationalState { sites, cache },
            baseline,
            jitter: self.jitter,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
