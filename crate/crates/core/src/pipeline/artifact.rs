use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use crate::dynamics::{assemble_fom, FomSystem};
use crate::error::{Error, Result};
use crate::generative::{CvaeModel, EpochRecord};
use crate::hyperreduction::EcswWeights;
use crate::inference::{InferenceReport, ParamInferenceModel};
use crate::io::{read_matrix, write_with_sidecar};
use crate::monitoring::FeatureExtractor;
use crate::reduction::GlobalBasis;

pub const ARTIFACT_VERSION: u32 = 1;

/// Wall-clock seconds of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Element-selection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcswSummary {
    pub selected: usize,
    pub total: usize,
    pub residual: f64,
    pub converged: bool,
    pub states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_train: usize,
    /// Truncation order of each training sample's local POD.
    pub local_orders: Vec<usize>,
    pub r: usize,
    pub r_tilde: usize,
    /// Training samples whose local basis could not be encoded.
    pub skipped: Vec<usize>,
    pub ecsw: EcswSummary,
    pub cvae: Vec<EpochRecord>,
    pub inference: InferenceReport,
    pub timings: Vec<StageTiming>,
    pub training_seconds: f64,
    pub mean_fom_seconds: f64,
}

/// Everything the online phase needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub version: u32,
    pub config: CampaignConfig,
    pub config_hash: String,
    pub global: GlobalBasis,
    /// Local-basis order.
    pub r: usize,
    pub weights: EcswWeights,
    pub extractor: FeatureExtractor,
    pub cvae: CvaeModel,
    pub inference: ParamInferenceModel,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config_hash: String,
    global_hash: String,
    r: usize,
    global_singular_values: Vec<f64>,
    extractor: FeatureExtractor,
}

impl ModelArtifact {
    /// Reference point of the tangent space: the leading `r` global modes.
    pub fn v0(&self) -> Result<DMatrix<f64>> {
        self.global.reference(self.r)
    }

    pub fn system(&self) -> Result<FomSystem> {
        assemble_fom(&self.config.fom)
    }

    /// Writes the artifact into `dir`, replacing any previous one. Files go to
    /// a sibling temporary directory first, which is renamed on success.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = sibling(dir, "tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let written = self.write_into(&tmp);
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        let hash = self.global.hash();
        write_with_sidecar(dir, "global_basis", &self.global.modes, "global_basis", vec![], None)?;
        let manifest = Manifest {
            version: self.version,
            config_hash: self.config_hash.clone(),
            global_hash: hash,
            r: self.r,
            global_singular_values: self.global.singular_values.clone(),
            extractor: self.extractor.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        fs::write(dir.join("ecsw.json"), serde_json::to_string_pretty(&self.weights)?)?;
        fs::write(dir.join("training_report.json"), serde_json::to_string_pretty(&self.report)?)?;
        self.cvae.save(dir)?;
        self.inference.save(dir)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(Error::ArtifactNotFound(dir.to_path_buf()));
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        if m.version != ARTIFACT_VERSION {
            return Err(Error::Config(format!("artifact version {} is not supported", m.version)));
        }
        let config: CampaignConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        if config.hash()? != m.config_hash {
            return Err(Error::Config("artifact configuration does not match its recorded hash".into()));
        }
        let global = GlobalBasis { modes: read_matrix(dir.join("global_basis.bin"))?, singular_values: m.global_singular_values };
        if global.hash() != m.global_hash {
            return Err(Error::Format("global basis does not match its recorded hash".into()));
        }
        let weights: EcswWeights = serde_json::from_str(&fs::read_to_string(dir.join("ecsw.json"))?)?;
        weights.check_basis(&global)?;
        Ok(ModelArtifact {
            version: m.version,
            config,
            config_hash: m.config_hash,
            global,
            r: m.r,
            weights,
            extractor: m.extractor,
            cvae: CvaeModel::load(dir)?,
            inference: ParamInferenceModel::load(dir)?,
            report: serde_json::from_str(&fs::read_to_string(dir.join("training_report.json"))?)?,
        })
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "artifact".into());
    dir.with_file_name(format!(".{name}.{suffix}"))
}
