//! The trained model and its JSON persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fields::AngleField;
use crate::ingest::SceneDomain;
use crate::priors::{ModelPriors, NoiseModel, PositionPrior};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub unclassified: usize,
    pub converged: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_version: u32,
    pub domain: SceneDomain,
    pub clustering: ClusterSummary,
    /// One angle field per cluster, in canonical coordinates.
    pub fields: Vec<AngleField>,
    pub position_priors: Vec<PositionPrior>,
    pub model_priors: ModelPriors,
    pub noise: NoiseModel,
    /// Root-mean-square finite-difference speed over the training samples.
    pub rms_speed: f64,
    pub training: TrainConfig,
}

impl TrainedModel {
    pub fn n(&self) -> usize {
        self.fields.len()
    }

    pub fn frame_dt(&self) -> f64 {
        self.domain.frame_dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.domain.validate().map_err(|e| Error::Model(format!("domain: {e}")))?;
        let n = self.fields.len();
        if self.position_priors.len() != n || self.model_priors.n != n || self.clustering.n != n {
            return Err(Error::Model(format!(
                "inconsistent model counts: {n} fields, {} priors, model prior n = {}, cluster n = {}",
                self.position_priors.len(),
                self.model_priors.n,
                self.clustering.n
            )));
        }
        for (k, f) in self.fields.iter().enumerate() {
            f.validate().map_err(|e| Error::Model(format!("field {k}: {e}")))?;
        }
        for (k, p) in self.position_priors.iter().enumerate() {
            p.validate().map_err(|e| Error::Model(format!("position prior {k}: {e}")))?;
        }
        let nm = &self.noise;
        if !(nm.sigma_x > 0.0 && nm.sigma_v > 0.0 && nm.kappa >= 0.0) {
            return Err(Error::Model("noise parameters out of range".into()));
        }
        if !(self.model_priors.s_max > 0.0) {
            return Err(Error::Model("s_max must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("not valid JSON: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Model(format!(
                    "schema_version {v} unsupported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Model("missing schema_version".into())),
        }
        let model: Self =
            serde_json::from_value(value).map_err(|e| Error::Model(format!("schema mismatch: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
