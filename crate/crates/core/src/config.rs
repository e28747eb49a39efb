//! Tunable settings for every pipeline stage, loadable from TOML.
//!
//! Missing keys take the defaults below, so an empty file is a valid config.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::error::{invalid, Error, Result};
use crate::fields::AngleFitConfig;
use crate::ingest::{AnnotationFormat, DEFAULT_SMOOTHING_WINDOW};
use crate::priors::PriorFitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKind {
    #[default]
    SimpleCsv,
    Drone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub format: FormatKind,
    /// Seconds per frame. Inferred from the median sample spacing when unset,
    /// except for drone annotations which need it to build timestamps.
    pub frame_dt: Option<f64>,
    pub smoothing_window: usize,
    /// Fractional margin added around the data bounding box.
    pub domain_margin: f64,
    /// Explicit scene bounds `[xmin, ymin, xmax, ymax]`.
    pub domain: Option<[f64; 4]>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            format: FormatKind::SimpleCsv,
            frame_dt: None,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            domain_margin: 0.05,
            domain: None,
        }
    }
}

impl IngestConfig {
    pub fn annotation_format(&self) -> Result<AnnotationFormat> {
        match self.format {
            FormatKind::SimpleCsv => Ok(AnnotationFormat::SimpleCsv),
            FormatKind::Drone => match self.frame_dt {
                Some(dt) if dt > 0.0 => Ok(AnnotationFormat::DroneAnnotation { frame_dt: dt }),
                _ => invalid("drone annotations need a positive ingest.frame_dt"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Times, in frames, at which model-noise residuals are sampled.
    pub kappa_eval_frames: Vec<f64>,
    /// RK4 substeps per frame when re-synthesizing trajectories.
    pub kappa_substeps: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kappa_eval_frames: vec![50.0, 100.0, 200.0], kappa_substeps: 4 }
    }
}

/// Everything that shapes a trained model; echoed into the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ingest: IngestConfig,
    pub clustering: ClusterConfig,
    pub fields: AngleFitConfig,
    pub priors: PriorFitConfig,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Initial grid has `(2 n_x + 1)^2` points.
    pub n_x: usize,
    pub eps_tol: f64,
    pub raster_nx: usize,
    pub raster_ny: usize,
    /// Number of frames predicted.
    pub n_t: usize,
    /// RK4 substeps per flow-table increment.
    pub flow_substeps: usize,
    /// Velocity density assigned to the linear agent model, in
    /// (seconds / scene unit)^2.
    pub linear_velocity_density: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            n_x: 4,
            eps_tol: 0.05,
            raster_nx: 64,
            raster_ny: 64,
            n_t: 20,
            flow_substeps: 20,
            linear_velocity_density: 1.0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return invalid("n_x must be at least 1");
        }
        if !(self.eps_tol > 0.0 && self.eps_tol < 1.0) {
            return invalid(format!("eps_tol must lie in (0, 1), got {}", self.eps_tol));
        }
        if self.raster_nx == 0 || self.raster_ny == 0 {
            return invalid("raster needs at least one cell per axis");
        }
        if self.flow_substeps == 0 {
            return invalid("flow_substeps must be at least 1");
        }
        if !(self.linear_velocity_density >= 0.0 && self.linear_velocity_density.is_finite()) {
            return invalid("linear_velocity_density must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Raster samples drawn per prediction for MHD.
    pub samples: usize,
    /// Random-walk diffusion scale; defaults to RMS training speed × √Δt.
    pub sigma_rw: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 1000, sigma_rw: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let c = Config::from_toml("seed = 7\n[forecast]\nn_x = 2\n[train.ingest]\nformat = \"drone\"\nframe_dt = 0.04\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.forecast.n_x, 2);
        assert_eq!(c.forecast.eps_tol, 0.05);
        assert!(matches!(
            c.train.ingest.annotation_format().unwrap(),
            AnnotationFormat::DroneAnnotation { frame_dt } if frame_dt == 0.04
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[forecast]\nnx = 3\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }
}
