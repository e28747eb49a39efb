#![allow(dead_code)]

use flowcast::config::TrainConfig;
use flowcast::fields::AngleField;
use flowcast::ingest::{Sample, SceneDomain, Trajectory};
use flowcast::model::{ClusterSummary, TrainedModel, SCHEMA_VERSION};
use flowcast::priors::{ModelPriors, NoiseModel, PositionPrior};
use flowcast::Vec2;

/// Model with the given canonical angle fields, flat position priors and
/// hand-set noise.
pub fn model_with_fields(
    fields: Vec<AngleField>,
    bounds: [f64; 4],
    frame_dt: f64,
    sigma_x: f64,
    kappa: f64,
    s_max: f64,
) -> TrainedModel {
    let n = fields.len();
    let priors = fields.iter().map(|f| PositionPrior::flat(f.degree, 64)).collect();
    TrainedModel {
        schema_version: SCHEMA_VERSION,
        domain: SceneDomain::new([bounds[0], bounds[1]], [bounds[2], bounds[3]], frame_dt).unwrap(),
        clustering: ClusterSummary {
            n,
            sizes: vec![10; n],
            unclassified: 0,
            converged: true,
            fallback: false,
        },
        fields,
        position_priors: priors,
        model_priors: ModelPriors::new(n, s_max).unwrap(),
        noise: NoiseModel::new(sigma_x, frame_dt, kappa).unwrap(),
        rms_speed: s_max / 2.0,
        training: TrainConfig::default(),
    }
}

/// Constant-heading toy model: one field per angle.
pub fn toy_model(angles: &[f64], bounds: [f64; 4], frame_dt: f64, sigma_x: f64, kappa: f64, s_max: f64) -> TrainedModel {
    let fields = angles.iter().map(|&a| AngleField::constant(2, a).unwrap()).collect();
    model_with_fields(fields, bounds, frame_dt, sigma_x, kappa, s_max)
}

pub fn track(id: &str, pts: &[(f64, f64, f64)]) -> Trajectory {
    Trajectory::new(id, pts.iter().map(|&(t, x, y)| Sample::new(t, x, y)).collect()).unwrap()
}

pub fn v(x: f64, y: f64) -> Vec2 {
    Vec2::new(x, y)
}
