//! Posterior position forecasts: weighted Dirac atoms on an initial grid,
//! pushed along each field by reusable flow tables, blurred by model noise,
//! plus the closed-form linear-agent term.

pub mod raster;

use std::f64::consts::{PI, SQRT_2};

use crate::config::ForecastConfig;
use crate::error::{invalid, Result};
use crate::fields::{FlowTable, SceneField, VectorField};
use crate::model::TrainedModel;
use crate::Vec2;

pub use raster::{interval_mass, kahan_sum, raster_integrate, rasterize, Atom, DensityRaster, RasterSpec};

/// Noisy observation of an agent's current position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub x_hat: Vec2,
    pub v_hat: Vec2,
}

impl Measurement {
    pub fn new(x_hat: Vec2, v_hat: Vec2) -> Result<Self> {
        if !(x_hat.iter().all(|c| c.is_finite()) && v_hat.iter().all(|c| c.is_finite())) {
            return invalid("measurement must be finite");
        }
        Ok(Self { x_hat, v_hat })
    }
}

fn gauss2(d: &Vec2, var: f64) -> f64 {
    (-0.5 * d.norm_squared() / var).exp() / (2.0 * PI * var)
}

/// Side `L` of the centered square holding mass `1 - eps_tol` of
/// `N(0, sigma_x^2 I)`.
pub fn grid_half_width(sigma_x: f64, eps_tol: f64) -> f64 {
    assert!(eps_tol > 0.0 && eps_tol < 1.0, "eps_tol must lie in (0, 1)");
    let target = 1.0 - eps_tol;
    let mass = |l: f64| libm::erf(l / (2.0 * sigma_x * SQRT_2)).powi(2);
    let mut hi = sigma_x;
    while mass(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Regular grid `x_hat + (L / 2 n_x)(i, j)` for `i, j` in `-n_x..=n_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGrid {
    /// Points with `i` outer and `j` inner.
    pub points: Vec<Vec2>,
    pub spacing: f64,
    pub n_x: usize,
}

impl InitialGrid {
    pub fn index(&self, i: isize, j: isize) -> usize {
        let side = 2 * self.n_x + 1;
        (i + self.n_x as isize) as usize * side + (j + self.n_x as isize) as usize
    }
}

pub fn init_grid(x_hat: &Vec2, l: f64, n_x: usize) -> Result<InitialGrid> {
    if n_x == 0 {
        return invalid("n_x must be at least 1");
    }
    if !(l > 0.0 && l.is_finite()) {
        return invalid("grid width must be positive");
    }
    let spacing = l / (2 * n_x) as f64;
    let n = n_x as isize;
    let points = (-n..=n)
        .flat_map(|i| (-n..=n).map(move |j| x_hat + Vec2::new(i as f64, j as f64) * spacing))
        .collect();
    Ok(InitialGrid { points, spacing, n_x })
}

/// Joint density of the measurement, start point `x0`, field `k` and speed
/// `s`: position likelihood × position prior × Pr(k) × Pr(s) × velocity
/// likelihood.
pub fn weight(model: &TrainedModel, k: usize, s: f64, x0: &Vec2, meas: &Measurement) -> f64 {
    let nm = &model.noise;
    let field = SceneField::new(&model.fields[k], &model.domain);
    gauss2(&(meas.x_hat - x0), nm.sigma_x * nm.sigma_x)
        * model.position_priors[k].scene_density(&model.domain, x0)
        * model.model_priors.p_model
        * model.model_priors.speed_density()
        * gauss2(&(meas.v_hat - field.eval(x0) * s), nm.sigma_v * nm.sigma_v)
}

/// The linear-agent component at time `t` as a single atom.
pub fn linear_atom(model: &TrainedModel, meas: &Measurement, t: f64, velocity_density: f64) -> Atom {
    let nm = &model.noise;
    Atom {
        weight: model.model_priors.p_model / model.domain.area() * velocity_density,
        mean: meas.x_hat + meas.v_hat * t,
        variance: nm.sigma_x * nm.sigma_x + t * t * nm.sigma_v * nm.sigma_v + nm.kappa * t,
    }
}

/// Per-cell mass of the linear-agent component at time `t`.
pub fn linear_term(
    model: &TrainedModel,
    meas: &Measurement,
    t: f64,
    spec: &RasterSpec,
    velocity_density: f64,
) -> Vec<f64> {
    rasterize(spec, &[linear_atom(model, meas, t, velocity_density)])
}

/// Unnormalized masses behind one forecast frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDiagnostics {
    /// `Σ Δs Δx² W` over all nonlinear atoms.
    pub weight_sum: f64,
    /// Nonlinear atom mass captured by the raster.
    pub nonlinear_mass: f64,
    /// Linear-term mass captured by the raster.
    pub linear_mass: f64,
    /// Normalizing constant.
    pub total_mass: f64,
    pub atoms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub raster: DensityRaster,
    pub diagnostics: FrameDiagnostics,
}

/// Forecast driver for one model and configuration.
#[derive(Debug, Clone)]
pub struct Forecaster<'a> {
    model: &'a TrainedModel,
    config: ForecastConfig,
    spec: RasterSpec,
}

impl<'a> Forecaster<'a> {
    /// Raster over the model's scene domain at the configured resolution.
    pub fn new(model: &'a TrainedModel, config: ForecastConfig) -> Result<Self> {
        let spec = RasterSpec::over_domain(&model.domain, config.raster_nx, config.raster_ny)?;
        Self::with_raster(model, config, spec)
    }

    pub fn with_raster(model: &'a TrainedModel, config: ForecastConfig, spec: RasterSpec) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        Ok(Self { model, config, spec })
    }

    pub fn spec(&self) -> &RasterSpec {
        &self.spec
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    /// Frames for `t = Δt, 2Δt, …, n_t Δt`.
    pub fn predict(&self, meas: &Measurement) -> Result<Vec<Frame>> {
        self.predict_steps(meas, self.config.n_t)
    }

    pub fn predict_steps(&self, meas: &Measurement, n_t: usize) -> Result<Vec<Frame>> {
        if n_t == 0 {
            return invalid("need at least one forecast frame");
        }
        let meas = Measurement::new(meas.x_hat, meas.v_hat)?;
        let model = self.model;
        let cfg = &self.config;
        let nm = &model.noise;
        let dt = model.frame_dt();
        let s_bar = model.model_priors.s_max;

        let l = grid_half_width(nm.sigma_x, cfg.eps_tol);
        let grid = init_grid(&meas.x_hat, l, cfg.n_x)?;
        let cell = grid.spacing * grid.spacing;
        let fields: Vec<SceneField> =
            model.fields.iter().map(|f| SceneField::new(f, &model.domain)).collect();

        // Speed-independent factors per (field, grid point).
        let var_x = nm.sigma_x * nm.sigma_x;
        let var_v = nm.sigma_v * nm.sigma_v;
        let shared = model.model_priors.p_model * model.model_priors.speed_density() * cell;
        let base: Vec<Vec<f64>> = model
            .position_priors
            .iter()
            .map(|prior| {
                grid.points
                    .iter()
                    .map(|x0| {
                        shared
                            * gauss2(&(meas.x_hat - x0), var_x)
                            * prior.scene_density(&model.domain, x0)
                    })
                    .collect()
            })
            .collect();
        let heading: Vec<Vec<Vec2>> =
            fields.iter().map(|f| grid.points.iter().map(|x| f.eval(x)).collect()).collect();
        let v_norm = 1.0 / (2.0 * PI * var_v);

        let mut table = FlowTable::new(grid.points.clone(), fields.len(), s_bar * dt, cfg.flow_substeps)?;
        let mut frames = Vec::with_capacity(n_t);
        let mut atoms = Vec::new();
        for level in 1..=n_t {
            table.extend(&fields)?;
            let t = level as f64 * dt;
            let ds = s_bar / level as f64;
            let var_t = nm.kappa * t;
            atoms.clear();
            let lv = level as isize;
            for k in 0..fields.len() {
                for m in -lv..=lv {
                    let s = s_bar * m as f64 / level as f64;
                    let row = table.row(k, m);
                    for (g, x) in row.iter().enumerate() {
                        let b = base[k][g];
                        if b == 0.0 {
                            continue;
                        }
                        let dv = meas.v_hat - heading[k][g] * s;
                        let w = ds * b * v_norm * (-0.5 * dv.norm_squared() / var_v).exp();
                        if w > 0.0 {
                            atoms.push(Atom { weight: w, mean: *x, variance: var_t });
                        }
                    }
                }
            }
            let weight_sum = kahan_sum(atoms.iter().map(|a| a.weight));
            let mut masses = rasterize(&self.spec, &atoms);
            let nonlinear_mass = kahan_sum(masses.iter().copied());
            let lin = linear_term(model, &meas, t, &self.spec, cfg.linear_velocity_density);
            let linear_mass = kahan_sum(lin.iter().copied());
            for (m, x) in masses.iter_mut().zip(&lin) {
                *m += x;
            }
            let mut raster = DensityRaster {
                t,
                spec: self.spec,
                masses,
                bound_components: [grid.spacing, ds, cfg.eps_tol],
            };
            let total_mass = raster.normalize()?;
            frames.push(Frame {
                raster,
                diagnostics: FrameDiagnostics {
                    weight_sum,
                    nonlinear_mass,
                    linear_mass,
                    total_mass,
                    atoms: atoms.len(),
                },
            });
        }
        Ok(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_width_examples() {
        let one_sigma = libm::erf(1.0 / SQRT_2);
        let l = grid_half_width(1.0, 1.0 - one_sigma * one_sigma);
        assert!((l - 2.0).abs() < 1e-10);
        // per-axis mass √0.95 → half side ≈ 2.2365 σ
        let l = grid_half_width(0.5, 0.05);
        assert!((l - 2.2365).abs() < 1e-3, "{l}");
        assert!(grid_half_width(1.0, 1.0 - 1e-12) < 1e-4);
    }

    #[test]
    fn grid_layout() {
        let g = init_grid(&Vec2::zeros(), 2.0, 1).unwrap();
        assert_eq!(g.points.len(), 9);
        assert_eq!(g.points[g.index(0, 0)], Vec2::zeros());
        assert_eq!(g.points[g.index(-1, 1)], Vec2::new(-1.0, 1.0));
        let x = Vec2::new(3.0, -2.0);
        let g = init_grid(&x, 1.0, 2).unwrap();
        assert_eq!(g.spacing, 0.25);
        assert_eq!(g.points[g.index(2, 2)], x + Vec2::new(0.5, 0.5));
        assert_eq!(g.points[g.index(0, 0)], x);
        assert!(init_grid(&x, 1.0, 0).is_err());
    }

    #[test]
    fn measurement_must_be_finite() {
        assert!(Measurement::new(Vec2::new(f64::NAN, 0.0), Vec2::zeros()).is_err());
    }
}
