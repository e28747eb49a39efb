//! Learned priors: Gibbs position priors per field, model and speed priors,
//! and the measurement/model noise parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{invalid, Error, Result};
use crate::fields::legendre::{basis_len, legendre_tensor_basis, tensor_series};
use crate::fields::{flow, AngleField, SceneField, VectorField};
use crate::ingest::{velocities, SceneDomain, Trajectory};
use crate::Vec2;

/// Gibbs density `exp(-V(x)) / Z` on canonical coordinates `[-1, 1]^2`, with
/// `V` a tensor Legendre series whose constant coefficient is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrior {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub log_partition: f64,
    /// Midpoint-rule resolution per axis used for `log_partition`.
    pub quad_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorFitConfig {
    pub degree: usize,
    pub reg: f64,
    pub quad_n: usize,
    pub max_iter: usize,
}

impl Default for PriorFitConfig {
    fn default() -> Self {
        Self { degree: 5, reg: 1e-3, quad_n: 128, max_iter: 200 }
    }
}

fn midpoint_nodes(n: usize) -> impl Iterator<Item = Vec2> {
    let h = 2.0 / n as f64;
    (0..n).flat_map(move |i| {
        (0..n).map(move |j| Vec2::new(-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h))
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl PositionPrior {
    /// The uniform density on the canonical square.
    pub fn flat(degree: usize, quad_n: usize) -> Self {
        Self { degree, coeffs: vec![0.0; basis_len(degree)], log_partition: 4f64.ln(), quad_n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.len() != basis_len(self.degree) {
            return Err(Error::Model(format!(
                "position prior of degree {} needs {} coefficients",
                self.degree,
                basis_len(self.degree)
            )));
        }
        if self.coeffs[0] != 0.0 {
            return Err(Error::Model("position prior constant coefficient must be 0".into()));
        }
        if !self.log_partition.is_finite() || self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Model("non-finite position prior".into()));
        }
        Ok(())
    }

    pub fn potential(&self, q: &Vec2) -> f64 {
        tensor_series(&self.coeffs, self.degree, q)
    }

    /// Density at a canonical point; zero outside the canonical square.
    pub fn canonical_density(&self, q: &Vec2) -> f64 {
        if q.x.abs() > 1.0 || q.y.abs() > 1.0 {
            return 0.0;
        }
        (-self.potential(q) - self.log_partition).exp()
    }

    /// Density with respect to scene area.
    pub fn scene_density(&self, domain: &SceneDomain, p: &Vec2) -> f64 {
        self.canonical_density(&domain.to_canonical(p)) * domain.canonical_jacobian()
    }

    /// `log Z` recomputed on an `n x n` midpoint grid.
    pub fn log_partition_with(&self, n: usize) -> f64 {
        let area = (2.0 / n as f64).powi(2);
        log_sum_exp(midpoint_nodes(n).map(|q| -self.potential(&q))) + area.ln()
    }
}

/// Precomputed pieces of the penalized log-likelihood for one data set.
struct PriorProblem {
    m: usize,
    n_points: f64,
    /// Mean basis vector over the data.
    data_mean: DVector<f64>,
    /// Basis values at the quadrature nodes, one row per node.
    quad_basis: DMatrix<f64>,
    log_area: f64,
    reg: f64,
}

impl PriorProblem {
    fn new(points: &[Vec2], config: &PriorFitConfig) -> Self {
        let d = config.degree;
        let m = basis_len(d);
        let mut data_mean = DVector::zeros(m);
        for p in points {
            for (acc, b) in data_mean.iter_mut().zip(legendre_tensor_basis(p, d)) {
                *acc += b;
            }
        }
        data_mean /= points.len() as f64;
        let nodes: Vec<Vec2> = midpoint_nodes(config.quad_n).collect();
        let quad_basis = DMatrix::from_fn(nodes.len(), m, |r, c| {
            legendre_tensor_basis(&nodes[r], d)[c]
        });
        Self {
            m,
            n_points: points.len() as f64,
            data_mean,
            quad_basis,
            log_area: (2.0 / config.quad_n as f64).powi(2).ln(),
            reg: config.reg,
        }
    }

    fn log_partition(&self, c: &DVector<f64>) -> f64 {
        let v = &self.quad_basis * c;
        log_sum_exp(v.iter().map(|x| -x)) + self.log_area
    }

    /// Negative penalized log-likelihood divided by the number of points.
    fn cost(&self, c: &DVector<f64>) -> f64 {
        self.data_mean.dot(c) + self.log_partition(c) + self.reg / self.n_points * c.norm_squared()
    }

    /// Gradient of [`Self::cost`] with the constant coefficient held at zero,
    /// plus the Gibbs expectation of the basis.
    fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        let w = self.gibbs_weights(c);
        let expect = self.quad_basis.tr_mul(&w);
        let mut g = &self.data_mean - expect + c * (2.0 * self.reg / self.n_points);
        g[0] = 0.0;
        g
    }

    /// Gibbs probabilities of the quadrature nodes.
    fn gibbs_weights(&self, c: &DVector<f64>) -> DVector<f64> {
        let v = &self.quad_basis * c;
        let max = v.iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max);
        let w: DVector<f64> = v.map(|x| (-x - max).exp());
        let total = w.sum();
        w / total
    }

    /// Hessian of [`Self::cost`]: the Gibbs covariance of the basis plus the
    /// ridge, with the pinned constant coefficient decoupled.
    fn hessian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let w = self.gibbs_weights(c);
        let mean = self.quad_basis.tr_mul(&w);
        let mut weighted = self.quad_basis.clone();
        for (mut row, &wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let mut h = self.quad_basis.tr_mul(&weighted) - &mean * mean.transpose();
        for k in 0..self.m {
            h[(k, k)] += 2.0 * self.reg / self.n_points + 1e-12;
            h[(0, k)] = 0.0;
            h[(k, 0)] = 0.0;
        }
        h[(0, 0)] = 1.0;
        h
    }
}

/// Penalized log-likelihood `Σ_i -V(x_i) - N log Z - reg·|c|²` of the Gibbs
/// prior with coefficients `coeffs` on canonical data points.
pub fn prior_log_likelihood(points: &[Vec2], coeffs: &[f64], config: &PriorFitConfig) -> f64 {
    let p = PriorProblem::new(points, config);
    let c = DVector::from_column_slice(coeffs);
    -p.cost(&c) * p.n_points
}

/// Fit a Gibbs position prior to canonical points by penalized maximum
/// likelihood.
///
/// The problem is convex. It is solved by damped Newton steps with Armijo
/// backtracking until the gradient of the per-point cost drops below `1e-6`.
pub fn fit_position_prior(points: &[Vec2], config: &PriorFitConfig) -> Result<PositionPrior> {
    if points.is_empty() {
        return invalid("cannot fit a position prior to no points");
    }
    if config.quad_n < 8 {
        return invalid(format!("quadrature resolution {} below 8", config.quad_n));
    }
    if !(config.reg >= 0.0) {
        return invalid("regularization weight must be non-negative");
    }
    const SLACK: f64 = 1e-9;
    if points.iter().any(|p| !(p.x.abs() <= 1.0 + SLACK && p.y.abs() <= 1.0 + SLACK)) {
        return invalid("position prior points must lie in the canonical square");
    }
    let problem = PriorProblem::new(points, config);

    let mut c = DVector::zeros(problem.m);
    let mut cost = problem.cost(&c);
    let mut g = problem.gradient(&c);
    let mut iters = 0;
    while g.norm() >= 1e-6 && iters < config.max_iter {
        iters += 1;
        let chol = problem
            .hessian(&c)
            .cholesky()
            .ok_or_else(|| Error::Numerical("prior Hessian not positive definite".into()))?;
        let dir = -chol.solve(&g);
        let slope = g.dot(&dir);
        let mut eta = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &c + &dir * eta;
            let v = problem.cost(&cand);
            if v <= cost + 1e-4 * eta * slope {
                c = cand;
                cost = v;
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
        g = problem.gradient(&c);
    }
    if g.norm() >= 1e-6 {
        log::warn!("position prior stopped after {iters} iterations, |grad| = {:.3e}", g.norm());
    }
    c[0] = 0.0;
    let prior = PositionPrior {
        degree: config.degree,
        log_partition: problem.log_partition(&c),
        coeffs: c.iter().copied().collect(),
        quad_n: config.quad_n,
    };
    prior.validate()?;
    Ok(prior)
}

/// Pr(k) for each nonlinear model and Pr(lin), plus the speed bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPriors {
    pub n: usize,
    pub p_model: f64,
    /// Scene units per second.
    pub s_max: f64,
}

impl ModelPriors {
    pub fn new(n: usize, s_max: f64) -> Result<Self> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::Degenerate(format!(
                "largest observed speed must be positive, got {s_max}"
            )));
        }
        Ok(Self { n, p_model: 1.0 / (n + 1) as f64, s_max })
    }

    /// `Σ_k Pr(k) + Pr(lin)`.
    pub fn total_mass(&self) -> f64 {
        (self.n + 1) as f64 * self.p_model
    }

    /// Uniform density of the speed prior on `[-s_max, s_max]`.
    pub fn speed_density(&self) -> f64 {
        0.5 / self.s_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Position measurement std, scene units.
    pub sigma_x: f64,
    /// Velocity measurement std, scene units per second.
    pub sigma_v: f64,
    /// Growth rate of the model-noise variance, scene units² per second.
    pub kappa: f64,
}

impl NoiseModel {
    /// `sigma_v` follows from differencing positions one frame apart.
    pub fn new(sigma_x: f64, frame_dt: f64, kappa: f64) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(Error::Degenerate(format!("sigma_x must be positive, got {sigma_x}")));
        }
        if !(frame_dt > 0.0) {
            return invalid("frame_dt must be positive");
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return invalid(format!("kappa must be non-negative, got {kappa}"));
        }
        Ok(Self { sigma_x, sigma_v: 2.0 * sigma_x / frame_dt, kappa })
    }
}

/// Largest finite-difference speed over all samples.
pub fn estimate_s_max(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return invalid("no trajectories for speed estimate");
    }
    let mut best = 0.0f64;
    for tr in trajs {
        for v in velocities(tr)? {
            best = best.max(v.v.norm());
        }
    }
    Ok(best)
}

/// Pooled standard deviation of the scalar residuals `raw - smoothed` over
/// both axes and all samples.
pub fn estimate_sigma_x(raw: &[Trajectory], smoothed: &[Trajectory]) -> Result<f64> {
    if raw.len() != smoothed.len() {
        return invalid("raw and smoothed trajectory lists differ in length");
    }
    let mut residuals = Vec::new();
    for (r, s) in raw.iter().zip(smoothed) {
        if r.len() != s.len() {
            return invalid(format!("trajectory {} changed length when smoothed", r.agent_id()));
        }
        for (a, b) in r.samples().iter().zip(s.samples()) {
            let d = a.p - b.p;
            residuals.push(d.x);
            residuals.push(d.y);
        }
    }
    if residuals.is_empty() {
        return invalid("no samples for sigma_x");
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Speed of a trajectory along field `field`: displacement projected on the
/// field direction, summed over segments and divided by the track duration.
/// Negative when the track runs against the field.
pub fn along_field_speed<F: VectorField + ?Sized>(field: &F, traj: &Trajectory) -> Result<f64> {
    let progress: f64 = traj
        .samples()
        .windows(2)
        .map(|w| (w[1].p - w[0].p).dot(&field.eval(&w[0].p)))
        .sum();
    Ok(progress / traj.duration())
}

/// Longest evaluation time usable for `κ`, as a fraction of track duration.
pub const MAX_SPAN_FRACTION: f64 = 0.5;

/// Model-noise growth rate `κ` such that `x_t - x_synth(t) ~ N(0, κ t I)`.
///
/// Every clustered trajectory is re-synthesized by flowing its start point
/// along `s·X_k`, where `s` is the track's along-field speed averaged over its
/// whole duration `T`. Residuals at each evaluation time `τ < T` (relative to
/// the track's first sample) are split into the component along the field
/// and the component across it. Because `s` is fitted on the same track, the
/// along-field residual behaves like a Brownian bridge with variance
/// `κ τ (1 - τ/T)`; it is rescaled by that factor. Both components are scaled
/// by `1/√τ` and pooled over agents, components and times; `κ` is their mean
/// square. A track contributes at `τ` only when `τ ≤ T/2`, which keeps the
/// bridge rescaling at most 2.
pub fn estimate_kappa(
    clusters: &Clustering,
    fields: &[AngleField],
    trajs: &[Trajectory],
    domain: &SceneDomain,
    eval_times: &[f64],
    step: f64,
) -> Result<f64> {
    if eval_times.iter().any(|&t| !(t > 0.0)) {
        return invalid("kappa evaluation times must be positive");
    }
    if fields.len() != clusters.n() {
        return invalid("one field per cluster required");
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (members, angle) in clusters.clusters.iter().zip(fields) {
        let field = SceneField::new(angle, domain);
        for &idx in members {
            let tr = &trajs[idx];
            let s = along_field_speed(&field, tr)?;
            let x0 = tr.first().p;
            let t0 = tr.first().t;
            let span = tr.duration();
            for &tau in eval_times {
                if tau > MAX_SPAN_FRACTION * span {
                    continue;
                }
                let Some(actual) = tr.position_at(t0 + tau) else { continue };
                let synth = flow(&field, &x0, s * tau, step)?;
                let dir = field.eval(&synth);
                let r = actual - synth;
                let along = r.dot(&dir);
                let across = r.x * dir.y - r.y * dir.x;
                sum += (along * along / (1.0 - tau / span) + across * across) / tau;
                count += 2;
            }
        }
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "no clustered trajectory covers any kappa evaluation time".into(),
        ));
    }
    Ok(sum / count as f64)
}
