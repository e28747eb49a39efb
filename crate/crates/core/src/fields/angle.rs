//! Angle functions `Θ(x) = Σ θ_ij L_i(x_1) L_j(x_2)` and the unit vector
//! fields `(cos Θ, sin Θ)` they define, plus the alignment fit from observed
//! headings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::legendre::{
    basis_len, gauss_legendre, legendre_tensor_basis, tensor_basis_with_gradient, tensor_series,
    MAX_DEGREE,
};
use crate::error::{invalid, Error, Result};
use crate::Vec2;

/// Angle function over canonical coordinates; coefficients are stored in
/// `(i, j)` order with `j` fastest (see [`super::legendre::basis_index`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleField {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl AngleField {
    pub fn zeros(degree: usize) -> Result<Self> {
        Self::new(degree, vec![0.0; basis_len(degree)])
    }

    pub fn constant(degree: usize, theta: f64) -> Result<Self> {
        let mut f = Self::zeros(degree)?;
        f.coeffs[0] = theta;
        Ok(f)
    }

    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let f = Self { degree, coeffs };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree > MAX_DEGREE {
            return invalid(format!("angle field degree {} exceeds {MAX_DEGREE}", self.degree));
        }
        if self.coeffs.len() != basis_len(self.degree) {
            return invalid(format!(
                "angle field of degree {} needs {} coefficients, got {}",
                self.degree,
                basis_len(self.degree),
                self.coeffs.len()
            ));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return invalid("non-finite angle coefficient");
        }
        Ok(())
    }

    /// `Θ(x)` in radians at a canonical point.
    #[inline]
    pub fn theta(&self, x: &Vec2) -> f64 {
        tensor_series(&self.coeffs, self.degree, x)
    }

    /// Unit vector `(cos Θ(x), sin Θ(x))`.
    #[inline]
    pub fn eval(&self, x: &Vec2) -> Vec2 {
        let (s, c) = self.theta(x).sin_cos();
        Vec2::new(c, s)
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Matrix `G` with `θᵀ G θ = ∫_{[-1,1]^2} |∇Θ|²`, by Gauss-Legendre
/// quadrature exact for the polynomial integrand.
pub fn gradient_gram(d: usize) -> DMatrix<f64> {
    let m = basis_len(d);
    let (nodes, weights) = gauss_legendre(d + 2);
    let mut g = DMatrix::zeros(m, m);
    for (xa, wa) in nodes.iter().zip(&weights) {
        for (xb, wb) in nodes.iter().zip(&weights) {
            let (_, gx, gy) = tensor_basis_with_gradient(&Vec2::new(*xa, *xb), d);
            let w = wa * wb;
            for r in 0..m {
                for c in 0..m {
                    g[(r, c)] += w * (gx[r] * gx[c] + gy[r] * gy[c]);
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AngleFitConfig {
    pub degree: usize,
    /// Weight of the squared gradient norm penalty.
    pub reg: f64,
    /// Maximum number of ascent iterations.
    pub budget: usize,
}

impl Default for AngleFitConfig {
    fn default() -> Self {
        Self { degree: 5, reg: 1e-3, budget: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct AngleFit {
    pub field: AngleField,
    pub objective: f64,
    /// Objective after initialization and after each accepted step.
    pub trace: Vec<f64>,
    pub gradient_norm: f64,
}

struct AlignmentProblem<'a> {
    basis: Vec<Vec<f64>>,
    vel: &'a [Vec2],
    gram: DMatrix<f64>,
    reg: f64,
}

impl AlignmentProblem<'_> {
    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let data: f64 = self
            .basis
            .iter()
            .zip(self.vel)
            .map(|(b, v)| {
                let ang: f64 = b.iter().zip(theta.iter()).map(|(x, y)| x * y).sum();
                v.x * ang.cos() + v.y * ang.sin()
            })
            .sum();
        data - self.reg * theta.dot(&(&self.gram * theta))
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let m = theta.len();
        let mut g = DVector::zeros(m);
        for (b, v) in self.basis.iter().zip(self.vel) {
            let ang: f64 = b.iter().zip(theta.iter()).map(|(x, y)| x * y).sum();
            let (s, c) = ang.sin_cos();
            let w = -v.x * s + v.y * c;
            for (gk, bk) in g.iter_mut().zip(b) {
                *gk += w * bk;
            }
        }
        g - (&self.gram * theta) * (2.0 * self.reg)
    }
}

/// Fit `Θ` so that `(cos Θ, sin Θ)` aligns with unit headings observed at
/// canonical points.
///
/// Maximizes `Σ_i ⟨v_i, X(x_i)⟩ − reg · ∫|∇Θ|²` by gradient ascent with a
/// fixed metric (the Gauss-Newton matrix at perfect alignment) and Armijo
/// backtracking, so accepted iterates never decrease the objective. Starts
/// from the constant field pointing along the mean heading.
pub fn fit_angle_field(
    points: &[Vec2],
    unit_velocities: &[Vec2],
    config: &AngleFitConfig,
) -> Result<AngleFit> {
    if points.is_empty() {
        return invalid("cannot fit an angle field to no data");
    }
    if points.len() != unit_velocities.len() {
        return invalid("points and velocities differ in length");
    }
    if unit_velocities.iter().any(|v| (v.norm() - 1.0).abs() > 1e-6) {
        return invalid("velocities must have unit norm");
    }
    if !(config.reg >= 0.0) {
        return invalid("regularization weight must be non-negative");
    }
    let d = config.degree;
    AngleField::zeros(d)?;
    let m = basis_len(d);

    let problem = AlignmentProblem {
        basis: points.iter().map(|p| legendre_tensor_basis(p, d)).collect(),
        vel: unit_velocities,
        gram: gradient_gram(d),
        reg: config.reg,
    };

    let mut metric = &problem.gram * (2.0 * config.reg);
    for b in &problem.basis {
        for r in 0..m {
            for c in 0..m {
                metric[(r, c)] += b[r] * b[c];
            }
        }
    }
    let ridge = 1e-10 * (metric.trace() / m as f64) + 1e-12;
    for k in 0..m {
        metric[(k, k)] += ridge;
    }
    let chol = metric
        .cholesky()
        .ok_or_else(|| Error::Numerical("alignment metric not positive definite".into()))?;

    let mean = unit_velocities.iter().fold(Vec2::zeros(), |a, v| a + v);
    let mut theta = DVector::zeros(m);
    theta[0] = mean.y.atan2(mean.x);
    let mut value = problem.objective(&theta);
    let mut trace = vec![value];
    let mut grad = problem.gradient(&theta);
    let mut step = 1.0;

    for _ in 0..config.budget {
        if grad.norm() < 1e-8 {
            break;
        }
        let dir = chol.solve(&grad);
        let slope = grad.dot(&dir);
        let mut accepted = None;
        let mut eta = step;
        for _ in 0..60 {
            let cand = &theta + &dir * eta;
            let v = problem.objective(&cand);
            if v >= value + 1e-4 * eta * slope {
                accepted = Some((cand, v));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, v)) = accepted else { break };
        theta = cand;
        value = v;
        trace.push(value);
        grad = problem.gradient(&theta);
        step = (eta * 2.0).min(1.0);
    }

    Ok(AngleFit {
        field: AngleField::new(d, theta.iter().copied().collect())?,
        objective: value,
        trace,
        gradient_norm: grad.norm(),
    })
}
