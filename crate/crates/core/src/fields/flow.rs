//! Fixed-step RK4 flow maps and the incremental flow tables reused across
//! forecast horizons.

use rayon::prelude::*;

use super::angle::AngleField;
use crate::error::{invalid, Error, Result};
use crate::ingest::SceneDomain;
use crate::Vec2;

/// Autonomous planar vector field.
pub trait VectorField: Sync {
    fn eval(&self, x: &Vec2) -> Vec2;
}

/// Angle fields act directly on canonical coordinates.
impl VectorField for AngleField {
    #[inline]
    fn eval(&self, x: &Vec2) -> Vec2 {
        AngleField::eval(self, x)
    }
}

/// An angle field lifted to scene coordinates: the heading at a scene point is
/// `Θ` evaluated at its canonical image, and the speed stays one scene unit
/// per second.
#[derive(Debug, Clone, Copy)]
pub struct SceneField<'a> {
    pub angle: &'a AngleField,
    pub domain: &'a SceneDomain,
}

impl<'a> SceneField<'a> {
    pub fn new(angle: &'a AngleField, domain: &'a SceneDomain) -> Self {
        Self { angle, domain }
    }
}

impl VectorField for SceneField<'_> {
    #[inline]
    fn eval(&self, x: &Vec2) -> Vec2 {
        self.angle.eval(&self.domain.to_canonical(x))
    }
}

/// Closure-backed field, mostly for analytic test fields.
pub struct FnField<F>(pub F);

impl<F: Fn(&Vec2) -> Vec2 + Sync> VectorField for FnField<F> {
    #[inline]
    fn eval(&self, x: &Vec2) -> Vec2 {
        (self.0)(x)
    }
}

/// The field multiplied by a constant speed.
pub struct Scaled<'a, F: ?Sized> {
    pub field: &'a F,
    pub speed: f64,
}

impl<F: VectorField + ?Sized> VectorField for Scaled<'_, F> {
    #[inline]
    fn eval(&self, x: &Vec2) -> Vec2 {
        self.field.eval(x) * self.speed
    }
}

/// One classical Runge-Kutta step; a negative `h` integrates the reversed
/// field.
#[inline]
pub fn rk4_step<F: VectorField + ?Sized>(field: &F, x: &Vec2, h: f64) -> Vec2 {
    let k1 = field.eval(x);
    let k2 = field.eval(&(x + k1 * (0.5 * h)));
    let k3 = field.eval(&(x + k2 * (0.5 * h)));
    let k4 = field.eval(&(x + k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn integrate<F: VectorField + ?Sized>(field: &F, x0: &Vec2, h: f64, steps: usize) -> Vec2 {
    let mut x = *x0;
    for _ in 0..steps {
        x = rk4_step(field, &x, h);
    }
    x
}

/// Flow map `Φ^duration(x0)` by fixed-step RK4 with step `step`; the final
/// step is shortened to land exactly on `duration`. Negative durations flow
/// backwards. Points are not clamped to any domain.
pub fn flow<F: VectorField + ?Sized>(
    field: &F,
    x0: &Vec2,
    duration: f64,
    step: f64,
) -> Result<Vec2> {
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("integration step must be positive, got {step}"));
    }
    if !duration.is_finite() {
        return invalid("non-finite flow duration");
    }
    if duration == 0.0 {
        return Ok(*x0);
    }
    let span = duration.abs();
    let sign = duration.signum();
    let full = (span / step).floor();
    let rest = span - full * step;
    let mut x = integrate(field, x0, sign * step, full as usize);
    if rest > span * 1e-14 {
        x = rk4_step(field, &x, sign * rest);
    }
    if !(x.x.is_finite() && x.y.is_finite()) {
        return Err(Error::Numerical(format!("flow from {x0:?} left the finite range")));
    }
    Ok(x)
}

/// Flowed grid positions `Φ^{m·increment}(x_g)` for every field and every
/// signed step `m` in `-depth..=depth`.
///
/// Row `m + 1` is always produced from row `m` by `substeps` RK4 steps of size
/// `increment / substeps`, so extending the table never touches existing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    grid: Vec<Vec2>,
    increment: f64,
    substeps: usize,
    /// `[field][m][point]`, `m = 0..=depth`
    forward: Vec<Vec<Vec<Vec2>>>,
    /// `[field][m][point]` for step `-m`; row 0 duplicates the grid
    backward: Vec<Vec<Vec<Vec2>>>,
}

impl FlowTable {
    pub fn new(grid: Vec<Vec2>, n_fields: usize, increment: f64, substeps: usize) -> Result<Self> {
        if !(increment > 0.0 && increment.is_finite()) {
            return invalid("flow table increment must be positive");
        }
        if substeps == 0 {
            return invalid("flow table needs at least one substep");
        }
        Ok(Self {
            forward: vec![vec![grid.clone()]; n_fields],
            backward: vec![vec![grid.clone()]; n_fields],
            grid,
            increment,
            substeps,
        })
    }

    pub fn grid(&self) -> &[Vec2] {
        &self.grid
    }

    pub fn increment(&self) -> f64 {
        self.increment
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Integration step used inside one increment.
    pub fn step(&self) -> f64 {
        self.increment / self.substeps as f64
    }

    pub fn n_fields(&self) -> usize {
        self.forward.len()
    }

    /// Largest `|m|` available.
    pub fn depth(&self) -> usize {
        self.forward.first().map_or(0, |rows| rows.len() - 1)
    }

    /// Flowed points for field `k` at signed step `m`.
    pub fn row(&self, k: usize, m: isize) -> &[Vec2] {
        if m >= 0 {
            &self.forward[k][m as usize]
        } else {
            &self.backward[k][m.unsigned_abs()]
        }
    }

    /// Append rows `±(depth + 1)` for every field.
    pub fn extend<F: VectorField>(&mut self, fields: &[F]) -> Result<()> {
        if fields.len() != self.n_fields() {
            return invalid(format!(
                "flow table holds {} fields, got {}",
                self.n_fields(),
                fields.len()
            ));
        }
        let h = self.step();
        let n = self.substeps;
        for (k, field) in fields.iter().enumerate() {
            for (rows, sign) in [(&mut self.forward[k], 1.0), (&mut self.backward[k], -1.0)] {
                let last = &rows[rows.len() - 1];
                let next: Vec<Vec2> = last
                    .par_iter()
                    .map(|x| integrate(field, x, sign * h, n))
                    .collect();
                if next.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
                    return Err(Error::Numerical("flow table row left the finite range".into()));
                }
                rows.push(next);
            }
        }
        Ok(())
    }

    /// Consuming form of [`FlowTable::extend`].
    pub fn extended<F: VectorField>(mut self, fields: &[F]) -> Result<Self> {
        self.extend(fields)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn rotation() -> FnField<impl Fn(&Vec2) -> Vec2 + Sync> {
        FnField(|x: &Vec2| Vec2::new(-x.y, x.x) / x.norm())
    }

    #[test]
    fn straight_line_flow() {
        let f = AngleField::zeros(2).unwrap();
        let x = flow(&f, &Vec2::zeros(), 2.0, 0.1).unwrap();
        assert!((x - Vec2::new(2., 0.)).norm() < 1e-10);
        let x = flow(&f, &Vec2::zeros(), -2.0, 0.3).unwrap();
        assert!((x - Vec2::new(-2., 0.)).norm() < 1e-10);
    }

    #[test]
    fn zero_duration_is_identity() {
        let f = AngleField::constant(1, 0.4).unwrap();
        let x0 = Vec2::new(0.123, -4.5);
        assert_eq!(flow(&f, &x0, 0.0, 0.1).unwrap(), x0);
    }

    #[test]
    fn quarter_circle() {
        let x = flow(&rotation(), &Vec2::new(1., 0.), FRAC_PI_2, 1e-3).unwrap();
        assert!((x - Vec2::new(0., 1.)).norm() < 1e-6);
    }

    #[test]
    fn rejects_bad_step() {
        let f = AngleField::zeros(0).unwrap();
        assert!(flow(&f, &Vec2::zeros(), 1.0, 0.0).is_err());
        assert!(flow(&f, &Vec2::zeros(), f64::NAN, 0.1).is_err());
    }

    #[test]
    fn non_finite_state_is_error() {
        let blowup = FnField(|x: &Vec2| Vec2::new(x.x * x.x * 1e200, 0.0));
        assert!(flow(&blowup, &Vec2::new(1.0, 0.0), 10.0, 0.5).is_err());
    }

    #[test]
    fn first_extension_of_constant_field() {
        let grid = vec![Vec2::new(0., 0.), Vec2::new(1., 2.)];
        let f = [AngleField::zeros(1).unwrap()];
        let mut t = FlowTable::new(grid.clone(), 1, 0.1, 20).unwrap();
        assert_eq!(t.row(0, 0), &grid[..]);
        t.extend(&f).unwrap();
        for (p, g) in t.row(0, 1).iter().zip(&grid) {
            assert!((p - (g + Vec2::new(0.1, 0.))).norm() < 1e-14);
        }
        for (p, g) in t.row(0, -1).iter().zip(&grid) {
            assert!((p - (g - Vec2::new(0.1, 0.))).norm() < 1e-14);
        }
    }

    #[test]
    fn extension_keeps_existing_rows() {
        let grid = vec![Vec2::new(1., 0.5), Vec2::new(-0.5, 1.)];
        let f = [rotation()];
        let t1 = FlowTable::new(grid, 1, 0.25, 20).unwrap().extended(&f).unwrap();
        let t2 = t1.clone().extended(&f).unwrap();
        for m in -1..=1 {
            assert_eq!(t1.row(0, m), t2.row(0, m));
        }
        assert_eq!(t2.depth(), 2);
    }
}
