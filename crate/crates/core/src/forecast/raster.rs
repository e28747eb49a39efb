//! Regular output rasters and closed-form Gaussian cell integration.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::ingest::SceneDomain;
use crate::Vec2;

/// Tail cut, in standard deviations, beyond which cell masses are dropped.
/// The neglected mass per side is below `1e-17`.
const TAIL_SIGMAS: f64 = 8.5;

/// Probability that `N(mu, sigma^2)` falls in `[a, b]`, evaluated on the
/// side of the mean that avoids cancellation.
pub fn interval_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    let scale = sigma * std::f64::consts::SQRT_2;
    let (za, zb) = ((a - mu) / scale, (b - mu) / scale);
    let m = if za >= 0.0 {
        0.5 * (libm::erfc(za) - libm::erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb) - libm::erfc(-za))
    } else {
        0.5 * (libm::erf(zb) - libm::erf(za))
    };
    m.max(0.0)
}

/// Mass of the isotropic Gaussian component `weight · N(mean, variance·I)`
/// inside the rectangle `[xmin, ymin, xmax, ymax]`.
pub fn raster_integrate(weight: f64, mean: &Vec2, variance: f64, cell: [f64; 4]) -> f64 {
    assert!(variance > 0.0, "raster_integrate needs a positive variance");
    let sd = variance.sqrt();
    weight * interval_mass(cell[0], cell[2], mean.x, sd) * interval_mass(cell[1], cell[3], mean.y, sd)
}

/// Regular grid of `nx × ny` cells over `bounds = [xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSpec {
    pub bounds: [f64; 4],
    pub nx: usize,
    pub ny: usize,
}

impl RasterSpec {
    pub fn new(bounds: [f64; 4], nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid("raster needs at least one cell per axis");
        }
        if !bounds.iter().all(|b| b.is_finite()) || !(bounds[2] > bounds[0] && bounds[3] > bounds[1]) {
            return invalid(format!("bad raster bounds {bounds:?}"));
        }
        Ok(Self { bounds, nx, ny })
    }

    pub fn over_domain(domain: &SceneDomain, nx: usize, ny: usize) -> Result<Self> {
        Self::new([domain.min[0], domain.min[1], domain.max[0], domain.max[1]], nx, ny)
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_width(&self) -> f64 {
        (self.bounds[2] - self.bounds[0]) / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bounds[3] - self.bounds[1]) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    fn axis_index(origin: f64, width: f64, n: usize, v: f64) -> Option<usize> {
        let f = ((v - origin) / width).floor();
        if !(f >= 0.0) {
            return None;
        }
        let i = f as usize;
        if i < n {
            Some(i)
        } else if v <= origin + width * n as f64 {
            // the far edge belongs to the last cell
            Some(n - 1)
        } else {
            None
        }
    }

    /// `(ix, iy)` of the cell containing `p`, if inside the bounds.
    pub fn cell_of(&self, p: &Vec2) -> Option<(usize, usize)> {
        let ix = Self::axis_index(self.bounds[0], self.cell_width(), self.nx, p.x)?;
        let iy = Self::axis_index(self.bounds[1], self.cell_height(), self.ny, p.y)?;
        Some((ix, iy))
    }

    pub fn cell_rect(&self, ix: usize, iy: usize) -> [f64; 4] {
        let (w, h) = (self.cell_width(), self.cell_height());
        let x0 = self.bounds[0] + ix as f64 * w;
        let y0 = self.bounds[1] + iy as f64 * h;
        [x0, y0, x0 + w, y0 + h]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        let r = self.cell_rect(ix, iy);
        Vec2::new(0.5 * (r[0] + r[2]), 0.5 * (r[1] + r[3]))
    }
}

/// Weighted isotropic Gaussian; zero variance means a point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub mean: Vec2,
    pub variance: f64,
}

/// Nonzero cell masses along one axis, starting at cell `start`.
struct AxisMass {
    start: usize,
    values: Vec<f64>,
}

impl AxisMass {
    fn new(origin: f64, width: f64, n: usize, mu: f64, sd: f64) -> Self {
        let empty = Self { start: 0, values: Vec::new() };
        if sd == 0.0 {
            return match RasterSpec::axis_index(origin, width, n, mu) {
                Some(i) => Self { start: i, values: vec![1.0] },
                None => empty,
            };
        }
        let lo = ((mu - TAIL_SIGMAS * sd - origin) / width).floor();
        let hi = ((mu + TAIL_SIGMAS * sd - origin) / width).floor();
        if hi < 0.0 || lo >= n as f64 {
            return empty;
        }
        let c0 = lo.max(0.0) as usize;
        let c1 = (hi.min((n - 1) as f64)) as usize;
        let values = (c0..=c1)
            .map(|c| {
                let a = origin + c as f64 * width;
                interval_mass(a, a + width, mu, sd)
            })
            .collect();
        Self { start: c0, values }
    }

    fn get(&self, i: usize) -> Option<f64> {
        i.checked_sub(self.start).and_then(|o| self.values.get(o).copied())
    }
}

/// Integrate a list of atoms over the raster cells.
///
/// Each cell accumulates its contributions in atom order with compensated
/// summation, so the result does not depend on how rows are scheduled.
pub fn rasterize(spec: &RasterSpec, atoms: &[Atom]) -> Vec<f64> {
    let (w, h) = (spec.cell_width(), spec.cell_height());
    let axes: Vec<(AxisMass, AxisMass)> = atoms
        .par_iter()
        .map(|a| {
            let sd = a.variance.sqrt();
            (
                AxisMass::new(spec.bounds[0], w, spec.nx, a.mean.x, sd),
                AxisMass::new(spec.bounds[1], h, spec.ny, a.mean.y, sd),
            )
        })
        .collect();
    let mut masses = vec![0.0; spec.cells()];
    masses.par_chunks_mut(spec.nx).enumerate().for_each(|(iy, row)| {
        let mut comp = vec![0.0; row.len()];
        for (atom, (ax, ay)) in atoms.iter().zip(&axes) {
            let Some(my) = ay.get(iy) else { continue };
            let wy = atom.weight * my;
            if wy == 0.0 {
                continue;
            }
            for (o, &mx) in ax.values.iter().enumerate() {
                let c = ax.start + o;
                let y = wy * mx - comp[c];
                let t = row[c] + y;
                comp[c] = (t - row[c]) - y;
                row[c] = t;
            }
        }
    });
    masses
}

/// Compensated sum in slice order.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Per-cell probability masses at time `t`, stored row by row from the
/// bottom (`ymin`) row, each row running from `xmin` to `xmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRaster {
    pub t: f64,
    pub spec: RasterSpec,
    pub masses: Vec<f64>,
    /// Initial-grid spacing, speed-partition width and tail tolerance.
    pub bound_components: [f64; 3],
}

impl DensityRaster {
    pub fn total(&self) -> f64 {
        kahan_sum(self.masses.iter().copied())
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.masses[iy * self.spec.nx + ix]
    }

    /// Cell with the largest mass; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &m) in self.masses.iter().enumerate() {
            if m > self.masses[best] {
                best = i;
            }
        }
        (best % self.spec.nx, best / self.spec.nx)
    }

    /// Scale to unit total mass.
    pub fn normalize(&mut self) -> Result<f64> {
        let total = self.total();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!(
                "forecast has no mass on the raster at t = {} (total {total})",
                self.t
            )));
        }
        for m in &mut self.masses {
            *m /= total;
        }
        Ok(total)
    }

    pub fn to_text(&self) -> String {
        let b = &self.spec.bounds;
        let c = &self.bound_components;
        let mut s = String::with_capacity(self.masses.len() * 25 + 200);
        let _ = writeln!(s, "# t={:.16e}", self.t);
        let _ = writeln!(s, "# cells={}x{}", self.spec.nx, self.spec.ny);
        let _ = writeln!(s, "# bounds={:.16e},{:.16e},{:.16e},{:.16e}", b[0], b[1], b[2], b[3]);
        let _ = writeln!(s, "# bound_components={:.16e},{:.16e},{:.16e}", c[0], c[1], c[2]);
        for row in self.masses.chunks(self.spec.nx) {
            for (i, m) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{m:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let floats = |line: usize, v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad(line, "bad number")))
                .collect()
        };
        let mut t = None;
        let mut cells = None;
        let mut bounds = None;
        let mut comps = None;
        let mut masses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (key, val) = h.trim().split_once('=').ok_or_else(|| bad(n, "header without '='"))?;
                match key.trim() {
                    "t" => t = Some(val.trim().parse::<f64>().map_err(|_| bad(n, "bad t"))?),
                    "cells" => {
                        let (a, b) = val.trim().split_once('x').ok_or_else(|| bad(n, "cells must be NXxNY"))?;
                        let a = a.parse::<usize>().map_err(|_| bad(n, "bad cell count"))?;
                        let b = b.parse::<usize>().map_err(|_| bad(n, "bad cell count"))?;
                        cells = Some((a, b));
                    }
                    "bounds" => bounds = Some(floats(n, val)?),
                    "bound_components" => comps = Some(floats(n, val)?),
                    _ => {}
                }
                continue;
            }
            masses.extend(floats(n, line)?);
        }
        let (nx, ny) = cells.ok_or_else(|| bad(0, "missing cells header"))?;
        let bounds = bounds.filter(|b| b.len() == 4).ok_or_else(|| bad(0, "missing bounds header"))?;
        let comps = comps.filter(|c| c.len() == 3).ok_or_else(|| bad(0, "missing bound_components header"))?;
        let spec = RasterSpec::new([bounds[0], bounds[1], bounds[2], bounds[3]], nx, ny)?;
        if masses.len() != spec.cells() {
            return Err(bad(0, "mass count does not match cells header"));
        }
        Ok(Self {
            t: t.ok_or_else(|| bad(0, "missing t header"))?,
            spec,
            masses,
            bound_components: [comps[0], comps[1], comps[2]],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrate_whole_plane_and_one_sigma_box() {
        let mu = Vec2::new(0.3, -1.0);
        let big = [-1e6, -1e6, 1e6, 1e6];
        assert!((raster_integrate(2.5, &mu, 0.04, big) - 2.5).abs() < 1e-12);
        let sd = 0.2;
        let box1 = [mu.x - sd, mu.y - sd, mu.x + sd, mu.y + sd];
        let one = libm::erf(1.0 / std::f64::consts::SQRT_2);
        assert!((raster_integrate(1.0, &mu, 0.04, box1) - one * one).abs() < 1e-14);
        assert!((one - 0.6827).abs() < 1e-4);
        let left = raster_integrate(1.0, &mu, 0.04, [mu.x - 0.5, -2.0, mu.x - 0.1, 0.0]);
        let right = raster_integrate(1.0, &mu, 0.04, [mu.x + 0.1, -2.0, mu.x + 0.5, 0.0]);
        assert!((left - right).abs() < 1e-15);
    }

    #[test]
    fn far_tail_interval_is_accurate() {
        // 1 - Φ(10) ≈ 7.62e-24
        let m = interval_mass(10.0, f64::INFINITY, 0.0, 1.0);
        assert!((m / 7.619853024160527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_lookup_edges() {
        let s = RasterSpec::new([0., 0., 4., 2.], 4, 2).unwrap();
        assert_eq!(s.cell_of(&Vec2::new(0.0, 0.0)), Some((0, 0)));
        assert_eq!(s.cell_of(&Vec2::new(4.0, 2.0)), Some((3, 1)));
        assert_eq!(s.cell_of(&Vec2::new(1.0, 0.99)), Some((1, 0)));
        assert_eq!(s.cell_of(&Vec2::new(-1e-9, 1.0)), None);
        assert_eq!(s.cell_center(3, 1), Vec2::new(3.5, 1.5));
    }

    #[test]
    fn rasterize_matches_direct_integration() {
        let spec = RasterSpec::new([-1., -1., 1., 1.], 16, 12).unwrap();
        let atoms = [
            Atom { weight: 0.7, mean: Vec2::new(0.1, 0.2), variance: 0.01 },
            Atom { weight: 0.3, mean: Vec2::new(-0.5, 0.9), variance: 0.2 },
            Atom { weight: 0.2, mean: Vec2::new(0.33, -0.41), variance: 0.0 },
        ];
        let m = rasterize(&spec, &atoms);
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let r = spec.cell_rect(ix, iy);
                let mut want = raster_integrate(0.7, &atoms[0].mean, 0.01, r)
                    + raster_integrate(0.3, &atoms[1].mean, 0.2, r);
                if spec.cell_of(&atoms[2].mean) == Some((ix, iy)) {
                    want += 0.2;
                }
                assert!((m[iy * spec.nx + ix] - want).abs() < 1e-15, "cell {ix},{iy}");
            }
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let spec = RasterSpec::new([-1.5, 0.25, 2.0, 3.0], 3, 2).unwrap();
        let r = DensityRaster {
            t: 0.1 + 0.2,
            spec,
            masses: vec![0.1, 1.0 / 3.0, 0.0, 2e-300, 0.3, 0.2666666666666667],
            bound_components: [0.125, 1.0 / 7.0, 0.05],
        };
        let text = r.to_text();
        assert!(text.starts_with("# t="));
        assert!(text.contains("# cells=3x2\n"));
        assert_eq!(DensityRaster::from_text(&text).unwrap(), r);
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        let spec = RasterSpec::new([0., 0., 1., 1.], 2, 2).unwrap();
        let mut r = DensityRaster { t: 1.0, spec, masses: vec![0.0; 4], bound_components: [0.0; 3] };
        assert!(matches!(r.normalize(), Err(Error::Degenerate(_))));
    }
}
