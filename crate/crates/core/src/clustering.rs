//! Endpoint-intent clustering of trajectories.
//!
//! Two tracks are close when their start and end points are close,
//! irrespective of travel direction. The resulting similarity matrix is fed to
//! affinity propagation, and clusters below a minimum size are collected into
//! an unclassified set.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingest::Trajectory;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointEmbedding {
    /// `(x_start, y_start, x_end, y_end)`
    pub forward: [f64; 4],
    /// `(x_end, y_end, x_start, y_start)`
    pub reversed: [f64; 4],
}

impl EndpointEmbedding {
    pub fn from_endpoints(start: Vec2, end: Vec2) -> Self {
        Self {
            forward: [start.x, start.y, end.x, end.y],
            reversed: [end.x, end.y, start.x, start.y],
        }
    }

    pub fn of(traj: &Trajectory) -> Self {
        Self::from_endpoints(traj.first().p, traj.last().p)
    }

    /// Distance to `other`'s forward embedding from the nearer of our two
    /// orderings.
    pub fn distance(&self, other: &Self) -> f64 {
        euclid4(&self.forward, &other.forward).min(euclid4(&self.reversed, &other.forward))
    }

    /// True when our reversed ordering is strictly closer to `other` than our
    /// forward ordering, i.e. the two tracks run in opposite directions.
    pub fn opposes(&self, other: &Self) -> bool {
        euclid4(&self.reversed, &other.forward) < euclid4(&self.forward, &other.forward)
    }
}

fn euclid4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Endpoint distance between two trajectories; a pseudometric invariant under
/// reversing either track.
pub fn endpoint_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    EndpointEmbedding::of(a).distance(&EndpointEmbedding::of(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApConfig {
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to declare convergence.
    pub convergence_window: usize,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self { damping: 0.9, max_iter: 1000, convergence_window: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// Exemplar point indices, ascending.
    pub exemplars: Vec<usize>,
    /// For every point, the position in `exemplars` of its exemplar.
    pub labels: Vec<usize>,
    pub converged: bool,
    /// No exemplar emerged and everything was lumped into one cluster.
    pub fallback: bool,
    pub iterations: usize,
}

/// Relative size of the deterministic tie-breaking perturbation.
const JITTER: f64 = 1e-12;

/// Affinity propagation by responsibility/availability message passing.
///
/// The diagonal of `similarity` is replaced by `preference`. To break exact
/// symmetries every entry `(i, k)` is perturbed by
/// `1e-12 * scale * (i * n + k) / n^2`, where `scale` is the largest absolute
/// off-diagonal similarity (1 if all are zero). When all off-diagonal
/// similarities are equal, the outcome is decided directly: one cluster if
/// `preference <= similarity`, singletons otherwise.
pub fn affinity_propagation(
    similarity: &DMatrix<f64>,
    preference: f64,
    config: &ApConfig,
) -> Result<ApResult> {
    let n = similarity.nrows();
    if n != similarity.ncols() {
        return invalid(format!(
            "similarity matrix must be square, got {}x{}",
            similarity.nrows(),
            similarity.ncols()
        ));
    }
    if !(0.5..1.0).contains(&config.damping) {
        return invalid(format!("damping {} outside [0.5, 1)", config.damping));
    }
    if n == 0 {
        return invalid("empty similarity matrix");
    }
    if n == 1 {
        return Ok(ApResult {
            exemplars: vec![0],
            labels: vec![0],
            converged: true,
            fallback: false,
            iterations: 0,
        });
    }

    let off_diag = || (0..n).flat_map(move |i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)));
    let first = similarity[(0, 1)];
    if off_diag().all(|(i, k)| similarity[(i, k)] == first) {
        let (exemplars, labels) = if preference <= first {
            (vec![0], vec![0; n])
        } else {
            ((0..n).collect(), (0..n).collect())
        };
        return Ok(ApResult { exemplars, labels, converged: true, fallback: false, iterations: 0 });
    }

    let scale = off_diag()
        .map(|(i, k)| similarity[(i, k)].abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let nn = (n * n) as f64;
    let s = DMatrix::from_fn(n, n, |i, k| {
        let base = if i == k { preference } else { similarity[(i, k)] };
        base + JITTER * scale * (i * n + k) as f64 / nn
    });

    let damp = config.damping;
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut last: Vec<bool> = vec![false; n];
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iter {
        iterations = it + 1;
        // responsibilities
        for i in 0..n {
            let (mut best, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[(i, k)] + s[(i, k)];
                if v > best {
                    second = best;
                    best = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg { second } else { best };
                r[(i, k)] = damp * r[(i, k)] + (1.0 - damp) * (s[(i, k)] - competitor);
            }
        }
        // availabilities
        for k in 0..n {
            let col_sum: f64 = (0..n)
                .map(|i| if i == k { r[(k, k)] } else { r[(i, k)].max(0.0) })
                .sum();
            for i in 0..n {
                let own = if i == k { r[(k, k)] } else { r[(i, k)].max(0.0) };
                let fresh = if i == k { col_sum - own } else { (col_sum - own).min(0.0) };
                a[(i, k)] = damp * a[(i, k)] + (1.0 - damp) * fresh;
            }
        }

        let current: Vec<bool> = (0..n).map(|k| a[(k, k)] + r[(k, k)] > 0.0).collect();
        if current == last {
            stable += 1;
        } else {
            stable = 1;
            last = current;
        }
        if stable >= config.convergence_window && last.iter().any(|&e| e) {
            converged = true;
            break;
        }
    }

    let exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        let exemplar = (0..n)
            .map(|i| (i, s.row(i).sum()))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
            .0;
        log::warn!("affinity propagation produced no exemplar; using a single cluster");
        return Ok(ApResult {
            exemplars: vec![exemplar],
            labels: vec![0; n],
            converged,
            fallback: true,
            iterations,
        });
    }
    let labels = (0..n)
        .map(|i| {
            if let Ok(pos) = exemplars.binary_search(&i) {
                return pos;
            }
            exemplars
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (pos, &e)| {
                    if s[(i, e)] > b.1 {
                        (pos, s[(i, e)])
                    } else {
                        b
                    }
                })
                .0
        })
        .collect();
    Ok(ApResult { exemplars, labels, converged, fallback: false, iterations })
}

/// Linear-interpolation quantile of unsorted values, `q` in `[0, 1]`.
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Clusters with fewer members are moved to the unclassified set.
    pub min_size: usize,
    /// Quantile of the off-diagonal similarities used as preference.
    pub preference_quantile: f64,
    pub ap: ApConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { min_size: 3, preference_quantile: 0.5, ap: ApConfig::default() }
    }
}

/// Partition of training indices into clusters and an unclassified set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    /// Member indices per cluster, ascending; clusters ordered by exemplar.
    pub clusters: Vec<Vec<usize>>,
    pub unclassified: Vec<usize>,
    /// One trajectory index per cluster, a member of that cluster.
    pub exemplars: Vec<usize>,
    pub converged: bool,
    pub fallback: bool,
}

impl Clustering {
    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

/// Negative squared endpoint distances, built row-parallel.
pub fn similarity_matrix(trajs: &[Trajectory]) -> DMatrix<f64> {
    let emb: Vec<EndpointEmbedding> = trajs.iter().map(EndpointEmbedding::of).collect();
    let n = emb.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|k| {
                    let d = emb[i].distance(&emb[k]);
                    -d * d
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, k| rows[i][k])
}

pub fn cluster_trajectories(trajs: &[Trajectory], config: &ClusterConfig) -> Result<Clustering> {
    if trajs.is_empty() {
        return invalid("cannot cluster an empty trajectory set");
    }
    let q = config.preference_quantile;
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("preference quantile {q} outside (0, 1)"));
    }
    let n = trajs.len();
    let sim = similarity_matrix(trajs);
    let preference = if n > 1 {
        let mut off: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| sim[(i, k)])
            .collect();
        quantile(&mut off, q)
    } else {
        0.0
    };
    let ap = affinity_propagation(&sim, preference, &config.ap)?;

    let mut out = Clustering { converged: ap.converged, fallback: ap.fallback, ..Default::default() };
    for (pos, &ex) in ap.exemplars.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| ap.labels[i] == pos).collect();
        if members.len() >= config.min_size.max(1) {
            out.clusters.push(members);
            out.exemplars.push(ex);
        } else {
            out.unclassified.extend(members);
        }
    }
    out.unclassified.sort_unstable();
    Ok(out)
}
