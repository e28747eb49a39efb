//! Scoring forecasts: occupancy ROC/AUC, modified Hausdorff distance to
//! raster samples, a random-walk baseline and per-frame timing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalConfig, ForecastConfig};
use crate::error::{invalid, Error, Result};
use crate::forecast::{rasterize, Atom, DensityRaster, Forecaster, Measurement, RasterSpec};
use crate::ingest::{smooth, Trajectory};
use crate::model::TrainedModel;
use crate::train::initial_measurement;
use crate::Vec2;

/// A forecast raster paired with the true position at its time.
#[derive(Debug, Clone, Copy)]
pub struct EvalCase<'a> {
    pub prediction: &'a DensityRaster,
    pub truth: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Trapezoidal area under a curve given in drawing order.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum()
}

/// ROC over all cells of all cases.
///
/// Each case contributes one positive (the cell holding its truth point);
/// every other cell is a negative. A cell is predicted positive at threshold
/// `τ` when its mass is at least `τ`; every cell value is a threshold.
pub fn roc_auc(cases: &[EvalCase]) -> Result<RocCurve> {
    if cases.is_empty() {
        return invalid("ROC needs at least one case");
    }
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for c in cases {
        let r = c.prediction;
        let Some((tx, ty)) = r.spec.cell_of(&c.truth) else {
            log::warn!("truth {:?} outside raster at t = {}; case dropped", c.truth, r.t);
            continue;
        };
        let truth_cell = ty * r.spec.nx + tx;
        scored.extend(r.masses.iter().enumerate().map(|(i, &m)| (m, i == truth_cell)));
    }
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("ROC needs both positive and negative cells".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let v = scored[i].0;
        while i < scored.len() && scored[i].0 == v {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

fn directed_mean(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-neighbour distances.
pub fn mhd(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("MHD of an empty point set");
    }
    Ok(directed_mean(a, b).max(directed_mean(b, a)))
}

/// `n` iid draws: a cell by its mass, then a uniform point inside it.
pub fn sample_raster(raster: &DensityRaster, n: usize, seed: u64) -> Result<Vec<Vec2>> {
    if n == 0 {
        return invalid("need at least one sample");
    }
    let mut cdf = Vec::with_capacity(raster.masses.len());
    let mut acc = 0.0;
    for &m in &raster.masses {
        if !(m >= 0.0) {
            return invalid("raster masses must be non-negative");
        }
        acc += m;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Degenerate("cannot sample an empty raster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = &raster.spec;
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let mut i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            while raster.masses[i] == 0.0 && i > 0 {
                i -= 1;
            }
            let r = spec.cell_rect(i % spec.nx, i / spec.nx);
            Vec2::new(rng.random_range(r[0]..r[2]), rng.random_range(r[1]..r[3]))
        })
        .collect())
}

/// Gaussian diffusion around constant-velocity extrapolation, normalized
/// over the raster.
pub fn random_walk_baseline(
    meas: &Measurement,
    t: f64,
    sigma_x: f64,
    sigma_rw: f64,
    spec: &RasterSpec,
) -> Result<DensityRaster> {
    if !(t > 0.0) {
        return invalid("random-walk time must be positive");
    }
    let atom = Atom {
        weight: 1.0,
        mean: meas.x_hat + meas.v_hat * t,
        variance: sigma_x * sigma_x + sigma_rw * sigma_rw * t,
    };
    if !(atom.variance > 0.0) {
        return invalid("random-walk variance must be positive");
    }
    let mut r = DensityRaster {
        t,
        spec: *spec,
        masses: rasterize(spec, &[atom]),
        bound_components: [0.0; 3],
    };
    r.normalize()?;
    Ok(r)
}

/// Default random-walk scale: RMS training speed times `√Δt`.
pub fn default_sigma_rw(model: &TrainedModel) -> f64 {
    model.rms_speed * model.frame_dt().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_seconds_per_frame: f64,
    pub std_seconds_per_frame: f64,
    pub runs: usize,
}

fn timing_from(per_frame: &[f64]) -> Timing {
    let n = per_frame.len() as f64;
    let mean = per_frame.iter().sum::<f64>() / n;
    let var = per_frame.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Timing { mean_seconds_per_frame: mean, std_seconds_per_frame: var.sqrt(), runs: per_frame.len() }
}

/// Wall-clock seconds per produced frame over `reps` passes through
/// `measurements`.
pub fn timing_harness(
    forecaster: &Forecaster,
    measurements: &[Measurement],
    n_t: usize,
    reps: usize,
) -> Result<Timing> {
    if reps == 0 {
        return invalid("timing needs at least one repetition");
    }
    if measurements.is_empty() {
        return invalid("timing needs at least one measurement");
    }
    let mut per_frame = Vec::with_capacity(reps * measurements.len());
    for _ in 0..reps {
        for m in measurements {
            let start = Instant::now();
            let frames = forecaster.predict_steps(m, n_t)?;
            per_frame.push(start.elapsed().as_secs_f64() / frames.len() as f64);
        }
    }
    Ok(timing_from(&per_frame))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    pub auc_ours: f64,
    pub auc_rw: f64,
    pub mhd_ours: f64,
    pub mhd_rw: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Run metadata as ordered `key=value` pairs.
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
    /// Largest `|Σ masses - 1|` over every raster produced.
    pub max_normalization_error: f64,
    pub timing: Timing,
}

impl EvalReport {
    /// Metadata header plus the `t,auc_ours,auc_rw,mhd_ours,mhd_rw` table.
    /// Timing is left out so that seeded runs give identical files.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s.push_str("t,auc_ours,auc_rw,mhd_ours,mhd_rw\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.t, r.auc_ours, r.auc_rw, r.mhd_ours, r.mhd_rw));
        }
        s
    }

    pub fn timing_text(&self) -> String {
        format!(
            "mean_seconds_per_frame={}\nstd_seconds_per_frame={}\nruns={}\n",
            self.timing.mean_seconds_per_frame, self.timing.std_seconds_per_frame, self.timing.runs
        )
    }
}

fn paired<'a>(rasters: &'a [DensityRaster], truths: &[Vec2]) -> Vec<EvalCase<'a>> {
    rasters.iter().zip(truths).map(|(r, &truth)| EvalCase { prediction: r, truth }).collect()
}

fn sample_seed(seed: u64, case: usize, level: usize, which: u64) -> u64 {
    seed ^ (case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((level as u64) << 40) ^ (which << 62)
}

/// Forecast every test track from its first smoothed sample and score both
/// the engine and the random-walk baseline at each frame.
///
/// Tracks that end before the horizon are scored only at the frames they
/// cover.
pub fn evaluate(
    model: &TrainedModel,
    tests: &[Trajectory],
    forecast: &ForecastConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if tests.is_empty() {
        return invalid("empty test set");
    }
    let forecaster = Forecaster::new(model, forecast.clone())?;
    let spec = *forecaster.spec();
    let n_t = forecast.n_t;
    let dt = model.frame_dt();
    let sigma_rw = eval.sigma_rw.unwrap_or_else(|| default_sigma_rw(model));
    let window = model.training.ingest.smoothing_window;

    let mut ours: Vec<Vec<DensityRaster>> = vec![Vec::new(); n_t];
    let mut rw: Vec<Vec<DensityRaster>> = vec![Vec::new(); n_t];
    let mut truths: Vec<Vec<Vec2>> = vec![Vec::new(); n_t];
    let mut mhd_ours = vec![0.0; n_t];
    let mut mhd_rw = vec![0.0; n_t];
    let mut per_frame = Vec::new();
    let mut truncated = 0usize;
    let mut max_err = 0.0f64;

    for (ci, raw) in tests.iter().enumerate() {
        let sm = smooth(raw, window)?;
        let (x_hat, v_hat) = initial_measurement(&sm)?;
        let meas = Measurement::new(x_hat, v_hat)?;
        let t0 = raw.first().t;
        let covered = (1..=n_t).take_while(|&l| raw.position_at(t0 + l as f64 * dt).is_some()).count();
        if covered < n_t {
            truncated += 1;
        }
        if covered == 0 {
            continue;
        }
        let start = Instant::now();
        let frames = forecaster.predict_steps(&meas, covered)?;
        per_frame.push(start.elapsed().as_secs_f64() / covered as f64);
        for (l, frame) in frames.into_iter().enumerate() {
            let t = (l + 1) as f64 * dt;
            let truth = raw.position_at(t0 + t).expect("covered frame");
            let base = random_walk_baseline(&meas, t, model.noise.sigma_x, sigma_rw, &spec)?;
            for r in [&frame.raster, &base] {
                max_err = max_err.max((r.total() - 1.0).abs());
            }
            let a = [truth];
            mhd_ours[l] += mhd(&a, &sample_raster(&frame.raster, eval.samples, sample_seed(seed, ci, l, 0))?)?;
            mhd_rw[l] += mhd(&a, &sample_raster(&base, eval.samples, sample_seed(seed, ci, l, 1))?)?;
            ours[l].push(frame.raster);
            rw[l].push(base);
            truths[l].push(truth);
        }
    }

    let mut rows = Vec::new();
    for l in 0..n_t {
        let n = truths[l].len();
        if n == 0 {
            continue;
        }
        rows.push(ReportRow {
            t: (l + 1) as f64 * dt,
            auc_ours: roc_auc(&paired(&ours[l], &truths[l]))?.auc,
            auc_rw: roc_auc(&paired(&rw[l], &truths[l]))?.auc,
            mhd_ours: mhd_ours[l] / n as f64,
            mhd_rw: mhd_rw[l] / n as f64,
            cases: n,
        });
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("no test track covers the first forecast frame".into()));
    }
    let metadata = vec![
        ("seed".to_string(), seed.to_string()),
        ("cases".to_string(), tests.len().to_string()),
        ("truncated".to_string(), truncated.to_string()),
        ("n_t".to_string(), n_t.to_string()),
        ("frame_dt".to_string(), dt.to_string()),
        ("n_x".to_string(), forecast.n_x.to_string()),
        ("eps_tol".to_string(), forecast.eps_tol.to_string()),
        ("raster".to_string(), format!("{}x{}", spec.nx, spec.ny)),
        (
            "bounds".to_string(),
            format!("{},{},{},{}", spec.bounds[0], spec.bounds[1], spec.bounds[2], spec.bounds[3]),
        ),
        ("samples".to_string(), eval.samples.to_string()),
        ("sigma_rw".to_string(), sigma_rw.to_string()),
        ("max_normalization_error".to_string(), format!("{max_err:e}")),
    ];
    Ok(EvalReport {
        metadata,
        rows,
        max_normalization_error: max_err,
        timing: timing_from(&per_frame),
    })
}
