//! The training pipeline: smoothing, clustering, field and prior fitting and
//! noise estimation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{cluster_trajectories, EndpointEmbedding};
use crate::config::TrainConfig;
use crate::error::{invalid, Error, Result};
use crate::fields::fit_angle_field;
use crate::ingest::{smooth, velocities, SceneDomain, Trajectory};
use crate::model::{ClusterSummary, TrainedModel, SCHEMA_VERSION};
use crate::priors::{
    estimate_kappa, estimate_s_max, estimate_sigma_x, fit_position_prior, ModelPriors, NoiseModel,
};
use crate::Vec2;

/// Median spacing between consecutive samples over all trajectories.
pub fn median_frame_dt(trajs: &[Trajectory]) -> Result<f64> {
    let mut gaps: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.samples().windows(2).map(|w| w[1].t - w[0].t))
        .collect();
    if gaps.is_empty() {
        return invalid("no sample intervals to infer frame_dt from");
    }
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Ok(if n % 2 == 1 { gaps[n / 2] } else { 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]) })
}

/// Deterministic `(train, test)` split: trajectories are shuffled with `seed`
/// and fold `f` holds out the `f`-th block of `round(fraction · N)`.
pub fn holdout_split(
    trajs: Vec<Trajectory>,
    fraction: f64,
    fold: usize,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("holdout fraction {fraction} outside (0, 1)"));
    }
    let n = trajs.len();
    let block = ((fraction * n as f64).round() as usize).max(1);
    if (fold + 1) * block > n {
        return invalid(format!("fold {fold} of {block} trajectories exceeds the {n} available"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_mask = vec![false; n];
    for &i in &order[fold * block..(fold + 1) * block] {
        test_mask[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (tr, held) in trajs.into_iter().zip(test_mask) {
        if held {
            test.push(tr);
        } else {
            train.push(tr);
        }
    }
    Ok((train, test))
}

/// Fit a full model to raw trajectories.
pub fn train(raw: &[Trajectory], config: &TrainConfig) -> Result<TrainedModel> {
    if raw.len() < 2 {
        return Err(Error::Degenerate(format!(
            "no usable trajectories: need at least 2, got {}",
            raw.len()
        )));
    }
    let ic = &config.ingest;
    let frame_dt = match ic.frame_dt {
        Some(dt) => dt,
        None => median_frame_dt(raw)?,
    };
    let smoothed = raw
        .iter()
        .map(|t| smooth(t, ic.smoothing_window))
        .collect::<Result<Vec<_>>>()?;
    let domain = match ic.domain {
        Some(b) => SceneDomain::new([b[0], b[1]], [b[2], b[3]], frame_dt)?,
        None => SceneDomain::enclosing(raw, ic.domain_margin, frame_dt)?,
    };

    let clustering = cluster_trajectories(&smoothed, &config.clustering)?;
    if clustering.n() == 0 {
        return Err(Error::Degenerate(format!(
            "clustering found no cluster with at least {} trajectories; \
             lower clustering.min_size or supply more data",
            config.clustering.min_size
        )));
    }
    log::info!("{} clusters, sizes {:?}", clustering.n(), clustering.sizes());

    let mut fields = Vec::with_capacity(clustering.n());
    let mut priors = Vec::with_capacity(clustering.n());
    for (members, &ex) in clustering.clusters.iter().zip(&clustering.exemplars) {
        let reference = EndpointEmbedding::of(&smoothed[ex]);
        let mut points = Vec::new();
        let mut headings = Vec::new();
        let mut prior_points = Vec::new();
        for &i in members {
            let tr = &smoothed[i];
            let sign = if EndpointEmbedding::of(tr).opposes(&reference) { -1.0 } else { 1.0 };
            for (s, v) in tr.samples().iter().zip(velocities(tr)?) {
                let q = domain.to_canonical(&s.p);
                let inside = q.x.abs() <= 1.0 && q.y.abs() <= 1.0;
                if inside {
                    prior_points.push(q);
                }
                let speed = v.v.norm();
                if inside && speed > 0.0 {
                    points.push(q);
                    headings.push(v.v * (sign / speed));
                }
            }
        }
        if points.is_empty() {
            return Err(Error::Degenerate("a cluster has no moving samples inside the domain".into()));
        }
        let fit = fit_angle_field(&points, &headings, &config.fields)?;
        fields.push(fit.field);
        priors.push(fit_position_prior(&prior_points, &config.priors)?);
    }

    let s_max = estimate_s_max(&smoothed)?;
    let model_priors = ModelPriors::new(clustering.n(), s_max)?;
    let sigma_x = estimate_sigma_x(raw, &smoothed)?;
    let nc = &config.noise;
    if nc.kappa_substeps == 0 {
        return invalid("kappa_substeps must be at least 1");
    }
    let eval_times: Vec<f64> = nc.kappa_eval_frames.iter().map(|f| f * frame_dt).collect();
    let kappa = estimate_kappa(
        &clustering,
        &fields,
        &smoothed,
        &domain,
        &eval_times,
        frame_dt / nc.kappa_substeps as f64,
    )?;
    let noise = NoiseModel::new(sigma_x, frame_dt, kappa)?;

    let mut sq = 0.0;
    let mut count = 0usize;
    for tr in &smoothed {
        for v in velocities(tr)? {
            sq += v.v.norm_squared();
            count += 1;
        }
    }
    let rms_speed = (sq / count as f64).sqrt();

    let model = TrainedModel {
        schema_version: SCHEMA_VERSION,
        domain,
        clustering: ClusterSummary {
            n: clustering.n(),
            sizes: clustering.sizes(),
            unclassified: clustering.unclassified.len(),
            converged: clustering.converged,
            fallback: clustering.fallback,
        },
        fields,
        position_priors: priors,
        model_priors,
        noise,
        rms_speed,
        training: config.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Measurement taken from the start of a track: smoothed first position and
/// forward-difference velocity.
pub fn initial_measurement(smoothed: &Trajectory) -> Result<(Vec2, Vec2)> {
    let v = velocities(smoothed)?;
    Ok((smoothed.first().p, v[0].v))
}
