mod common;

use common::{toy_model, v};
use flowcast::config::ForecastConfig;
use flowcast::eval::{mhd, random_walk_baseline, roc_auc, sample_raster, timing_harness, EvalCase};
use flowcast::forecast::{DensityRaster, Forecaster, Measurement, RasterSpec};
use flowcast::Vec2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raster(masses: Vec<f64>, nx: usize, ny: usize) -> DensityRaster {
    DensityRaster {
        t: 1.0,
        spec: RasterSpec::new([0.0, 0.0, nx as f64, ny as f64], nx, ny).unwrap(),
        masses,
        bound_components: [0.0; 3],
    }
}

fn center(i: usize, nx: usize) -> Vec2 {
    v((i % nx) as f64 + 0.5, (i / nx) as f64 + 0.5)
}

/// ROC by trying every threshold separately, plus the rank-statistic AUC.
fn enumerate(cases: &[(Vec<f64>, usize)]) -> (Vec<(f64, f64)>, f64) {
    let mut all: Vec<(f64, bool)> = Vec::new();
    for (m, truth) in cases {
        all.extend(m.iter().enumerate().map(|(i, &x)| (x, i == *truth)));
    }
    let pos = all.iter().filter(|a| a.1).count() as f64;
    let neg = all.len() as f64 - pos;
    let mut thresholds: Vec<f64> = all.iter().map(|a| a.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut curve = vec![(0.0, 0.0)];
    for th in thresholds {
        let tp = all.iter().filter(|a| a.1 && a.0 >= th).count() as f64;
        let fp = all.iter().filter(|a| !a.1 && a.0 >= th).count() as f64;
        curve.push((fp / neg, tp / pos));
    }
    let mut wins = 0.0;
    for p in all.iter().filter(|a| a.1) {
        for n in all.iter().filter(|a| !a.1) {
            wins += if p.0 > n.0 { 1.0 } else if p.0 == n.0 { 0.5 } else { 0.0 };
        }
    }
    (curve, wins / (pos * neg))
}

fn check(cases: &[(Vec<f64>, usize)], side: usize) {
    let rasters: Vec<DensityRaster> = cases.iter().map(|c| raster(c.0.clone(), side, side)).collect();
    let ec: Vec<EvalCase> = rasters
        .iter()
        .zip(cases)
        .map(|(r, c)| EvalCase { prediction: r, truth: center(c.1, side) })
        .collect();
    let got = roc_auc(&ec).unwrap();
    let (curve, auc) = enumerate(cases);
    assert_eq!(got.points, curve);
    assert!((got.auc - auc).abs() < 1e-15, "{} vs {auc}", got.auc);
}

#[test]
fn roc_matches_enumeration_on_2x2() {
    let base = [0.4, 0.3, 0.2, 0.1];
    for rot in 0..4 {
        let m: Vec<f64> = (0..4).map(|i| base[(i + rot) % 4]).collect();
        for truth in 0..4 {
            check(&[(m.clone(), truth)], 2);
        }
    }
    for truth in 0..4 {
        check(&[(vec![0.25; 4], truth)], 2);
        check(&[(vec![0.5, 0.5, 0.0, 0.0], truth)], 2);
        check(&[(vec![0.7, 0.1, 0.1, 0.1], truth), (vec![0.1, 0.1, 0.7, 0.1], (truth + 1) % 4)], 2);
    }
}

#[test]
fn roc_matches_enumeration_on_3x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n_cases = rng.random_range(1..4);
        let cases: Vec<(Vec<f64>, usize)> = (0..n_cases)
            .map(|_| {
                // coarse values force ties
                let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0..5) as f64).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1.0);
                (raw.iter().map(|x| x / s).collect(), rng.random_range(0..9))
            })
            .collect();
        check(&cases, 3);
    }
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps(
        masses in prop::collection::vec(0.0f64..1.0, 9), truth in 0usize..9,
    ) {
        let r1 = raster(masses.clone(), 3, 3);
        let r2 = raster(masses.iter().map(|m| (3.0 * m).exp() + m * m * m).collect(), 3, 3);
        let a = roc_auc(&[EvalCase { prediction: &r1, truth: center(truth, 3) }]).unwrap();
        let b = roc_auc(&[EvalCase { prediction: &r2, truth: center(truth, 3) }]).unwrap();
        prop_assert_eq!(a.auc, b.auc);
        prop_assert!((0.0..=1.0).contains(&a.auc));
    }

    #[test]
    fn mhd_properties(
        a in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
        b in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
        shift in (-3.0f64..3.0, -3.0f64..3.0),
    ) {
        let a: Vec<Vec2> = a.into_iter().map(|p| v(p.0, p.1)).collect();
        let b: Vec<Vec2> = b.into_iter().map(|p| v(p.0, p.1)).collect();
        let d = mhd(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, mhd(&b, &a).unwrap());
        prop_assert_eq!(mhd(&a, &a).unwrap(), 0.0);
        let s = v(shift.0, shift.1);
        let a2: Vec<Vec2> = a.iter().map(|p| p + s).collect();
        let b2: Vec<Vec2> = b.iter().map(|p| p + s).collect();
        prop_assert!((mhd(&a2, &b2).unwrap() - d).abs() < 1e-9);
    }
}

#[test]
fn mhd_hand_values() {
    let d = mhd(&[v(0., 0.), v(1., 0.)], &[v(0., 1.)]).unwrap();
    assert!((d - (1.0 + 2f64.sqrt()) / 2.0).abs() < 1e-12);
    let d = mhd(&[v(0., 0.)], &[v(3., 4.)]).unwrap();
    assert!((d - 5.0).abs() < 1e-12);
    // directed means 1/3 and 1/2
    let d = mhd(&[v(0., 0.), v(1., 0.), v(2., 0.)], &[v(0., 0.), v(2., 1.)]).unwrap();
    assert!((d - 2.0 / 3.0).abs() < 1e-12, "{d}");
}

#[test]
fn raster_sampling_chi_square() {
    let masses: Vec<f64> = (1..=16).map(|i| i as f64).collect();
    let total: f64 = masses.iter().sum();
    let r = raster(masses.iter().map(|m| m / total).collect(), 4, 4);
    let n = 200_000;
    let pts = sample_raster(&r, n, 77).unwrap();
    let mut counts = [0usize; 16];
    let mut sum_offset = [v(0., 0.); 16];
    for p in &pts {
        let (ix, iy) = r.spec.cell_of(p).unwrap();
        counts[iy * 4 + ix] += 1;
        sum_offset[iy * 4 + ix] += p - r.spec.cell_center(ix, iy);
    }
    let chi2: f64 = counts
        .iter()
        .zip(&masses)
        .map(|(&c, m)| {
            let e = n as f64 * m / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 15 degrees of freedom, p = 0.001
    assert!(chi2 < 37.7, "chi2 {chi2}");
    for (c, s) in counts.iter().zip(&sum_offset) {
        assert!((s / *c as f64).norm() < 0.03);
    }
    assert_eq!(pts, sample_raster(&r, n, 77).unwrap());
}

#[test]
fn random_walk_moments() {
    let spec = RasterSpec::new([-40.0, -40.0, 40.0, 40.0], 400, 400).unwrap();
    let meas = Measurement::new(v(1.0, -2.0), v(0.8, 0.3)).unwrap();
    let (sx, srw, t) = (0.2, 0.9, 3.0);
    let r = random_walk_baseline(&meas, t, sx, srw, &spec).unwrap();
    let mut mean = v(0., 0.);
    for iy in 0..400 {
        for ix in 0..400 {
            mean += spec.cell_center(ix, iy) * r.get(ix, iy);
        }
    }
    let mut var = v(0., 0.);
    for iy in 0..400 {
        for ix in 0..400 {
            let d = spec.cell_center(ix, iy) - mean;
            var += d.component_mul(&d) * r.get(ix, iy);
        }
    }
    let want_mean = meas.x_hat + meas.v_hat * t;
    let want_var = sx * sx + srw * srw * t;
    assert!((mean - want_mean).norm() < 0.02 * want_mean.norm());
    for c in [var.x, var.y] {
        assert!((c - want_var).abs() < 0.02 * want_var, "{c} vs {want_var}");
    }
}

#[test]
fn timing_harness_counts_runs() {
    let model = toy_model(&[0.0, 1.0], [0.0, 0.0, 20.0, 10.0], 0.1, 0.1, 0.01, 1.5);
    let f = Forecaster::new(&model, ForecastConfig { n_t: 3, ..Default::default() }).unwrap();
    let ms = [Measurement::new(v(5., 5.), v(1., 0.)).unwrap(), Measurement::new(v(9., 4.), v(0., 1.)).unwrap()];
    let t = timing_harness(&f, &ms, 3, 2).unwrap();
    assert_eq!(t.runs, 4);
    assert!(t.mean_seconds_per_frame > 0.0 && t.std_seconds_per_frame >= 0.0);
    assert!(timing_harness(&f, &ms, 3, 0).is_err());
}
