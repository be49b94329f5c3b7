//! Cross-checks against independent reimplementations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sake::pilots::{train_pilot, TrainSpec};
use sake::summarize::{fit_projector, ProjectorSpec, SummarySet};
use sake::sysrisk::fit_var_risk;
use sake::trajstore::{generate_linear_lag_system, LinearLagSpec, PoolMeta, PoolShape, TrajectoryPool};

fn summaries(pool: &TrajectoryPool, trajs: std::ops::Range<usize>) -> SummarySet {
    let s = pool.shape();
    let series = trajs
        .map(|i| pool.trajectory(i).iter().map(|&v| v as f64).collect())
        .collect();
    SummarySet::from_series(s.frame_len(), s.t, series, "raw").unwrap()
}

/// Plain least squares with an explicit intercept column, oldest lag first.
fn ols_risk(train: &SummarySet, val: &SummarySet, window: usize) -> f64 {
    let k = train.k();
    let design = |set: &SummarySet| {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for i in 0..set.len() {
            for t in window..set.timesteps() {
                let mut r = vec![1.0];
                for s in t - window..t {
                    r.extend_from_slice(set.state(i, s));
                }
                rows.push(r);
                targets.push(set.state(i, t).to_vec());
            }
        }
        let p = 1 + window * k;
        (
            DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]),
            DMatrix::from_fn(targets.len(), k, |r, c| targets[r][c]),
        )
    };
    let (x, y) = design(train);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let (xv, yv) = design(val);
    let resid = xv * beta - &yv;
    resid.norm_squared() / yv.nrows() as f64
}

#[test]
fn var_risk_matches_independent_least_squares() {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(3, 2, 12, 40, 0.1, 7)).unwrap();
    let (train, val) = (summaries(&pool, 0..8), summaries(&pool, 8..12));
    for window in 1..=5 {
        let ours = fit_var_risk(&train, &val, window, 1e-10).unwrap();
        let oracle = ols_risk(&train, &val, window);
        assert!(((ours - oracle) / oracle).abs() < 1e-6, "L={window}: {ours} vs {oracle}");
    }
}

#[test]
fn lag3_system_curve_drops_then_flattens() {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(4, 3, 60, 60, 0.05, 0)).unwrap();
    let (train, val) = (summaries(&pool, 0..45), summaries(&pool, 45..60));
    let r: Vec<f64> = (1..=8).map(|l| ols_risk(&train, &val, l)).collect();
    // innovations have total variance 4 * 0.05^2
    let floor = 4.0 * 0.05f64.powi(2);
    assert!(r[1] > 1.5 * r[2], "{r:?}");
    for &x in &r[2..] {
        assert!((x / floor - 1.0).abs() < 0.25, "{r:?}");
    }
}

#[test]
fn noiseless_system_is_exactly_representable() {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(2, 2, 6, 30, 0.0, 3)).unwrap();
    let (train, val) = (summaries(&pool, 0..4), summaries(&pool, 4..6));
    let energy = val.trajectory(0).iter().map(|v| v * v).sum::<f64>() / val.trajectory(0).len() as f64;
    let risk = fit_var_risk(&train, &val, 2, 1e-12).unwrap();
    // f32 storage limits how exact the recurrence can be
    assert!(risk < 1e-8 * energy.max(1.0), "risk {risk}, energy {energy}");
}

#[test]
fn isotropic_frames_hit_the_component_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = PoolShape {
        n_traj: 10,
        t: 100,
        c: 1,
        h: 8,
        w: 16,
    };
    let data: Vec<f32> = (0..shape.total_len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let pool = TrajectoryPool::new(shape, data.clone(), PoolMeta::new("iso", 11)).unwrap();
    let proj = fit_projector(&pool.view(), &ProjectorSpec::default()).unwrap();
    assert_eq!(proj.k(), 64);

    // independent spectrum of the standardized sample covariance
    let d = 128;
    let n = data.len() / d;
    let x = DMatrix::from_fn(n, d, |r, c| data[r * d + c] as f64);
    let mean = DVector::from_fn(d, |c, _| x.column(c).mean());
    let mut z = x.clone();
    for c in 0..d {
        let col = x.column(c).add_scalar(-mean[c]);
        let sd = (col.norm_squared() / n as f64).sqrt();
        z.set_column(c, &(col / sd));
    }
    let eig = SymmetricEigen::new(z.tr_mul(&z) / n as f64);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    let top64: f64 = ev[..64].iter().sum::<f64>() / total;
    // flat spectrum: 64 of 128 components fall far short of 99%
    assert!(top64 < 0.8, "{top64}");
    // Marchenko-Pastur edges for d/n = 0.128 put the extreme ratio near 4.5
    let g = (d as f64 / n as f64).sqrt();
    assert!(ev[0] / ev[127] < 1.2 * ((1.0 + g) / (1.0 - g)).powi(2), "{} / {}", ev[0], ev[127]);
    assert!(proj.explained().unwrap() < 0.99);
}

#[test]
fn rollout_matches_naive_recursion() {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(3, 3, 10, 50, 0.05, 21)).unwrap();
    let set = summaries(&pool, 0..10);
    let spec = TrainSpec {
        epochs: 3,
        max_pairs: Some(200),
        max_trajs: None,
    };
    let model = train_pilot(&set, 4, &spec, 1e-3, 5).unwrap();
    let (k, window, start, horizon) = (3, 4, 20, 12);
    let w = model.weights();
    let b = model.intercept();

    let mut hist: Vec<Vec<f64>> = (0..start).map(|t| set.state(2, t).to_vec()).collect();
    let mut naive = Vec::new();
    for _ in 0..horizon {
        let next: Vec<f64> = (0..k)
            .map(|i| {
                let mut acc = b[i];
                for lag in 0..window {
                    let s = &hist[hist.len() - 1 - lag];
                    for j in 0..k {
                        acc += w[(lag * k + j, i)] * s[j];
                    }
                }
                acc
            })
            .collect();
        hist.push(next.clone());
        naive.push(next);
    }
    let ours = model.rollout(&set, 2, start, horizon);
    let again = model.rollout(&set, 2, start, horizon);
    assert_eq!(ours, again);
    for (a, e) in ours.iter().flatten().zip(naive.iter().flatten()) {
        assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
    }
}
