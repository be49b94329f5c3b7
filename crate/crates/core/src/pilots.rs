//! Cheap budget-limited pilots and their rollout diagnostics.
//!
//! The reference pilot is a ridge-regularized linear map from `L` stacked
//! summary frames to the next frame. Selectors only see it through
//! [`PilotEvaluator`], so a heavier model can be slotted in.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};
use crate::summarize::SummarySet;
use crate::sysrisk::lag_features;

pub const PILOT_RIDGE: f64 = 1e-3;
const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotBudget {
    pub epochs: usize,
    pub max_pairs: usize,
    pub train_trajs: usize,
    pub val_trajs: usize,
    pub rollout_train_h: usize,
    pub rollout_val_h: usize,
    pub max_val_rollouts: usize,
    pub anchors: usize,
}

impl PilotBudget {
    pub fn stage1() -> Self {
        PilotBudget {
            epochs: 2,
            max_pairs: 1024,
            train_trajs: 8,
            val_trajs: 4,
            rollout_train_h: 8,
            rollout_val_h: 4,
            max_val_rollouts: 4,
            anchors: 1,
        }
    }

    pub fn stage2() -> Self {
        PilotBudget {
            epochs: 6,
            max_pairs: 4096,
            train_trajs: 24,
            val_trajs: 16,
            rollout_train_h: 32,
            rollout_val_h: 16,
            max_val_rollouts: 8,
            anchors: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("max_pairs", self.max_pairs),
            ("train_trajs", self.train_trajs),
            ("val_trajs", self.val_trajs),
            ("rollout_train_h", self.rollout_train_h),
            ("rollout_val_h", self.rollout_val_h),
            ("max_val_rollouts", self.max_val_rollouts),
            ("anchors", self.anchors),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("pilot budget field {name} must be >= 1"))),
            None => Ok(()),
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            max_pairs: Some(self.max_pairs),
            max_trajs: Some(self.train_trajs),
        }
    }

    pub fn rollout_spec(&self) -> RolloutSpec {
        RolloutSpec {
            horizon: self.rollout_val_h,
            anchors: self.anchors,
            max_trajs: Some(self.max_val_rollouts.min(self.val_trajs)),
        }
    }
}

/// Pairs-per-window of the reference training protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullPairs {
    /// Every admissible position: `n_train * (T - L)`.
    AllPositions,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullProtocol {
    #[serde(default = "default_full_epochs")]
    pub epochs: usize,
    #[serde(default = "default_full_pairs")]
    pub pairs: FullPairs,
    #[serde(default = "default_full_horizon")]
    pub horizon: usize,
    #[serde(default = "default_full_anchors")]
    pub anchors: usize,
}

fn default_full_epochs() -> usize {
    20
}

fn default_full_pairs() -> FullPairs {
    FullPairs::AllPositions
}

fn default_full_horizon() -> usize {
    16
}

fn default_full_anchors() -> usize {
    4
}

impl Default for FullProtocol {
    fn default() -> Self {
        FullProtocol {
            epochs: default_full_epochs(),
            pairs: default_full_pairs(),
            horizon: default_full_horizon(),
            anchors: default_full_anchors(),
        }
    }
}

impl FullProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.horizon == 0 || self.anchors == 0 || self.pairs == FullPairs::Fixed(0) {
            return Err(Error::Config("full protocol counts must be >= 1".into()));
        }
        Ok(())
    }

    /// `N_full(L)` for a training split of `n_train` trajectories of length `t`.
    pub fn n_full(&self, n_train: usize, t: usize, window: usize) -> usize {
        match self.pairs {
            FullPairs::AllPositions => n_train * t.saturating_sub(window),
            FullPairs::Fixed(n) => n,
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            max_pairs: match self.pairs {
                FullPairs::AllPositions => None,
                FullPairs::Fixed(n) => Some(n),
            },
            max_trajs: None,
        }
    }

    pub fn rollout_spec(&self) -> RolloutSpec {
        RolloutSpec {
            horizon: self.horizon,
            anchors: self.anchors,
            max_trajs: None,
        }
    }
}

/// `c(L) = (E_pilot / E_full) * (N_pilot / N_full(L))`.
pub fn cost_of(epochs: usize, realized_pairs: usize, full_epochs: usize, full_pairs: usize) -> f64 {
    assert!(full_epochs > 0 && full_pairs > 0, "full-protocol denominators must be positive");
    (epochs as f64 / full_epochs as f64) * (realized_pairs as f64 / full_pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub max_pairs: Option<usize>,
    pub max_trajs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutSpec {
    pub horizon: usize,
    pub anchors: usize,
    pub max_trajs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub m: f64,
    pub u: f64,
    pub v: f64,
    pub a: Option<f64>,
    pub per_anchor: Vec<f64>,
}

impl Diagnostics {
    /// Largest per-anchor mean error.
    pub fn worst(&self) -> f64 {
        self.per_anchor.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        ok(self.m) && ok(self.u) && ok(self.v) && self.a.is_none_or(ok) && self.per_anchor.iter().all(|&x| ok(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub epochs: usize,
    pub realized_pairs: usize,
    pub train_trajs: Vec<usize>,
    pub seed: u64,
    /// Fewer pairs than regression inputs.
    pub underdetermined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilotModel {
    window: usize,
    k: usize,
    /// `(L*k) x k`, lag blocks most recent first.
    weights: DMatrix<f64>,
    intercept: DVector<f64>,
    provenance: Provenance,
}

impl PilotModel {
    /// Predicts "no change": the next frame equals the latest one.
    pub fn persistence(k: usize, window: usize) -> Self {
        let mut weights = DMatrix::zeros(window * k, k);
        for i in 0..k {
            weights[(i, i)] = 1.0;
        }
        PilotModel {
            window,
            k,
            weights,
            intercept: DVector::zeros(k),
            provenance: Provenance {
                epochs: 0,
                realized_pairs: 0,
                train_trajs: Vec::new(),
                seed: 0,
                underdetermined: false,
            },
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn step(&self, features: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(features);
        (self.weights.tr_mul(&x) + &self.intercept).as_slice().to_vec()
    }

    /// Rolls out `horizon` steps from the true context ending just before `start`.
    pub fn rollout(&self, set: &SummarySet, traj: usize, start: usize, horizon: usize) -> Vec<Vec<f64>> {
        let k = self.k;
        // ring of the latest `window` states, most recent first
        let mut context: Vec<f64> = Vec::with_capacity(self.window * k);
        for lag in 0..self.window {
            context.extend_from_slice(set.state(traj, start - 1 - lag));
        }
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.step(&context);
            context.rotate_right(k);
            context[..k].copy_from_slice(&next);
            out.push(next);
        }
        out
    }
}

fn choose(n: usize, limit: Option<usize>, seed: u64, label: &str) -> Vec<usize> {
    match limit {
        Some(m) if m < n => {
            let mut idx = sample(&mut rng_for(seed, &[tag(label), n as u64]), n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Fits a pilot: closed-form ridge for the first epoch, then one
/// preconditioned refinement step of the ridge objective per further epoch.
pub fn train_pilot(train: &SummarySet, window: usize, spec: &TrainSpec, ridge: f64, seed: u64) -> Result<PilotModel> {
    let fail = |reason: String| Error::Fit { window, reason };
    if spec.epochs == 0 {
        return Err(fail("epochs must be >= 1".into()));
    }
    let trajs = choose(train.len(), spec.max_trajs, seed, "pilot-trajectories");
    let mut positions: Vec<(usize, usize)> = trajs
        .iter()
        .flat_map(|&i| (window..train.timesteps()).map(move |t| (i, t)))
        .collect();
    if let Some(cap) = spec.max_pairs {
        if positions.len() > cap {
            let keep = choose(positions.len(), Some(cap), seed, "pilot-pairs");
            positions = keep.into_iter().map(|i| positions[i]).collect();
        }
    }
    if positions.is_empty() {
        return Err(fail(format!("no training pairs (T={}, {} trajectories)", train.timesteps(), trajs.len())));
    }
    let k = train.k();
    let p = window * k;
    let n = positions.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DMatrix::zeros(n, k);
    let mut row = vec![0.0; p];
    for (r, &(i, t)) in positions.iter().enumerate() {
        lag_features(train, i, t, window, &mut row);
        x.row_mut(r).copy_from_slice(&row);
        y.row_mut(r).copy_from_slice(train.state(i, t));
    }
    let x_mean = DVector::from_fn(p, |j, _| x.column(j).mean());
    let y_mean = DVector::from_fn(k, |j, _| y.column(j).mean());
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[j]);
    }
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col.add_scalar_mut(-y_mean[j]);
    }
    let mut gram = x.tr_mul(&x);
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let rhs = x.tr_mul(&y);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| fail("normal equations are not positive definite".into()))?;
    let mut weights = chol.solve(&rhs);
    for _ in 1..spec.epochs {
        let grad = &rhs - &gram * &weights;
        weights += chol.solve(&grad);
    }
    let intercept = &y_mean - weights.tr_mul(&x_mean);
    Ok(PilotModel {
        window,
        k,
        weights,
        intercept,
        provenance: Provenance {
            epochs: spec.epochs,
            realized_pairs: n,
            train_trajs: trajs,
            seed,
            underdetermined: n < p,
        },
    })
}

/// Evenly spaced rollout starts in `[window, t - horizon]`.
pub fn anchor_starts(window: usize, t: usize, horizon: usize, anchors: usize) -> Result<Vec<usize>> {
    if t < window + horizon {
        return Err(Error::Diagnostics(format!(
            "no admissible anchor: horizon {horizon} with window {window} needs trajectories longer than {}, got {t}",
            window + horizon - 1
        )));
    }
    let span = t - horizon - window;
    if anchors == 1 {
        return Ok(vec![window]);
    }
    let d = anchors - 1;
    Ok((0..anchors).map(|i| window + (2 * i * span + d) / (2 * d)).collect())
}

fn relative_error(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(NORM_FLOOR)
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Autoregressive rollouts from evenly spaced anchors, aggregated to
/// `(m, u, v, a, per_anchor)`.
pub fn rollout_diagnostics(model: &PilotModel, set: &SummarySet, spec: &RolloutSpec, seed: u64) -> Result<Diagnostics> {
    if set.k() != model.k {
        return Err(Error::Shape(format!("summary dimension {} vs pilot {}", set.k(), model.k)));
    }
    if set.is_empty() {
        return Err(Error::Diagnostics("no validation trajectories".into()));
    }
    let starts = anchor_starts(model.window, set.timesteps(), spec.horizon, spec.anchors)?;
    let trajs = choose(set.len(), spec.max_trajs, seed, "rollout-trajectories");
    let h = spec.horizon;
    let tail = h.div_ceil(4);
    let mut per_anchor = vec![0.0; starts.len()];
    let (mut terminal, mut tail_sum) = (0.0, 0.0);
    for (ai, &s) in starts.iter().enumerate() {
        for &i in &trajs {
            let pred = model.rollout(set, i, s, h);
            let errs: Vec<f64> = pred
                .iter()
                .enumerate()
                .map(|(j, p)| relative_error(p, set.state(i, s + j)))
                .collect();
            per_anchor[ai] += errs.iter().sum::<f64>() / h as f64;
            terminal += errs[h - 1];
            tail_sum += errs[h - tail..].iter().sum::<f64>() / tail as f64;
        }
        per_anchor[ai] /= trajs.len() as f64;
    }
    let rollouts = (starts.len() * trajs.len()) as f64;
    let diag = Diagnostics {
        m: per_anchor.iter().sum::<f64>() / per_anchor.len() as f64,
        u: terminal / rollouts,
        v: sample_std(&per_anchor),
        a: Some(tail_sum / rollouts),
        per_anchor,
    };
    if !diag.is_valid() {
        return Err(Error::Diagnostics(format!("non-finite rollout error at window {}", model.window)));
    }
    Ok(diag)
}

/// One pilot training plus evaluation, as written to the run ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotRecord {
    pub stage: String,
    #[serde(rename = "L")]
    pub window: usize,
    pub budget: PilotBudget,
    pub realized_pairs: usize,
    pub cost: f64,
    pub underdetermined: bool,
    pub diagnostics: Diagnostics,
}

pub fn write_ledger<W: Write>(records: &[PilotRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Scores candidate windows for a selector.
pub trait PilotEvaluator: Sync {
    /// Trains and evaluates one budget-limited pilot.
    fn pilot(&self, stage: &str, window: usize, budget: &PilotBudget, seed: u64) -> Result<PilotRecord>;

    /// Full-protocol error `M(L)` diagnostics.
    fn full(&self, window: usize, seed: u64) -> Result<Diagnostics>;

    /// Pilot trainings performed so far.
    fn trainings(&self) -> usize;
}

/// Projected train/val/test summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotData {
    pub train: SummarySet,
    pub val: SummarySet,
    pub test: SummarySet,
}

#[derive(Debug)]
pub struct LinearPilotEvaluator {
    data: PilotData,
    full: FullProtocol,
    ridge: f64,
    trainings: AtomicUsize,
    full_trainings: AtomicUsize,
}

impl LinearPilotEvaluator {
    pub fn new(data: PilotData, full: FullProtocol) -> Self {
        LinearPilotEvaluator {
            data,
            full,
            ridge: PILOT_RIDGE,
            trainings: AtomicUsize::new(0),
            full_trainings: AtomicUsize::new(0),
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn data(&self) -> &PilotData {
        &self.data
    }

    pub fn protocol(&self) -> &FullProtocol {
        &self.full
    }

    /// Full-protocol trainings performed so far.
    pub fn full_trainings(&self) -> usize {
        self.full_trainings.load(Ordering::Relaxed)
    }

    pub fn n_full(&self, window: usize) -> usize {
        self.full.n_full(self.data.train.len(), self.data.train.timesteps(), window)
    }
}

impl PilotEvaluator for LinearPilotEvaluator {
    fn pilot(&self, stage: &str, window: usize, budget: &PilotBudget, seed: u64) -> Result<PilotRecord> {
        budget.validate()?;
        let model = train_pilot(&self.data.train, window, &budget.train_spec(), self.ridge, seed)?;
        self.trainings.fetch_add(1, Ordering::Relaxed);
        let diagnostics = rollout_diagnostics(&model, &self.data.val, &budget.rollout_spec(), seed)?;
        let prov = model.provenance();
        Ok(PilotRecord {
            stage: stage.to_string(),
            window,
            budget: *budget,
            realized_pairs: prov.realized_pairs,
            cost: cost_of(budget.epochs, prov.realized_pairs, self.full.epochs, self.n_full(window).max(1)),
            underdetermined: prov.underdetermined,
            diagnostics,
        })
    }

    fn full(&self, window: usize, seed: u64) -> Result<Diagnostics> {
        let model = train_pilot(&self.data.train, window, &self.full.train_spec(), self.ridge, seed)?;
        self.full_trainings.fetch_add(1, Ordering::Relaxed);
        rollout_diagnostics(&model, &self.data.test, &self.full.rollout_spec(), seed)
    }

    fn trainings(&self) -> usize {
        self.trainings.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn var2(n: usize, t: usize, noise: f64, seed: u64) -> SummarySet {
        let mut rng = crate::rng::rng(seed);
        let series = (0..n)
            .map(|_| {
                let mut s = vec![standard_normal(&mut rng), standard_normal(&mut rng)];
                while s.len() < t {
                    let l = s.len();
                    // neutral oscillation when noise = 0
                    s.push(2.0 * 0.7f64.cos() * s[l - 1] - s[l - 2] + noise * standard_normal(&mut rng));
                }
                s
            })
            .collect();
        SummarySet::from_series(1, t, series, "var2").unwrap()
    }

    fn rollout(h: usize, a: usize) -> RolloutSpec {
        RolloutSpec {
            horizon: h,
            anchors: a,
            max_trajs: None,
        }
    }

    #[test]
    fn cost_arithmetic() {
        assert_eq!(cost_of(2, 1024, 20, 8192), 0.0125);
        assert_eq!(cost_of(20, 8192, 20, 8192), 1.0);
        let full = FullProtocol {
            pairs: FullPairs::Fixed(8192),
            ..FullProtocol::default()
        };
        assert_eq!(full.n_full(3, 50, 4), 8192);
        assert_eq!(FullProtocol::default().n_full(3, 50, 4), 138);
    }

    #[test]
    fn zero_budget_fields_are_rejected() {
        let b = PilotBudget {
            epochs: 0,
            ..PilotBudget::stage1()
        };
        assert!(b.validate().is_err());
        assert!(PilotBudget::stage2().validate().is_ok());
    }

    #[test]
    fn identity_dynamics_are_learned() {
        let series = (0..8).map(|i| vec![10.0 * i as f64 - 35.0; 20]).collect();
        let set = SummarySet::from_series(1, 20, series, "const").unwrap();
        for window in 1..=3 {
            let spec = PilotBudget::stage1().train_spec();
            let m = train_pilot(&set, window, &spec, PILOT_RIDGE, 0).unwrap();
            let d = rollout_diagnostics(&m, &set, &rollout(1, 2), 0).unwrap();
            assert!(d.m <= 1e-6, "{}", d.m);
        }
    }

    #[test]
    fn more_history_helps_on_var2() {
        let train = var2(20, 60, 0.0, 1);
        let val = var2(6, 60, 0.0, 2);
        let spec = PilotBudget::stage2().train_spec();
        let m: Vec<f64> = [1, 2]
            .iter()
            .map(|&w| {
                let p = train_pilot(&train, w, &spec, PILOT_RIDGE, 3).unwrap();
                rollout_diagnostics(&p, &val, &rollout(8, 4), 3).unwrap().m
            })
            .collect();
        assert!(m[1] < m[0], "{m:?}");
        assert!(m[1] < 1e-3);
    }

    #[test]
    fn single_anchor_has_zero_spread() {
        let set = var2(3, 30, 0.1, 4);
        let p = train_pilot(&set, 2, &PilotBudget::stage1().train_spec(), PILOT_RIDGE, 0).unwrap();
        let d = rollout_diagnostics(&p, &set, &rollout(4, 1), 0).unwrap();
        assert_eq!(d.v, 0.0);
        assert_eq!(d.per_anchor.len(), 1);
        assert!(d.is_valid());
    }

    #[test]
    fn short_trajectories_name_the_horizon() {
        let set = var2(2, 10, 0.1, 4);
        let p = PilotModel::persistence(1, 3);
        let err = rollout_diagnostics(&p, &set, &rollout(8, 2), 0).unwrap_err().to_string();
        assert!(err.contains("horizon 8"), "{err}");
    }

    #[test]
    fn anchors_are_evenly_spaced() {
        assert_eq!(anchor_starts(2, 30, 4, 4).unwrap(), vec![2, 10, 18, 26]);
        assert_eq!(anchor_starts(3, 30, 4, 1).unwrap(), vec![3]);
        assert_eq!(anchor_starts(3, 7, 4, 3).unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn pair_cap_is_respected_and_deterministic() {
        let set = var2(10, 40, 0.1, 5);
        let spec = TrainSpec {
            epochs: 3,
            max_pairs: Some(50),
            max_trajs: Some(4),
        };
        let a = train_pilot(&set, 2, &spec, PILOT_RIDGE, 9).unwrap();
        let b = train_pilot(&set, 2, &spec, PILOT_RIDGE, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance().realized_pairs, 50);
        assert_eq!(a.provenance().train_trajs.len(), 4);
    }

    #[test]
    fn evaluator_counts_trainings_and_costs() {
        let data = PilotData {
            train: var2(10, 40, 0.05, 1),
            val: var2(4, 40, 0.05, 2),
            test: var2(4, 40, 0.05, 3),
        };
        let ev = LinearPilotEvaluator::new(data, FullProtocol::default());
        let r = ev.pilot("stage1", 2, &PilotBudget::stage1(), 0).unwrap();
        assert_eq!(ev.trainings(), 1);
        // 8 trajectories x 38 positions, full = 10 x 38
        assert_eq!(r.realized_pairs, 304);
        assert!((r.cost - 0.1 * 0.8).abs() < 1e-15);
        ev.full(2, 0).unwrap();
        assert_eq!(ev.trainings(), 1);
        let mut buf = Vec::new();
        write_ledger(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
