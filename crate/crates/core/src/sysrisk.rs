//! Backbone-independent system risk `R_sys(L)`: ridge VAR(L) models fitted
//! on summary sequences, scored by one-step validation error, with
//! trajectory-level bootstrap replicates for upper confidence bounds.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};
use crate::summarize::SummarySet;

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Ordered, strictly increasing candidate window lengths.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CandidateGrid(Vec<usize>);

impl CandidateGrid {
    pub fn new(windows: Vec<usize>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Config("candidate grid is empty".into()));
        }
        if windows[0] < 1 {
            return Err(Error::Config("window lengths must be >= 1".into()));
        }
        if windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("grid must be strictly increasing: {windows:?}")));
        }
        Ok(CandidateGrid(windows))
    }

    /// Inclusive range `lo..=hi`.
    pub fn range(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("empty grid range {lo}..{hi}")));
        }
        Self::new((lo..=hi).collect())
    }

    pub fn windows(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l_min(&self) -> usize {
        self.0[0]
    }

    pub fn l_max(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn position(&self, window: usize) -> Option<usize> {
        self.0.binary_search(&window).ok()
    }

    pub fn contains(&self, window: usize) -> bool {
        self.position(window).is_some()
    }

    /// Next larger grid member.
    pub fn successor(&self, window: usize) -> Option<usize> {
        self.position(window).and_then(|p| self.0.get(p + 1).copied())
    }
}

impl TryFrom<Vec<usize>> for CandidateGrid {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        CandidateGrid::new(v)
    }
}

impl From<CandidateGrid> for Vec<usize> {
    fn from(g: CandidateGrid) -> Self {
        g.0
    }
}

/// Parses `"1..16"` (inclusive) or a comma list `"1,2,4,8"`.
impl FromStr for CandidateGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse grid {s:?}"));
        if let Some((lo, hi)) = s.split_once("..") {
            let hi = hi.trim_start_matches('=');
            return CandidateGrid::range(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        }
        let windows = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        CandidateGrid::new(windows)
    }
}

impl fmt::Display for CandidateGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let contiguous = self.0.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous && self.0.len() > 1 {
            write!(f, "{}..{}", self.l_min(), self.l_max())
        } else {
            let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSpec {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_resamples() -> usize {
    300
}

fn default_level() -> f64 {
    0.95
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            resamples: default_resamples(),
            level: default_level(),
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(Error::Config(format!("bootstrap needs B >= 2, got {}", self.resamples)));
        }
        if !(self.level > 0.5 && self.level < 1.0) {
            return Err(Error::Config(format!("bootstrap level must lie in (0.5,1), got {}", self.level)));
        }
        Ok(())
    }

    /// Resample index sets over `n` trajectories, shared by every window.
    pub fn resample_indices(&self, n: usize) -> Vec<Vec<usize>> {
        let mut rng = rng_for(self.seed, &[tag("bootstrap"), n as u64]);
        (0..self.resamples)
            .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
            .collect()
    }
}

/// Empirical quantile with "higher" interpolation: always an attained value.
pub fn ucb(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty(), "ucb of an empty replicate list");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = level * (sorted.len() - 1) as f64;
    let idx = ((pos - 1e-9).ceil().max(0.0) as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// A fitted ridge VAR(L): `s[t] ~ W^T [s[t-1], ..., s[t-L]] + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarFit {
    window: usize,
    k: usize,
    /// `(L*k) x k`
    weights: DMatrix<f64>,
    intercept: DVector<f64>,
}

/// Stacked lag features for target index `t`, most recent first.
pub(crate) fn lag_features(set: &SummarySet, traj: usize, t: usize, window: usize, out: &mut [f64]) {
    let k = set.k();
    for lag in 0..window {
        out[lag * k..(lag + 1) * k].copy_from_slice(set.state(traj, t - 1 - lag));
    }
}

/// Ridge regression with an unpenalized intercept. Rows of `x` are inputs,
/// rows of `y` targets.
pub(crate) fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows();
    let x_mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n as f64);
    let y_mean = DVector::from_fn(y.ncols(), |j, _| y.column(j).sum() / n as f64);
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[j]);
    }
    let mut yc = y.clone();
    for (j, mut col) in yc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-y_mean[j]);
    }
    let mut gram = xc.tr_mul(&xc);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let rhs = xc.tr_mul(&yc);
    let weights = gram.cholesky()?.solve(&rhs);
    let intercept = &y_mean - weights.tr_mul(&x_mean);
    Some((weights, intercept))
}

impl VarFit {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// Fits on every target index `t >= first_target` of every trajectory.
    pub fn fit(train: &SummarySet, window: usize, ridge: f64, first_target: usize) -> Result<VarFit> {
        let fail = |reason: String| Error::Fit { window, reason };
        if !(ridge > 0.0) {
            return Err(fail(format!("ridge must be > 0, got {ridge}")));
        }
        if window < 1 || first_target < window {
            return Err(fail(format!("first target {first_target} precedes a full window")));
        }
        let t_len = train.timesteps();
        if train.is_empty() || t_len <= first_target {
            return Err(fail(format!(
                "no admissible training positions (T={t_len}, first target {first_target}, {} trajectories)",
                train.len()
            )));
        }
        let k = train.k();
        let p = window * k;
        let per_traj = t_len - first_target;
        let n = train.len() * per_traj;
        let mut x = DMatrix::zeros(n, p);
        let mut y = DMatrix::zeros(n, k);
        let mut row = vec![0.0; p];
        for traj in 0..train.len() {
            for (off, t) in (first_target..t_len).enumerate() {
                let r = traj * per_traj + off;
                lag_features(train, traj, t, window, &mut row);
                x.row_mut(r).copy_from_slice(&row);
                y.row_mut(r).copy_from_slice(train.state(traj, t));
            }
        }
        let (weights, intercept) =
            ridge_solve(&x, &y, ridge).ok_or_else(|| fail("normal equations are not positive definite".into()))?;
        Ok(VarFit {
            window,
            k,
            weights,
            intercept,
        })
    }

    pub fn predict(&self, features: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(features);
        self.weights.tr_mul(&x) + &self.intercept
    }

    /// Per-trajectory `(sum of squared residual norms, positions)` over
    /// targets `t >= first_target`.
    pub fn residual_sums(&self, set: &SummarySet, first_target: usize) -> Result<Vec<(f64, usize)>> {
        if set.k() != self.k {
            return Err(Error::Shape(format!("summary dimension {} vs fitted {}", set.k(), self.k)));
        }
        if first_target < self.window {
            return Err(Error::Fit {
                window: self.window,
                reason: format!("first target {first_target} precedes a full window"),
            });
        }
        let mut row = vec![0.0; self.window * self.k];
        Ok((0..set.len())
            .map(|traj| {
                let mut sum = 0.0;
                let mut count = 0;
                for t in first_target..set.timesteps() {
                    lag_features(set, traj, t, self.window, &mut row);
                    let pred = self.predict(&row);
                    sum += pred
                        .iter()
                        .zip(set.state(traj, t))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>();
                    count += 1;
                }
                (sum, count)
            })
            .collect())
    }

    /// Mean squared one-step residual norm.
    pub fn risk(&self, set: &SummarySet, first_target: usize) -> Result<f64> {
        let sums = self.residual_sums(set, first_target)?;
        pooled(&sums, None).ok_or_else(|| Error::Fit {
            window: self.window,
            reason: "no admissible evaluation positions".into(),
        })
    }
}

/// Pooled mean over trajectories, optionally through a resample index set.
fn pooled(sums: &[(f64, usize)], indices: Option<&[usize]>) -> Option<f64> {
    let (s, c) = match indices {
        Some(idx) => idx.iter().fold((0.0, 0usize), |(s, c), &i| (s + sums[i].0, c + sums[i].1)),
        None => sums.iter().fold((0.0, 0usize), |(s, c), x| (s + x.0, c + x.1)),
    };
    (c > 0).then(|| s / c as f64)
}

/// Validation risk of a ridge VAR(`window`) fitted on `train`, using every
/// admissible position (targets `t >= window`).
pub fn fit_var_risk(train: &SummarySet, val: &SummarySet, window: usize, ridge: f64) -> Result<f64> {
    if val.timesteps() <= window {
        return Err(Error::Fit {
            window,
            reason: format!("validation trajectories of length {} are too short", val.timesteps()),
        });
    }
    VarFit::fit(train, window, ridge, window)?.risk(val, window)
}

/// `R_sys(L)` over a grid with coupled bootstrap replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    grid: CandidateGrid,
    risk: Vec<f64>,
    /// `replicates[i][b]` is replicate `b` at `grid[i]`.
    replicates: Vec<Vec<f64>>,
    ridge: f64,
    level: f64,
    /// Validation-trajectory index sets, reused at every window.
    resample_indices: Vec<Vec<usize>>,
}

impl RiskCurve {
    /// Assembles a curve from precomputed values (e.g. a hand-built curve
    /// with frozen replicates).
    pub fn from_parts(grid: CandidateGrid, risk: Vec<f64>, replicates: Vec<Vec<f64>>, level: f64) -> Result<Self> {
        if risk.len() != grid.len() || replicates.len() != grid.len() {
            return Err(Error::Shape(format!(
                "curve needs one risk and one replicate list per window ({} windows)",
                grid.len()
            )));
        }
        let b = replicates[0].len();
        if b == 0 || replicates.iter().any(|r| r.len() != b) {
            return Err(Error::Shape("replicate counts must be equal and nonzero".into()));
        }
        if risk.iter().chain(replicates.iter().flatten()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Shape("risks must be finite and non-negative".into()));
        }
        Ok(RiskCurve {
            grid,
            risk,
            replicates,
            ridge: f64::NAN,
            level,
            resample_indices: Vec::new(),
        })
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn risks(&self) -> &[f64] {
        &self.risk
    }

    pub fn risk(&self, window: usize) -> Option<f64> {
        self.grid.position(window).map(|p| self.risk[p])
    }

    pub fn replicates(&self, window: usize) -> Option<&[f64]> {
        self.grid.position(window).map(|p| self.replicates[p].as_slice())
    }

    pub fn replicate_count(&self) -> usize {
        self.replicates[0].len()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn resample_indices(&self) -> &[Vec<usize>] {
        &self.resample_indices
    }

    pub fn ucb(&self, window: usize) -> Option<f64> {
        self.replicates(window).map(|r| ucb(r, self.level))
    }

    /// CSV with columns `L, risk, ucb, replicate_0..replicate_{B-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["L".to_string(), "risk".into(), "ucb".into()];
        header.extend((0..self.replicate_count()).map(|b| format!("replicate_{b}")));
        w.write_record(&header)?;
        for (i, &window) in self.grid.windows().iter().enumerate() {
            let mut rec = vec![
                window.to_string(),
                self.risk[i].to_string(),
                ucb(&self.replicates[i], self.level).to_string(),
            ];
            rec.extend(self.replicates[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits one ridge VAR per window on `train` and scores every window on the
/// same validation targets (`t >= L_max`). Coefficients stay fixed across
/// bootstrap replicates; each replicate resamples validation trajectories.
pub fn risk_curve(
    train: &SummarySet,
    val: &SummarySet,
    grid: &CandidateGrid,
    ridge: f64,
    boot: &BootstrapSpec,
) -> Result<RiskCurve> {
    boot.validate()?;
    let first_target = grid.l_max();
    for (name, set) in [("train", train), ("val", val)] {
        if set.timesteps() <= first_target {
            return Err(Error::Fit {
                window: grid.l_max(),
                reason: format!("{name} trajectories of length {} must exceed L_max", set.timesteps()),
            });
        }
        if set.is_empty() {
            return Err(Error::Fit {
                window: grid.l_max(),
                reason: format!("{name} summaries are empty"),
            });
        }
    }
    let indices = boot.resample_indices(val.len());
    let per_window: Vec<(f64, Vec<f64>)> = grid
        .windows()
        .par_iter()
        .map(|&window| {
            let fit = VarFit::fit(train, window, ridge, first_target)?;
            let sums = fit.residual_sums(val, first_target)?;
            let point = pooled(&sums, None).expect("validation positions exist");
            let reps = indices
                .iter()
                .map(|idx| pooled(&sums, Some(idx)).expect("resample keeps positions"))
                .collect();
            Ok((point, reps))
        })
        .collect::<Result<_>>()?;
    let (risk, replicates) = per_window.into_iter().unzip();
    Ok(RiskCurve {
        grid: grid.clone(),
        risk,
        replicates,
        ridge,
        level: boot.level,
        resample_indices: indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    /// Noiseless VAR(2) in 2 dims from random starts.
    pub(crate) fn var2_set(n_traj: usize, t: usize, seed: u64) -> SummarySet {
        let a1 = [[0.5, 0.2], [-0.3, 0.4]];
        let a2 = [[-0.3, 0.1], [0.2, -0.25]];
        let mut rng = crate::rng::rng(seed);
        let series = (0..n_traj)
            .map(|_| {
                let mut s: Vec<[f64; 2]> = vec![
                    [standard_normal(&mut rng), standard_normal(&mut rng)],
                    [standard_normal(&mut rng), standard_normal(&mut rng)],
                ];
                while s.len() < t {
                    let (x1, x2) = (s[s.len() - 1], s[s.len() - 2]);
                    let next = [0, 1].map(|r| a1[r][0] * x1[0] + a1[r][1] * x1[1] + a2[r][0] * x2[0] + a2[r][1] * x2[1]);
                    s.push(next);
                }
                s.into_iter().flatten().collect()
            })
            .collect();
        SummarySet::from_series(2, t, series, "var2").unwrap()
    }

    #[test]
    fn grid_parsing_and_accessors() {
        let g: CandidateGrid = "1..16".parse().unwrap();
        assert_eq!((g.l_min(), g.l_max(), g.len()), (1, 16, 16));
        assert_eq!(g.to_string(), "1..16");
        let g: CandidateGrid = "1,2,4,8".parse().unwrap();
        assert_eq!(g.successor(2), Some(4));
        assert_eq!(g.successor(8), None);
        assert!("3,2".parse::<CandidateGrid>().is_err());
        assert!("0..4".parse::<CandidateGrid>().is_err());
        assert!(CandidateGrid::new(vec![]).is_err());
    }

    #[test]
    fn ucb_higher_interpolation() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(ucb(&v, 0.95), 96.0);
        assert_eq!(ucb(&[4.0; 7], 0.95), 4.0);
        assert_eq!(ucb(&[2.5], 0.99), 2.5);
        assert!(ucb(&v, 0.95) <= ucb(&v, 0.99));
    }

    #[test]
    fn zero_summaries_have_zero_risk() {
        let set = SummarySet::from_series(3, 10, vec![vec![0.0; 30]; 4], "zero").unwrap();
        for window in 1..=4 {
            assert_eq!(fit_var_risk(&set, &set, window, DEFAULT_RIDGE).unwrap(), 0.0);
        }
    }

    #[test]
    fn noiseless_var2_needs_two_lags() {
        let train = var2_set(20, 30, 1);
        let val = var2_set(10, 30, 2);
        let r1 = fit_var_risk(&train, &val, 1, DEFAULT_RIDGE).unwrap();
        let r2 = fit_var_risk(&train, &val, 2, DEFAULT_RIDGE).unwrap();
        let r3 = fit_var_risk(&train, &val, 3, DEFAULT_RIDGE).unwrap();
        assert!(r2 <= 1e-6 && r3 <= 1e-6, "r2={r2} r3={r3}");
        assert!(r1 >= 10.0 * r2.max(1e-6), "r1={r1}");
    }

    #[test]
    fn too_short_or_empty_training_is_a_fit_error() {
        let set = var2_set(3, 5, 0);
        assert!(matches!(fit_var_risk(&set, &set, 5, DEFAULT_RIDGE), Err(Error::Fit { window: 5, .. })));
        let empty = SummarySet::from_series(2, 5, vec![], "e").unwrap();
        assert!(matches!(VarFit::fit(&empty, 1, DEFAULT_RIDGE, 1), Err(Error::Fit { .. })));
        assert!(VarFit::fit(&set, 1, 0.0, 1).is_err());
    }

    #[test]
    fn replicates_are_seeded_and_singletons_collapse() {
        let train = var2_set(8, 20, 3);
        let val = var2_set(1, 20, 4);
        let grid = CandidateGrid::range(1, 4).unwrap();
        let boot = BootstrapSpec { resamples: 2, level: 0.95, seed: 5 };
        let a = risk_curve(&train, &val, &grid, DEFAULT_RIDGE, &boot).unwrap();
        let b = risk_curve(&train, &val, &grid, DEFAULT_RIDGE, &boot).unwrap();
        assert_eq!(a, b);
        for &w in grid.windows() {
            let point = a.risk(w).unwrap();
            assert!(a.replicates(w).unwrap().iter().all(|&r| r == point));
        }
    }

    #[test]
    fn csv_export_has_replicate_columns() {
        let train = var2_set(6, 15, 3);
        let val = var2_set(3, 15, 4);
        let grid = CandidateGrid::range(1, 3).unwrap();
        let boot = BootstrapSpec { resamples: 3, level: 0.9, seed: 0 };
        let curve = risk_curve(&train, &val, &grid, DEFAULT_RIDGE, &boot).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "L,risk,ucb,replicate_0,replicate_1,replicate_2");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn ridge_never_lowers_train_residual() {
        let mut rng = crate::rng::rng(9);
        let series = (0..5).map(|_| (0..60).map(|_| standard_normal(&mut rng)).collect()).collect();
        let set = SummarySet::from_series(3, 20, series, "noise").unwrap();
        let risks: Vec<f64> = [1e-3, 1e-1, 10.0]
            .iter()
            .map(|&r| VarFit::fit(&set, 2, r, 2).unwrap().risk(&set, 2).unwrap())
            .collect();
        assert!(risks.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{risks:?}");
    }
}
