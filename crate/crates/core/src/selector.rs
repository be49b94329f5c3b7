//! Stage two of SAKE and the baseline selectors.
//!
//! Candidate lists are kept in ascending `L`; frontier indices are 0-based.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorReport;
use crate::error::{Error, Result, Stage, StageContext};
use crate::pilots::{Diagnostics, PilotBudget, PilotEvaluator, PilotRecord};
use crate::rng::{derive_seed, tag};
use crate::sysrisk::CandidateGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sake,
    SystemCore,
    Direct3,
    Direct4,
    Asha,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sake, Method::SystemCore, Method::Direct3, Method::Direct4, Method::Asha];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sake => "sake",
            Method::SystemCore => "system_core",
            Method::Direct3 => "direct3",
            Method::Direct4 => "direct4",
            Method::Asha => "asha",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub mean: f64,
    pub term: f64,
    pub worst: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorSpec {
    pub top_k: usize,
    pub hop: usize,
    pub cap: usize,
    pub weights: ScoreWeights,
    pub alpha: f64,
    pub local_frac: f64,
    pub remain_frac: f64,
    pub consecutive_small: usize,
    pub kappa: f64,
}

impl Default for SelectorSpec {
    fn default() -> Self {
        SelectorSpec {
            top_k: 2,
            hop: 1,
            cap: 6,
            weights: ScoreWeights {
                mean: 0.75,
                term: 0.25,
                worst: 0.0,
                std: 0.20,
            },
            alpha: 0.25,
            local_frac: 0.15,
            remain_frac: 0.15,
            consecutive_small: 1,
            kappa: 1.5,
        }
    }
}

impl SelectorSpec {
    /// Weights and rule used by the Direct-k shortlists.
    pub fn direct() -> Self {
        SelectorSpec {
            weights: ScoreWeights {
                mean: 0.0,
                term: 0.25,
                worst: 0.75,
                std: 0.0,
            },
            alpha: 1.0,
            kappa: 1.0,
            ..SelectorSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        let ws = [w.mean, w.term, w.worst, w.std];
        if ws.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("score weights must be >= 0 with a positive sum: {ws:?}")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.top_k == 0 || self.cap < 3 || self.consecutive_small == 0 {
            return Err(Error::Config("top_k and consecutive_small must be >= 1 and cap >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBudgets {
    pub stage1: PilotBudget,
    pub stage2: PilotBudget,
}

impl Default for StageBudgets {
    fn default() -> Self {
        StageBudgets {
            stage1: PilotBudget::stage1(),
            stage2: PilotBudget::stage2(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AshaSpec {
    pub rungs: usize,
    pub reduction: usize,
}

impl Default for AshaSpec {
    fn default() -> Self {
        AshaSpec { rungs: 2, reduction: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    #[serde(rename = "l_sel")]
    pub l_sel: usize,
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
    /// Coarse scores over `s0` in ranking order.
    pub s1_scores: Vec<(usize, f64)>,
    /// Stage-two scores over `s1` in ascending `L`.
    pub q_scores: Vec<(usize, f64)>,
    /// 0-based index into `s1`.
    pub frontier: Option<usize>,
    pub fallback_used: bool,
    pub ledger: Vec<PilotRecord>,
}

impl SelectionResult {
    pub fn total_cost(&self) -> f64 {
        // fold from +0.0: an empty f64 sum is -0.0
        self.ledger.iter().fold(0.0, |acc, r| acc + r.cost)
    }

    pub fn trainings(&self) -> usize {
        self.ledger.len()
    }

    /// Distinct windows that received at least one pilot.
    pub fn evaluated_windows(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.ledger.iter().map(|r| r.window).collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ascending by stage-one `m`, ties toward smaller `L`.
pub fn coarse_rank(s0: &[usize], records: &[PilotRecord]) -> Result<Vec<(usize, f64)>> {
    let mut ranked = s0
        .iter()
        .map(|&l| {
            records
                .iter()
                .find(|r| r.window == l)
                .map(|r| (l, r.diagnostics.m))
                .ok_or_else(|| Error::Selection(format!("no stage-one diagnostics for L={l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Top-k hop neighborhoods plus the boundary members of `S0`, capped by
/// evicting the non-anchor farthest (in grid positions) from the leader.
pub fn refine(grid: &CandidateGrid, s0: &[usize], ranking: &[usize], spec: &SelectorSpec) -> Result<Vec<usize>> {
    let pos = |l: usize| {
        grid.position(l)
            .ok_or_else(|| Error::Selection(format!("L={l} is not in grid {grid}")))
    };
    let (lo, hi) = match (s0.iter().min(), s0.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::Selection("empty initial shortlist".into())),
    };
    let ws = grid.windows();
    let mut s1 = vec![lo, hi];
    for &l in ranking.iter().take(spec.top_k) {
        let p = pos(l)?;
        let from = p.saturating_sub(spec.hop);
        let to = (p + spec.hop).min(ws.len() - 1);
        s1.extend_from_slice(&ws[from..=to]);
    }
    s1.sort_unstable();
    s1.dedup();
    let leader = pos(*ranking.first().ok_or_else(|| Error::Selection("empty ranking".into()))?)?;
    while s1.len() > spec.cap {
        let victim = s1
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != lo && l != hi)
            .map(|(i, &l)| (i, pos(l).unwrap().abs_diff(leader), l))
            // farthest first; among equals evict the larger L
            .max_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)));
        match victim {
            Some((i, _, _)) => {
                s1.remove(i);
            }
            None => break,
        }
    }
    Ok(s1)
}

fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; xs.len()]
    }
}

/// `q = alpha * weighted(m~, u~, worst~, v~) + (1 - alpha) * a~` after
/// min-max normalization over the candidates.
pub fn stage2_scores(diags: &[&Diagnostics], spec: &SelectorSpec) -> Result<Vec<f64>> {
    if diags.is_empty() {
        return Err(Error::Selection("no refined candidates to score".into()));
    }
    if let Some(d) = diags.iter().find(|d| !d.is_valid()) {
        return Err(Error::Selection(format!("non-finite diagnostics: {d:?}")));
    }
    let w = spec.weights;
    let total = w.mean + w.term + w.worst + w.std;
    let col = |f: &dyn Fn(&Diagnostics) -> f64| min_max(&diags.iter().map(|d| f(d)).collect::<Vec<_>>());
    let m = col(&|d| d.m);
    let u = col(&|d| d.u);
    let worst = col(&|d| d.worst());
    let v = col(&|d| d.v);
    let a = if diags.iter().all(|d| d.a.is_some()) {
        col(&|d| d.a.unwrap())
    } else {
        vec![0.0; diags.len()]
    };
    Ok((0..diags.len())
        .map(|i| {
            let base = (w.mean * m[i] + w.term * u[i] + w.worst * worst[i] + w.std * v[i]) / total;
            spec.alpha * base + (1.0 - spec.alpha) * a[i]
        })
        .collect())
}

/// Earliest index where `consecutive_small` consecutive candidates have both
/// a small step to the next score and a small remaining gap to the best.
pub fn saturation_frontier(q: &[f64], spec: &SelectorSpec) -> usize {
    assert!(!q.is_empty(), "frontier of an empty score list");
    let best = q.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (worst - best).max(1e-12);
    let small = |j: usize| {
        let local = if j + 1 < q.len() { (q[j] - q[j + 1]) / span } else { 0.0 };
        let remain = (q[j] - best) / span;
        local <= spec.local_frac && remain <= spec.remain_frac
    };
    let c = spec.consecutive_small;
    (0..q.len())
        .find(|&j| j + c <= q.len() && (j..j + c).all(small))
        .unwrap_or(q.len() - 1)
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the best candidate's mean error, on the normalized scale.
pub fn score_se(per_anchor: &[f64], m_range: f64) -> f64 {
    if per_anchor.is_empty() || !(m_range > 0.0) {
        return 0.0;
    }
    sample_std(per_anchor) / (per_anchor.len() as f64).sqrt() / m_range
}

/// Smallest candidate at or before the frontier within `kappa * se` of the
/// best score; falls back to the frontier candidate.
pub fn one_se_select(windows: &[usize], q: &[f64], r: usize, se: f64, kappa: f64) -> (usize, bool) {
    let best = q.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = best + kappa * se;
    match (0..=r.min(q.len() - 1)).find(|&j| q[j] <= threshold) {
        Some(j) => (windows[j], false),
        None => (windows[r], true),
    }
}

fn run_pilots(
    evaluator: &dyn PilotEvaluator,
    stage: &str,
    windows: &[usize],
    budget: &PilotBudget,
    seed: u64,
) -> Result<Vec<PilotRecord>> {
    windows
        .par_iter()
        .map(|&l| evaluator.pilot(stage, l, budget, derive_seed(seed, &[tag(stage), l as u64])))
        .collect()
}

/// Coarse rank on `S0`, refine, score `S1` and apply the frontier and
/// one-SE rule. Shared by SAKE and the Direct-k shortlists.
fn two_stage(
    method: Method,
    grid: &CandidateGrid,
    s0: Vec<usize>,
    evaluator: &dyn PilotEvaluator,
    budgets: &StageBudgets,
    spec: &SelectorSpec,
    seed: u64,
) -> Result<SelectionResult> {
    spec.validate()?;
    let stage1 = run_pilots(evaluator, "stage1", &s0, &budgets.stage1, seed).stage(Stage::Stage1Pilots)?;
    let ranked = coarse_rank(&s0, &stage1).stage(Stage::Refine)?;
    let order: Vec<usize> = ranked.iter().map(|r| r.0).collect();
    let s1 = refine(grid, &s0, &order, spec).stage(Stage::Refine)?;
    let stage2 = run_pilots(evaluator, "stage2", &s1, &budgets.stage2, seed).stage(Stage::Stage2Pilots)?;
    let diags: Vec<&Diagnostics> = stage2.iter().map(|r| &r.diagnostics).collect();
    let q = stage2_scores(&diags, spec).stage(Stage::Scoring)?;
    let r = saturation_frontier(&q, spec);
    let best = (0..q.len()).min_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b))).unwrap();
    let ms: Vec<f64> = diags.iter().map(|d| d.m).collect();
    let m_range = ms.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ms.iter().copied().fold(f64::INFINITY, f64::min);
    let se = score_se(&diags[best].per_anchor, m_range);
    let (l_sel, fallback_used) = one_se_select(&s1, &q, r, se, spec.kappa);
    let mut ledger = stage1;
    ledger.extend(stage2);
    Ok(SelectionResult {
        method,
        l_sel,
        s0,
        q_scores: s1.iter().copied().zip(q).collect(),
        s1,
        s1_scores: ranked,
        frontier: Some(r),
        fallback_used,
        ledger,
    })
}

/// Stage two of SAKE on the anchor shortlist.
pub fn run_sake(
    report: &AnchorReport,
    grid: &CandidateGrid,
    evaluator: &dyn PilotEvaluator,
    budgets: &StageBudgets,
    spec: &SelectorSpec,
    seed: u64,
) -> Result<SelectionResult> {
    two_stage(Method::Sake, grid, report.s0.clone(), evaluator, budgets, spec, seed)
}

/// Returns `L_core` without training anything.
pub fn run_system_core(report: &AnchorReport) -> SelectionResult {
    SelectionResult {
        method: Method::SystemCore,
        l_sel: report.l_core,
        s0: report.s0.clone(),
        s1: Vec::new(),
        s1_scores: Vec::new(),
        q_scores: Vec::new(),
        frontier: None,
        fallback_used: false,
        ledger: Vec::new(),
    }
}

fn nearest_member(grid: &CandidateGrid, target: f64) -> usize {
    // half-up rounding, then snap to the closest member (ties to the larger)
    let t = (target + 0.5).floor();
    *grid
        .windows()
        .iter()
        .min_by(|&&a, &&b| (a as f64 - t).abs().total_cmp(&(b as f64 - t).abs()).then(b.cmp(&a)))
        .unwrap()
}

/// Uniformly placed `k`-point shortlist over the grid range.
pub fn direct_shortlist(grid: &CandidateGrid, k: usize) -> Result<Vec<usize>> {
    if !(k == 3 || k == 4) {
        return Err(Error::Config(format!("direct shortlist size must be 3 or 4, got {k}")));
    }
    let (lo, hi) = (grid.l_min() as f64, grid.l_max() as f64);
    let mut s0 = vec![grid.l_min(), grid.l_max()];
    for i in 1..k - 1 {
        let p = i as f64 / (k - 1) as f64;
        s0.push(nearest_member(grid, lo + p * (hi - lo)));
    }
    s0.sort_unstable();
    s0.dedup();
    Ok(s0)
}

pub fn run_direct_shortlist(
    k: usize,
    grid: &CandidateGrid,
    evaluator: &dyn PilotEvaluator,
    budgets: &StageBudgets,
    spec: &SelectorSpec,
    seed: u64,
) -> Result<SelectionResult> {
    let method = if k == 3 { Method::Direct3 } else { Method::Direct4 };
    let s0 = direct_shortlist(grid, k)?;
    two_stage(method, grid, s0, evaluator, budgets, spec, seed)
}

/// Successive halving over the whole grid: each rung trains the survivors
/// with `reduction`-times more epochs and keeps the best `1/reduction`.
pub fn run_asha(
    grid: &CandidateGrid,
    evaluator: &dyn PilotEvaluator,
    base: &PilotBudget,
    asha: &AshaSpec,
    seed: u64,
) -> Result<SelectionResult> {
    if asha.reduction < 2 || asha.rungs < 1 {
        return Err(Error::Config(format!("ASHA needs reduction >= 2 and rungs >= 1: {asha:?}")));
    }
    let mut alive: Vec<usize> = grid.windows().to_vec();
    let mut ledger = Vec::new();
    let mut last: Vec<(usize, f64)> = Vec::new();
    for rung in 0..asha.rungs {
        let budget = PilotBudget {
            epochs: base.epochs * asha.reduction.pow(rung as u32),
            ..*base
        };
        let label = format!("rung{rung}");
        let records = run_pilots(evaluator, &label, &alive, &budget, seed).stage(Stage::Asha)?;
        last = coarse_rank(&alive, &records).stage(Stage::Asha)?;
        ledger.extend(records);
        let keep = alive.len().div_ceil(asha.reduction);
        alive = last.iter().take(keep).map(|r| r.0).collect();
        alive.sort_unstable();
    }
    Ok(SelectionResult {
        method: Method::Asha,
        l_sel: last[0].0,
        s0: grid.windows().to_vec(),
        s1: alive,
        s1_scores: last,
        q_scores: Vec::new(),
        frontier: None,
        fallback_used: false,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(m: f64, u: f64, v: f64, a: f64) -> Diagnostics {
        Diagnostics {
            m,
            u,
            v,
            a: Some(a),
            per_anchor: vec![m],
        }
    }

    fn record(window: usize, m: f64) -> PilotRecord {
        PilotRecord {
            stage: "stage1".into(),
            window,
            budget: PilotBudget::stage1(),
            realized_pairs: 1,
            cost: 0.01,
            underdetermined: false,
            diagnostics: diag(m, m, 0.0, m),
        }
    }

    #[test]
    fn coarse_rank_sorts_with_tie_break() {
        let recs = [record(1, 0.9), record(3, 0.4), record(6, 0.41)];
        let order: Vec<usize> = coarse_rank(&[1, 3, 6], &recs).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(order, vec![3, 6, 1]);
        let recs = [record(1, 0.5), record(3, 0.5), record(6, 0.5)];
        let order: Vec<usize> = coarse_rank(&[6, 3, 1], &recs).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(order, vec![1, 3, 6]);
        assert!(coarse_rank(&[2], &recs).is_err());
    }

    #[test]
    fn refine_caps_by_evicting_far_members() {
        let grid = CandidateGrid::range(1, 16).unwrap();
        let spec = SelectorSpec::default();
        assert_eq!(refine(&grid, &[1, 3, 6], &[3, 6, 1], &spec).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(refine(&grid, &[1], &[1], &spec).unwrap(), vec![1, 2]);
        let grid7 = CandidateGrid::range(1, 7).unwrap();
        let wide = SelectorSpec {
            top_k: 7,
            ..spec
        };
        assert_eq!(
            refine(&grid7, &[1, 2, 3, 4, 5, 6, 7], &[3, 1, 2, 4, 5, 6, 7], &wide).unwrap(),
            vec![1, 2, 3, 4, 5, 7]
        );
    }

    #[test]
    fn q_worked_example() {
        // normalized inputs m=(0,.5), u=(0,1), v=(0,0), a=(0,.2) via endpoints
        let d0 = diag(0.0, 0.0, 0.0, 0.0);
        let d1 = diag(0.5, 1.0, 0.0, 0.2);
        let d2 = diag(1.0, 0.0, 0.0, 1.0);
        let q = stage2_scores(&[&d0, &d1, &d2], &SelectorSpec::default()).unwrap();
        assert_eq!(q[0], 0.0);
        assert!((q[1] - 0.28021).abs() < 1e-4, "{q:?}");
    }

    #[test]
    fn dominated_candidate_scores_one() {
        let q = stage2_scores(&[&diag(1.0, 1.0, 0.1, 1.0), &diag(2.0, 3.0, 0.5, 4.0)], &SelectorSpec::default()).unwrap();
        assert_eq!(q, vec![0.0, 1.0]);
        let single = stage2_scores(&[&diag(1.0, 1.0, 0.0, 1.0)], &SelectorSpec::default()).unwrap();
        assert_eq!(single, vec![0.0]);
    }

    #[test]
    fn frontier_examples() {
        let spec = SelectorSpec::default();
        assert_eq!(saturation_frontier(&[1.0, 0.10, 0.095, 0.094], &spec), 1);
        assert_eq!(saturation_frontier(&[1.0, 0.5, 0.0], &spec), 2);
        assert_eq!(saturation_frontier(&[0.3], &spec), 0);
    }

    #[test]
    fn one_se_examples() {
        assert_eq!(one_se_select(&[2, 4, 6], &[0.30, 0.10, 0.09], 1, 0.01, 1.5), (4, false));
        assert_eq!(one_se_select(&[2, 4, 6], &[0.30, 0.09, 0.09], 2, 0.0, 1.5), (4, false));
        assert_eq!(one_se_select(&[2, 4, 6], &[0.30, 0.20, 0.09], 1, 0.0, 1.5), (4, true));
        assert_eq!(one_se_select(&[1, 2], &[0.0, 0.0], 0, 0.0, 1.0), (1, false));
    }

    #[test]
    fn direct_shortlists() {
        let g = CandidateGrid::range(1, 16).unwrap();
        assert_eq!(direct_shortlist(&g, 3).unwrap(), vec![1, 9, 16]);
        assert_eq!(direct_shortlist(&g, 4).unwrap(), vec![1, 6, 11, 16]);
        let g = CandidateGrid::range(1, 3).unwrap();
        assert_eq!(direct_shortlist(&g, 3).unwrap(), vec![1, 2, 3]);
        assert!(direct_shortlist(&g, 5).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn empty_ledger_costs_positive_zero() {
        let r = SelectionResult {
            method: Method::SystemCore,
            l_sel: 2,
            s0: vec![1, 2],
            s1: Vec::new(),
            s1_scores: Vec::new(),
            q_scores: Vec::new(),
            frontier: None,
            fallback_used: false,
            ledger: Vec::new(),
        };
        assert!(r.total_cost() == 0.0 && r.total_cost().is_sign_positive());
    }
}
