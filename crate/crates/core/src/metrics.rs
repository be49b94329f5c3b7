//! Full-sweep oracle, knee definition and per-selection metrics.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorReport;
use crate::error::{Error, Result, Stage};
use crate::pilots::PilotEvaluator;
use crate::selector::SelectionResult;
use crate::sysrisk::CandidateGrid;

/// Smallest minimizer of `m` (as a grid member).
pub fn oracle_best(windows: &[usize], m: &[f64]) -> usize {
    let best = (0..m.len())
        .min_by(|&a, &b| m[a].total_cmp(&m[b]).then(a.cmp(&b)))
        .expect("nonempty error curve");
    windows[best]
}

/// `min{L : M(L) <= (1 + eps) * M(L_best)}`.
pub fn oracle_knee(windows: &[usize], m: &[f64], eps: f64) -> usize {
    let best = m.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = (1.0 + eps) * best;
    let i = m.iter().position(|&x| x <= threshold).expect("the minimizer always qualifies");
    windows[i]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReference {
    pub grid: CandidateGrid,
    pub seeds: Vec<u64>,
    /// `per_seed[s][i]` is `M(grid[i])` under `seeds[s]`.
    pub per_seed: Vec<Vec<f64>>,
    /// Seed-averaged `M(L)`.
    pub m: Vec<f64>,
    pub l_best: usize,
}

impl OracleReference {
    pub fn from_curves(grid: CandidateGrid, seeds: Vec<u64>, per_seed: Vec<Vec<f64>>) -> Result<Self> {
        if per_seed.is_empty() || per_seed.len() != seeds.len() || per_seed.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Shape("oracle needs one full curve per seed".into()));
        }
        if per_seed.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Shape("oracle errors must be finite and non-negative".into()));
        }
        let n = per_seed.len() as f64;
        let m: Vec<f64> = (0..grid.len()).map(|i| per_seed.iter().map(|c| c[i]).sum::<f64>() / n).collect();
        let l_best = oracle_best(grid.windows(), &m);
        Ok(OracleReference {
            grid,
            seeds,
            per_seed,
            m,
            l_best,
        })
    }

    pub fn knee(&self, eps: f64) -> usize {
        oracle_knee(self.grid.windows(), &self.m, eps)
    }

    pub fn error_at(&self, window: usize) -> Option<f64> {
        self.grid.position(window).map(|i| self.m[i])
    }

    /// CSV with columns `L, M, M_seed<s>...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["L".to_string(), "M".into()];
        header.extend(self.seeds.iter().map(|s| format!("M_seed{s}")));
        w.write_record(&header)?;
        for (i, l) in self.grid.windows().iter().enumerate() {
            let mut rec = vec![l.to_string(), self.m[i].to_string()];
            rec.extend(self.per_seed.iter().map(|c| c[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full-budget training and test rollout at every `(L, seed)`.
pub fn full_sweep(evaluator: &dyn PilotEvaluator, grid: &CandidateGrid, seeds: &[u64]) -> Result<OracleReference> {
    if seeds.is_empty() {
        return Err(Error::Config("full sweep needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = seeds.iter().flat_map(|&s| grid.windows().iter().map(move |&l| (l, s))).collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(l, s)| {
            evaluator.full(l, s).map(|d| d.m).map_err(|e| {
                Error::Fit {
                    window: l,
                    reason: format!("full-protocol training failed for seed {s}: {e}"),
                }
                .in_stage(Stage::Sweep)
            })
        })
        .collect::<Result<_>>()?;
    let per_seed = values.chunks(grid.len()).map(<[f64]>::to_vec).collect();
    OracleReference::from_curves(grid.clone(), seeds.to_vec(), per_seed)
}

/// `(M(sel) - M(ref)) / M(ref)`; `None` when undefined (zero reference,
/// nonzero selection).
pub fn relative_regret(m_sel: f64, m_ref: f64) -> Option<f64> {
    if m_ref > 0.0 {
        Some((m_sel - m_ref) / m_ref)
    } else if m_sel == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// Labels identifying one evaluation cell.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    /// Sensitivity variant label, `base` for the unmodified config.
    pub variant: String,
    pub dataset: String,
    pub method: String,
    pub backbone: String,
    pub perturbation: String,
    pub representation: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub dataset: String,
    pub method: String,
    pub backbone: String,
    pub perturbation: String,
    pub representation: String,
    pub seed: u64,
    pub eps: f64,
    pub l_sel: usize,
    pub l_knee: usize,
    pub l_best: usize,
    pub exact: u8,
    pub within1: u8,
    pub abs_dl: usize,
    pub regret_knee: Option<f64>,
    pub regret_best: Option<f64>,
    pub cost_ratio: f64,
    pub saving: f64,
    pub unique_evals: usize,
    pub trainings: usize,
    pub knee_in_band: Option<bool>,
    pub knee_in_s0: bool,
    pub knee_in_s1: bool,
}

pub fn evaluate_selection(
    key: &CellKey,
    result: &SelectionResult,
    oracle: &OracleReference,
    eps: f64,
    anchors: Option<&AnchorReport>,
) -> Result<MetricsRow> {
    let m_sel = oracle
        .error_at(result.l_sel)
        .ok_or_else(|| Error::Selection(format!("L_sel={} is not in the oracle grid", result.l_sel)))?;
    let l_knee = oracle.knee(eps);
    let l_best = oracle.l_best;
    let abs_dl = result.l_sel.abs_diff(l_knee);
    let cost_ratio = result.total_cost() / oracle.grid.len() as f64;
    Ok(MetricsRow {
        variant: key.variant.clone(),
        dataset: key.dataset.clone(),
        method: key.method.clone(),
        backbone: key.backbone.clone(),
        perturbation: key.perturbation.clone(),
        representation: key.representation.clone(),
        seed: key.seed,
        eps,
        l_sel: result.l_sel,
        l_knee,
        l_best,
        exact: u8::from(abs_dl == 0),
        within1: u8::from(abs_dl <= 1),
        abs_dl,
        regret_knee: relative_regret(m_sel, oracle.error_at(l_knee).unwrap()),
        regret_best: relative_regret(m_sel, oracle.error_at(l_best).unwrap()),
        cost_ratio,
        saving: 1.0 - cost_ratio,
        unique_evals: result.evaluated_windows().len(),
        trainings: result.trainings(),
        knee_in_band: anchors.map(|a| a.in_band(l_knee)),
        knee_in_s0: result.s0.contains(&l_knee),
        knee_in_s1: result.s1.contains(&l_knee),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub dataset: String,
    pub method: String,
    pub backbone: String,
    pub perturbation: String,
    pub representation: String,
    pub eps: f64,
    pub n: usize,
    pub exact_pct: f64,
    pub within1_pct: f64,
    pub mean_abs_dl: f64,
    /// Signed mean over rows where the regret is defined.
    pub regret_knee: Option<f64>,
    pub regret_best: Option<f64>,
    pub undefined_regrets: usize,
    pub cost_ratio: f64,
    pub saving: f64,
    pub unique_evals: f64,
    pub trainings: f64,
    pub knee_in_band_pct: Option<f64>,
    pub knee_in_s0_pct: f64,
    pub knee_in_s1_pct: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn pct(xs: impl Iterator<Item = bool>) -> f64 {
    mean(xs.map(|b| if b { 100.0 } else { 0.0 })).unwrap_or(0.0)
}

type GroupKey = (String, String, String, String, String, String, u64);

/// Means per (variant, dataset, method, backbone, perturbation,
/// representation, eps), in key order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.variant.clone(),
            r.dataset.clone(),
            r.method.clone(),
            r.backbone.clone(),
            r.perturbation.clone(),
            r.representation.clone(),
            r.eps.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let f = g[0];
            let band: Vec<bool> = g.iter().filter_map(|r| r.knee_in_band).collect();
            AggregateRow {
                variant: f.variant.clone(),
                dataset: f.dataset.clone(),
                method: f.method.clone(),
                backbone: f.backbone.clone(),
                perturbation: f.perturbation.clone(),
                representation: f.representation.clone(),
                eps: f.eps,
                n: g.len(),
                exact_pct: pct(g.iter().map(|r| r.exact == 1)),
                within1_pct: pct(g.iter().map(|r| r.within1 == 1)),
                mean_abs_dl: mean(g.iter().map(|r| r.abs_dl as f64)).unwrap(),
                regret_knee: mean(g.iter().filter_map(|r| r.regret_knee)),
                regret_best: mean(g.iter().filter_map(|r| r.regret_best)),
                undefined_regrets: g.iter().filter(|r| r.regret_knee.is_none() || r.regret_best.is_none()).count(),
                cost_ratio: mean(g.iter().map(|r| r.cost_ratio)).unwrap(),
                saving: mean(g.iter().map(|r| r.saving)).unwrap(),
                unique_evals: mean(g.iter().map(|r| r.unique_evals as f64)).unwrap(),
                trainings: mean(g.iter().map(|r| r.trainings as f64)).unwrap(),
                knee_in_band_pct: (!band.is_empty()).then(|| pct(band.into_iter())),
                knee_in_s0_pct: pct(g.iter().map(|r| r.knee_in_s0)),
                knee_in_s1_pct: pct(g.iter().map(|r| r.knee_in_s1)),
            }
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::Method;

    fn result(l_sel: usize, costs: &[f64]) -> SelectionResult {
        use crate::pilots::{Diagnostics, PilotBudget, PilotRecord};
        SelectionResult {
            method: Method::Sake,
            l_sel,
            s0: vec![1, l_sel],
            s1: vec![l_sel],
            s1_scores: vec![],
            q_scores: vec![],
            frontier: None,
            fallback_used: false,
            ledger: costs
                .iter()
                .enumerate()
                .map(|(i, &c)| PilotRecord {
                    stage: "stage1".into(),
                    window: 1 + i % 2,
                    budget: PilotBudget::stage1(),
                    realized_pairs: 1,
                    cost: c,
                    underdetermined: false,
                    diagnostics: Diagnostics {
                        m: 0.1,
                        u: 0.1,
                        v: 0.0,
                        a: None,
                        per_anchor: vec![0.1],
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn knee_worked_example() {
        let w = [1, 2, 3, 4];
        let m = [10.0, 5.0, 4.9, 4.85];
        assert_eq!(oracle_knee(&w, &m, 0.05), 2);
        assert_eq!(oracle_knee(&w, &m, 0.0), 4);
        assert_eq!(oracle_best(&w, &[3.0, 1.0, 1.0]), 2);
    }

    #[test]
    fn regrets_and_cost() {
        let grid = CandidateGrid::range(1, 4).unwrap();
        let oracle = OracleReference::from_curves(grid, vec![0], vec![vec![10.0, 5.0, 4.9, 4.85]]).unwrap();
        let row = evaluate_selection(&CellKey::default(), &result(2, &[0.1, 0.3]), &oracle, 0.05, None).unwrap();
        assert_eq!((row.exact, row.within1, row.abs_dl), (1, 1, 0));
        assert_eq!(row.regret_knee, Some(0.0));
        assert!(row.regret_best.unwrap() > 0.0);
        assert!((row.cost_ratio - 0.1).abs() < 1e-15);
        assert_eq!(row.saving, 1.0 - row.cost_ratio);
        assert_eq!(row.unique_evals, 2);
        assert!(row.knee_in_s0 && row.knee_in_s1 && row.knee_in_band.is_none());
    }

    #[test]
    fn zero_reference_regret() {
        assert_eq!(relative_regret(0.0, 0.0), Some(0.0));
        assert_eq!(relative_regret(0.1, 0.0), None);
    }

    #[test]
    fn aggregate_percentages() {
        let grid = CandidateGrid::range(1, 4).unwrap();
        let oracle = OracleReference::from_curves(grid, vec![0], vec![vec![10.0, 5.0, 4.9, 4.85]]).unwrap();
        let rows: Vec<MetricsRow> = [2, 4, 2]
            .iter()
            .map(|&l| evaluate_selection(&CellKey::default(), &result(l, &[]), &oracle, 0.05, None).unwrap())
            .collect();
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].exact_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg[0].cost_ratio, 0.0);
        let single = aggregate(&rows[..1]);
        assert_eq!(single[0].mean_abs_dl, rows[0].abs_dl as f64);
        let mut buf = Vec::new();
        write_csv(&agg, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("variant,dataset,method,backbone"));
    }
}
