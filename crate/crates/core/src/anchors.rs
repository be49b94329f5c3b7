//! Stage one: system anchors `L_core`, `L_plateau` and the initial shortlist.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sysrisk::{ucb, BootstrapSpec, CandidateGrid, RiskCurve};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    #[serde(default = "default_fraction")]
    pub rho: f64,
    #[serde(default = "default_fraction")]
    pub tau_pl: f64,
    #[serde(default)]
    pub boot: BootstrapSpec,
    #[serde(default = "default_floor")]
    pub denom_floor: f64,
}

fn default_fraction() -> f64 {
    0.05
}

fn default_floor() -> f64 {
    1e-12
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            rho: default_fraction(),
            tau_pl: default_fraction(),
            boot: BootstrapSpec::default(),
            denom_floor: default_floor(),
        }
    }
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("tau_pl", self.tau_pl)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(self.denom_floor > 0.0) {
            return Err(Error::Config("denom_floor must be > 0".into()));
        }
        self.boot.validate()
    }
}

/// Per-window anchor statistics. `g_rel_*` is absent at `L_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    #[serde(rename = "L")]
    pub window: usize,
    pub risk: f64,
    pub t_sys: f64,
    pub t_sys_ucb: f64,
    pub g_rel: Option<f64>,
    pub g_rel_ucb: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreEstimate {
    pub l_core: usize,
    pub epsilon_sys: f64,
    /// `epsilon_sys <= 0`: the curve does not improve from `L_min` to `L_max`.
    pub degenerate: bool,
    pub t_sys: Vec<f64>,
    pub t_sys_ucb: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauEstimate {
    pub l_plateau: usize,
    /// No window at or past `L_core` met the threshold.
    pub fallback: bool,
    pub g_rel: Vec<Option<f64>>,
    pub g_rel_ucb: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub l_core: usize,
    pub l_plateau: usize,
    pub band: Vec<usize>,
    pub s0: Vec<usize>,
    pub epsilon_sys: f64,
    pub degenerate: bool,
    pub plateau_fallback: bool,
    pub diagnostics: Vec<WindowDiagnostics>,
}

impl AnchorReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn in_band(&self, window: usize) -> bool {
        (self.l_core..=self.l_plateau).contains(&window)
    }
}

/// `L_core = min{L : UCB(T_sys(L)) <= eps_sys}` with paired replicates
/// `T_sys^b(L) = R^b(L) - R^b(L_max)` and `eps_sys` from point estimates.
pub fn estimate_core(curve: &RiskCurve, spec: &AnchorSpec) -> CoreEstimate {
    let grid = curve.grid();
    let (l_min, l_max) = (grid.l_min(), grid.l_max());
    let last = curve.replicates(l_max).expect("grid contains L_max");
    let r_last = curve.risk(l_max).expect("grid contains L_max");
    let mut t_sys = Vec::with_capacity(grid.len());
    let mut t_sys_ucb = Vec::with_capacity(grid.len());
    for &window in grid.windows() {
        let reps: Vec<f64> = curve
            .replicates(window)
            .unwrap()
            .iter()
            .zip(last)
            .map(|(a, b)| a - b)
            .collect();
        t_sys.push(curve.risk(window).unwrap() - r_last);
        t_sys_ucb.push(ucb(&reps, curve.level()));
    }
    let epsilon_sys = spec.rho * (curve.risk(l_min).unwrap() - r_last);
    let (l_core, degenerate) = if epsilon_sys <= 0.0 {
        (l_min, true)
    } else {
        let hit = grid.windows().iter().zip(&t_sys_ucb).find(|(_, &u)| u <= epsilon_sys);
        (hit.map_or(l_max, |(&w, _)| w), false)
    };
    CoreEstimate {
        l_core,
        epsilon_sys,
        degenerate,
        t_sys,
        t_sys_ucb,
    }
}

/// `L_plateau = min{L >= L_core : UCB(G_rel(L)) <= tau_pl}`, else `L_max`.
pub fn estimate_plateau(curve: &RiskCurve, spec: &AnchorSpec, l_core: usize) -> Result<PlateauEstimate> {
    let grid = curve.grid();
    let start = grid
        .position(l_core)
        .ok_or_else(|| Error::Config(format!("L_core={l_core} is not in grid {grid}")))?;
    let ws = grid.windows();
    let mut g_rel = vec![None; ws.len()];
    let mut g_rel_ucb = vec![None; ws.len()];
    for i in 0..ws.len().saturating_sub(1) {
        let (cur, next) = (curve.replicates(ws[i]).unwrap(), curve.replicates(ws[i + 1]).unwrap());
        let reps: Vec<f64> = cur
            .iter()
            .zip(next)
            .map(|(a, b)| (a - b) / a.max(spec.denom_floor))
            .collect();
        let (a, b) = (curve.risks()[i], curve.risks()[i + 1]);
        g_rel[i] = Some((a - b) / a.max(spec.denom_floor));
        g_rel_ucb[i] = Some(ucb(&reps, curve.level()));
    }
    let hit = (start..ws.len()).find(|&i| g_rel_ucb[i].is_some_and(|u| u <= spec.tau_pl));
    Ok(PlateauEstimate {
        l_plateau: hit.map_or(grid.l_max(), |i| ws[i]),
        fallback: hit.is_none(),
        g_rel,
        g_rel_ucb,
    })
}

/// `S0 = sort(dedup({L_min, L_core, L_plateau}))`.
pub fn initial_shortlist(grid: &CandidateGrid, l_core: usize, l_plateau: usize) -> Result<Vec<usize>> {
    for w in [l_core, l_plateau] {
        if !grid.contains(w) {
            return Err(Error::Config(format!("anchor {w} is not in grid {grid}")));
        }
    }
    let mut s0 = vec![grid.l_min(), l_core, l_plateau];
    s0.sort_unstable();
    s0.dedup();
    Ok(s0)
}

/// Runs the whole anchor stage on a precomputed curve.
pub fn anchor_report(curve: &RiskCurve, spec: &AnchorSpec) -> Result<AnchorReport> {
    let core = estimate_core(curve, spec);
    let plateau = estimate_plateau(curve, spec, core.l_core)?;
    let grid = curve.grid();
    let s0 = initial_shortlist(grid, core.l_core, plateau.l_plateau)?;
    let band = grid
        .windows()
        .iter()
        .copied()
        .filter(|w| (core.l_core..=plateau.l_plateau).contains(w))
        .collect();
    let diagnostics = grid
        .windows()
        .iter()
        .enumerate()
        .map(|(i, &window)| WindowDiagnostics {
            window,
            risk: curve.risks()[i],
            t_sys: core.t_sys[i],
            t_sys_ucb: core.t_sys_ucb[i],
            g_rel: plateau.g_rel[i],
            g_rel_ucb: plateau.g_rel_ucb[i],
        })
        .collect();
    Ok(AnchorReport {
        l_core: core.l_core,
        l_plateau: plateau.l_plateau,
        band,
        s0,
        epsilon_sys: core.epsilon_sys,
        degenerate: core.degenerate,
        plateau_fallback: plateau.fallback,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_from(risk: &[f64], jitter: &[f64]) -> RiskCurve {
        let grid = CandidateGrid::range(1, risk.len()).unwrap();
        let reps = risk
            .iter()
            .map(|&r| jitter.iter().map(|&j| r * (1.0 + j)).collect())
            .collect();
        RiskCurve::from_parts(grid, risk.to_vec(), reps, 0.95).unwrap()
    }

    #[test]
    fn flat_curve_collapses_to_l_min() {
        let c = curve_from(&[2.0; 8], &[0.0, 0.1, -0.1]);
        let r = anchor_report(&c, &AnchorSpec::default()).unwrap();
        assert_eq!((r.l_core, r.l_plateau), (1, 1));
        assert!(r.degenerate);
        assert_eq!(r.epsilon_sys, 0.0);
        assert_eq!(r.s0, vec![1]);
    }

    #[test]
    fn geometric_curve_falls_back_to_l_max() {
        // risk = 2^-L: relative gain is exactly 0.5 at every step
        let risk: Vec<f64> = (1..=10).map(|l| 0.5f64.powi(l)).collect();
        let c = curve_from(&risk, &[0.0]);
        let p = estimate_plateau(&c, &AnchorSpec::default(), 1).unwrap();
        assert!(p.g_rel.iter().flatten().all(|&g| (g - 0.5).abs() < 1e-12));
        assert_eq!(p.l_plateau, 10);
        assert!(p.fallback);
    }

    #[test]
    fn shortlist_dedups() {
        let g = CandidateGrid::range(1, 16).unwrap();
        assert_eq!(initial_shortlist(&g, 3, 6).unwrap(), vec![1, 3, 6]);
        assert_eq!(initial_shortlist(&g, 1, 1).unwrap(), vec![1]);
        assert_eq!(initial_shortlist(&g, 1, 16).unwrap(), vec![1, 16]);
        assert!(initial_shortlist(&g, 3, 17).is_err());
    }

    #[test]
    fn ucb_dominates_paired_mean() {
        let risk = [1.0, 0.5, 0.3, 0.25, 0.24, 0.24];
        let c = curve_from(&risk, &[-0.2, -0.05, 0.0, 0.1, 0.3]);
        let core = estimate_core(&c, &AnchorSpec::default());
        for (i, &w) in c.grid().windows().iter().enumerate() {
            let last = c.replicates(6).unwrap();
            let mean = c.replicates(w).unwrap().iter().zip(last).map(|(a, b)| a - b).sum::<f64>() / 5.0;
            assert!(core.t_sys_ucb[i] >= mean);
        }
    }

    #[test]
    fn report_json_keys() {
        let c = curve_from(&[1.0, 0.4, 0.2, 0.19, 0.19], &[0.0, 0.02]);
        let r = anchor_report(&c, &AnchorSpec::default()).unwrap();
        assert!(r.l_core <= r.l_plateau);
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["l_core", "l_plateau", "band", "s0", "epsilon_sys", "diagnostics"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(AnchorReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
