//! Renders a run directory into CSV and aligned plain-text tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::run::{write_atomic, AnchorRecord, CellRecord, CellStatus, Manifest};
use crate::error::Result;
use crate::metrics::{aggregate, MetricsRow, OracleReference};

/// Placeholder for a cell whose output is missing or failed.
pub const GAP: &str = "-";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub selected: Table,
    pub regrets: Table,
    pub aggregate: Table,
    pub anchors: Table,
    pub gaps: usize,
}

impl Report {
    pub fn tables(&self) -> [&Table; 4] {
        [&self.selected, &self.regrets, &self.aggregate, &self.anchors]
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("undefined".to_string(), fmt_f)
}

/// Per-case key: everything except the method.
type CaseKey = (String, String, String, String, u64, u64);

fn case_key(r: &MetricsRow) -> CaseKey {
    (
        r.variant.clone(),
        r.dataset.clone(),
        r.perturbation.clone(),
        r.representation.clone(),
        r.seed,
        r.eps.to_bits(),
    )
}

/// Reads the manifest and every referenced file; writes `report/*.csv` and
/// `report/*.txt` under the run directory.
pub fn report(run_dir: &Path) -> Result<Report> {
    let manifest = Manifest::load(run_dir)?;
    let methods: Vec<String> = manifest.methods.iter().map(|m| m.name().to_string()).collect();
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut missing: BTreeSet<(String, String, String, String, u64, String)> = BTreeSet::new();
    for cell in &manifest.cells {
        let rec = match (&cell.status, &cell.file) {
            (CellStatus::Ok, Some(f)) => fs::read_to_string(run_dir.join(f))
                .ok()
                .and_then(|t| serde_json::from_str::<CellRecord>(&t).ok()),
            _ => None,
        };
        match rec {
            Some(r) => rows.extend(r.metrics),
            None => {
                let k = &cell.key;
                missing.insert((
                    k.variant.clone(),
                    k.dataset.clone(),
                    k.perturbation.clone(),
                    k.representation.clone(),
                    k.seed,
                    k.method.clone(),
                ));
            }
        }
    }
    let gaps = missing.len();

    // every case seen either in results or in the manifest
    let mut cases: BTreeMap<CaseKey, BTreeMap<String, &MetricsRow>> = BTreeMap::new();
    for r in &rows {
        cases.entry(case_key(r)).or_default().insert(r.method.clone(), r);
    }
    for (v, d, p, rep, s, _) in &missing {
        for &e in &manifest.eps {
            cases
                .entry((v.clone(), d.clone(), p.clone(), rep.clone(), *s, e.to_bits()))
                .or_default();
        }
    }

    let mut head = vec!["variant", "dataset", "perturbation", "representation", "seed", "eps", "L_best", "L_knee"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    head.extend(methods.iter().cloned());
    let mut selected = Table {
        name: "selected_windows".into(),
        header: head.clone(),
        rows: Vec::new(),
    };
    let mut regrets = Table {
        name: "regrets".into(),
        header: head,
        rows: Vec::new(),
    };
    for (k, by_method) in &cases {
        let any = by_method.values().next();
        let mut base = vec![
            k.0.clone(),
            k.1.clone(),
            k.2.clone(),
            k.3.clone(),
            k.4.to_string(),
            f64::from_bits(k.5).to_string(),
            any.map_or(GAP.into(), |r| r.l_best.to_string()),
            any.map_or(GAP.into(), |r| r.l_knee.to_string()),
        ];
        let mut reg = base.clone();
        for m in &methods {
            let r = by_method.get(m);
            base.push(r.map_or(GAP.into(), |r| r.l_sel.to_string()));
            reg.push(r.map_or(GAP.into(), |r| fmt_opt(r.regret_knee.map(|x| 100.0 * x))));
        }
        selected.rows.push(base);
        regrets.rows.push(reg);
    }

    // per-dataset groups, plus a pooled "all" group when there are several
    let mut agg_rows = aggregate(&rows);
    if rows.iter().map(|r| &r.dataset).collect::<BTreeSet<_>>().len() > 1 {
        let mut pooled = rows.clone();
        for r in &mut pooled {
            r.dataset = "all".into();
        }
        agg_rows.extend(aggregate(&pooled));
    }
    let agg_head = [
        "variant", "dataset", "method", "backbone", "perturbation", "representation", "eps", "n", "exact_pct",
        "within1_pct", "mean_abs_dl", "regret_knee_pct", "regret_best_pct", "cost_ratio", "saving", "unique_evals",
        "knee_in_band_pct", "knee_in_s0_pct", "knee_in_s1_pct",
    ];
    let aggregate_table = Table {
        name: "aggregate".into(),
        header: agg_head.iter().map(|s| s.to_string()).collect(),
        rows: agg_rows
            .iter()
            .map(|a| {
                vec![
                    a.variant.clone(),
                    a.dataset.clone(),
                    a.method.clone(),
                    a.backbone.clone(),
                    a.perturbation.clone(),
                    a.representation.clone(),
                    a.eps.to_string(),
                    a.n.to_string(),
                    format!("{:.1}", a.exact_pct),
                    format!("{:.1}", a.within1_pct),
                    fmt_f(a.mean_abs_dl),
                    fmt_opt(a.regret_knee.map(|x| 100.0 * x)),
                    fmt_opt(a.regret_best.map(|x| 100.0 * x)),
                    fmt_f(a.cost_ratio),
                    fmt_f(a.saving),
                    format!("{:.2}", a.unique_evals),
                    a.knee_in_band_pct.map_or(GAP.into(), |x| format!("{x:.1}")),
                    format!("{:.1}", a.knee_in_s0_pct),
                    format!("{:.1}", a.knee_in_s1_pct),
                ]
            })
            .collect(),
    };

    let anchors = anchor_table(run_dir, &manifest)?;
    let report = Report {
        selected,
        regrets,
        aggregate: aggregate_table,
        anchors,
        gaps,
    };
    for t in report.tables() {
        write_atomic(&run_dir.join(format!("report/{}.csv", t.name)), &t.to_csv()?)?;
        write_atomic(&run_dir.join(format!("report/{}.txt", t.name)), t.to_text().as_bytes())?;
    }
    Ok(report)
}

/// `L_core`, `L_plateau`, band and knee coverage per anchor run, with the
/// band shift relative to the clean run of the same system/representation.
fn anchor_table(run_dir: &Path, manifest: &Manifest) -> Result<Table> {
    let mut knees: BTreeMap<String, usize> = BTreeMap::new();
    let eps = manifest.eps.first().copied().unwrap_or(0.05);
    for o in &manifest.oracles {
        if let Some(f) = &o.file {
            if let Ok(t) = fs::read_to_string(run_dir.join(f)) {
                if let Ok(oracle) = serde_json::from_str::<OracleReference>(&t) {
                    knees.insert(o.label.clone(), oracle.knee(eps));
                }
            }
        }
    }
    let mut recs: Vec<(String, Option<AnchorRecord>)> = manifest
        .anchors
        .iter()
        .map(|a| {
            let rec = a
                .file
                .as_ref()
                .and_then(|f| fs::read_to_string(run_dir.join(f)).ok())
                .and_then(|t| serde_json::from_str::<AnchorRecord>(&t).ok());
            (a.label.clone(), rec)
        })
        .collect();
    recs.sort_by(|a, b| a.0.cmp(&b.0));
    let clean: BTreeMap<(String, String, String), (usize, usize)> = recs
        .iter()
        .filter_map(|(_, r)| r.as_ref())
        .filter(|r| r.perturbation == "clean")
        .map(|r| ((r.variant.clone(), r.dataset.clone(), r.representation.clone()), (r.report.l_core, r.report.l_plateau)))
        .collect();
    let header = [
        "anchor_run", "L_core", "L_plateau", "band", "S0", "L_knee", "knee_in_band", "band_shift",
    ];
    let rows = recs
        .iter()
        .map(|(label, rec)| match rec {
            None => {
                let mut row = vec![label.clone()];
                row.extend(std::iter::repeat_n(GAP.to_string(), header.len() - 1));
                row
            }
            Some(r) => {
                let knee = knees.get(&r.dataset);
                let shift = clean
                    .get(&(r.variant.clone(), r.dataset.clone(), r.representation.clone()))
                    .map(|&(c, p)| r.report.l_core.abs_diff(c) + r.report.l_plateau.abs_diff(p));
                vec![
                    label.clone(),
                    r.report.l_core.to_string(),
                    r.report.l_plateau.to_string(),
                    format!("[{},{}]", r.report.l_core, r.report.l_plateau),
                    format!("{:?}", r.report.s0).replace(' ', ""),
                    knee.map_or(GAP.into(), |k| k.to_string()),
                    knee.map_or(GAP.into(), |&k| r.report.in_band(k).to_string()),
                    shift.map_or(GAP.into(), |s| s.to_string()),
                ]
            }
        })
        .collect();
    Ok(Table {
        name: "anchors".into(),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}
