use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AnchorSource, ExperimentConfig, SCHEMA_VERSION};
use super::pipeline::{anchor_stage, anchor_stage_on_pool, prepare_pilot_data, run_method, PreparedData, SystemSpec};
use crate::anchors::AnchorReport;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_selection, full_sweep, write_csv, CellKey, MetricsRow, OracleReference};
use crate::pilots::LinearPilotEvaluator;
use crate::rng::{derive_seed, tag};
use crate::selector::{Method, SelectionResult};
use crate::summarize::{ProjectorMethod, ProjectorSpec};
use crate::sysrisk::RiskCurve;
use crate::trajstore::{perturb, split_pool, PerturbSpec};

pub const BACKBONE: &str = "linear";

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub key: CellKey,
    pub status: CellStatus,
    pub error: Option<String>,
    /// Relative to the run directory.
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub label: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub eps: Vec<f64>,
    pub oracles: Vec<StageEntry>,
    pub anchors: Vec<StageEntry>,
    pub cells: Vec<CellEntry>,
    /// Full-protocol trainings performed across the run.
    pub oracle_trainings: usize,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn failures(&self) -> usize {
        let bad = |s: CellStatus| s == CellStatus::Failed;
        self.cells.iter().filter(|c| bad(c.status)).count()
            + self.anchors.iter().filter(|c| bad(c.status)).count()
            + self.oracles.iter().filter(|c| bad(c.status)).count()
    }
}

/// Per-cell output document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: CellKey,
    pub anchors: AnchorReport,
    pub result: SelectionResult,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub variant: String,
    pub dataset: String,
    pub perturbation: String,
    pub representation: String,
    pub report: AnchorReport,
    pub curve: RiskCurve,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cells_ok: usize,
    pub failures: Vec<String>,
    pub manifest: Manifest,
    pub rows: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

struct SystemState {
    label: String,
    spec: SystemSpec,
    prepared: PreparedData,
    evaluator: LinearPilotEvaluator,
}

fn representation_spec(base: &ProjectorSpec, method: ProjectorMethod) -> ProjectorSpec {
    ProjectorSpec { method, ..base.clone() }
}

fn anchors_for(
    cfg: &ExperimentConfig,
    sys: &SystemState,
    pert: &PerturbSpec,
    repr: ProjectorMethod,
) -> Result<(RiskCurve, AnchorReport)> {
    let proj = representation_spec(&cfg.anchor_projector, repr);
    match cfg.anchor_source {
        AnchorSource::Replica => {
            let sim_seed = derive_seed(tag(&sys.label), &[tag("anchor-pool")]);
            let pool = perturb(&sys.spec.build_replica(sim_seed)?, pert)?;
            anchor_stage_on_pool(pool, &proj, &cfg.grid, &cfg.anchors, sim_seed)
        }
        AnchorSource::SameData => {
            let split = &sys.prepared.split;
            let pool = perturb(split.pool(), pert)?;
            let split = split_pool(pool, split.fractions(), derive_seed(tag(&sys.label), &[tag("split")]))?;
            anchor_stage(&split.train(), &split.val(), &proj, &cfg.grid, &cfg.anchors)
        }
    }
}

fn failure<T>(label: &str, r: &Result<T>) -> Option<String> {
    r.as_ref().err().map(|e| format!("{label}: {e}"))
}

/// Runs every `(method, seed, perturbation, representation)` cell for every
/// system (and every sensitivity variant), writing results under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, fail_fast: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, out_dir, fail_fast))
}

fn run_inner(cfg: &ExperimentConfig, out_dir: &Path, fail_fast: bool) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    let mut failures = Vec::new();
    let check = |failures: &mut Vec<String>, msg: Option<String>| -> Result<()> {
        if let Some(m) = msg {
            if fail_fast {
                return Err(Error::Config(format!("aborted (fail-fast): {m}")));
            }
            failures.push(m);
        }
        Ok(())
    };

    // systems and their cached oracles, shared by every variant and method
    let mut systems = Vec::new();
    let mut oracle_entries = Vec::new();
    let mut oracles: BTreeMap<String, OracleReference> = BTreeMap::new();
    // systems without data or oracle, with the reason
    let mut unavailable: Vec<(String, String)> = Vec::new();
    for (i, spec) in cfg.systems.iter().enumerate() {
        let label = format!("{i:02}_{}", spec.label());
        let built = spec.build().and_then(|pool| {
            let seed = derive_seed(tag(&label), &[tag("split")]);
            prepare_pilot_data(pool, cfg.split, &cfg.pilot_projector, seed)
        });
        let state = built.map(|prepared| SystemState {
            evaluator: LinearPilotEvaluator::new(prepared.data.clone(), cfg.full),
            label: label.clone(),
            spec: spec.clone(),
            prepared,
        });
        let (state, oracle) = match state {
            Ok(s) => {
                let o = full_sweep(&s.evaluator, &cfg.grid, &cfg.seeds);
                (Some(s), o)
            }
            Err(e) => (None, Err(e)),
        };
        let file = format!("oracle/{}.json", file_label(&label));
        let msg = failure(&format!("oracle {label}"), &oracle);
        if let Ok(o) = &oracle {
            write_json(&out_dir.join(&file), o)?;
            let mut csv = Vec::new();
            o.write_csv(&mut csv)?;
            write_atomic(&out_dir.join(format!("oracle/{}.csv", file_label(&label))), &csv)?;
        }
        oracle_entries.push(StageEntry {
            label: label.clone(),
            status: if msg.is_none() { CellStatus::Ok } else { CellStatus::Failed },
            error: msg.clone(),
            file: msg.is_none().then_some(file),
        });
        check(&mut failures, msg.clone())?;
        match (state, oracle) {
            (Some(s), Ok(o)) => {
                oracles.insert(label, o);
                systems.push(s);
            }
            _ => unavailable.push((label, msg.unwrap_or_default())),
        }
    }

    let mut variants = vec![("base".to_string(), cfg.clone())];
    variants.extend(cfg.sensitivity_variants());

    let mut anchor_entries = Vec::new();
    let mut cell_entries = Vec::new();
    let mut rows = Vec::new();
    for (variant, vcfg) in &variants {
        // anchors per (system, perturbation, representation)
        let anchor_jobs: Vec<(&SystemState, &PerturbSpec, ProjectorMethod)> = systems
            .iter()
            .flat_map(|s| {
                vcfg.perturbations
                    .iter()
                    .flat_map(move |p| vcfg.representations.iter().map(move |&r| (s, p, r)))
            })
            .collect();
        let anchor_results: Vec<Result<(RiskCurve, AnchorReport)>> =
            anchor_jobs.par_iter().map(|(s, p, r)| anchors_for(vcfg, s, p, *r)).collect();
        let mut anchors_ok = Vec::new();
        // (dataset, perturbation, representation, reason) whose cells cannot run
        let mut blocked: Vec<(String, String, String, String)> = Vec::new();
        for (label, reason) in &unavailable {
            for p in &vcfg.perturbations {
                for r in &vcfg.representations {
                    blocked.push((label.clone(), p.label(), r.name().to_string(), reason.clone()));
                }
            }
        }
        for ((s, p, r), res) in anchor_jobs.iter().zip(anchor_results) {
            let label = format!("{variant}/{}__{}__{}", s.label, p.label(), r.name());
            let file = format!("anchors/{}.json", file_label(&label.replace('/', "__")));
            let msg = failure(&format!("anchors {label}"), &res);
            if let Ok((curve, report)) = &res {
                let rec = AnchorRecord {
                    variant: variant.clone(),
                    dataset: s.label.clone(),
                    perturbation: p.label(),
                    representation: r.name().to_string(),
                    report: report.clone(),
                    curve: curve.clone(),
                };
                write_json(&out_dir.join(&file), &rec)?;
            }
            anchor_entries.push(StageEntry {
                label,
                status: if msg.is_none() { CellStatus::Ok } else { CellStatus::Failed },
                error: msg.clone(),
                file: msg.is_none().then_some(file),
            });
            check(&mut failures, msg.clone())?;
            match res {
                Ok((_, report)) => anchors_ok.push((*s, p.label(), r.name().to_string(), report)),
                Err(_) => blocked.push((s.label.clone(), p.label(), r.name().to_string(), msg.unwrap_or_default())),
            }
        }

        // selection cells
        let cell_jobs: Vec<(usize, Method, u64)> = (0..anchors_ok.len())
            .flat_map(|a| vcfg.methods.iter().flat_map(move |&m| vcfg.seeds.iter().map(move |&s| (a, m, s))))
            .collect();
        let results: Vec<(CellKey, Result<CellRecord>)> = cell_jobs
            .par_iter()
            .map(|&(a, method, seed)| {
                let (sys, pert, repr, report) = &anchors_ok[a];
                let key = CellKey {
                    variant: variant.clone(),
                    dataset: sys.label.clone(),
                    method: method.name().to_string(),
                    backbone: BACKBONE.to_string(),
                    perturbation: pert.clone(),
                    representation: repr.clone(),
                    seed,
                };
                let oracle = &oracles[&sys.label];
                let rec = run_method(method, report, &vcfg.grid, &sys.evaluator, &vcfg.selectors, seed).and_then(|result| {
                    let metrics = vcfg
                        .eps
                        .iter()
                        .map(|&e| evaluate_selection(&key, &result, oracle, e, Some(report)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(CellRecord {
                        key: key.clone(),
                        anchors: report.clone(),
                        result,
                        metrics,
                    })
                });
                (key, rec)
            })
            .collect();
        for (key, res) in results {
            let id = format!(
                "{}__{}__{}__s{}__{}__{}",
                key.variant, key.dataset, key.method, key.seed, key.perturbation, key.representation
            );
            let file = format!("cells/{}.json", file_label(&id));
            let msg = failure(&format!("cell {id}"), &res);
            if let Ok(rec) = &res {
                write_json(&out_dir.join(&file), rec)?;
                rows.extend(rec.metrics.iter().cloned());
            }
            cell_entries.push(CellEntry {
                key,
                status: if msg.is_none() { CellStatus::Ok } else { CellStatus::Failed },
                error: msg.clone(),
                file: msg.is_none().then_some(file),
            });
            check(&mut failures, msg)?;
        }
        // planned cells that never ran stay visible in the manifest
        for (dataset, perturbation, representation, reason) in &blocked {
            for &method in &vcfg.methods {
                for &seed in &vcfg.seeds {
                    cell_entries.push(CellEntry {
                        key: CellKey {
                            variant: variant.clone(),
                            dataset: dataset.clone(),
                            method: method.name().to_string(),
                            backbone: BACKBONE.to_string(),
                            perturbation: perturbation.clone(),
                            representation: representation.clone(),
                            seed,
                        },
                        status: CellStatus::Failed,
                        error: Some(format!("blocked by {reason}")),
                        file: None,
                    });
                }
            }
        }
    }

    let mut metrics_csv = Vec::new();
    write_csv(&rows, &mut metrics_csv)?;
    write_atomic(&out_dir.join("metrics.csv"), &metrics_csv)?;
    let mut agg_csv = Vec::new();
    write_csv(&aggregate(&rows), &mut agg_csv)?;
    write_atomic(&out_dir.join("aggregate.csv"), &agg_csv)?;

    let oracle_trainings = systems.iter().map(|s| s.evaluator.full_trainings()).sum();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        grid: cfg.grid.windows().to_vec(),
        methods: cfg.methods.clone(),
        eps: cfg.eps.clone(),
        oracles: oracle_entries,
        anchors: anchor_entries,
        cells: cell_entries,
        oracle_trainings,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        cells_ok: manifest.cells.iter().filter(|c| c.status == CellStatus::Ok).count(),
        failures,
        manifest,
        rows,
    })
}
