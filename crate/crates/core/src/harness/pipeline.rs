//! End-to-end building blocks: pools, summaries, anchors and selectors.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::anchors::{anchor_report, AnchorReport, AnchorSpec};
use crate::error::{Error, Result, Stage, StageContext};
use crate::pilots::{FullProtocol, LinearPilotEvaluator, PilotData, PilotEvaluator};
use crate::selector::{
    run_asha, run_direct_shortlist, run_sake, run_system_core, AshaSpec, Method, SelectionResult, SelectorSpec,
    StageBudgets,
};
use crate::summarize::{fit_projector, project, Projector, ProjectorSpec};
use crate::sysrisk::{risk_curve, CandidateGrid, RiskCurve, DEFAULT_RIDGE};
use crate::trajstore::{
    generate_diffusion2d, generate_linear_lag_pool, read_pool, split_pool, Diffusion2dSpec, LinearLagSpec, PoolView,
    SplitFractions, SplitPool, TrajectoryPool,
};

/// Where trajectories come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Linear(LinearLagSpec),
    Diffusion2d(Diffusion2dSpec),
    /// A trajectory file; replicas reuse the same data.
    File(PathBuf),
}

impl SystemSpec {
    pub fn label(&self) -> String {
        match self {
            SystemSpec::Linear(s) => format!("var{}_d{}_s{}", s.true_lag, s.dim, s.seed),
            SystemSpec::Diffusion2d(s) => format!("diffusion{}_k{}_s{}", s.grid, s.diffusivity, s.seed),
            SystemSpec::File(p) => p.file_stem().map_or("file".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::File(p) if !p.is_file() => Err(Error::Config(format!("trajectory file {} does not exist", p.display()))),
            _ => Ok(()),
        }
    }

    /// The pool used for pilots and the oracle.
    pub fn build(&self) -> Result<TrajectoryPool> {
        match self {
            SystemSpec::Linear(s) => generate_linear_lag_pool(s, s.seed),
            SystemSpec::Diffusion2d(s) => generate_diffusion2d(s),
            SystemSpec::File(p) => Ok(read_pool(p)?),
        }
    }

    /// An independent pool from the same system (fresh noise and initial
    /// conditions drawn from `sim_seed`).
    pub fn build_replica(&self, sim_seed: u64) -> Result<TrajectoryPool> {
        match self {
            SystemSpec::Linear(s) => generate_linear_lag_pool(s, sim_seed),
            SystemSpec::Diffusion2d(s) => generate_diffusion2d(&Diffusion2dSpec { seed: sim_seed, ..s.clone() }),
            SystemSpec::File(p) => Ok(read_pool(p)?),
        }
    }
}

/// Pilot/oracle data: split pool, its projector and projected summaries.
#[derive(Debug)]
pub struct PreparedData {
    pub split: SplitPool,
    pub projector: Projector,
    pub data: PilotData,
}

pub fn prepare_pilot_data(
    pool: TrajectoryPool,
    fractions: SplitFractions,
    projector: &ProjectorSpec,
    seed: u64,
) -> Result<PreparedData> {
    let split = split_pool(pool, fractions, seed)?;
    let proj = fit_projector(&split.train(), projector)?;
    let data = PilotData {
        train: project(&proj, &split.train())?,
        val: project(&proj, &split.val())?,
        test: project(&proj, &split.test())?,
    };
    Ok(PreparedData {
        split,
        projector: proj,
        data,
    })
}

/// Stage one from raw trajectories: fit the summary on `train`, build the
/// risk curve against `val` and extract the anchors.
pub fn anchor_stage(
    train: &PoolView<'_>,
    val: &PoolView<'_>,
    projector: &ProjectorSpec,
    grid: &CandidateGrid,
    spec: &AnchorSpec,
) -> Result<(RiskCurve, AnchorReport)> {
    let run = || -> Result<(RiskCurve, AnchorReport)> {
        spec.validate()?;
        let proj = fit_projector(train, projector)?;
        let s_train = project(&proj, train)?;
        let s_val = project(&proj, val)?;
        let curve = risk_curve(&s_train, &s_val, grid, DEFAULT_RIDGE, &spec.boot)?;
        let report = anchor_report(&curve, spec)?;
        Ok((curve, report))
    };
    run().stage(Stage::Anchors)
}

/// Fractions used to split a dedicated anchor pool (no test part).
pub const ANCHOR_FRACTIONS: SplitFractions = SplitFractions::new(0.75, 0.25, 0.0);

pub fn anchor_stage_on_pool(
    pool: TrajectoryPool,
    projector: &ProjectorSpec,
    grid: &CandidateGrid,
    spec: &AnchorSpec,
    seed: u64,
) -> Result<(RiskCurve, AnchorReport)> {
    let split = split_pool(pool, ANCHOR_FRACTIONS, seed).stage(Stage::Anchors)?;
    anchor_stage(&split.train(), &split.val(), projector, grid, spec)
}

/// Everything a selector may need besides the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSettings {
    #[serde(default)]
    pub budgets: StageBudgets,
    #[serde(default)]
    pub sake: SelectorSpec,
    #[serde(default = "SelectorSpec::direct")]
    pub direct: SelectorSpec,
    #[serde(default)]
    pub asha: AshaSpec,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            budgets: StageBudgets::default(),
            sake: SelectorSpec::default(),
            direct: SelectorSpec::direct(),
            asha: AshaSpec::default(),
        }
    }
}

pub fn run_method(
    method: Method,
    report: &AnchorReport,
    grid: &CandidateGrid,
    evaluator: &dyn PilotEvaluator,
    settings: &MethodSettings,
    seed: u64,
) -> Result<SelectionResult> {
    let b = &settings.budgets;
    match method {
        Method::Sake => run_sake(report, grid, evaluator, b, &settings.sake, seed),
        Method::SystemCore => Ok(run_system_core(report)),
        Method::Direct3 => run_direct_shortlist(3, grid, evaluator, b, &settings.direct, seed),
        Method::Direct4 => run_direct_shortlist(4, grid, evaluator, b, &settings.direct, seed),
        Method::Asha => run_asha(grid, evaluator, &b.stage1, &settings.asha, seed),
    }
}

pub fn linear_evaluator(prepared: &PreparedData, full: FullProtocol) -> LinearPilotEvaluator {
    LinearPilotEvaluator::new(prepared.data.clone(), full)
}
