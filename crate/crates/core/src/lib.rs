//! System-anchored knee estimation (SAKE) for choosing the context-window
//! length of fixed-window autoregressive simulators.
//!
//! The pipeline has two stages. Stage one summarizes clean trajectories with a
//! linear projector, fits ridge VAR(L) models on the summaries for every
//! candidate window, and reads two anchors (`L_core`, `L_plateau`) off the
//! resulting risk curve. Stage two trains cheap pilots only around those
//! anchors and applies a knee-aware rule to pick the smallest window whose
//! score is statistically indistinguishable from the best.
//!
//! Module map:
//!
//! - [`trajstore`] - trajectory pools, synthetic generators, splits, perturbations, file format
//! - [`summarize`] - projectors (PCA, randomized SVD, random projection, probes, identity)
//! - [`sysrisk`] - candidate grids, ridge VAR risk curves, bootstrap UCBs
//! - [`anchors`] - `L_core`, `L_plateau` and the initial shortlist
//! - [`pilots`] - the reference linear pilot, rollout diagnostics, cost model
//! - [`selector`] - SAKE stage two and the System-core / Direct-k / ASHA baselines
//! - [`metrics`] - full-sweep oracle, knee, regrets, cost ratio, aggregation
//! - [`harness`] - experiment configs, batteries, run directories and reports

#![forbid(unsafe_code)]

pub mod anchors;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pilots;
pub mod rng;
pub mod selector;
pub mod summarize;
pub mod sysrisk;
pub mod trajstore;

pub use anchors::{AnchorReport, AnchorSpec};
pub use error::{Error, Result, Stage};
pub use metrics::{MetricsRow, OracleReference};
pub use pilots::{Diagnostics, FullProtocol, LinearPilotEvaluator, PilotBudget, PilotEvaluator};
pub use selector::{Method, SelectionResult, SelectorSpec, StageBudgets};
pub use summarize::{Projector, ProjectorMethod, ProjectorSpec, SummarySet};
pub use sysrisk::{BootstrapSpec, CandidateGrid, RiskCurve};
pub use trajstore::{PerturbSpec, SplitPool, TrajectoryPool};
pub use harness::config::ExperimentConfig;
pub use harness::run::{run_experiment, RunSummary};
