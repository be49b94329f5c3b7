//! Stage one: the system-risk curve of a VAR(3) pool and its anchors.
//!
//! cargo run --example risk_curve_anchors

use sake::anchors::{anchor_report, AnchorSpec};
use sake::summarize::{fit_projector, project, ProjectorSpec};
use sake::sysrisk::{risk_curve, BootstrapSpec, CandidateGrid, DEFAULT_RIDGE};
use sake::trajstore::{generate_linear_lag_system, split_pool, LinearLagSpec, SplitFractions};

fn main() -> sake::Result<()> {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(4, 3, 60, 60, 0.05, 0))?;
    let split = split_pool(pool, SplitFractions::new(0.75, 0.25, 0.0), 0)?;
    let proj = fit_projector(&split.train(), &ProjectorSpec::default())?;
    let (train, val) = (project(&proj, &split.train())?, project(&proj, &split.val())?);

    let grid = CandidateGrid::range(1, 12)?;
    let curve = risk_curve(&train, &val, &grid, DEFAULT_RIDGE, &BootstrapSpec::default())?;
    let report = anchor_report(&curve, &AnchorSpec::default())?;

    println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "L", "risk", "T_sys ucb", "G_rel", "G_rel ucb");
    for d in &report.diagnostics {
        let g = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
        println!("{:>3} {:>10.5} {:>10.5} {:>10} {:>10}", d.window, d.risk, d.t_sys_ucb, g(d.g_rel), g(d.g_rel_ucb));
    }
    println!(
        "eps_sys {:.5}  L_core {}  L_plateau {}  S0 {:?}",
        report.epsilon_sys, report.l_core, report.l_plateau, report.s0
    );
    Ok(())
}
