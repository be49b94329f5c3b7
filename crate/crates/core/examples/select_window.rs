//! Every selector on one system, scored against the full sweep.
//!
//! cargo run --example select_window

use sake::harness::pipeline::{
    anchor_stage_on_pool, linear_evaluator, prepare_pilot_data, run_method, MethodSettings, SystemSpec,
};
use sake::metrics::{evaluate_selection, full_sweep, CellKey};
use sake::pilots::FullProtocol;
use sake::selector::Method;
use sake::summarize::ProjectorSpec;
use sake::sysrisk::CandidateGrid;
use sake::trajstore::{LinearLagSpec, SplitFractions};
use sake::AnchorSpec;

fn main() -> sake::Result<()> {
    let mut spec = LinearLagSpec::new(4, 4, 60, 60, 0.05, 3);
    spec.stability_margin = 0.02;
    let system = SystemSpec::Linear(spec);
    let grid = CandidateGrid::range(1, 12)?;

    let prepared = prepare_pilot_data(system.build()?, SplitFractions::new(0.6, 0.2, 0.2), &ProjectorSpec::default(), 0)?;
    let ev = linear_evaluator(&prepared, FullProtocol::default());
    let oracle = full_sweep(&ev, &grid, &[0])?;
    let (_, anchors) = anchor_stage_on_pool(system.build_replica(99)?, &ProjectorSpec::default(), &grid, &AnchorSpec::default(), 0)?;
    println!("anchors: core {} plateau {} S0 {:?}", anchors.l_core, anchors.l_plateau, anchors.s0);
    println!("oracle: best {} knee(5%) {}", oracle.l_best, oracle.knee(0.05));

    let settings = MethodSettings::default();
    println!("{:<12} {:>5} {:>8} {:>10} {:>6}", "method", "L_sel", "regret%", "cost", "evals");
    for method in Method::ALL {
        let result = run_method(method, &anchors, &grid, &ev, &settings, 0)?;
        let key = CellKey {
            method: method.name().into(),
            ..CellKey::default()
        };
        let row = evaluate_selection(&key, &result, &oracle, 0.05, Some(&anchors))?;
        println!(
            "{:<12} {:>5} {:>8.2} {:>10.4} {:>6}",
            method.name(),
            row.l_sel,
            100.0 * row.regret_knee.unwrap_or(f64::NAN),
            row.cost_ratio,
            row.unique_evals
        );
    }
    Ok(())
}
