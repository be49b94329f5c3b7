//! Cheap pilots versus the full protocol, window by window.
//!
//! cargo run --example pilots

use sake::harness::pipeline::{linear_evaluator, prepare_pilot_data};
use sake::pilots::{FullProtocol, PilotBudget, PilotEvaluator};
use sake::summarize::ProjectorSpec;
use sake::trajstore::{generate_linear_lag_system, LinearLagSpec, SplitFractions};

fn main() -> sake::Result<()> {
    let pool = generate_linear_lag_system(&LinearLagSpec::new(4, 2, 60, 60, 0.05, 1))?;
    let prepared = prepare_pilot_data(pool, SplitFractions::new(0.6, 0.2, 0.2), &ProjectorSpec::default(), 0)?;
    let ev = linear_evaluator(&prepared, FullProtocol::default());
    println!("{:>3} {:>8} {:>8} {:>8} {:>8} {:>7} {:>9}", "L", "m", "u", "v", "a", "cost", "full M");
    for l in 1..=6 {
        let rec = ev.pilot("stage2", l, &PilotBudget::stage2(), 0)?;
        let d = &rec.diagnostics;
        let full = ev.full(l, 0)?;
        println!(
            "{l:>3} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7.4} {:>9.4}",
            d.m,
            d.u,
            d.v,
            d.a.unwrap_or(f64::NAN),
            rec.cost,
            full.m
        );
    }
    println!("pilot trainings {}", ev.trainings());
    Ok(())
}
