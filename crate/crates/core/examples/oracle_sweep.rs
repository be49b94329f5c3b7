//! Full-budget sweep over the grid and how the knee moves with the tolerance.
//!
//! cargo run --example oracle_sweep

use sake::harness::pipeline::{linear_evaluator, prepare_pilot_data};
use sake::metrics::full_sweep;
use sake::pilots::FullProtocol;
use sake::summarize::ProjectorSpec;
use sake::sysrisk::CandidateGrid;
use sake::trajstore::{generate_linear_lag_system, LinearLagSpec, SplitFractions};

fn main() -> sake::Result<()> {
    let mut spec = LinearLagSpec::new(4, 5, 60, 60, 0.05, 5);
    spec.stability_margin = 0.02;
    let pool = generate_linear_lag_system(&spec)?;
    let prepared = prepare_pilot_data(pool, SplitFractions::new(0.6, 0.2, 0.2), &ProjectorSpec::default(), 0)?;
    let ev = linear_evaluator(&prepared, FullProtocol::default());
    let oracle = full_sweep(&ev, &CandidateGrid::range(1, 12)?, &[0, 1, 2])?;
    oracle.write_csv(std::io::stdout())?;
    for eps in [0.0, 0.02, 0.05, 0.10, 0.15] {
        println!("eps {eps:>4}: knee {}", oracle.knee(eps));
    }
    Ok(())
}
