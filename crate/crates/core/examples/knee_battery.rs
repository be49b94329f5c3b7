//! The 20-system VAR battery: knee recovery and cost per method.
//!
//! cargo run --release --example knee_battery [out_dir]

use sake::harness::config::var_battery;
use sake::harness::report::report;
use sake::harness::run::run_experiment;

fn main() -> sake::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/knee_battery".into());
    let cfg = var_battery(20, 0);
    let summary = run_experiment(&cfg, out.as_ref(), false)?;
    let r = report(out.as_ref())?;
    println!("{}", r.aggregate.to_text());
    println!("{} cells, {} failures; tables under {out}/report", summary.cells_ok, summary.failures.len());
    Ok(())
}
