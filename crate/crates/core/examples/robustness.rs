//! Anchor stability under observation perturbations of the anchor pool.
//!
//! cargo run --release --example robustness [out_dir]

use sake::harness::config::{robustness_perturbations, var_battery};
use sake::harness::report::report;
use sake::harness::run::run_experiment;
use sake::selector::Method;

fn main() -> sake::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/robustness".into());
    let mut cfg = var_battery(10, 0);
    cfg.perturbations = robustness_perturbations(7);
    cfg.methods = vec![Method::Sake, Method::SystemCore];
    run_experiment(&cfg, out.as_ref(), false)?;
    let r = report(out.as_ref())?;
    println!("{}", r.anchors.to_text());
    Ok(())
}
