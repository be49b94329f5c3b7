//! One-at-a-time sensitivity of SAKE to rho, tau_pl, kappa, B and eps.
//!
//! cargo run --release --example sensitivity [out_dir]

use sake::harness::config::{sensitivity_battery, var_battery};
use sake::harness::run::run_experiment;
use sake::metrics::aggregate;
use sake::selector::Method;

fn main() -> sake::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/sensitivity".into());
    let mut cfg = sensitivity_battery(var_battery(6, 0));
    cfg.methods = vec![Method::Sake];
    let summary = run_experiment(&cfg, out.as_ref(), false)?;
    println!("{:<12} {:>5} {:>7} {:>8} {:>9}", "variant", "eps", "exact%", "within1%", "cost");
    for a in aggregate(&summary.rows) {
        println!(
            "{:<12} {:>5} {:>7.1} {:>8.1} {:>9.4}",
            a.variant, a.eps, a.exact_pct, a.within1_pct, a.cost_ratio
        );
    }
    Ok(())
}
