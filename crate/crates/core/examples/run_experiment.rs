//! Writes an experiment config, runs it and renders the report. The same
//! config works with `sake run --config <file>`.
//!
//! cargo run --example run_experiment [out_dir]

use std::path::PathBuf;

use sake::harness::config::ExperimentConfig;
use sake::harness::pipeline::SystemSpec;
use sake::harness::report::report;
use sake::harness::run::run_experiment;
use sake::sysrisk::CandidateGrid;
use sake::trajstore::{Diffusion2dSpec, LinearLagSpec, PerturbSpec};

fn main() -> sake::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example".into()));
    let mut cfg = ExperimentConfig::new(
        vec![
            SystemSpec::Linear(LinearLagSpec::new(4, 2, 40, 50, 0.05, 1)),
            SystemSpec::Diffusion2d(Diffusion2dSpec::new(8, 40, 40, 0.2, 1)),
        ],
        CandidateGrid::range(1, 8)?,
    );
    cfg.perturbations = vec![PerturbSpec::identity(), PerturbSpec::gaussian_noise(0.05, 1)];
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("experiment.json"), cfg.to_json()?)?;

    let summary = run_experiment(&cfg, &out, false)?;
    let r = report(&out)?;
    println!("{}", r.selected.to_text());
    println!("{}", r.anchors.to_text());
    println!("config hash {}", summary.manifest.config_hash);
    if !summary.success() {
        eprintln!("failures: {:?}", summary.failures);
        std::process::exit(1);
    }
    Ok(())
}
