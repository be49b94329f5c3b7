use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sake::harness::config::ExperimentConfig;
use sake::harness::pipeline::{anchor_stage_on_pool, linear_evaluator, prepare_pilot_data, run_method, SystemSpec};
use sake::harness::report::report;
use sake::harness::run::{run_experiment, write_atomic, BACKBONE};
use sake::metrics::{aggregate, evaluate_selection, full_sweep, write_csv, CellKey, MetricsRow, OracleReference};
use sake::selector::{Method, SelectionResult};
use sake::summarize::{ProjectorMethod, ProjectorSpec};
use sake::sysrisk::CandidateGrid;
use sake::trajstore::{
    generate_diffusion2d, generate_linear_lag_system, perturb, read_pool, write_pool, Diffusion2dSpec, LinearLagSpec,
    PerturbSpec,
};
use sake::{AnchorReport, Error, Result};

#[derive(Parser)]
#[command(name = "sake", version, about = "Context-window selection by system-anchored knee estimation")]
struct Cli {
    /// Seed for generation, splitting and selection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (or run directory for `run`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (JSON); supplies grid, budgets and selector settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stop at the first failing cell.
    #[arg(long, global = true)]
    fail_fast: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemKind {
    Linear,
    Diffusion2d,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbKindArg {
    Identity,
    GaussianNoise,
    Downsample,
    RandomMask,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trajectory file.
    Gen {
        #[arg(long, value_enum)]
        system: SystemKind,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        lag: usize,
        #[arg(long, default_value_t = 60)]
        n_traj: usize,
        #[arg(long, default_value_t = 60)]
        t: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.02)]
        margin: f64,
        /// Lattice size for diffusion2d.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 0.2)]
        diffusivity: f64,
    },
    /// Apply an observation perturbation to a trajectory file.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PerturbKindArg,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 0.25)]
        mask_fraction: f64,
    },
    /// Risk curve and anchors (JSON) for a trajectory file.
    Anchors {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        grid: Option<CandidateGrid>,
        #[arg(long, default_value = "pca")]
        representation: ProjectorMethod,
        /// Also write the risk curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Full-budget sweep over the grid (the oracle).
    Sweep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        grid: Option<CandidateGrid>,
    },
    /// Run one selector given an anchors file.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long, default_value = "sake")]
        method: Method,
        #[arg(long)]
        grid: Option<CandidateGrid>,
    },
    /// Score a selection against an oracle; writes metrics CSV.
    Eval {
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.05")]
        eps: Vec<f64>,
        #[arg(long, default_value = "cli")]
        dataset: String,
    },
    /// Aggregate metrics CSVs.
    Aggregate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Render the tables of a run directory.
    Report { run_dir: PathBuf },
    /// Run a full experiment from `--config`.
    Run,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Config("--out is required".into()))
}

/// Settings for the single-step commands: the config when given, otherwise
/// every default around the input file.
fn settings(cli: &Cli, input: &Path, grid: Option<&CandidateGrid>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(vec![SystemSpec::File(input.into())], CandidateGrid::range(1, 12)?),
    };
    if let Some(g) = grid {
        cfg.grid = g.clone();
    }
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn execute(cli: &Cli) -> Result<bool> {
    let out = cli.out.as_deref();
    match &cli.cmd {
        Cmd::Gen {
            system,
            dim,
            lag,
            n_traj,
            t,
            noise,
            margin,
            grid,
            diffusivity,
        } => {
            let pool = match system {
                SystemKind::Linear => {
                    let mut spec = LinearLagSpec::new(*dim, *lag, *n_traj, *t, *noise, cli.seed);
                    spec.stability_margin = *margin;
                    generate_linear_lag_system(&spec)?
                }
                SystemKind::Diffusion2d => {
                    generate_diffusion2d(&Diffusion2dSpec::new(*grid, *n_traj, *t, *diffusivity, cli.seed))?
                }
            };
            write_pool(&pool, require_out(out)?)?;
        }
        Cmd::Perturb {
            input,
            kind,
            sigma,
            factor,
            mask_fraction,
        } => {
            let spec = match kind {
                PerturbKindArg::Identity => PerturbSpec::identity(),
                PerturbKindArg::GaussianNoise => PerturbSpec::gaussian_noise(*sigma, cli.seed),
                PerturbKindArg::Downsample => PerturbSpec::downsample(*factor),
                PerturbKindArg::RandomMask => PerturbSpec::random_mask(*mask_fraction, cli.seed),
            };
            write_pool(&perturb(&read_pool(input)?, &spec)?, require_out(out)?)?;
        }
        Cmd::Anchors {
            input,
            grid,
            representation,
            curve,
        } => {
            let cfg = settings(cli, input, grid.as_ref())?;
            let proj = ProjectorSpec {
                method: *representation,
                ..cfg.anchor_projector.clone()
            };
            let (risk, report) = anchor_stage_on_pool(read_pool(input)?, &proj, &cfg.grid, &cfg.anchors, cli.seed)?;
            if let Some(p) = curve {
                let mut csv = Vec::new();
                risk.write_csv(&mut csv)?;
                write_atomic(p, &csv)?;
            }
            emit(out, report.to_json()?.as_bytes())?;
        }
        Cmd::Sweep { input, grid } => {
            let cfg = settings(cli, input, grid.as_ref())?;
            let prepared = prepare_pilot_data(read_pool(input)?, cfg.split, &cfg.pilot_projector, cli.seed)?;
            let oracle = full_sweep(&linear_evaluator(&prepared, cfg.full), &cfg.grid, &cfg.seeds)?;
            emit_json(out, &oracle)?;
        }
        Cmd::Select {
            input,
            anchors,
            method,
            grid,
        } => {
            let cfg = settings(cli, input, grid.as_ref())?;
            let report = AnchorReport::from_json(&fs::read_to_string(anchors)?)?;
            let prepared = prepare_pilot_data(read_pool(input)?, cfg.split, &cfg.pilot_projector, cli.seed)?;
            let ev = linear_evaluator(&prepared, cfg.full);
            let result = run_method(*method, &report, &cfg.grid, &ev, &cfg.selectors, cli.seed)?;
            emit_json(out, &result)?;
        }
        Cmd::Eval {
            selection,
            oracle,
            anchors,
            eps,
            dataset,
        } => {
            let result: SelectionResult = read_json(selection)?;
            let oracle: OracleReference = read_json(oracle)?;
            let anchors = match anchors {
                Some(p) => Some(AnchorReport::from_json(&fs::read_to_string(p)?)?),
                None => None,
            };
            let key = CellKey {
                variant: "base".into(),
                dataset: dataset.clone(),
                method: result.method.name().into(),
                backbone: BACKBONE.into(),
                perturbation: "clean".into(),
                representation: "pca".into(),
                seed: cli.seed,
            };
            let rows = eps
                .iter()
                .map(|&e| evaluate_selection(&key, &result, &oracle, e, anchors.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let mut csv = Vec::new();
            write_csv(&rows, &mut csv)?;
            emit(out, &csv)?;
        }
        Cmd::Aggregate { inputs } => {
            let mut rows: Vec<MetricsRow> = Vec::new();
            for p in inputs {
                let mut r = csv::Reader::from_path(p)?;
                for row in r.deserialize() {
                    rows.push(row?);
                }
            }
            let mut csv = Vec::new();
            write_csv(&aggregate(&rows), &mut csv)?;
            emit(out, &csv)?;
        }
        Cmd::Report { run_dir } => {
            let r = report(run_dir)?;
            for t in r.tables() {
                println!("== {} ==\n{}", t.name, t.to_text());
            }
            if r.gaps > 0 {
                eprintln!("{} missing cell(s) rendered as gaps", r.gaps);
                return Ok(false);
            }
        }
        Cmd::Run => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("run needs --config".into()))?;
            let cfg = ExperimentConfig::load(path)?;
            let dir = out
                .map(Path::to_path_buf)
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]));
            let summary = run_experiment(&cfg, &dir, cli.fail_fast)?;
            report(&dir)?;
            println!("{} cell(s) ok, {} failure(s); results in {}", summary.cells_ok, summary.failures.len(), dir.display());
            for f in &summary.failures {
                eprintln!("failed: {f}");
            }
            return Ok(summary.success());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
