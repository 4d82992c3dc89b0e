use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use asmg_cli::config::ExperimentConfig;
use asmg_cli::{gradcheck, pipeline, synth};
use asmg_core::trainer::Variant;
use asmg_core::{Error, ErrorClass};
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "asmg", version, about = "Sequential model generation for streaming recommenders")]
struct Cli {
    /// Experiment configuration (key = value lines); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to a single run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to these variants (repeatable, or comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    variant: Vec<String>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the dataset into period shards.
    Prepare,
    /// Train the initial model of every seed.
    Pretrain,
    /// Warm-up and online evaluation of every variant and seed.
    Run {
        /// Stop every run after serving this period; rerun to resume.
        #[arg(long)]
        stop_after: Option<i64>,
    },
    /// Aggregate test-period metrics into results.csv and results.md.
    Report,
    /// Write the synthetic interaction stream as CSV into the output directory.
    GenSynthetic,
    /// Finite-difference gradient checks of the base loss and meta objective.
    CheckGrads {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_DATA
}

fn seeds(cli: &Cli, cfg: &ExperimentConfig) -> Vec<u64> {
    cli.seed.map_or_else(|| cfg.seeds(), |s| vec![s])
}

fn variants(cli: &Cli, cfg: &ExperimentConfig) -> Result<Vec<Variant>> {
    if cli.variant.is_empty() {
        return Ok(cfg.variants.clone());
    }
    cli.variant
        .iter()
        .map(|v| v.parse::<Variant>().map_err(|e| anyhow!(e)))
        .collect()
}

fn execute(cli: &Cli) -> Result<u8> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Prepare => {
            let manifest = pipeline::prepare(&cfg, out)?;
            println!(
                "{} periods written to {}",
                manifest.periods.len(),
                pipeline::data_dir(out).display()
            );
        }
        Command::Pretrain => {
            let prepared = pipeline::Prepared::load(&cfg, out)?;
            for seed in seeds(cli, &cfg) {
                let theta0 = pipeline::pretrain(&cfg, &prepared, out, seed)?;
                println!(
                    "seed {seed}: {} checksum {:016x}",
                    pipeline::checkpoint_path(out, seed).display(),
                    theta0.checksum()
                );
            }
        }
        Command::Run { stop_after } => {
            let variants = variants(cli, &cfg)?;
            let records = pipeline::run(&cfg, out, &variants, &seeds(cli, &cfg), *stop_after)?;
            for r in records {
                let state = if r.completed { "done" } else { "stopped" };
                println!(
                    "{} seed {}: {} periods logged, {state}",
                    r.variant,
                    r.seed,
                    r.logs.len()
                );
            }
        }
        Command::Report => {
            let report = pipeline::report(&cfg, out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!(
                "{}",
                asmg_core::metrics::results_markdown(&report.rows)
            );
            for c in &report.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {}", c.name, c.detail);
            }
            if !report.passed() {
                return Ok(EXIT_ACCEPTANCE);
            }
        }
        Command::GenSynthetic => {
            let mut spec = cfg.synthetic.clone();
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let rows = synth::generate(&spec)?;
            let path = out.join("interactions.csv");
            synth::write_interactions(&path, &rows)?;
            println!("{} interactions written to {}", rows.len(), path.display());
        }
        Command::CheckGrads { instances } => {
            let report = gradcheck::run_suite(*instances, cli.seed.unwrap_or(cfg.seed))?;
            println!(
                "{} instances in {:.1}s: base loss max relative error {:.3e}, meta objective {:.3e}",
                report.instances, report.seconds, report.base_worst, report.meta_worst
            );
            if !report.passed() {
                return Err(anyhow!(Error::Numerical(format!(
                    "gradient check above tolerance {:e}",
                    gradcheck::TOLERANCE
                ))));
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
