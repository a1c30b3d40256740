//! `smp`: generate synthetic graph datasets, train and evaluate SMP/MPNN
//! models, run the verification suite and benchmark layer kernels.
//!
//! Exit codes: 0 success, 1 check or run failure, 2 usage/config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smp_core::datasets::{generate_cycle_dataset, generate_multitask_dataset, write_dataset};
use smp_core::harness::{
    bench_layers, evaluate_checkpoint, fitted_exponent, run_suite, train, write_bench_csv,
    HarnessError, RunConfig, Suite,
};

#[derive(Parser)]
#[command(name = "smp", version, about = "Structural message-passing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (JSON lines).
    Generate(GenerateArgs),
    /// Train a model and write metrics, report and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Run the verification suites.
    Verify(VerifyArgs),
    /// Time one forward pass per layer variant across graph sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Task: `cycles` or `multitask`.
    #[arg(long)]
    task: String,
    /// Cycle length (cycles task only; 4, 6 or 8).
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Graph size (cycles task only).
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// Smallest graph (multitask only).
    #[arg(long, default_value_t = 5)]
    n_min: usize,
    /// Largest graph (multitask only).
    #[arg(long, default_value_t = 24)]
    n_max: usize,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Key = value config file; every key can be overridden below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Coloring horizon L for compressed identifiers (0 = one-hot).
    #[arg(long)]
    coloring: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    lr_patience: Option<usize>,
    #[arg(long)]
    lr_floor: Option<f64>,
    /// Global gradient-norm clip (0 disables).
    #[arg(long)]
    max_grad_norm: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Where to write the report (default: stdout only).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite: equivariance | oracles | separation | gradients | all.
    #[arg(default_value = "all")]
    suite: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Graph sizes, comma separated.
    #[arg(long, default_value = "16,32,64", value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Average degrees, comma separated.
    #[arg(long, default_value = "4", value_delimiter = ',')]
    degrees: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Timed repetitions per configuration (median reported).
    #[arg(long, default_value_t = 15)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e
                .downcast_ref::<HarnessError>()
                .map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let dataset = match args.task.as_str() {
                "cycles" => generate_cycle_dataset(args.k, args.n, args.count, args.seed)?,
                "multitask" => {
                    generate_multitask_dataset(args.count, args.n_min, args.n_max, args.seed)?
                }
                other => {
                    return Err(
                        HarnessError::Config(format!("unknown task `{other}`")).into(),
                    )
                }
            };
            write_dataset(&dataset, &args.out)?;
            println!(
                "wrote {} records to {}",
                dataset.records.len(),
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let cfg = build_config(&args)?;
            let outcome = train(&cfg)?;
            println!(
                "finished {} epochs in {:.1}s; outputs in {}",
                outcome.report.epochs_run,
                outcome.report.wall_clock_secs,
                cfg.out_dir.display()
            );
            for (name, value) in &outcome.report.test_metrics {
                println!("test {name} = {value:.6}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(args) => {
            let report = evaluate_checkpoint(&args.checkpoint, &args.dataset)?;
            for (name, value) in &report.test_metrics {
                println!("{name} = {value:.6}");
            }
            if let Some(path) = args.report {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                println!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let suite = Suite::parse(&args.suite).ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown suite `{}`; use equivariance, oracles, separation, gradients or all",
                    args.suite
                ))
            })?;
            let results = run_suite(suite);
            let mut failures = 0;
            for check in &results {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("[{status}] {:<40} {}", check.name, check.detail);
                if !check.passed {
                    failures += 1;
                }
            }
            println!("{} checks, {} failed", results.len(), failures);
            Ok(if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Bench(args) => {
            let rows = bench_layers(&args.sizes, &args.degrees, args.width, args.reps, args.seed);
            match &args.out {
                Some(path) => {
                    write_bench_csv(&rows, path)?;
                    println!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => {
                    println!("variant,n,m,c,median_us");
                    for r in &rows {
                        println!("{},{},{},{},{}", r.variant, r.n, r.m, r.c, r.median_us);
                    }
                }
            }
            for variant in ["mpnn", "smp-fast", "smp-default"] {
                println!(
                    "{variant}: fitted scaling exponent {:.2}",
                    fitted_exponent(&rows, variant)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn build_config(args: &TrainArgs) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    macro_rules! override_with {
        ($($field:ident),*) => {
            $(if let Some(v) = &args.$field {
                cfg.set(stringify!($field), &v.to_string())?;
            })*
        };
    }
    override_with!(task, k, model, layers, width, epochs, batch_size, lr, beta1, beta2, eps, seed, val_fraction, lr_patience, lr_floor, max_grad_norm, coloring);
    if let Some(v) = &args.train {
        cfg.train = v.clone();
    }
    if let Some(v) = &args.test {
        cfg.test = v.clone();
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = v.clone();
    }
    Ok(cfg)
}
