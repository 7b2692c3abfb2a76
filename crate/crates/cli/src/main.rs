use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use recgoat::cli::{self, Overrides, RunConfig};
use recgoat::trainer::Variant;

#[derive(Parser)]
#[command(name = "recgoat", version, about = "Multimodal recommendation with aligned LLM features")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// k-core threshold.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    device_threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and split raw interactions into a prepared dataset.
    Prepare,
    /// Write the synthetic dataset in prepared layout.
    Generate,
    /// Train one model and save its checkpoint.
    Train,
    /// Rank the test split with a saved checkpoint.
    Evaluate,
    /// Train every variant over the ablation seeds.
    Ablate,
    /// Check the alignment error bounds numerically.
    VerifyBounds,
    /// Grid-search the fusion weights.
    Sweep,
}

fn run(args: Args) -> recgoat::Result<i32> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: args.seed,
        variant: args.variant,
        out: args.out,
        k: args.k,
        epochs: args.epochs,
        device_threads: args.device_threads,
    });
    cfg.validate()?;
    cli::init_threads(cfg.device_threads);
    match args.command {
        Command::Prepare => {
            let stats = cli::cmd_prepare(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Generate => {
            let stats = cli::cmd_generate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train => {
            let ck = cli::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&ck.metrics)?);
        }
        Command::Evaluate => {
            let js = cli::cmd_evaluate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&js)?);
        }
        Command::Ablate => print!("{}", cli::cmd_ablate(&cfg)?.to_tsv()),
        Command::VerifyBounds => {
            let suite = cli::cmd_verify_bounds(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&suite.reports())?);
            if !suite.passed() {
                return Ok(cli::EXIT_BOUNDS);
            }
        }
        Command::Sweep => {
            let points = cli::cmd_sweep(&cfg)?;
            println!("{} grid points written to {}", points.len(), cfg.out_dir.join("sweep.tsv").display());
        }
    }
    Ok(cli::EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RECGOAT_LOG", "info")).init();
    let parsed = Args::command()
        .after_help(RunConfig::help_text())
        .try_get_matches()
        .and_then(|m| Args::from_arg_matches(&m));
    let args = match parsed {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_CONFIG } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
