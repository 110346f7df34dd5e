use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rulekit::cli::{self, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "rulekit",
    version,
    about = "Categorical association-rule mining pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest, filter, and write cross-tabulations and a dataset summary.
    Describe(RunArgs),
    /// Rank variables by random-forest permutation importance.
    SelectVars(RunArgs),
    /// Mine, prune and rank rules for every configured case.
    Mine(RunArgs),
    /// describe, select-vars and mine over one ingest.
    Pipeline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "RULEKIT_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Describe(a) => (Command::Describe, a),
        Cmd::SelectVars(a) => (Command::SelectVars, a),
        Cmd::Mine(a) => (Command::Mine, a),
        Cmd::Pipeline(a) => (Command::Pipeline, a),
    };
    let level = match args.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(1);
        }
    };
    let overrides = Overrides {
        output_dir: args.out,
        seed: args.seed,
    };
    match pool.install(|| cli::run(command, &args.config, &overrides)) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
