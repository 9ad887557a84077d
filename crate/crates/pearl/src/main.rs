use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pearl::commands;
use pearl::{PipelineConfig, Result};

#[derive(Parser)]
#[command(name = "pearl", version, about = "Cross-task preference transfer and robust reward learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target task pair with scripted labels.
    GenTasks(Args),
    /// Align source and target segments and transfer preference labels.
    Transfer(Args),
    /// Train the reward model on transferred or scripted labels.
    TrainReward(Args),
    /// Run transfer (and optionally training) over a parameter grid.
    Sweep(Args),
    /// Transfer followed by train-reward.
    Pipeline(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; unset paths in the config resolve inside it.
    #[arg(long, default_value = "pearl-out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(command: Command) -> Result<()> {
    let (args, name) = match &command {
        Command::GenTasks(a) => (a, "gen-tasks"),
        Command::Transfer(a) => (a, "transfer"),
        Command::TrainReward(a) => (a, "train-reward"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Pipeline(a) => (a, "pipeline"),
    };
    let mut cfg = PipelineConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let paths = cfg.paths.resolve(&args.out);
    log::info!("{name}: output in {}", paths.out.display());
    match command {
        Command::GenTasks(_) => commands::gen_tasks(&cfg, &paths),
        Command::Transfer(_) => commands::transfer(&cfg, &paths).map(drop),
        Command::TrainReward(_) => commands::train_reward(&cfg, &paths).map(drop),
        Command::Sweep(_) => commands::sweep(&cfg, &paths).map(drop),
        Command::Pipeline(_) => commands::pipeline(&cfg, &paths).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
