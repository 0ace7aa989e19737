//! `c2g`: train a CNN teacher, distill it into a GNN student, evaluate,
//! dump learned graphs and sweep `(τ, s)`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cnn2gnn::distill::Mechanism;

use commands::{CliError, Run};

#[derive(Parser)]
#[command(name = "c2g", version, about = "CNN-to-GNN heterogeneous distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the CNN teacher and save `teacher.c2g`.
    TrainTeacher(Flags),
    /// Train the GNN student and graph head against the saved teacher.
    Distill(Flags),
    /// Score the saved student on the test split.
    Eval(Flags),
    /// Write the learned affinities of the reference training batch.
    Graph(Flags),
    /// Grid over temperature and neighbor count.
    Sweep(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Test-time graph: `one` (cascade) or `batch` (surrogate graph).
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<Mechanism>,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e| match e {
        cnn2gnn::Error::Config(m) => m,
        other => other.to_string(),
    })
}

fn run(command: Command) -> Result<(), CliError> {
    let (flags, action): (Flags, fn(&Run) -> commands::Result<()>) = match command {
        Command::TrainTeacher(f) => (f, commands::train_teacher),
        Command::Distill(f) => (f, commands::distill),
        Command::Eval(f) => (f, commands::eval),
        Command::Graph(f) => (f, commands::graph),
        Command::Sweep(f) => (f, commands::sweep),
    };
    let mut cfg = config::parse_config(&flags.config)?;
    commands::apply_overrides(&mut cfg, flags.seed, flags.mechanism);
    let out = commands::output_dir(&cfg, flags.out.as_deref());
    action(&Run::new(cfg, out)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("c2g: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
