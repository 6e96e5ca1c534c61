use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynaconv::cli::{self, Command, Invocation};

#[derive(Parser)]
#[command(name = "dynaconv", version, about = "Dynamic-convolution experiments driven by a JSON configuration")]
struct Opts {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a static model with the default permutation.
    Train(Common),
    /// Fine-tune with random permutations and compare sweeps before and after.
    Rof(Common),
    /// Evaluate every permutation on every sample.
    Sweep(Common),
    /// Greedy accumulation curve over a sweep.
    Greedy(Common),
    /// Budgeted combination of per-attribute sweeps.
    Combined(Common),
    /// Preferences under scaled inputs.
    ProbeScale(Common),
    /// Preferences under reduced context.
    ProbeContext(Common),
    /// Cheapest prediction-preserving permutations and the cost frontier.
    Efficiency(Common),
    /// Regenerate analyses from a saved sweep.
    Report(Common),
    /// List every configuration violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override, for example `train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn invocation(self) -> Invocation {
        Invocation { config: self.config, overrides: self.overrides, output: self.output, seed: self.seed, threads: self.threads }
    }
}

fn main() -> ExitCode {
    let (command, common) = match Opts::parse().command {
        Cmd::Validate { config } => {
            return match cli::validate_file(&config) {
                Ok(v) if v.is_empty() => {
                    println!("ok");
                    ExitCode::SUCCESS
                }
                Ok(v) => {
                    for x in v {
                        println!("{x}");
                    }
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(cli::exit_code(&e) as u8)
                }
            }
        }
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Rof(c) => (Command::Rof, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Greedy(c) => (Command::Greedy, c),
        Cmd::Combined(c) => (Command::Combined, c),
        Cmd::ProbeScale(c) => (Command::ProbeScale, c),
        Cmd::ProbeContext(c) => (Command::ProbeContext, c),
        Cmd::Efficiency(c) => (Command::Efficiency, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    match cli::run(command, &common.invocation()) {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m.summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
