use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddq_cli::{analyze, output_dirs, run_scenario, verify, CliError};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "ddq",
    version,
    about = "Run and analyze DDQ cellular automaton scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write snapshots, counts and a report.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Also render PPM frames.
        #[arg(long)]
        frames: bool,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Replay a run directory and compare snapshots bit for bit.
    Verify { dir: PathBuf },
    /// Recompute one analysis from a run directory and print it as JSON.
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        kind: String,
    },
}

fn report(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenarios,
            output,
            frames,
            jobs,
        } => {
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = jobs {
                pool = pool.num_threads(n.max(1));
            }
            let pool = pool.build().expect("thread pool");
            pool.install(|| match output_dirs(&scenarios, &output) {
                Err(e) => report(&e),
                Ok(dirs) => scenarios
                    .par_iter()
                    .zip(dirs)
                    .map(|(path, dir)| match run_scenario(path, &dir, frames) {
                        Ok(_) => {
                            println!("{}: ok -> {}", path.display(), dir.display());
                            0
                        }
                        Err(e) => {
                            eprint!("{}: ", path.display());
                            report(&e)
                        }
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .max()
                    .unwrap_or(0),
            })
        }
        Command::Verify { dir } => match verify(&dir) {
            Ok(()) => {
                println!("{}: replay identical", dir.display());
                0
            }
            Err(e) => report(&e),
        },
        Command::Analyze { dir, kind } => match analyze(&dir, &kind) {
            Ok(v) => {
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
                0
            }
            Err(e) => report(&e),
        },
    };
    ExitCode::from(code as u8)
}
