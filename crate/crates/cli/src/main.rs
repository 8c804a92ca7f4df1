use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mfgmpc", version, about = "Mean-field MPC and game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed, overriding the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { mfgmpc_cli::EXIT_VALIDATION } else { mfgmpc_cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let Command::Run { config, out, seed, jobs } = cli.command;
    match mfgmpc_cli::run_file(&config, out.as_deref(), seed, jobs) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", summary.output.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
