use std::process::ExitCode;

use clap::{Parser, Subcommand};
use syk_lab::error::CliError;
use syk_lab::{plan, run_all, validate_all, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "syk-lab", version, about = "SYK exact diagonalization, large-N and quantum-battery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or experiment name; key=value flags override it.
    Run {
        config: Option<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        flags: Vec<String>,
    },
    /// Regenerate the data of a figure preset (fig2-left, fig2-right, fig3, fig4a, fig4b).
    Figure {
        name: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        flags: Vec<String>,
    },
    /// Parse and check a config, printing its canonical form.
    Validate {
        config: Option<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        flags: Vec<String>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let env = std::env::var(WORKERS_ENV).ok();
    match cli.command {
        Command::Run { config, flags } => {
            let configs = plan(config.as_deref(), &flags, env.as_deref())?;
            for r in run_all(&configs)? {
                println!("{}: {}", r.out.display(), r.artifacts.join(", "));
            }
        }
        Command::Figure { name, flags } => {
            let configs = plan(Some(&format!("figure={name}")), &flags, env.as_deref())?;
            for r in run_all(&configs)? {
                println!("{}: {}", r.out.display(), r.artifacts.join(", "));
            }
        }
        Command::Validate { config, flags } => {
            let configs = plan(config.as_deref(), &flags, env.as_deref())?;
            validate_all(&configs)?;
            for c in &configs {
                print!("{}", c.canonical());
                if configs.len() > 1 {
                    println!();
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("syk-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
