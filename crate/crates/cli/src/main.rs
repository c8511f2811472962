use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use l3o_cli::args::Cli;
use l3o_cli::config::RunConfig;
use l3o_cli::{commands, report, CliResult};

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::from_command(&cli.command)?;
    let rep = commands::run(&cfg)?;
    let text = report::render(&rep, cfg.format)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("l3o {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
