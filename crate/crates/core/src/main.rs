use std::panic;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use fiscal_ipw::cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::new("E_USAGE", first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    panic::set_hook(Box::new(|info| {
        eprintln!("{}", CliError::new("E_INTERNAL", info.to_string()));
    }));
    match panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
