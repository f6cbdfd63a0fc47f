use std::process::ExitCode;

use balquant::cli::{run, Cli};
use balquant::{Error, LOG_ENV};
use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // clap renders a multi-line report; keep only its first line.
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(&Error::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}", e.one_line());
    ExitCode::from(e.exit_code() as u8)
}
