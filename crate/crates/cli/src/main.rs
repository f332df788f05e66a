use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

mod commands;
mod config;

use commands::{Cli, Failure};

fn main() -> ExitCode {
    let version: &'static str = Box::leak(symbreak::build_id().into_boxed_str());
    let root = Cli::command().version(version);
    let argv = match config::expand(std::env::args().collect(), &root) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let matches = match root.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, err) = match f {
                Failure::Usage(e) => (2, e),
                Failure::Data(e) => (3, e),
                Failure::Check(e) => (4, e),
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
