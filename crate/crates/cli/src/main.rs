//! `lrvae`: generate data, train, encode with attribute masks, evaluate,
//! and run the comparison / masking-curve experiments.
//!
//! Exit codes: 0 success, 1 validation or usage, 2 I/O, 3 numerical failure.

use clap::Parser;

mod args;
mod cmds;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if let Err(e) = cmds::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &lrvae::Error) -> i32 {
    match e {
        lrvae::Error::Io { .. } => 2,
        lrvae::Error::NonFinite { .. } => 3,
        _ => 1,
    }
}
