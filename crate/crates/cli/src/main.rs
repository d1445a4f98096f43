#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;
mod svg;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use serde_json::json;

use args::{Cli, Command};
use commands::Failure;

fn usage_error(message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": "usage", "message": message}));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let command = Cli::command();
    let argv = match config::expand(std::env::args_os().collect(), &command) {
        Ok(argv) => argv,
        Err(message) => {
            eprintln!("error: {message}");
            return usage_error(&message);
        }
    };
    let cli = match command
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return usage_error(first.trim_start_matches("error: "));
        }
    };

    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Spectrum(a) => commands::spectrum(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { kind, message }) => {
            eprintln!("{}", json!({"error": kind, "message": message}));
            ExitCode::FAILURE
        }
    }
}
