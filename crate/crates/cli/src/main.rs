// SPDX-License-Identifier: Apache-2.0

//! `meshtrace`: fixture generation, tracking, mean shapes, training,
//! inference and evaluation from the command line.

mod args;
mod commands;
mod error;
mod table;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report(&CliError::usage(clap_message(&e)));
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => commands::gen(a, seed),
        Command::Track(a) => commands::track(a),
        Command::Meanshape(a) => commands::meanshape(a),
        Command::Train(a) => commands::train(a, seed),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a, seed),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MESHTRACE_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
}

/// First line of clap's rendered error, without the `error: ` prefix.
fn clap_message(e: &clap::Error) -> String {
    let rendered = e.render().to_string();
    let first = rendered.lines().next().unwrap_or("invalid arguments");
    first.strip_prefix("error: ").unwrap_or(first).to_string()
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json_line());
    ExitCode::from(e.code)
}
