//! Command-line driver for `handkd-core`: artifact files, run manifests,
//! sweeps and report tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod report;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use error::CliError;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
        }
    };
    match dispatch(&parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {} failed: {e}", parsed.command.name());
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: &cli::Command) -> Result<(), CliError> {
    use cli::Command::*;
    match cmd {
        GenRig(a) => commands::gen_rig(a),
        GenData(a) => commands::gen_data(a),
        TrainTeacher(a) => commands::train_teacher_cmd(a),
        Distill(a) => commands::distill_cmd(a),
        Eval(a) => commands::eval_cmd(a),
        Bench(a) => commands::bench_cmd(a),
        Sweep(a) => commands::sweep_cmd(a),
        Report(a) => commands::report_cmd(a),
    }
}
