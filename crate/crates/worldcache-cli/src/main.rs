//! `worldcache`: run caching policies on synthetic scenarios and report
//! machine-readable telemetry.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! config keys, or parameter ranges), 3 for runtime failures (I/O, trace
//! format, execution errors).

mod cli;
mod compare;
mod config;
mod report;
mod run;
mod tracecmd;

use clap::Parser;

use crate::cli::{Args, Command, TraceCmd};
use crate::config::CliError;

fn main() {
    let (dotted, argv) = cli::extract_dotted_args(std::env::args().collect());
    // Clap handles --help/--version itself and exits 2 on usage errors,
    // which matches the config-error class.
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    let result = match args.command {
        Command::Run(common) => run::cmd_run(&common, &dotted),
        Command::Compare(common) => compare::cmd_compare(&common, &dotted),
        Command::Trace { cmd } => match cmd {
            TraceCmd::Record(common) => tracecmd::cmd_record(&common, &dotted),
            TraceCmd::Replay(common) => tracecmd::cmd_replay(&common, &dotted),
        },
    };
    match result {
        Ok(()) => {}
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            std::process::exit(3);
        }
    }
}
