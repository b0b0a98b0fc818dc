//! Argument surface. Dotted config overrides (`--policy.tau0 0.05`) are
//! split off before clap sees the command line, so any configuration key
//! can be set per invocation without declaring a flag for it.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "worldcache", version, about = "Feature-caching policy simulator")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run one policy on one scenario and write report.json + steps.csv.
    Run(CommonArgs),
    /// Run every baseline policy side by side; with --ablate, emit the
    /// incremental ablation ladder instead.
    Compare(CommonArgs),
    /// Record or replay WCTR trace files.
    Trace {
        #[command(subcommand)]
        cmd: TraceCmd,
    },
}

#[derive(Subcommand)]
pub enum TraceCmd {
    /// Record a full-compute run of a scenario into a WCTR file.
    Record(CommonArgs),
    /// Replay a recorded trace under a policy configuration.
    Replay(CommonArgs),
}

#[derive(clap::Args)]
pub struct CommonArgs {
    /// Caching policy: worldcache, fixed-threshold, fixed-schedule, or
    /// full-compute.
    #[arg(long)]
    pub policy: Option<String>,

    /// Scenario kind: static, linear-drift, translating-pattern, curved,
    /// or rising-drift.
    #[arg(long)]
    pub scenario: Option<String>,

    /// TOML configuration file; dotted flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Scenario seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,

    /// For `run`/`trace replay`: comma-separated pipeline stages to
    /// disable (cfc, swd, ofa, ats). For `compare`: pass bare to emit the
    /// incremental ablation ladder.
    #[arg(long, num_args = 0..=1, default_missing_value = "ladder", value_delimiter = ',')]
    pub ablate: Vec<String>,

    /// Sweep one config key over a range: key=start:end:count
    /// (e.g. policy.tau0=0.01:0.2:20; bare "tau0" is shorthand).
    #[arg(long)]
    pub sweep: Option<String>,

    /// Trace file path: written by `run`/`trace record`, read by
    /// `trace replay`.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Output directory for reports (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Split `--some.dotted.key value` (or `--some.dotted.key=value`) pairs
/// out of the raw command line. Returns the overrides and the remaining
/// arguments for clap.
pub fn extract_dotted_args(raw: Vec<String>) -> (Vec<(String, String)>, Vec<String>) {
    let mut dotted = Vec::new();
    let mut rest = Vec::new();
    let mut it = raw.into_iter();
    while let Some(tok) = it.next() {
        let is_dotted = tok.starts_with("--") && tok[2..].split('=').next().unwrap_or("").contains('.');
        if !is_dotted {
            rest.push(tok);
            continue;
        }
        let body = &tok[2..];
        if let Some((key, value)) = body.split_once('=') {
            dotted.push((key.to_string(), value.to_string()));
        } else if let Some(value) = it.next() {
            dotted.push((body.to_string(), value));
        } else {
            // No value: keep it for clap, which will reject it with a
            // usage error.
            rest.push(tok);
        }
    }
    (dotted, rest)
}
