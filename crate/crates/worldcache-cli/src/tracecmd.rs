//! The `trace record` and `trace replay` subcommands.
//!
//! Record captures the full-compute stream of a scenario into a WCTR
//! file. Replay evaluates a policy configuration against such a file
//! without rerunning the simulator, so decision changes are attributable
//! to the configuration alone.

use rayon::prelude::*;
use worldcache::replay::{record_trace, replay_decisions};
use worldcache::sim::SyntheticDenoiser;
use worldcache::trace::{read_trace, write_trace, TapMask};

use crate::cli::CommonArgs;
use crate::config::{
    ablation_from_disables, build_engine, build_scenario, config_err, out_dir, parse_policy,
    parse_sweep, runtime_err, CliError, ConfigTree,
};
use crate::report::{self, say, ReportDoc, SweepRow};

pub fn cmd_record(args: &CommonArgs, dotted: &[(String, String)]) -> Result<(), CliError> {
    if args.policy.is_some() || args.sweep.is_some() || !args.ablate.is_empty() {
        return Err(CliError::Config(
            "trace record takes no --policy, --sweep, or --ablate".into(),
        ));
    }
    let tree = ConfigTree::load(args.config.as_deref(), dotted)?;
    let cfg = tree.materialize()?;
    let scenario = build_scenario(&cfg, args)?;
    let denoiser = SyntheticDenoiser::new(scenario).map_err(config_err)?;
    let (header, steps) = record_trace(&denoiser, TapMask::ALL);
    let path = match &args.trace {
        Some(p) => p.clone(),
        None => out_dir(&cfg, args)?.join("trace.wctr"),
    };
    write_trace(&path, &header, &steps).map_err(runtime_err)?;
    say!(
        "recorded scenario={} seed={} steps={} taps={}",
        scenario.kind.as_str(),
        header.seed,
        header.total_steps,
        header.taps.count()
    );
    say!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_replay(args: &CommonArgs, dotted: &[(String, String)]) -> Result<(), CliError> {
    if args.ablate.iter().any(|s| s == "ladder") {
        return Err(CliError::Config(
            "--ablate needs stage names here (cfc, swd, ofa, ats); the bare form belongs to \
             compare"
                .into(),
        ));
    }
    if args.scenario.is_some() {
        return Err(CliError::Config(
            "replay takes its data from the trace file; drop --scenario".into(),
        ));
    }
    let trace_path = args
        .trace
        .as_ref()
        .ok_or_else(|| CliError::Config("trace replay requires --trace <file>".into()))?;
    let tree = ConfigTree::load(args.config.as_deref(), dotted)?;
    let cfg = tree.materialize()?;
    let policy = parse_policy(args)?;
    let ablation = ablation_from_disables(&args.ablate)?;
    let dir = out_dir(&cfg, args)?;
    let (header, steps) = read_trace(trace_path).map_err(runtime_err)?;
    let total = header.total_steps as usize;

    if let Some(raw) = &args.sweep {
        let spec = parse_sweep(raw)?;
        let mut rows = spec
            .values
            .par_iter()
            .map(|&value| {
                let cfg = tree.with_value(&spec.key, value)?.materialize()?;
                let engine = build_engine(&cfg, total, ablation)?;
                let report = replay_decisions(&header, &steps, policy, &engine)
                    .map_err(runtime_err)?;
                Ok(SweepRow::from_run(value, &report))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        rows.sort_by(|a, b| a.value.total_cmp(&b.value));
        let path = dir.join("sweep.csv");
        report::write_text(&path, &report::sweep_csv(&spec.key, &rows))?;
        say!("sweep {} over {} values", spec.key, rows.len());
        say!("wrote {}", path.display());
        return Ok(());
    }

    let engine = build_engine(&cfg, total, ablation)?;
    let run = replay_decisions(&header, &steps, policy, &engine).map_err(runtime_err)?;
    let doc = ReportDoc::from_run(&run, "replay", header.seed);
    let report_path = dir.join("report.json");
    let steps_path = dir.join("steps.csv");
    report::write_json(&report_path, &doc)?;
    report::write_text(&steps_path, &report::steps_csv(&run.steps))?;
    say!(
        "policy={} trace={} steps={}",
        doc.policy,
        trace_path.display(),
        doc.total_steps
    );
    say!(
        "hits={} misses={} skip_rate={:.6} speedup={:.4}",
        doc.hits, doc.misses, doc.skip_rate, doc.simulated_speedup
    );
    say!("wrote {}", report_path.display());
    say!("wrote {}", steps_path.display());
    Ok(())
}
