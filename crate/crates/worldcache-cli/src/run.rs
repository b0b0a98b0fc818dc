//! The `run` subcommand: one policy over one scenario, with optional
//! parameter sweeps and trace capture.

use rayon::prelude::*;
use worldcache::engine::run_trajectory;
use worldcache::replay::record_trace;
use worldcache::sim::SyntheticDenoiser;
use worldcache::trace::{write_trace, TapMask};

use crate::cli::CommonArgs;
use crate::config::{
    ablation_from_disables, build_engine, build_scenario, config_err, out_dir, parse_policy,
    parse_sweep, runtime_err, CliError, ConfigTree,
};
use crate::report::{self, say, ReportDoc, SweepRow};

pub fn cmd_run(args: &CommonArgs, dotted: &[(String, String)]) -> Result<(), CliError> {
    if args.ablate.iter().any(|s| s == "ladder") {
        return Err(CliError::Config(
            "--ablate needs stage names here (cfc, swd, ofa, ats); the bare form belongs to \
             compare"
                .into(),
        ));
    }
    let tree = ConfigTree::load(args.config.as_deref(), dotted)?;
    let cfg = tree.materialize()?;
    let policy = parse_policy(args)?;
    let ablation = ablation_from_disables(&args.ablate)?;
    let dir = out_dir(&cfg, args)?;

    if let Some(raw) = &args.sweep {
        let spec = parse_sweep(raw)?;
        let mut rows = spec
            .values
            .par_iter()
            .map(|&value| {
                let cfg = tree.with_value(&spec.key, value)?.materialize()?;
                let scenario = build_scenario(&cfg, args)?;
                let engine = build_engine(&cfg, scenario.total_steps, ablation)?;
                let denoiser = SyntheticDenoiser::new(scenario).map_err(config_err)?;
                let report = run_trajectory(policy, &denoiser, denoiser.input_source(), &engine)
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

    let scenario = build_scenario(&cfg, args)?;
    let engine = build_engine(&cfg, scenario.total_steps, ablation)?;
    let denoiser = SyntheticDenoiser::new(scenario).map_err(config_err)?;
    let run = run_trajectory(policy, &denoiser, denoiser.input_source(), &engine)
        .map_err(runtime_err)?;

    let report_path = dir.join("report.json");
    let steps_path = dir.join("steps.csv");
    let doc = ReportDoc::from_run(&run, scenario.kind.as_str(), scenario.seed);
    report::write_json(&report_path, &doc)?;
    report::write_text(&steps_path, &report::steps_csv(&run.steps))?;
    if let Some(trace_path) = &args.trace {
        let (header, steps) = record_trace(&denoiser, TapMask::ALL);
        write_trace(trace_path, &header, &steps).map_err(runtime_err)?;
        say!("wrote {}", trace_path.display());
    }

    say!(
        "policy={} scenario={} seed={} steps={}",
        doc.policy, doc.scenario, doc.seed, doc.total_steps
    );
    say!(
        "hits={} misses={} skip_rate={:.6} speedup={:.4}",
        doc.hits, doc.misses, doc.skip_rate, doc.simulated_speedup
    );
    if let Some(err) = doc.final_output_error {
        say!("final_output_error={err:.3e}");
    }
    say!("wrote {}", report_path.display());
    say!("wrote {}", steps_path.display());
    Ok(())
}
