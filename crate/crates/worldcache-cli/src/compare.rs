//! The `compare` subcommand.
//!
//! Default mode runs the four policies live over the same scenario. With
//! a bare `--ablate`, it instead records one full-tap trace and replays
//! the worldcache policy over it five times, enabling one stage per row,
//! so every row sees byte-identical inputs.

use rayon::prelude::*;
use serde::Serialize;
use worldcache::engine::{run_trajectory, AblationFlags, PolicyKind};
use worldcache::replay::{record_trace, replay_decisions};
use worldcache::sim::SyntheticDenoiser;
use worldcache::trace::{write_trace, TapMask};

use crate::cli::CommonArgs;
use crate::config::{
    ablation_from_disables, build_engine, build_scenario, config_err, out_dir, runtime_err,
    CliError, ConfigTree,
};
use crate::report::{self, say, CompareRow};

#[derive(Debug, Serialize)]
struct CompareDoc {
    mode: String,
    scenario: String,
    seed: u64,
    total_steps: usize,
    rows: Vec<CompareRow>,
}

const LADDER: [(&str, AblationFlags); 5] = [
    ("base", AblationFlags { cfc: false, swd: false, ofa: false, ats: false }),
    ("+cfc", AblationFlags { cfc: true, swd: false, ofa: false, ats: false }),
    ("+swd", AblationFlags { cfc: true, swd: true, ofa: false, ats: false }),
    ("+ofa", AblationFlags { cfc: true, swd: true, ofa: true, ats: false }),
    ("+ats", AblationFlags { cfc: true, swd: true, ofa: true, ats: true }),
];

pub fn cmd_compare(args: &CommonArgs, dotted: &[(String, String)]) -> Result<(), CliError> {
    if args.policy.is_some() {
        return Err(CliError::Config("compare runs a fixed policy ladder; drop --policy".into()));
    }
    if args.sweep.is_some() {
        return Err(CliError::Config("--sweep applies to run and trace replay".into()));
    }
    let tree = ConfigTree::load(args.config.as_deref(), dotted)?;
    let cfg = tree.materialize()?;
    let scenario = build_scenario(&cfg, args)?;
    let dir = out_dir(&cfg, args)?;
    let denoiser = SyntheticDenoiser::new(scenario).map_err(config_err)?;

    let ladder_mode = args.ablate.iter().any(|s| s == "ladder");
    let (mode, rows) = if ladder_mode {
        let stages: Vec<String> = args.ablate.iter().filter(|s| *s != "ladder").cloned().collect();
        if !stages.is_empty() {
            return Err(CliError::Config(
                "bare --ablate selects the full ladder; it takes no stage names".into(),
            ));
        }
        let (header, steps) = record_trace(&denoiser, TapMask::ALL);
        if let Some(path) = &args.trace {
            write_trace(path, &header, &steps).map_err(runtime_err)?;
            say!("wrote {}", path.display());
        }
        let rows = LADDER
            .par_iter()
            .map(|(label, flags)| {
                let engine = build_engine(&cfg, scenario.total_steps, *flags)?;
                let report =
                    replay_decisions(&header, &steps, PolicyKind::Worldcache, &engine)
                        .map_err(runtime_err)?;
                Ok(CompareRow::from_run(label, &report))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        ("ablation-ladder".to_string(), rows)
    } else {
        let ablation = ablation_from_disables(&args.ablate)?;
        let engine = build_engine(&cfg, scenario.total_steps, ablation)?;
        if let Some(path) = &args.trace {
            let (header, steps) = record_trace(&denoiser, TapMask::ALL);
            write_trace(path, &header, &steps).map_err(runtime_err)?;
            say!("wrote {}", path.display());
        }
        let kinds = [
            PolicyKind::FullCompute,
            PolicyKind::FixedSchedule,
            PolicyKind::FixedThreshold,
            PolicyKind::Worldcache,
        ];
        let rows = kinds
            .par_iter()
            .map(|&kind| {
                let report = run_trajectory(kind, &denoiser, denoiser.input_source(), &engine)
                    .map_err(runtime_err)?;
                Ok(CompareRow::from_run(kind.as_str(), &report))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        ("live".to_string(), rows)
    };

    let doc = CompareDoc {
        mode,
        scenario: scenario.kind.as_str().to_string(),
        seed: scenario.seed,
        total_steps: scenario.total_steps,
        rows,
    };
    let report_path = dir.join("report.json");
    let csv_path = dir.join("compare.csv");
    report::write_json(&report_path, &doc)?;
    report::write_text(&csv_path, &report::compare_csv(&doc.rows))?;

    say!(
        "{:<16} {:>5} {:>7} {:>10} {:>9} {:>13}",
        "policy", "hits", "misses", "skip_rate", "speedup", "hit_error"
    );
    for r in &doc.rows {
        say!(
            "{:<16} {:>5} {:>7} {:>10.6} {:>9.4} {:>13}",
            r.label,
            r.hits,
            r.misses,
            r.skip_rate,
            r.simulated_speedup,
            r.mean_hit_error.map_or_else(String::new, |e| format!("{e:.3e}")),
        );
    }
    say!("wrote {}", report_path.display());
    say!("wrote {}", csv_path.display());
    Ok(())
}
