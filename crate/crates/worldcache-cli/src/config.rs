//! Configuration assembly: TOML file, dotted overrides, then flags.
//!
//! The file mirrors the library config types directly, so its defaults
//! and validation are theirs. Scenario keys are optional overrides merged
//! over the per-kind preset, because sensible amplitudes differ by
//! scenario. Overrides are injected into the TOML tree before
//! deserialization, which means typos in dotted flags are rejected by the
//! same unknown-key check as typos in the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use worldcache::engine::{AblationFlags, EngineConfig, PolicyKind};
use worldcache::ofa::LkParams;
use worldcache::policy::PolicyConfig;
use worldcache::sim::{ScenarioConfig, ScenarioKind};
use worldcache::tensor::TensorShape;

use crate::cli::CommonArgs;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, keys, or parameter ranges; exit code 2.
    Config(String),
    /// I/O or execution failures; exit code 3.
    Runtime(String),
}

pub fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub policy: PolicyConfig,
    pub lk: LkParams,
    pub engine: EngineTunables,
    pub scenario: ScenarioOverrides,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineTunables {
    /// Reconstruction overhead charged per hit, as a fraction of the deep
    /// cost.
    pub overhead_frac: f64,
    /// Recompute cadence of the fixed-schedule baseline.
    pub schedule_period: usize,
}

impl Default for EngineTunables {
    fn default() -> Self {
        EngineTunables { overhead_frac: 0.03, schedule_period: 2 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub kind: Option<String>,
    pub shape: Option<TensorShape>,
    pub seed: Option<u64>,
    pub total_steps: Option<usize>,
    pub eta: Option<f64>,
    pub input_scale: Option<f64>,
    pub residual_scale: Option<f64>,
    pub drift_scale: Option<f64>,
    pub motion_speed: Option<f64>,
    pub curvature: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub probe_fraction: Option<f64>,
    pub mix_spread: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Parse an override value as a TOML scalar, falling back to a string so
/// `--scenario.kind curved` works unquoted.
fn parse_scalar(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

/// Set `table.path.to.key = value`, creating intermediate tables.
fn insert_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("key '{key}' descends into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("key '{key}' descends into a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Load the config file (if any) and apply dotted overrides, keeping the
/// merged TOML tree so sweeps can re-derive configs per value.
pub struct ConfigTree {
    tree: toml::Value,
}

impl ConfigTree {
    pub fn load(path: Option<&Path>, dotted: &[(String, String)]) -> Result<Self, CliError> {
        let mut tree = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Value>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for (key, raw) in dotted {
            insert_dotted(&mut tree, key, parse_scalar(raw))?;
        }
        Ok(ConfigTree { tree })
    }

    pub fn materialize(&self) -> Result<CliConfig, CliError> {
        self.tree.clone().try_into().map_err(config_err)
    }

    /// A copy of this tree with one extra dotted key set; used by sweeps.
    pub fn with_value(&self, key: &str, value: f64) -> Result<ConfigTree, CliError> {
        let mut tree = self.tree.clone();
        insert_dotted(&mut tree, key, toml::Value::Float(value))?;
        Ok(ConfigTree { tree })
    }
}

/// Scenario assembly: preset for the kind, then config keys, then flags.
pub fn build_scenario(cfg: &CliConfig, args: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let kind_name = args
        .scenario
        .clone()
        .or_else(|| cfg.scenario.kind.clone())
        .unwrap_or_else(|| "static".to_string());
    let kind: ScenarioKind = kind_name.parse().map_err(CliError::Config)?;
    let o = &cfg.scenario;
    let mut sc = ScenarioConfig::preset(kind);
    if let Some(v) = o.shape {
        sc.shape = v;
    }
    if let Some(v) = o.seed {
        sc.seed = v;
    }
    if let Some(v) = o.total_steps {
        sc.total_steps = v;
    }
    if let Some(v) = o.eta {
        sc.eta = v;
    }
    if let Some(v) = o.input_scale {
        sc.input_scale = v;
    }
    if let Some(v) = o.residual_scale {
        sc.residual_scale = v;
    }
    if let Some(v) = o.drift_scale {
        sc.drift_scale = v;
    }
    if let Some(v) = o.motion_speed {
        sc.motion_speed = v;
    }
    if let Some(v) = o.curvature {
        sc.curvature = v;
    }
    if let Some(v) = o.noise_sigma {
        sc.noise_sigma = v;
    }
    if let Some(v) = o.probe_fraction {
        sc.probe_fraction = v;
    }
    if let Some(v) = o.mix_spread {
        sc.mix_spread = v;
    }
    if let Some(v) = args.seed {
        sc.seed = v;
    }
    sc.validate().map_err(config_err)?;
    Ok(sc)
}

/// Stages listed after `--ablate` turn their flag off.
pub fn ablation_from_disables(disables: &[String]) -> Result<AblationFlags, CliError> {
    let mut flags = AblationFlags::default();
    for name in disables {
        match name.as_str() {
            "cfc" => flags.cfc = false,
            "swd" => flags.swd = false,
            "ofa" => flags.ofa = false,
            "ats" => flags.ats = false,
            other => {
                return Err(CliError::Config(format!(
                    "unknown ablation stage '{other}' (expected cfc, swd, ofa, or ats)"
                )))
            }
        }
    }
    Ok(flags)
}

/// Engine assembly. The schedule horizon always follows the scenario, and
/// oracle bookkeeping is on so reports can carry error figures.
pub fn build_engine(
    cfg: &CliConfig,
    scenario_steps: usize,
    ablation: AblationFlags,
) -> Result<EngineConfig, CliError> {
    let engine = EngineConfig {
        policy: PolicyConfig { total_steps: scenario_steps, ..cfg.policy },
        lk: cfg.lk,
        overhead_frac: cfg.engine.overhead_frac,
        schedule_period: cfg.engine.schedule_period,
        ablation,
        oracle: true,
        input_anchored_velocity: false,
    };
    engine.validate().map_err(config_err)?;
    Ok(engine)
}

pub fn parse_policy(args: &CommonArgs) -> Result<PolicyKind, CliError> {
    match &args.policy {
        Some(name) => name.parse().map_err(CliError::Config),
        None => Ok(PolicyKind::Worldcache),
    }
}

pub fn out_dir(cfg: &CliConfig, args: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("worldcache-out"));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// A parsed `--sweep key=start:end:count` request.
pub struct SweepSpec {
    pub key: String,
    pub values: Vec<f64>,
}

pub fn parse_sweep(raw: &str) -> Result<SweepSpec, CliError> {
    let bad = || {
        CliError::Config(format!(
            "sweep '{raw}' must look like key=start:end:count (e.g. policy.tau0=0.01:0.2:20)"
        ))
    };
    let (key, range) = raw.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let end: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    // Bare policy field names are shorthand for the policy table.
    let key = if key.contains('.') { key.to_string() } else { format!("policy.{key}") };
    let values = if count == 1 {
        vec![start]
    } else {
        (0..count)
            .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
            .collect()
    };
    Ok(SweepSpec { key, values })
}
