//! Experiment runner: TOML experiment files in, CSV tables out.

pub mod commands;
pub mod config;
pub mod output;

use commands::{Command, Report, RunError};
use config::{ConfigError, Experiment, ExperimentSpec};
use std::path::{Path, PathBuf};

/// Build identification written into every CSV.
pub const BUILD: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("GIT_DESCRIBE"), ")");

/// Command-line overrides applied on top of the experiment file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

pub fn prepare(mut spec: ExperimentSpec, overrides: &Overrides) -> Result<Experiment, ConfigError> {
    if let Some(seed) = overrides.seed {
        spec.mc.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        spec.mc.trials = trials;
    }
    spec.validate()
}

/// Metadata lines for the CSV header block. Thread count is deliberately
/// absent: output must not depend on it.
pub fn metadata(command: Command, exp: &Experiment) -> Vec<(String, String)> {
    let spec_text = toml::to_string(&exp.spec).unwrap_or_else(|e| format!("<unserializable: {e}>"));
    vec![
        ("adhoc-etc".into(), BUILD.into()),
        ("command".into(), command.name().into()),
        ("seed".into(), exp.mc.seed.to_string()),
        ("trials".into(), exp.mc.trials.to_string()),
        ("experiment".into(), spec_text.trim_end().into()),
    ]
}

/// Loads, validates, runs and writes. Output goes to `--out`, else
/// `outputs.dir`, else the current directory.
pub fn run_file(command: Command, spec_path: &Path, overrides: &Overrides) -> Result<Outcome, RunError> {
    let spec = ExperimentSpec::load(spec_path)?;
    run_spec(command, spec, overrides)
}

pub fn run_spec(command: Command, spec: ExperimentSpec, overrides: &Overrides) -> Result<Outcome, RunError> {
    let exp = prepare(spec, overrides)?;
    let Report { tables, failures } = commands::run(command, &exp)?;
    let dir = overrides
        .out
        .clone()
        .or_else(|| exp.spec.outputs.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let meta = metadata(command, &exp);
    let files = tables
        .iter()
        .map(|t| t.write(&dir, &exp.spec.outputs.prefix, &meta))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Outcome { files, failures })
}
