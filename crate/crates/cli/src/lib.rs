//! Experiment driver for `syk-core`: flat key=value configs, realization
//! farming with retry, deterministic CSV artifacts and run manifests.

pub mod config;
pub mod error;
pub mod presets;
pub mod run;

use std::path::{Path, PathBuf};

use config::{parse_flags, read_file, Assignment, Experiment, RunConfig};
use error::CliError;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "SYK_LAB_WORKERS";

/// Resolve the positional argument and flags of `run`/`validate` into the
/// configs to execute. The positional may be a config file, an experiment
/// name, or absent when the flags carry everything.
pub fn plan(positional: Option<&str>, flags: &[String], env_workers: Option<&str>) -> Result<Vec<RunConfig>, CliError> {
    let mut layers: Vec<Assignment> = Vec::new();
    let mut flag_layer = parse_flags(flags)?;
    if let Some(p) = positional {
        if p.contains('=') {
            flag_layer.splice(0..0, parse_flags(&[p.to_string()])?);
        } else if Path::new(p).is_file() {
            layers.extend(read_file(Path::new(p))?);
        } else if Experiment::parse(p).is_some() {
            layers.push(Assignment { key: "experiment".into(), value: p.into(), origin: "argument".into() });
        } else {
            return Err(CliError::Config {
                key: p.into(),
                message: "neither a readable config file nor an experiment name".into(),
            });
        }
    }
    // a config=path flag pulls in a file beneath the other flags
    for a in flag_layer.iter().filter(|a| a.key == "config") {
        layers.extend(read_file(Path::new(&a.value))?);
    }
    layers.extend(flag_layer);
    if let Some(w) = env_workers {
        layers.push(Assignment { key: "workers".into(), value: w.into(), origin: WORKERS_ENV.into() });
    }

    let figure = layers.iter().rev().find(|a| a.key == "figure").map(|a| a.value.clone());
    let Some(figure) = figure else {
        let mut c = RunConfig::default();
        c.apply(&layers)?;
        return Ok(vec![c]);
    };
    let user_out = layers.iter().rev().find(|a| a.key == "out").map(|a| PathBuf::from(&a.value));
    let base = user_out.unwrap_or_else(|| PathBuf::from("out").join(&figure));
    presets::figure_configs(&figure, &base)?
        .into_iter()
        .map(|(sub, mut c)| {
            c.apply(&layers)?;
            c.out = base.join(sub);
            Ok(c)
        })
        .collect()
}

/// Validate every config before running any of them.
pub fn validate_all(configs: &[RunConfig]) -> Result<(), CliError> {
    configs.iter().try_for_each(RunConfig::validate)
}

/// Run configs in order; stops at the first hard error, but a partial
/// failure lets later configs run and is reported at the end.
pub fn run_all(configs: &[RunConfig]) -> Result<Vec<run::RunReport>, CliError> {
    validate_all(configs)?;
    let mut reports = Vec::new();
    let mut partial = Vec::new();
    for c in configs {
        match run::run(c) {
            Ok(r) => reports.push(r),
            Err(CliError::Partial(m)) => partial.push(format!("{}: {m}", c.out.display())),
            Err(e) => return Err(e),
        }
    }
    if partial.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Partial(partial.join("; ")))
    }
}
