//! Run-configuration files: `key = value` lines, `#` comments, full
//! defaulting. Unknown or duplicate keys are hard errors so typos in
//! experiment sweeps surface immediately.
//!
//! Recognized keys and defaults:
//!
//! ```text
//! seed = 0
//! n_samples = 300
//! height = 32
//! width = 32
//! n_classes = 3
//! n_channels = 8
//! n_initial = 16
//! n_val = 20
//! n_test = 60
//! strategy = UNC+ECD          # RAND UNC UNC-ID UNC+ID UNC-CD UNC+CD UNC-ECD UNC+ECD
//! n_unc = 16
//! n_rep = 8
//! n_i = 17
//! learning_rate = 0.0005
//! dropout_rate = 0.5
//! batch_size = 8
//! lambda_mode = auto          # auto | off | fixed
//! lambda_value = 0.0          # required iff lambda_mode = fixed
//! n_al_steps = 6
//! train_steps_per_stage = 500
//! retrain_mode = from_scratch # from_scratch | continue
//! ```

use crate::error::{CliError, CliResult};
use alseg_core::alloop::{LambdaMode, RetrainMode, RunConfig};
use alseg_core::selection::StrategyKind;
use std::collections::BTreeMap;
use std::path::Path;

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::config(format!(
                "line {}: expected 'key = value', got {:?}",
                lineno + 1,
                line
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if seen.insert(key.clone(), (lineno + 1, value)).is_some() {
            return Err(CliError::config(format!(
                "line {}: duplicate key {:?}",
                lineno + 1,
                key
            )));
        }
    }

    let mut config = RunConfig::default();
    let mut lambda_value: Option<f64> = None;
    let mut lambda_mode: Option<String> = None;

    for (key, (lineno, value)) in &seen {
        let fail = |what: &str| {
            CliError::config(format!("line {}: {}: {}", lineno, key, what))
        };
        let parse_usize = || value.parse::<usize>().map_err(|_| fail("invalid integer"));
        let parse_u64 = || value.parse::<u64>().map_err(|_| fail("invalid integer"));
        let parse_f64 = || value.parse::<f64>().map_err(|_| fail("invalid number"));
        match key.as_str() {
            "seed" => config.seed = parse_u64()?,
            "n_samples" => config.n_samples = parse_usize()?,
            "height" => config.height = parse_usize()?,
            "width" => config.width = parse_usize()?,
            "n_classes" => config.n_cl = parse_usize()?,
            "n_channels" => config.n_ch = parse_usize()?,
            "n_initial" => config.n_initial = parse_usize()?,
            "n_val" => config.n_val = parse_usize()?,
            "n_test" => config.n_test = parse_usize()?,
            "strategy" => {
                config.strategy.kind = StrategyKind::parse(value)
                    .map_err(|e| fail(&e.to_string()))?
            }
            "n_unc" => config.strategy.n_unc = parse_usize()?,
            "n_rep" => config.strategy.n_rep = parse_usize()?,
            "n_i" => config.n_i = parse_usize()?,
            "learning_rate" => config.learning_rate = parse_f64()?,
            "dropout_rate" => config.dropout_rate = parse_f64()?,
            "batch_size" => config.batch_size = parse_usize()?,
            "lambda_mode" => lambda_mode = Some(value.clone()),
            "lambda_value" => lambda_value = Some(parse_f64()?),
            "n_al_steps" => config.n_al_steps = parse_usize()?,
            "train_steps_per_stage" => config.train_steps_per_stage = parse_usize()?,
            "retrain_mode" => {
                config.retrain_mode = match value.as_str() {
                    "from_scratch" => RetrainMode::FromScratch,
                    "continue" => RetrainMode::Continue,
                    other => return Err(fail(&format!("unknown retrain mode {:?}", other))),
                }
            }
            other => {
                return Err(CliError::config(format!(
                    "line {}: unknown key {:?}",
                    lineno, other
                )))
            }
        }
    }

    config.lambda_mode = match lambda_mode.as_deref() {
        None => match lambda_value {
            None => RunConfig::default().lambda_mode,
            Some(_) => {
                return Err(CliError::config(
                    "lambda_value requires lambda_mode = fixed",
                ))
            }
        },
        Some("auto") => {
            if lambda_value.is_some() {
                return Err(CliError::config(
                    "lambda_value is only valid with lambda_mode = fixed",
                ));
            }
            LambdaMode::Auto
        }
        Some("off") => {
            if lambda_value.is_some() {
                return Err(CliError::config(
                    "lambda_value is only valid with lambda_mode = fixed",
                ));
            }
            LambdaMode::Off
        }
        Some("fixed") => match lambda_value {
            Some(v) => LambdaMode::Fixed(v),
            None => {
                return Err(CliError::config("lambda_mode = fixed requires lambda_value"))
            }
        },
        Some(other) => {
            return Err(CliError::config(format!("unknown lambda_mode {:?}", other)))
        }
    };

    Ok(config)
}

/// Load a config file, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("{}: {}", p.display(), e))
            })?;
            parse_config(&text)
        }
    }
}

/// Apply command-line overrides on top of a loaded config.
pub fn apply_overrides(
    config: &mut RunConfig,
    seed: Option<u64>,
    strategy: Option<&str>,
) -> CliResult<()> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(name) = strategy {
        config.strategy.kind = StrategyKind::parse(name).map_err(CliError::from)?;
    }
    Ok(())
}
