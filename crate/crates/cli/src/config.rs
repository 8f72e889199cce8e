use std::fs;
use std::path::Path;

use clap::{Arg, ArgMatches, Command};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

/// One configuration key: its flat name, where it lands in the nested
/// config document, and its help text.
pub struct Key {
    pub name: &'static str,
    pub path: &'static [&'static str],
    pub help: &'static str,
}

const fn key(name: &'static str, path: &'static [&'static str], help: &'static str) -> Key {
    Key { name, path, help }
}

macro_rules! with_weights {
    ($($k:expr),* $(,)?) => {
        &[
            $($k,)*
            key("lambda_surface", &["weights", "surface"], "Weight of the surface term"),
            key("lambda_normal", &["weights", "normal"], "Weight of the normal term"),
            key("lambda_smooth", &["weights", "smooth"], "Weight of the cross-patch smoothness term"),
            key("lambda_fair", &["weights", "fair"], "Weight of the boundary fairness term"),
            key("lambda_uniform", &["weights", "uniform"], "Weight of the uniform parameterization term"),
            key("lambda_aspect", &["weights", "aspect"], "Weight of the aspect-ratio term"),
            key("lambda_reg", &["weights", "reg"], "Weight of the latent code regularizer"),
            key("beta", &["weights", "beta"], "Weight of the point-to-plane part of the surface term"),
        ]
    };
}

pub const FIT_KEYS: &[Key] = with_weights![
    key("iterations", &["iterations"], "Optimizer iterations [2000]"),
    key("batch_points", &["batch_points"], "Parameter samples per iteration [10000]"),
    key("warmup_iters", &["warmup_iters"], "Iterations of anchor and uniform terms only [100]"),
    key("fair_decay_start", &["fair_decay_start"], "Iteration where the fairness weight starts decaying [300]"),
    key("fair_decay_iters", &["fair_decay_iters"], "Length of the fairness decay [300]"),
    key("fair_floor", &["fair_floor"], "Final fairness multiplier [0.01]"),
    key("lr_init", &["lr_init"], "Initial learning rate [1e-3]"),
    key("lr_final", &["lr_final"], "Final learning rate of the cosine schedule [1e-5]"),
    key("seed", &["seed"], "Random seed [NPS_SEED or 0]"),
    key("dim", &["dim"], "Feature dimension D [128]"),
    key("layers", &["layers"], "Linear layers of the mapping network [12]"),
    key("hidden", &["hidden"], "Hidden width of the mapping network [256]"),
    key("feature_std", &["feature_std"], "Standard deviation of the initial vertex features [1.0]"),
    key("deterministic", &["deterministic"], "Record a deterministic run [false]"),
    key("boundary_samples", &["boundary_samples"], "Smoothness samples per shared arc [128]"),
    key("boundary_eps", &["boundary_eps"], "Inset of boundary normal samples [1e-4]"),
    key("fair_samples", &["fair_samples"], "Fairness samples per arc [16]"),
];

pub const SPACE_KEYS: &[Key] = with_weights![
    key("epochs", &["epochs"], "Training epochs [100]"),
    key("batch_shapes", &["batch_shapes"], "Shapes per optimizer step [24]"),
    key("points_per_shape", &["points_per_shape"], "Parameter samples per shape and step [5000]"),
    key("steps_per_epoch", &["steps_per_epoch"], "Optimizer steps per epoch; 0 for one pass over the shapes [0]"),
    key("warmup_steps", &["warmup_steps"], "Steps of anchor and uniform terms only [100]"),
    key("lr", &["lr"], "Learning rate [1e-3]"),
    key("lr_late", &["lr_late"], "Learning rate of the trailing epochs [5e-4]"),
    key("lr_drop_epochs", &["lr_drop_epochs"], "Trailing epochs using lr_late [20]"),
    key("code_dim", &["code_dim"], "Latent code dimension [64]"),
    key("code_std", &["code_std"], "Standard deviation of the initial codes [0.1]"),
    key("decoder_hidden", &["decoder_hidden"], "Hidden width of the broadcast decoder [256]"),
    key("freeze_codes", &["freeze_codes"], "Keep the latent codes fixed [false]"),
    key("seed", &["seed"], "Random seed [NPS_SEED or 0]"),
    key("dim", &["dim"], "Feature dimension D [128]"),
    key("layers", &["layers"], "Linear layers of the mapping network [12]"),
    key("hidden", &["hidden"], "Hidden width of the mapping network [256]"),
    key("deterministic", &["deterministic"], "Record a deterministic run [false]"),
    key("boundary_samples", &["boundary_samples"], "Smoothness samples per shared arc [128]"),
    key("boundary_eps", &["boundary_eps"], "Inset of boundary normal samples [1e-4]"),
    key("fair_samples", &["fair_samples"], "Fairness samples per arc [16]"),
];

pub const CLOUD_KEYS: &[Key] = &[
    key("iterations", &["latent", "iterations"], "Code optimization iterations [300]"),
    key("lr", &["latent", "lr"], "Learning rate [0.005]"),
    key("reg", &["latent", "reg"], "Weight of the code norm penalty [1e-3]"),
    key("points", &["latent", "points"], "Surface samples per iteration [2000]"),
    key("seed", &["latent", "seed"], "Random seed [NPS_SEED or 0]"),
    key("chamfer_points", &["chamfer_points"], "Cloud points used to pick the starting code [2048]"),
    key("min_cosine", &["min_cosine"], "Keep pairs whose normal cosine exceeds this [0.7]"),
];

pub const EDIT_KEYS: &[Key] = &[
    key("iterations", &["iterations"], "Code optimization iterations [200]"),
    key("lr", &["lr"], "Learning rate [0.005]"),
    key("reg", &["reg"], "Weight of the code norm penalty [1e-3]"),
    key("points", &["points"], "Surface samples per face group [2000]"),
    key("seed", &["seed"], "Random seed [NPS_SEED or 0]"),
];

/// Adds `--config` and one `--<key> VALUE` flag per key.
pub fn with_keys(mut cmd: Command, keys: &'static [Key]) -> Command {
    cmd = cmd.args_override_self(true).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Config file of `key = value` lines; flags override it"),
    );
    for k in keys {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .help(k.help)
                .help_heading("Config keys"),
        );
    }
    cmd
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("config line {}: expected `key = value`", lineno + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(CliError::config(format!("config line {}: empty key or value", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn insert(doc: &mut Map<String, Value>, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut node = doc;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("nested config object");
    }
    node.insert(last.to_string(), value);
}

/// Merges the config file and the flags (flags win) into `T`. Unknown file
/// keys and ill-typed values are configuration errors. When no seed is
/// given, `NPS_SEED` is used if set.
pub fn resolve<T: DeserializeOwned>(
    m: &ArgMatches,
    keys: &'static [Key],
    forced: &[(&str, Value)],
) -> Result<T, CliError> {
    let mut doc = Map::new();
    let lookup = |name: &str| keys.iter().find(|k| k.name == name);
    let mut seen_seed = false;
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {path}: {e}")))?;
        for (k, v) in parse_config_text(&text)? {
            let key = lookup(&k).ok_or_else(|| CliError::config(format!("unknown config key `{k}`")))?;
            seen_seed |= key.name == "seed";
            insert(&mut doc, key.path, parse_value(&v));
        }
    }
    for k in keys {
        if let Some(v) = m.get_one::<String>(k.name) {
            seen_seed |= k.name == "seed";
            insert(&mut doc, k.path, parse_value(v));
        }
    }
    if !seen_seed {
        if let Some(seed) = env_seed()? {
            if let Some(k) = lookup("seed") {
                insert(&mut doc, k.path, Value::from(seed));
            }
        }
    }
    for (name, v) in forced {
        if let Some(k) = lookup(name) {
            insert(&mut doc, k.path, v.clone());
        }
    }
    serde_json::from_value(Value::Object(doc)).map_err(|e| CliError::config(e.to_string()))
}

/// Seed from `NPS_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("NPS_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("NPS_SEED is not an unsigned integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

/// Reads `layout samples` path pairs; relative paths resolve against the
/// manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<(std::path::PathBuf, std::path::PathBuf)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(CliError::config(format!(
                "manifest line {}: expected `layout samples`",
                lineno + 1
            )));
        }
        out.push((base.join(parts[0]), base.join(parts[1])));
    }
    Ok(out)
}
