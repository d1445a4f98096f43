//! `--config` files: a flat JSON object whose keys are the long flag names of
//! the subcommand (`"snr-min"` or `"snr_min"`). Values are spliced into the
//! argument list ahead of the user's flags; a flag given on the command line
//! replaces the config value.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;
use serde_json::Value;

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            return iter.next().cloned();
        }
        if let Some(path) = text.strip_prefix("--config=") {
            return Some(path.into());
        }
    }
    None
}

fn given_on_command_line(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&with_value)
    })
}

fn render(key: &str, value: &Value) -> Result<String, String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::Number(n) => Ok(n.to_string()),
                Value::String(s) => Ok(s.clone()),
                _ => Err(format!("config key {key:?}: list items must be numbers or strings")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.join(",")),
        _ => Err(format!("config key {key:?}: unsupported value {value}")),
    }
}

/// Returns `args` with the config-file flags of the selected subcommand
/// inserted right after the subcommand name.
pub fn expand(args: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>, String> {
    let Some(sub_name) = args.get(1).map(|a| a.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let Some(sub) = cli.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let rest = &args[2..];
    let Some(path) = config_path(rest) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.to_string_lossy()))?;
    let Value::Object(map) = value else {
        return Err("config must be a JSON object".into());
    };

    let mut injected = Vec::new();
    for (key, value) in &map {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| format!("unknown config key {key:?} for `{sub_name}`"))?;
        if given_on_command_line(rest, &long) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{long}={}", render(key, value)?)));
        } else {
            match value {
                Value::Bool(true) => injected.push(OsString::from(format!("--{long}"))),
                Value::Bool(false) => {}
                _ => return Err(format!("config key {key:?} is a switch; use true or false")),
            }
        }
    }
    let mut out = Vec::with_capacity(args.len() + injected.len());
    out.extend_from_slice(&args[..2]);
    out.extend(injected);
    out.extend_from_slice(rest);
    Ok(out)
}
