//! Config-file defaults.
//!
//! A TOML file named by `--config` holds flag values keyed by long flag name
//! (`jobs = 4`, `no-guard = true`). Top-level keys apply to every command; a
//! table named after a subcommand (`[eval-autoform]`) applies to that command
//! only. Values are turned into extra command-line flags before parsing, so a
//! flag given explicitly, or set through its environment variable, wins.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::CommandFactory;
use toml::{Table, Value};

use crate::Cli;

pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let strings: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&strings) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    let extra = config_flags(&strings, &table).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = argv;
    out.extend(extra.into_iter().map(OsString::from));
    Ok(out)
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Flags to append to `args` for the values in `table`.
pub fn config_flags(args: &[String], table: &Table) -> Result<Vec<String>, String> {
    let cmd = Cli::command();
    let sub = args
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a.as_str()));
    let Some(sub) = sub else { return Ok(Vec::new()) };

    let mut entries: Vec<(&String, &Value)> = Vec::new();
    for (k, v) in table {
        match v {
            Value::Table(t) => {
                if cmd.find_subcommand(k).is_none() {
                    return Err(format!("unknown command table [{k}]"));
                }
                if k == sub.get_name() {
                    entries.extend(t.iter());
                }
            }
            _ => entries.push((k, v)),
        }
    }

    let mut out = Vec::new();
    for (key, value) in entries {
        let long = key.replace('_', "-");
        if long == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(long.as_str()));
        let Some(arg) = arg else {
            let other_command_key = cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(long.as_str())));
            if other_command_key {
                // a key meant for another command
                continue;
            }
            return Err(format!("unknown key `{key}`"));
        };
        let flag = format!("--{long}");
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        let from_env = arg.get_env().is_some_and(|e| std::env::var_os(e).is_some());
        if given || from_env {
            continue;
        }
        match value {
            Value::Boolean(true) => out.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                let parts: Result<Vec<String>, String> = items.iter().map(|v| scalar(key, v)).collect();
                out.push(flag);
                out.push(parts?.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar(key, other)?);
            }
        }
    }
    Ok(out)
}

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(format!("key `{key}`: unsupported value {v}")),
    }
}
