//! `key=value` config files merged into the argument list.
//!
//! Keys are long flag names without the dashes. A key is appended only when
//! the flag is absent from the command line, so explicit flags win.

use std::path::Path;

use crate::error::CliError;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Path given by `--config` anywhere after the program name.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn has_flag(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("{flag}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Merges config entries into `args`; `true`/`false` values toggle bare flags.
pub fn merge(args: &[String], entries: &[(String, String)]) -> Vec<String> {
    let mut out = args.to_vec();
    for (key, value) in entries {
        if key == "config" || has_flag(args, key) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.clone());
            }
        }
    }
    out
}

/// The argument list with any config file applied and the `--config` flag removed.
pub fn resolve(args: &[String]) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(args) else {
        return Ok(args.to_vec());
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| CliError::Io(format!("config file {path}: {e}")))?;
    let mut stripped = Vec::with_capacity(args.len());
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            it.next();
        } else if !a.starts_with("--config=") {
            stripped.push(a.clone());
        }
    }
    Ok(merge(&stripped, &parse(&text)?))
}
