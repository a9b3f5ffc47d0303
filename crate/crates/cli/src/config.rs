//! `key=value` defaults for subcommand flags.
//!
//! Keys are long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored. Values given on the command line win.

use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<ConfigEntry>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got `{line}`", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        out.push(ConfigEntry {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<ConfigEntry>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse(&text)
}

/// Where the global `--config` value and the subcommand name sit in `argv`.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Scan {
    pub config: Option<String>,
    pub subcommand: Option<usize>,
}

/// Finds `--config` anywhere and the first token that is neither a global
/// option nor its value.
pub fn scan(argv: &[String]) -> Scan {
    let mut s = Scan::default();
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].as_str();
        if let Some(v) = a.strip_prefix("--config=") {
            s.config = Some(v.to_string());
        } else if a == "--config" {
            s.config = argv.get(i + 1).cloned();
            i += 1;
        } else if a == "--server" {
            i += 1;
        } else if s.subcommand.is_none() && !a.starts_with('-') {
            s.subcommand = Some(i);
        }
        i += 1;
    }
    s
}

/// Flag tokens for the entries; `switches` are flags that take no value,
/// set by `true` and left out by `false`.
pub fn to_args(
    entries: &[ConfigEntry],
    known: &[String],
    switches: &[String],
) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for e in entries {
        if !known.contains(&e.key) {
            return Err(format!("config line {}: unknown key `{}`", e.line, e.key));
        }
        if switches.contains(&e.key) {
            match e.value.as_str() {
                "true" => out.push(format!("--{}", e.key)),
                "false" => {}
                v => return Err(format!("config line {}: `{}` takes true or false, got `{v}`", e.line, e.key)),
            }
        } else {
            out.push(format!("--{}={}", e.key, e.value));
        }
    }
    Ok(out)
}
