//! Flat `key=value` config files. Values are spliced into the argument list
//! ahead of the user's own flags, so flags given on the command line win.

use std::path::Path;

use clap::Command;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped; keys
/// may use `-` or `_`.
pub fn parse(text: &str, origin: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError(format!(
                "{origin}:{}: expected key=value, found '{line}'",
                i + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError(format!("{origin}:{}: empty key", i + 1)));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(ConfigError(format!(
                "{origin}:{}: '{key}' already set on line {}",
                i + 1,
                prev.line
            )));
        }
        out.push(Entry {
            line: i + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Turn entries into flags for `sub`, rejecting keys the subcommand does
/// not define.
pub fn to_args(entries: &[Entry], sub: &Command, origin: &str) -> Result<Vec<String>, ConfigError> {
    let mut args = Vec::new();
    for e in entries {
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()) && e.key != "config")
        else {
            return Err(ConfigError(format!(
                "{origin}:{}: unknown key '{}' for '{}'",
                e.line,
                e.key,
                sub.get_name()
            )));
        };
        let takes_value = arg.get_action().takes_values();
        if takes_value {
            args.push(format!("--{}={}", e.key, e.value));
        } else {
            match e.value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{}", e.key)),
                "false" | "0" | "no" => {}
                other => {
                    return Err(ConfigError(format!(
                        "{origin}:{}: '{}' is a switch; expected true or false, found '{other}'",
                        e.line, e.key
                    )))
                }
            }
        }
    }
    Ok(args)
}

/// Remove `--config PATH` / `--config=PATH` from `argv` and splice the
/// file's flags in right after the subcommand name.
pub fn expand(argv: Vec<String>, root: &Command) -> Result<Vec<String>, ConfigError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(
                it.next()
                    .ok_or_else(|| ConfigError("--config needs a file path".into()))?,
            );
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let Some(pos) = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Err(ConfigError("--config given without a subcommand".into()));
    };
    let Some(sub) = root.find_subcommand(&rest[pos]) else {
        // let clap report the bad subcommand
        return Ok(rest);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| ConfigError(format!("cannot read config '{path}': {e}")))?;
    let extra = to_args(&parse(&text, &path)?, sub, &path)?;
    rest.splice(pos + 1..pos + 1, extra);
    Ok(rest)
}
