//! `key = value` config files, applied underneath command-line flags.
//!
//! ```text
//! # comment
//! seed = 7              # any subcommand that has --seed
//! train.epochs = 30     # only `sser train`
//! train.verbose = true  # boolean flags: true / false
//! ```
//!
//! Keys are long flag names without the leading dashes. Entries are turned
//! into flags placed before the user's own, and every subcommand lets a
//! later occurrence override an earlier one, so explicit flags win.

use std::collections::BTreeMap;

use clap::Command;

use crate::Failure;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    /// `(section, key) -> value`; the section is empty for bare keys.
    pub entries: BTreeMap<(String, String), String>,
}

pub fn parse_config(text: &str) -> Result<ConfigFile, Failure> {
    let mut cfg = ConfigFile::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        let value = value.trim().trim_matches('"').to_string();
        let (section, name) = key.split_once('.').unwrap_or(("", key));
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Failure::Config(format!("config line {}: bad key {key:?}", n + 1)));
        }
        cfg.entries.insert((section.to_string(), name.to_string()), value);
    }
    Ok(cfg)
}

/// Pulls `--config <path>` out of `argv`, returning the path if present.
pub fn take_config_flag(argv: &mut Vec<String>) -> Result<Option<String>, Failure> {
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--config" {
            if i + 1 >= argv.len() {
                return Err(Failure::Usage("--config needs a path".into()));
            }
            let path = argv.remove(i + 1);
            argv.remove(i);
            return Ok(Some(path));
        }
        if let Some(p) = argv[i].strip_prefix("--config=") {
            let path = p.to_string();
            argv.remove(i);
            return Ok(Some(path));
        }
        i += 1;
    }
    Ok(None)
}

/// Inserts config-derived flags right after the subcommand name.
pub fn inject(argv: &mut Vec<String>, cfg: &ConfigFile, root: &Command) -> Result<(), Failure> {
    let Some(pos) = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(());
    };
    let Some(sub) = root.find_subcommand(&argv[pos]) else {
        return Ok(());
    };
    let sub_name = sub.get_name().to_string();
    for (section, key) in cfg.entries.keys() {
        let known = root
            .get_subcommands()
            .any(|s| (section.is_empty() || s.get_name() == section) && s.get_arguments().any(|a| a.get_long() == Some(key)));
        if !known {
            return Err(Failure::Config(format!("config key {key:?} matches no flag")));
        }
    }
    let mut extra = Vec::new();
    for ((section, key), value) in &cfg.entries {
        if !section.is_empty() && *section != sub_name {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key)) else {
            continue;
        };
        if section.is_empty() && cfg.entries.contains_key(&(sub_name.clone(), key.clone())) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}"));
            extra.push(value.clone());
        } else {
            match value.as_str() {
                "true" => extra.push(format!("--{key}")),
                "false" => {}
                _ => return Err(Failure::Config(format!("flag {key} takes true or false, got {value:?}"))),
            }
        }
    }
    argv.splice(pos + 1..pos + 1, extra);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let c = parse_config("# top\nseed = 7\ntrain.epochs=30 # inline\n\n").unwrap();
        assert_eq!(c.entries[&("".into(), "seed".into())], "7");
        assert_eq!(c.entries[&("train".into(), "epochs".into())], "30");
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn takes_config_flag() {
        let mut a: Vec<String> = ["sser", "gen", "--config", "x.cfg", "--w", "4"].iter().map(|s| s.to_string()).collect();
        assert_eq!(take_config_flag(&mut a).unwrap().as_deref(), Some("x.cfg"));
        assert_eq!(a, ["sser", "gen", "--w", "4"]);
    }
}
