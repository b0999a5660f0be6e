//! Flat `key = value` experiment configuration.
//!
//! Each subcommand has a fixed schema of keys with per-preset defaults. A
//! config file may override any schema key; anything else is rejected.
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

/// One schema entry: key, desk default, paper default, description.
pub type KeySpec = (&'static str, &'static str, &'static str, &'static str);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<&'static str, String>,
}

/// Parses `key = value` lines into pairs, keeping line numbers for errors.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!("line {}: expected key = value", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Validation(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Preset defaults for `schema`, overridden by `text` when given.
    pub fn resolve(
        command: &'static str,
        schema: &[KeySpec],
        preset: Preset,
        text: Option<&str>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<&'static str, String> = schema
            .iter()
            .map(|(k, desk, paper, _)| (*k, if preset == Preset::Desk { desk } else { paper }.to_string()))
            .collect();
        if let Some(text) = text {
            let mut seen = BTreeMap::new();
            for (line, k, v) in parse_pairs(text)? {
                let Some((key, ..)) = schema.iter().find(|s| s.0 == k) else {
                    return Err(CliError::Validation(format!("line {line}: unknown key `{k}` for {command}")));
                };
                if let Some(first) = seen.insert(*key, line) {
                    return Err(CliError::Validation(format!("line {line}: `{k}` already set on line {first}")));
                }
                values.insert(key, v);
            }
        }
        Ok(Self { command, values })
    }

    pub fn load(
        command: &'static str,
        schema: &[KeySpec],
        preset: Preset,
        path: Option<&Path>,
    ) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::resolve(command, schema, preset, text.as_deref())
    }

    pub fn set(&mut self, key: &'static str, value: impl ToString) {
        self.values.insert(key, value.to_string());
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the {} schema", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Validation(format!("{key} = `{raw}`: {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Values separated by `sep`, e.g. `40-8-8-1` or `sgd,gd`.
    pub fn get_list<T: FromStr>(&self, key: &str, sep: char) -> Result<Vec<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(sep)
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|e| CliError::Validation(format!("{key} = `{raw}`: {e}")))
            })
            .collect()
    }

    /// Resolved settings as `key = value` lines, in key order.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[KeySpec] = &[
        ("runs", "20", "50", "number of runs"),
        ("widths", "40-8-8-1", "100-10-10-10-10-1", "layer widths"),
        ("path", "", "", "optional path"),
    ];

    #[test]
    fn presets_and_overrides() {
        let s = Settings::resolve("t", SCHEMA, Preset::Paper, None).unwrap();
        assert_eq!(s.get::<usize>("runs").unwrap(), 50);
        let s = Settings::resolve("t", SCHEMA, Preset::Desk, Some("# c\n runs = 7 # seven\n\n")).unwrap();
        assert_eq!(s.get::<usize>("runs").unwrap(), 7);
        assert_eq!(s.get_list::<usize>("widths", '-').unwrap(), vec![40, 8, 8, 1]);
        assert_eq!(s.get_opt::<String>("path").unwrap(), None);
        assert_eq!(s.render(), "path = \nruns = 7\nwidths = 40-8-8-1\n");
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["bogus = 1", "runs 3", "= 3", "runs = 1\nruns = 2"] {
            assert!(
                matches!(Settings::resolve("t", SCHEMA, Preset::Desk, Some(text)), Err(CliError::Validation(_))),
                "{text}"
            );
        }
        let s = Settings::resolve("t", SCHEMA, Preset::Desk, Some("runs = many")).unwrap();
        assert!(matches!(s.get::<usize>("runs"), Err(CliError::Validation(_))));
    }
}
