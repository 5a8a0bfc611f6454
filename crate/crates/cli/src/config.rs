//! Flat `key = value` configuration with command-line overrides.
//!
//! Every subcommand declares its full key list with defaults. Unknown keys
//! are rejected, and the resolved set is written back into the output
//! directory so a run can be repeated from its own archive.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

/// A documented key: name, default (empty means unset) and description.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, doc: &'static str) -> Key {
    Key { name, default, doc }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_lines(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Defaults, then the file, then `overrides` in order.
    pub fn resolve(keys: &[Key], file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut values: BTreeMap<String, String> = keys.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            pairs.extend(parse_lines(&text, &path.display().to_string())?);
        }
        pairs.extend(overrides.iter().cloned());
        for (k, v) in pairs {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => {
                    let known: Vec<&str> = keys.iter().map(|k| k.name).collect();
                    return Err(CliError::Config(format!("unknown key {k:?}; known keys: {}", known.join(", "))));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}")))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("{key}: {s:?}: {e}"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.is_set(key).then(|| PathBuf::from(self.raw(key)))
    }

    /// `key = value` lines, sorted by key.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text()).map_err(CliError::io(&path))
    }
}

/// Markdown table of a key list, used by `--help-keys`.
pub fn describe(keys: &[Key]) -> String {
    let mut out = String::from("| key | default | meaning |\n|---|---|---|\n");
    for k in keys {
        let d = if k.default.is_empty() { "(unset)" } else { k.default };
        out.push_str(&format!("| `{}` | `{}` | {} |\n", k.name, d, k.doc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[Key] = &[key("a", "1", "first"), key("b", "", "second")];

    #[test]
    fn layering_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "# comment\na = 2\nb = x # trailing\n").unwrap();
        let c = RunConfig::resolve(KEYS, Some(&f), &[("a".into(), "3".into())]).unwrap();
        assert_eq!(c.get::<u32>("a").unwrap(), 3);
        assert_eq!(c.raw("b"), "x");
        let err = RunConfig::resolve(KEYS, None, &[("zz".into(), "1".into())]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let c = RunConfig::resolve(KEYS, None, &[]).unwrap();
        assert_eq!(c.opt::<u32>("b").unwrap(), None);
        assert_eq!(c.to_text(), "a = 1\nb = \n");
    }

    #[test]
    fn lists() {
        let c = RunConfig::resolve(KEYS, None, &[("b".into(), "1, 2,3".into())]).unwrap();
        assert_eq!(c.list::<u32>("b").unwrap(), vec![1, 2, 3]);
        assert!(c.get::<u32>("b").is_err());
    }
}
