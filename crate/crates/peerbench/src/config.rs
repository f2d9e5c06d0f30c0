//! Flat `key = value` configuration files.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored;
//! keys may repeat only if the values agree. Values are unquoted text with
//! surrounding whitespace trimmed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::usage(format!("line {}: expected `key = value`, got `{line}`", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::usage(format!("line {}: empty key", i + 1)));
            }
            if let Some(prev) = entries.insert(k.to_string(), v.to_string()) {
                if prev != v {
                    return Err(CliError::usage(format!("line {}: `{k}` set twice ({prev} vs {v})", i + 1)));
                }
            }
        }
        Ok(KeyValueConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn from_entries<K: Into<String>, V: Into<String>>(it: impl IntoIterator<Item = (K, V)>) -> Self {
        KeyValueConfig { entries: it.into_iter().map(|(k, v)| (k.into(), v.into())).collect() }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Keys starting with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Resolves parameters from flags, then a config file, then defaults, and
/// records every resolved value for the run manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    file: KeyValueConfig,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: KeyValueConfig) -> Self {
        Resolver { file, resolved: BTreeMap::new() }
    }

    pub fn file(&self) -> &KeyValueConfig {
        &self.file
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(s) => s.parse().map_err(|e| CliError::usage(format!("config `{key}` = `{s}`: {e}")))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(s.parse().map_err(|e| CliError::usage(format!("config `{key}` = `{s}`: {e}")))?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        self.optional(key, flag)?.ok_or_else(|| CliError::usage(format!("missing required parameter `{key}`")))
    }

    /// Records a value that was not looked up through the resolver.
    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    pub fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = KeyValueConfig::parse("# run\n seed = 7 \n\nalpha=0.5 # inline\n").unwrap();
        assert_eq!(c.get("seed"), Some("7"));
        assert_eq!(c.get("alpha"), Some("0.5"));
        assert_eq!(c.entries().len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        let e = KeyValueConfig::parse("seed 7").unwrap_err();
        assert!(e.message.contains("line 1"));
        assert!(KeyValueConfig::parse("a = 1\na = 2").is_err());
        assert!(KeyValueConfig::parse("a = 1\na = 1").is_ok());
        assert!(KeyValueConfig::parse(" = 3").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut r = Resolver::new(KeyValueConfig::parse("seed = 3\nalpha = 0.9").unwrap());
        assert_eq!(r.value("seed", Some(5u64), 1).unwrap(), 5);
        assert_eq!(r.value("alpha", None, 0.5f64).unwrap(), 0.9);
        assert_eq!(r.value("beta", None, 2.0f64).unwrap(), 2.0);
        assert_eq!(r.resolved()["seed"], "5");
        assert_eq!(r.resolved()["beta"], "2");
        assert!(r.value::<u64>("alpha", None, 1).is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = KeyValueConfig::from_entries([("b", "2"), ("a", "x y")]);
        assert_eq!(KeyValueConfig::parse(&c.render()).unwrap(), c);
    }
}
