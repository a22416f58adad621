//! `key=value` configuration files.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i as u64 + 1, format!("expected key=value, found {line:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(i as u64 + 1, "empty key"));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse(i as u64 + 1, format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

/// Typed view over parsed config entries that tracks which keys were read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Config { entries: parse_key_values(text)? })
    }

    pub fn from_map(entries: BTreeMap<String, String>) -> Self {
        Config { entries }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Rejects keys outside `allowed`, catching typos in config files.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::invalid(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = parse_key_values("# lr grid\nlr = 0.001\n\nfclass=mlp\n").unwrap();
        assert_eq!(kv.get("lr").unwrap(), "0.001");
        assert_eq!(kv.get("fclass").unwrap(), "mlp");
    }

    #[test]
    fn duplicate_and_malformed_lines_fail() {
        assert!(matches!(parse_key_values("a=1\na=2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_key_values("just words"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn typed_access() {
        let c = Config::parse("b=0.001\nK=3").unwrap();
        assert_eq!(c.get::<f64>("b").unwrap(), Some(0.001));
        assert_eq!(c.get_or::<usize>("M", 7).unwrap(), 7);
        assert!(c.get::<usize>("b").is_err());
        assert!(c.check_keys(&["b"]).is_err());
    }
}
