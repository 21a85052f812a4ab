//! Parameter resolution: command-line value, then the `--config` file, then
//! the built-in default. Every resolved value is recorded for the manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Keys that never change results and stay out of the hashed configuration.
pub const UNHASHED: &[&str] = &["out", "threads", "config"];

pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

/// Raised for values that fail to parse; mapped to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(UsageError(format!("config line {}: expected `key = value`", n + 1)));
        };
        let key = k.trim().trim_start_matches("--").to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!(UsageError(format!("config line {}: `{key}` is set twice", n + 1)));
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeMap::new(),
        })
    }

    fn raw(&self, key: &str, cli: Option<&str>) -> Option<String> {
        cli.map(str::to_string).or_else(|| self.file.get(key).cloned())
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse::<T>()
            .map_err(|e| UsageError(format!("invalid value `{raw}` for --{key}: {e}")).into())
    }

    /// Resolved value of `key`, falling back to `default`.
    pub fn get<T: FromStr>(&mut self, key: &str, cli: Option<&str>, default: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key, cli).unwrap_or_else(|| default.to_string());
        let v = Self::parse(key, &raw)?;
        self.used.insert(key.to_string(), raw);
        Ok(v)
    }

    /// Resolved value of a parameter without a default.
    pub fn require<T: FromStr>(&mut self, key: &str, cli: Option<&str>) -> Result<T>
    where
        T::Err: Display,
    {
        self.optional(key, cli)?
            .ok_or_else(|| UsageError(format!("--{key} is required (flag or config file)")).into())
    }

    pub fn optional<T: FromStr>(&mut self, key: &str, cli: Option<&str>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key, cli) {
            Some(raw) => {
                let v = Self::parse(key, &raw)?;
                self.used.insert(key.to_string(), raw);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// Comma-separated list, or `default` when unset.
    pub fn list<T: FromStr>(&mut self, key: &str, cli: Option<&str>, default: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.raw(key, cli).unwrap_or_else(|| default.to_string());
        let v = split_list(&raw)
            .map(|item| Self::parse(key, item))
            .collect::<Result<Vec<T>>>()?;
        self.used.insert(key.to_string(), raw);
        Ok(v)
    }

    /// Config-file keys this command never read.
    pub fn unused_file_keys(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.used.contains_key(*k))
            .map(String::as_str)
            .collect()
    }

    /// Effective configuration, split into the hashed part and the rest.
    pub fn effective(&self) -> (BTreeMap<String, String>, BTreeMap<String, String>) {
        self.used
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .partition(|(k, _)| !UNHASHED.contains(&k.as_str()))
    }
}

pub fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_cli_then_file_then_default() {
        let mut s = Settings {
            file: parse_config("# comment\nlambda = 0.01\nrho=2\n").unwrap(),
            used: BTreeMap::new(),
        };
        let l: f64 = s.get("lambda", Some("0.5"), "1e-4").unwrap();
        let r: f64 = s.get("rho", None, "1").unwrap();
        let a: f64 = s.get("alpha", None, "0.5").unwrap();
        assert_eq!((l, r, a), (0.5, 2.0, 0.5));
        let (hashed, _) = s.effective();
        assert_eq!(hashed["lambda"], "0.5");
        assert_eq!(hashed["rho"], "2");
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut s = Settings::load(None).unwrap();
        let e = s.get::<f64>("lambda", Some("abc"), "1").unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some());
        assert!(parse_config("novalue\n").is_err());
        assert!(parse_config("a=1\na=2\n").is_err());
    }

    #[test]
    fn lists_split_on_commas() {
        let mut s = Settings::load(None).unwrap();
        let v: Vec<f64> = s.list("rho-grid", Some("0.5, 1,1.5"), "").unwrap();
        assert_eq!(v, vec![0.5, 1.0, 1.5]);
    }
}
