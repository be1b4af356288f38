use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Values from a `--config` file of `key=value` lines. Keys mirror the
/// long flag names; `-` and `_` are interchangeable.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

pub const CIRCUIT_KEYS: [&str; 7] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "xl_max"];

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| CliError(format!("line {}: expected key=value", i + 1)))?;
            values.insert(key.trim().replace('-', "_"), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| CliError(format!("config key {key}: cannot parse '{raw}'"))),
        }
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn flag(&self, set: bool, key: &str) -> Result<bool, CliError> {
        Ok(set || self.get(key)?.unwrap_or(false))
    }

    pub fn circuit_overrides(&self) -> Result<BTreeMap<String, f64>, CliError> {
        let mut out = BTreeMap::new();
        for key in CIRCUIT_KEYS {
            if let Some(v) = self.get(key)? {
                out.insert(key.to_string(), v);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes_keys() {
        let cfg = ConfigFile::parse("# comment\nt-max = 2.5\nseed=7\n\nfit=true\n").unwrap();
        assert_eq!(cfg.get::<f64>("t_max").unwrap(), Some(2.5));
        assert_eq!(cfg.pick(Some(3u64), "seed", 0).unwrap(), 3);
        assert_eq!(cfg.pick(None, "seed", 0u64).unwrap(), 7);
        assert!(cfg.flag(false, "fit").unwrap());
        assert!(ConfigFile::parse("novalue").is_err());
        assert!(cfg.get::<u64>("t_max").is_err());
    }
}
