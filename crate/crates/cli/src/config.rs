//! `key = value` configuration files. Keys mirror the long flag names;
//! command-line flags override file values.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: HashMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key `{key}`: {e}"),
            },
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nvariant = am\nseed = 9\nknot-exponent = 0.2").unwrap();
        let cfg = Config::load(f.path()).unwrap();
        assert_eq!(cfg.get::<String>("variant").unwrap().unwrap(), "am");
        assert_eq!(cfg.get::<u64>("seed").unwrap().unwrap(), 9);
        assert_eq!(cfg.get::<f64>("knot-exponent").unwrap().unwrap(), 0.2);
        assert!(cfg.get::<u64>("missing").unwrap().is_none());
        assert!(cfg.get::<u64>("variant").is_err());
    }

    #[test]
    fn rejects_malformed_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "not a pair").unwrap();
        assert!(Config::load(f.path()).is_err());
    }
}
