use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Keys a config file may set; each matches a long flag of `train`/`eval`.
pub const KEYS: &[&str] = &[
    "fn", "ste", "alpha", "beta", "gamma", "delta", "batch", "lr", "epochs", "seed", "hidden", "noise",
    "train-size", "test-size", "labeled", "holes-min", "holes-max", "mnist", "path-csv", "unsupervised",
    "inference-trick", "reduction", "engine", "optimizer",
];

/// A parsed `key = value` file. Blank lines and `#` comments are skipped;
/// `_` and `-` are interchangeable in keys.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", i + 1);
            };
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key '{key}'", i + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
        }
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// `flag`, else the file value, else `default`.
pub fn pick<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

/// Like [`pick`] without a default.
pub fn pick_opt<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => Some(v),
        None => file.get(key)?,
    })
}

pub fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

/// Comma-separated layer sizes; an empty string means no hidden layer.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().with_context(|| format!("bad layer size '{t}'")))
        .map(|r| r.and_then(|k| if k == 0 { bail!("layer sizes must be positive") } else { Ok(k) }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = ConfigFile::parse("# run\nlr = 0.01  # fast\n\ntrain_size=12\n").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.01));
        assert_eq!(c.get::<usize>("train-size").unwrap(), Some(12));
        assert_eq!(pick(Some(0.5), &c, "lr", 1.0).unwrap(), 0.5);
        assert_eq!(pick(None, &c, "lr", 1.0).unwrap(), 0.01);
        assert_eq!(pick(None, &c, "beta", 1.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("lr 0.1").is_err());
        assert!(ConfigFile::parse("nosuch = 1").is_err());
        assert!(ConfigFile::parse("lr = fast").unwrap().get::<f64>("lr").is_err());
    }

    #[test]
    fn hidden_lists() {
        assert_eq!(parse_hidden("128, 64").unwrap(), vec![128, 64]);
        assert_eq!(parse_hidden("").unwrap(), Vec::<usize>::new());
        assert!(parse_hidden("0").is_err());
    }
}
