//! `key = value` run configuration.
//!
//! A run is described by a flat map of settings. The config file supplies
//! a base, command-line flags override it, and the merged map is written
//! back out as `run.cfg` so a run can be repeated from its output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "data",
    "checkpoint",
    "class_vectors",
    // encoder
    "hidden",
    "layers",
    "activation",
    "dropout",
    "tied",
    // optimisation
    "epochs",
    "lr",
    "batch_size",
    "weight_decay",
    "patience",
    // pretraining
    "lambda",
    "fanout",
    "edge_drop",
    "feature_mask",
    // evaluation
    "protocol",
    "ways",
    "shots",
    "tasks",
    "queries",
    "distance",
    // verification
    "suite",
    "trials",
    // benchmark
    "reps",
    "hops",
    "nodes",
    // synthetic benchmark
    "feature_dim",
    "classes",
    "nodes_per_class",
    "p_in",
    "p_out",
    "separation",
    "sigma",
    "graphs_per_class",
    "nodes_per_graph",
    "motif_sigma",
    "domain_shift",
    "class_vector_dim",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Usage(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("bad value '{v}' for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Writes `value` into `slot` when `key` is set.
    pub fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), CliError>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")?
            .ok_or_else(|| CliError::Usage("a seed is required (--seed or 'seed = ...')".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out").unwrap_or("out"))
    }

    /// An input path that must already exist.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(p) => {
                let path = PathBuf::from(p);
                if !path.exists() {
                    return Err(CliError::Usage(format!("{key} path {} does not exist", path.display())));
                }
                Ok(Some(path))
            }
        }
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.existing_path(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required '{key}'")))
    }

    /// Comma-separated dataset directories, each of which must exist.
    pub fn data_dirs(&self) -> Result<Vec<PathBuf>, CliError> {
        let Some(list) = self.raw("data") else {
            return Err(CliError::Usage("missing required 'data'".into()));
        };
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|p| {
                let path = PathBuf::from(p);
                if path.is_dir() {
                    Ok(path)
                } else {
                    Err(CliError::Usage(format!("dataset directory {} does not exist", path.display())))
                }
            })
            .collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let c = RunConfig::parse("# run\nseed = 3\n  lr=0.5  # fast\n\n", "t").unwrap();
        assert_eq!(c.seed().unwrap(), 3);
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(c.to_string(), "lr = 0.5\nseed = 3\n");
    }

    #[test]
    fn round_trips_through_display() {
        let c = RunConfig::parse("ways = 5\nprotocol = incontext\nseed = 1\n", "t").unwrap();
        assert_eq!(RunConfig::parse(&c.to_string(), "t").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_usage_errors() {
        assert!(matches!(RunConfig::parse("colour = red", "t"), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::parse("seed 3", "t"), Err(CliError::Usage(_))));
        let c = RunConfig::parse("ways = many", "t").unwrap();
        assert!(matches!(c.get::<usize>("ways"), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_seed_is_rejected() {
        assert!(RunConfig::default().seed().is_err());
    }
}
