//! Line-based `key = value` configuration with `[section]` headers.
//!
//! Keys before the first header belong to the unnamed section `""`. A
//! section key is addressed as `section.key`. Values are trimmed; `#` starts
//! a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Raw key-value pairs keyed by `section.key`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", no + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            if key.ends_with('.') || k.trim().is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key).map(|s| parse_one(key, s)).transpose()
    }

    pub fn value_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.value(key)?.unwrap_or(default))
    }

    /// Comma-separated list; a missing key gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(s) => s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| parse_one(key, t)).collect(),
        }
    }
}

fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse `{s}`: {e}")))
}

/// Experiment kinds understood by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Persistence,
    Local,
    Caravenna,
    Exit,
    Interval,
    Cdf,
    Duality,
    KernelIdentities,
    Renewal,
    LltRate,
    FukNagaev,
    LevelSets,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Self::Persistence,
        Self::Local,
        Self::Caravenna,
        Self::Exit,
        Self::Interval,
        Self::Cdf,
        Self::Duality,
        Self::KernelIdentities,
        Self::Renewal,
        Self::LltRate,
        Self::FukNagaev,
        Self::LevelSets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Persistence => "persistence",
            Self::Local => "local",
            Self::Caravenna => "caravenna",
            Self::Exit => "exit",
            Self::Interval => "interval",
            Self::Cdf => "cdf",
            Self::Duality => "duality",
            Self::KernelIdentities => "kernel-identities",
            Self::Renewal => "renewal",
            Self::LltRate => "llt-rate",
            Self::FukNagaev => "fuk-nagaev",
            Self::LevelSets => "level-sets",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Built-in name or law file path.
    pub law: String,
    pub delta: f64,
    pub experiments: Vec<Experiment>,
    pub n: Vec<u64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub q: f64,
    pub seed: u64,
    pub paths: u64,
    pub output: Option<PathBuf>,
    pub ladder: Vec<u64>,
    pub table_paths: u64,
    pub n_cap: u64,
    pub spacing: f64,
    pub x_max: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_file(cfg: &ConfigFile) -> Result<Self> {
        const KNOWN: [&str; 18] = [
            "law",
            "delta",
            "experiment",
            "q",
            "seed",
            "paths",
            "output",
            "grid.n",
            "grid.x",
            "grid.y",
            "grid.v",
            "tables.ladder",
            "tables.paths",
            "tables.n_cap",
            "tables.spacing",
            "tables.x_max",
            "threads",
            "format",
        ];
        if let Some(k) = cfg.keys().find(|k| !KNOWN.contains(k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let law = cfg.get("law").ok_or_else(|| Error::Config("missing `law`".into()))?.to_string();
        let experiments: Vec<Experiment> = cfg.list("experiment")?;
        if experiments.is_empty() {
            return Err(Error::Config("missing `experiment`".into()));
        }
        let mut ladder: Vec<u64> = cfg.list("tables.ladder")?;
        if ladder.is_empty() {
            ladder = vec![256, 1024, 4096];
        }
        let c = Self {
            law,
            delta: cfg.value_or("delta", 1.0)?,
            experiments,
            n: cfg.list("grid.n")?,
            x: default_list(cfg.list("grid.x")?),
            y: default_list(cfg.list("grid.y")?),
            v: default_list(cfg.list("grid.v")?),
            q: cfg.value_or("q", 0.01)?,
            seed: cfg.value_or("seed", 1)?,
            paths: cfg.value_or("paths", 100_000)?,
            output: cfg.value::<String>("output")?.map(PathBuf::from),
            ladder,
            table_paths: cfg.value_or("tables.paths", 200_000)?,
            n_cap: cfg.value_or("tables.n_cap", 4096)?,
            spacing: cfg.value_or("tables.spacing", 0.05)?,
            x_max: cfg.value("tables.x_max")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(&ConfigFile::parse(text)?)
    }

    fn validate(&self) -> Result<()> {
        let needs_n = self.experiments.iter().any(|e| !matches!(e, Experiment::KernelIdentities | Experiment::Renewal | Experiment::LevelSets));
        if needs_n {
            if let Some(&n) = self.n.iter().find(|&&n| n < 2) {
                return Err(Error::Config(format!("grid n values must be at least 2, got {n}")));
            }
        }
        if !(self.q >= 0.0) {
            return Err(Error::Config(format!("q must be nonnegative, got {}", self.q)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if [&self.x, &self.y, &self.v].iter().any(|l| l.iter().any(|t| !t.is_finite())) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        Ok(())
    }
}

fn default_list(v: Vec<f64>) -> Vec<f64> {
    if v.is_empty() { vec![0.0] } else { v }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
law = ssrw
experiment = persistence, local   # two at once
seed = 7

[grid]
n = 256, 1024
x = 0, 2
";

    #[test]
    fn parses_sections_and_lists() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.experiments, vec![Experiment::Persistence, Experiment::Local]);
        assert_eq!(c.n, vec![256, 1024]);
        assert_eq!(c.x, vec![0.0, 2.0]);
        assert_eq!(c.y, vec![0.0]);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("law = ssrw\nexperiment = nope\n").is_err());
        assert!(ExperimentConfig::parse("law = ssrw\nexperiment = local\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("law = ssrw\nexperiment = local\n[grid]\nn = 1\n").is_err());
        assert!(ConfigFile::parse("[grid\n").is_err());
        assert!(ConfigFile::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }
}
