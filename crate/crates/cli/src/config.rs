//! Layered settings: command-line flag, then config file, then built-in
//! default. Every value actually used is recorded so the run manifest can
//! replay it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("config line {line}: key {key:?} set twice")]
    Duplicate { line: usize, key: String },
    #[error("config key {key:?}: {message}")]
    Value { key: String, message: String },
    #[error("config {path} is not a valid run manifest: {message}")]
    Manifest { path: String, message: String },
    #[error("unknown config key(s) for this command: {0}")]
    Unknown(String),
}

/// Replayable description of a run, written before any other output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub seed: u64,
    pub input: String,
    pub out_dir: String,
    /// Resolved settings, in the same keys a config file accepts.
    pub config: BTreeMap<String, String>,
}

/// Parses a flat `key=value` file. Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: idx + 1 })?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1 });
        }
        if map.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err(ConfigError::Duplicate {
                line: idx + 1,
                key,
            });
        }
    }
    Ok(map)
}

/// Loads a key=value file, or the settings of a run manifest (`.json`).
pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| ConfigError::Manifest {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        return Ok(manifest.config);
    }
    parse_config(&text)
}

pub struct Layers {
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Layers {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            used: BTreeMap::new(),
        }
    }

    /// Resolves `key` as flag, else file, else `default`.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let value = match self.optional(key, flag)? {
            Some(v) => v,
            None => default,
        };
        self.used.insert(key.to_owned(), value.to_string());
        Ok(value)
    }

    /// Like [`Layers::pick`] with no default; unset keys stay out of the record.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(text.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_owned(),
                    message: e.to_string(),
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.used.insert(key.to_owned(), v.to_string());
        }
        Ok(value)
    }

    /// Fails if the file set keys this command never asked for.
    pub fn finish(self) -> Result<BTreeMap<String, String>, ConfigError> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains_key(*k) && k.as_str() != "out_dir")
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(ConfigError::Unknown(unknown.join(", ")));
        }
        Ok(self.used)
    }

    pub fn file_value(&self, key: &str) -> Option<&str> {
        self.file.get(key).map(String::as_str)
    }
}

/// Comma-separated list that also accepts inclusive ranges `a..b` and
/// stepped ranges `a..b:step`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountList(pub Vec<usize>);

impl FromStr for CountList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            if let Some((lo, rest)) = part.split_once("..") {
                let (hi, step) = match rest.split_once(':') {
                    Some((hi, step)) => (hi, step),
                    None => (rest, "1"),
                };
                let num = |t: &str| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| format!("{t:?} in {part:?}: {e}"))
                };
                let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
                if step == 0 || hi < lo {
                    return Err(format!("empty or invalid range {part:?}"));
                }
                out.extend((lo..=hi).step_by(step));
            } else {
                out.push(part.parse().map_err(|e| format!("{part:?}: {e}"))?);
            }
        }
        Ok(Self(out))
    }
}

impl fmt::Display for CountList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_joined(f, &self.0)
    }
}

/// Comma-separated list of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealList(pub Vec<f64>);

impl FromStr for RealList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(Self)
    }
}

impl fmt::Display for RealList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_joined(f, &self.0)
    }
}

fn write_joined<T: fmt::Display>(f: &mut fmt::Formatter<'_>, xs: &[T]) -> fmt::Result {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}
