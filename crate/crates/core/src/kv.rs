//! Flat `key = value` configuration files.
//!
//! One pair per line; blank lines and `#` comments are ignored. Keys may not
//! repeat.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(KvError::Syntax { line })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line });
            }
            if entries
                .insert(key.to_string(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key` into `slot` when present.
    pub fn apply<T>(&self, key: &str, slot: &mut T) -> Result<(), KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.apply_with(key, slot, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    pub fn apply_with<T>(
        &self,
        key: &str,
        slot: &mut T,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<(), KvError> {
        if let Some((line, value)) = self.entries.get(key) {
            *slot = parse(value).map_err(|message| KvError::Value {
                line: *line,
                key: key.to_string(),
                message,
            })?;
        }
        Ok(())
    }

    /// Fails on the first key not in `known`.
    pub fn deny_unknown(&self, known: &[&str]) -> Result<(), KvError> {
        let mut unknown: Vec<_> = self
            .entries
            .iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, (line, _))| (*line, k.clone()))
            .collect();
        unknown.sort();
        match unknown.into_iter().next() {
            Some((line, key)) => Err(KvError::UnknownKey { line, key }),
            None => Ok(()),
        }
    }
}
