//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment. Values may be bare or
//! double-quoted strings, numbers or booleans. Lists are comma-separated and
//! may be wrapped in `[ ]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use introlab::trainer::{ConfigLayer, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: unknown keys: {keys}")]
    UnknownKeys { path: PathBuf, keys: String },
}

/// Parsed file contents, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub path: PathBuf,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Reads `path`, accepting training keys plus `extra_keys`.
pub fn load_config(path: &Path, extra_keys: &[&str]) -> Result<ConfigFile, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = parse_config(path, &text)?;
    let unknown: Vec<String> = file
        .entries
        .iter()
        .filter(|e| !TrainConfig::KEYS.contains(&e.key.as_str()) && !extra_keys.contains(&e.key.as_str()))
        .map(|e| format!("{} (line {})", e.key, e.line))
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys {
            path: path.to_path_buf(),
            keys: unknown.join(", "),
        });
    }
    Ok(file)
}

pub fn parse_config(path: &Path, text: &str) -> Result<ConfigFile, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ConfigError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(err(format!("invalid key '{key}'")));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(err(format!("duplicate key '{key}' (first set on line {})", prev.line)));
        }
        let value = unquote(value.trim()).map_err(err)?;
        entries.push(Entry {
            line,
            key: key.to_string(),
            value,
        });
    }
    Ok(ConfigFile {
        path: path.to_path_buf(),
        entries,
    })
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(value: &str) -> Result<String, String> {
    if value.is_empty() {
        return Err("missing value".into());
    }
    let value = match value.strip_prefix('[') {
        Some(rest) => rest.strip_suffix(']').ok_or("unterminated list")?,
        None => value,
    };
    let items: Result<Vec<String>, String> = value
        .split(',')
        .map(|item| {
            let item = item.trim();
            match item.strip_prefix('"') {
                Some(rest) => rest
                    .strip_suffix('"')
                    .map(str::to_string)
                    .ok_or_else(|| format!("unterminated string {item}")),
                None if item.contains('"') => Err(format!("stray quote in {item}")),
                None => Ok(item.to_string()),
            }
        })
        .collect();
    Ok(items?.join(","))
}

impl ConfigFile {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Applies every training key to `cfg`, skipping `skip`.
    pub fn apply(&self, cfg: &mut TrainConfig, skip: &[&str]) -> Result<(), ConfigError> {
        for e in self.entries.iter().filter(|e| !skip.contains(&e.key.as_str())) {
            cfg.set(&e.key, &e.value).map_err(|msg| ConfigError::Parse {
                path: self.path.clone(),
                line: e.line,
                msg,
            })?;
        }
        Ok(())
    }

    pub fn layer(&self, skip: &[&str]) -> ConfigLayer {
        ConfigLayer {
            source: format!("file:{}", self.path.display()),
            values: self
                .entries
                .iter()
                .filter(|e| !skip.contains(&e.key.as_str()))
                .map(|e| (e.key.clone(), e.value.clone()))
                .collect::<BTreeMap<_, _>>(),
        }
    }
}
