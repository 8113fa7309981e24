//! Flat key-value text format with dotted section names.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are skipped.
//! Values are either a single token or a whitespace-separated list of
//! numbers. The format is intentionally primitive so instance files and
//! experiment configs stay parseable from any language.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{RegimeError, Result};

/// An ordered key-value document. Insertion order is preserved so that
/// serialization is byte-stable.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

/// Render an `f64` with 17 significant digits (round-trips exactly).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_float_list(xs: &[f64]) -> String {
    let mut out = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}", fmt_float(*x));
    }
    out
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RegimeError::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            doc.set(key.trim(), value.trim());
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Insert or overwrite a key. Overwrites keep the original position so
    /// `--set` overrides do not reorder the document.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        match self.index.get(key) {
            Some(&i) => self.entries[i].1 = value.into(),
            None => {
                self.index.insert(key.to_string(), self.entries.len());
                self.entries.push((key.to_string(), value.into()));
            }
        }
    }

    pub fn set_float(&mut self, key: &str, value: f64) {
        self.set(key, fmt_float(value));
    }

    pub fn set_floats(&mut self, key: &str, values: &[f64]) {
        self.set(key, fmt_float_list(values));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].1.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| RegimeError::Config(format!("missing required key `{key}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| RegimeError::Parse(format!("key `{key}`: bad float `{v}`")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| RegimeError::Parse(format!("key `{key}`: bad integer `{v}`")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| RegimeError::Parse(format!("key `{key}`: bad integer `{v}`")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(RegimeError::Parse(format!(
                    "key `{key}`: bad boolean `{other}`"
                ))),
            })
            .transpose()
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| {
                            RegimeError::Parse(format!("key `{key}`: bad float `{tok}`"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|tok| {
                        tok.parse::<usize>().map_err(|_| {
                            RegimeError::Parse(format!("key `{key}`: bad integer `{tok}`"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|tok| {
                        tok.parse::<u64>().map_err(|_| {
                            RegimeError::Parse(format!("key `{key}`: bad integer `{tok}`"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Short hex digest of the canonical rendering, sorted by key so that
    /// insertion order does not affect the hash.
    pub fn hash(&self) -> String {
        let mut sorted: Vec<_> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut hasher = Sha256::new();
        for (k, v) in sorted {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::new();
        for byte in digest.iter().take(8) {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}
