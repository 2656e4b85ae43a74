//! Versioned flat-text checkpoint container: a magic line, ordered key-value
//! header fields, then one parameter per line. Values round-trip exactly
//! because Rust's float formatting is shortest-exact.

use std::fmt::Write as _;
use std::path::Path;

pub const MAGIC: &str = "zsc-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub fields: Vec<(String, String)>,
    pub params: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic line {0:?}, expected {MAGIC:?}")]
    BadMagic(String),
    #[error("missing header field {0:?}")]
    MissingField(String),
    #[error("field {key:?} has unusable value {value:?}")]
    BadFieldValue { key: String, value: String },
    #[error("expected {expected} parameters, found {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("unparseable number on line {line}")]
    BadNumber { line: usize },
    #[error("truncated header (no params line)")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint { kind: kind.to_string(), fields: Vec::new(), params: Vec::new() }
    }

    pub fn push_field(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_field(&self, key: &str) -> Result<&str, CheckpointError> {
        self.field(key).ok_or_else(|| CheckpointError::MissingField(key.to_string()))
    }

    /// Parses a header field with the standard error mapping.
    pub fn parse_field<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let value = self.require_field(key)?;
        value.parse().map_err(|_| CheckpointError::BadFieldValue {
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    /// Space-separated list field, e.g. layer sizes.
    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CheckpointError> {
        let value = self.require_field(key)?;
        value
            .split_whitespace()
            .map(|v| v.parse())
            .collect::<Result<Vec<T>, _>>()
            .map_err(|_| CheckpointError::BadFieldValue {
                key: key.to_string(),
                value: value.to_string(),
            })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "kind {}", self.kind);
        for (key, value) in &self.fields {
            let _ = writeln!(out, "{key} {value}");
        }
        let _ = writeln!(out, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate();
        let magic = lines.next().map(|(_, l)| l).unwrap_or("");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic.to_string()));
        }
        let mut kind = None;
        let mut fields = Vec::new();
        let mut expected = None;
        for (_idx, line) in lines.by_ref() {
            let (key, value) =
                line.split_once(' ').ok_or_else(|| CheckpointError::Truncated)?;
            match key {
                "kind" => kind = Some(value.to_string()),
                "params" => {
                    expected = Some(value.parse::<usize>().map_err(|_| {
                        CheckpointError::BadFieldValue {
                            key: "params".to_string(),
                            value: value.to_string(),
                        }
                    })?);
                    break;
                }
                _ => fields.push((key.to_string(), value.to_string())),
            }
        }
        let kind = kind.ok_or_else(|| CheckpointError::MissingField("kind".to_string()))?;
        let expected = expected.ok_or(CheckpointError::Truncated)?;
        let mut params = Vec::with_capacity(expected);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            params.push(
                line.parse::<f64>().map_err(|_| CheckpointError::BadNumber { line: idx + 1 })?,
            );
        }
        if params.len() != expected {
            return Err(CheckpointError::ParamCount { expected, got: params.len() });
        }
        Ok(Checkpoint { kind, fields, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
