//! Flat `key = value` run configuration files.
//!
//! Every key is validated against a registry of known names with a type and
//! range; unknown keys, duplicate keys, and out-of-range values are rejected
//! at parse time. The command line overrides anything set in a file.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Value type and admissible range of a configuration key.
#[derive(Debug, Clone, Copy)]
pub enum KeyKind {
    /// Floating point in `[min, max]`; `min_exclusive` makes the lower bound
    /// strict.
    Float {
        min: f64,
        max: f64,
        min_exclusive: bool,
    },
    /// Integer in `[min, max]`.
    Int { min: u64, max: u64 },
    /// `true` / `false`.
    Flag,
    /// Free-form text validated by the consumer (e.g. tower widths).
    Text,
}

/// One registry entry.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: KeyKind,
    pub help: &'static str,
}

/// All keys a run configuration file may set.
pub const REGISTRY: &[KeySpec] = &[
    KeySpec {
        name: "lr",
        kind: KeyKind::Float { min: 0.0, max: 1e3, min_exclusive: true },
        help: "initial learning rate",
    },
    KeySpec {
        name: "batch-size",
        kind: KeyKind::Int { min: 2, max: 1_000_000_000 },
        help: "minibatch size",
    },
    KeySpec {
        name: "epochs",
        kind: KeyKind::Int { min: 1, max: 1_000_000_000 },
        help: "maximum training epochs",
    },
    KeySpec {
        name: "patience",
        kind: KeyKind::Int { min: 1, max: 1_000_000_000 },
        help: "epochs without validation improvement before an LR reduction",
    },
    KeySpec {
        name: "lr-divisor",
        kind: KeyKind::Float { min: 1.0, max: 1e6, min_exclusive: true },
        help: "factor the learning rate is divided by",
    },
    KeySpec {
        name: "reductions",
        kind: KeyKind::Int { min: 0, max: 1000 },
        help: "number of LR reductions before stopping",
    },
    KeySpec {
        name: "margin",
        kind: KeyKind::Float { min: 0.0, max: 100.0, min_exclusive: true },
        help: "ranking-loss margin",
    },
    KeySpec {
        name: "symmetric",
        kind: KeyKind::Flag,
        help: "sum the ranking hinge over both query directions",
    },
    KeySpec {
        name: "reg",
        kind: KeyKind::Float { min: 0.0, max: 1e6, min_exclusive: false },
        help: "covariance regularization",
    },
    KeySpec {
        name: "k",
        kind: KeyKind::Int { min: 1, max: 1_000_000 },
        help: "embedding width",
    },
    KeySpec {
        name: "weight-decay",
        kind: KeyKind::Float { min: 0.0, max: 1e3, min_exclusive: false },
        help: "L2 weight decay",
    },
    KeySpec {
        name: "seed",
        kind: KeyKind::Int { min: 0, max: u64::MAX },
        help: "master random seed",
    },
    KeySpec {
        name: "hidden",
        kind: KeyKind::Text,
        help: "comma-separated hidden widths of both towers",
    },
    KeySpec {
        name: "val-fraction",
        kind: KeyKind::Float { min: 0.0, max: 1.0, min_exclusive: true },
        help: "fraction of the dataset held out for validation",
    },
    KeySpec {
        name: "test-fraction",
        kind: KeyKind::Float { min: 0.0, max: 1.0, min_exclusive: true },
        help: "fraction of the dataset held out for testing",
    },
    KeySpec {
        name: "train-fraction",
        kind: KeyKind::Float { min: 0.0, max: 1.0, min_exclusive: true },
        help: "fraction of the training split actually used",
    },
    KeySpec {
        name: "seeds",
        kind: KeyKind::Int { min: 1, max: 10_000 },
        help: "number of seed replicas in a comparison run",
    },
];

fn registry_lookup(name: &str) -> Option<&'static KeySpec> {
    REGISTRY.iter().find(|k| k.name == name)
}

fn validate_value(spec: &KeySpec, value: &str) -> Result<()> {
    match spec.kind {
        KeyKind::Float { min, max, min_exclusive } => {
            let v: f64 = value.parse().map_err(|_| {
                Error::contract(format!("key '{}': '{}' is not a number", spec.name, value))
            })?;
            let low_ok = if min_exclusive { v > min } else { v >= min };
            if !v.is_finite() || !low_ok || v > max {
                return Err(Error::contract(format!(
                    "key '{}': {} out of range ({}{}, {}]",
                    spec.name,
                    v,
                    if min_exclusive { "(" } else { "[" },
                    min,
                    max
                )));
            }
        }
        KeyKind::Int { min, max } => {
            let v: u64 = value.parse().map_err(|_| {
                Error::contract(format!(
                    "key '{}': '{}' is not a non-negative integer",
                    spec.name, value
                ))
            })?;
            if v < min || v > max {
                return Err(Error::contract(format!(
                    "key '{}': {} out of range [{}, {}]",
                    spec.name, v, min, max
                )));
            }
        }
        KeyKind::Flag => {
            if value != "true" && value != "false" {
                return Err(Error::contract(format!(
                    "key '{}': expected true or false, got '{}'",
                    spec.name, value
                )));
            }
        }
        KeyKind::Text => {}
    }
    Ok(())
}

/// A parsed, fully validated configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Parse `key = value` lines. `#` starts a comment line; blank lines are
/// skipped. Unknown keys, duplicates, and out-of-range values are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut values = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::contract(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let Some(spec) = registry_lookup(key) else {
            return Err(Error::contract(format!(
                "line {}: unknown key '{key}'",
                lineno + 1
            )));
        };
        validate_value(spec, value)?;
        if values.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::contract(format!(
                "line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(RunConfig { values })
}

impl RunConfig {
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key).map(|v| v.parse().expect("validated"))
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.values.get(key).map(|v| v.parse().expect("validated"))
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get_u64(key).map(|v| v as usize)
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.values.get(key).map(|v| v == "true")
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Canonical `key = value` text, keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
