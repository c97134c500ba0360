//! Run settings assembled from command-line flags and an optional JSON file.

use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

/// Every key a run-config file may carry. Flags use the same names with
/// dashes (`kkt_tol` is `--kkt-tol`).
pub const KEYS: [&str; 13] = [
    "example",
    "scheme",
    "alpha",
    "n",
    "ns",
    "output",
    "log",
    "kkt_tol",
    "max_outer",
    "max_inner",
    "formulation",
    "derivatives",
    "workers",
];

/// Partially specified settings; `None` means "not given here".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub example: Option<String>,
    pub scheme: Option<String>,
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub kkt_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub formulation: Option<String>,
    pub derivatives: Option<String>,
    pub workers: Option<usize>,
}

impl Settings {
    /// Fills every unset field from `other`.
    pub fn or(self, other: Settings) -> Settings {
        Settings {
            example: self.example.or(other.example),
            scheme: self.scheme.or(other.scheme),
            alpha: self.alpha.or(other.alpha),
            n: self.n.or(other.n),
            ns: self.ns.or(other.ns),
            output: self.output.or(other.output),
            log: self.log.or(other.log),
            kkt_tol: self.kkt_tol.or(other.kkt_tol),
            max_outer: self.max_outer.or(other.max_outer),
            max_inner: self.max_inner.or(other.max_inner),
            formulation: self.formulation.or(other.formulation),
            derivatives: self.derivatives.or(other.derivatives),
            workers: self.workers.or(other.workers),
        }
    }

    pub fn from_file(path: &Path) -> Result<Settings, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Settings::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Parses a flat JSON object. Numbers may also be given as strings.
    pub fn from_json(text: &str) -> Result<Settings, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
        let Value::Object(map) = value else {
            return Err("run config must be a JSON object".into());
        };
        if let Some(bad) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(format!("unknown key {bad:?}"));
        }
        Ok(Settings {
            example: text_field(&map, "example")?,
            scheme: text_field(&map, "scheme")?,
            alpha: float_field(&map, "alpha")?,
            n: count_field(&map, "n")?,
            ns: counts_field(&map, "ns")?,
            output: text_field(&map, "output")?.map(PathBuf::from),
            log: text_field(&map, "log")?.map(PathBuf::from),
            kkt_tol: float_field(&map, "kkt_tol")?,
            max_outer: count_field(&map, "max_outer")?,
            max_inner: count_field(&map, "max_inner")?,
            formulation: text_field(&map, "formulation")?,
            derivatives: text_field(&map, "derivatives")?,
            workers: count_field(&map, "workers")?,
        })
    }
}

fn text_field(map: &Map<String, Value>, key: &str) -> Result<Option<String>, String> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(other) => Err(format!("{key}: expected a string, got {other}")),
    }
}

fn float_field(map: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n.as_f64().map(Some).ok_or_else(|| format!("{key}: not a finite number")),
        Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| format!("{key}: cannot parse {s:?}")),
        Some(other) => Err(format!("{key}: expected a number, got {other}")),
    }
}

fn count(key: &str, v: &Value) -> Result<usize, String> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .and_then(|u| usize::try_from(u).ok())
            .ok_or_else(|| format!("{key}: expected a nonnegative integer, got {n}")),
        Value::String(s) => s.trim().parse().map_err(|_| format!("{key}: cannot parse {s:?}")),
        other => Err(format!("{key}: expected an integer, got {other}")),
    }
}

fn count_field(map: &Map<String, Value>, key: &str) -> Result<Option<usize>, String> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => count(key, v).map(Some),
    }
}

fn counts_field(map: &Map<String, Value>, key: &str) -> Result<Option<Vec<usize>>, String> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items.iter().map(|v| count(key, v)).collect::<Result<_, _>>().map(Some),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(Some(Vec::new())),
        Some(Value::String(s)) => s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("{key}: cannot parse {p:?}")))
            .collect::<Result<_, _>>()
            .map(Some),
        Some(other) => Err(format!("{key}: expected a list of integers, got {other}")),
    }
}
