//! Run reports: a stable key-value document written as JSON or TOML
//! (chosen by file extension) and a fixed-width table for terminals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: BTreeMap<String, Value>,
    pub results: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    /// Absent for deterministic subcommands.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "seed_repr")]
    pub seed: Option<u64>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            results: BTreeMap::new(),
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
            seed: None,
        }
    }

    /// Null values (such as `None`) are not recorded.
    pub fn input(&mut self, key: &str, value: impl Serialize) {
        insert_clean(&mut self.inputs, key, value);
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        insert_clean(&mut self.results, key, value);
    }

    pub fn result_f64(&self, key: &str) -> Option<f64> {
        self.results.get(key).and_then(Value::as_f64)
    }
}

/// Seeds above `i64::MAX` are stored as decimal strings so that TOML can
/// hold them; both forms are accepted on read.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match seed {
            Some(v) if *v <= i64::MAX as u64 => s.serialize_i64(*v as i64),
            Some(v) => s.serialize_str(&v.to_string()),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Some(v)),
            Repr::Text(t) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

/// Serializes to a JSON value without nulls: null object fields are dropped
/// and null array entries become the string `"nan"`.
fn to_clean_value(value: impl Serialize) -> Value {
    scrub(serde_json::to_value(value).expect("report values serialize"))
}

fn insert_clean(map: &mut BTreeMap<String, Value>, key: &str, value: impl Serialize) {
    match to_clean_value(value) {
        Value::Null => {}
        v => {
            map.insert(key.to_string(), v);
        }
    }
}

fn scrub(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, scrub(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(
            items
                .into_iter()
                .map(|v| if v.is_null() { Value::String("nan".into()) } else { scrub(v) })
                .collect(),
        ),
        Value::Number(n) if n.as_u64().is_some_and(|u| u > i64::MAX as u64) => Value::String(n.to_string()),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Toml,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("json") => Ok(ReportFormat::Json),
            Some("toml") => Ok(ReportFormat::Toml),
            _ => Err(CliError::format(path, "report extension must be .json or .toml")),
        }
    }
}

pub fn to_string(report: &RunReport, format: ReportFormat) -> Result<String, String> {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).map_err(|e| e.to_string()),
        ReportFormat::Toml => toml::to_string(report).map_err(|e| e.to_string()),
    }
}

pub fn from_str(text: &str, format: ReportFormat) -> Result<RunReport, String> {
    match format {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
        ReportFormat::Toml => toml::from_str(text).map_err(|e| e.to_string()),
    }
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<(), CliError> {
    let format = ReportFormat::from_path(path)?;
    let text = to_string(report, format).map_err(|e| CliError::format(path, e))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let format = ReportFormat::from_path(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_str(&text, format).map_err(|e| CliError::format(path, e))
}

const MAX_INLINE: usize = 6;
const MIN_KEY_WIDTH: usize = 16;

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() && f != 0.0 && f.abs() < 1e-4 => format!("{f:.6e}"),
            Some(f) if n.is_f64() => format!("{f:.12}").trim_end_matches('0').trim_end_matches('.').to_string(),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            let simple = items.iter().all(|x| !x.is_object() && !x.is_array());
            if simple && items.len() <= MAX_INLINE {
                let parts: Vec<String> = items.iter().map(scalar).collect();
                out.push((prefix.to_string(), format!("[{}]", parts.join(", "))));
            } else if !simple && items.len() <= MAX_INLINE {
                for (idx, x) in items.iter().enumerate() {
                    flatten(&format!("{prefix}[{idx}]"), x, out);
                }
            } else {
                out.push((prefix.to_string(), format!("[{} items]", items.len())));
            }
        }
        other => out.push((prefix.to_string(), scalar(other))),
    }
}

/// Fixed-width table of every input, result, warning and timing.
pub fn human_table(report: &RunReport) -> String {
    let mut sections = Vec::new();
    for (title, map) in [("inputs", &report.inputs), ("results", &report.results)] {
        let mut rows = Vec::new();
        for (k, v) in map {
            flatten(k, v, &mut rows);
        }
        sections.push((title, rows));
    }
    let timings: Vec<(String, String)> = report.timings_ms.iter().map(|(k, v)| (k.clone(), format!("{v:.3}"))).collect();
    let width = sections
        .iter()
        .flat_map(|(_, rows)| rows.iter())
        .chain(&timings)
        .map(|(k, _)| k.len())
        .max()
        .unwrap_or(0)
        .max(MIN_KEY_WIDTH);

    let mut s = String::new();
    let _ = writeln!(s, "command: {}", report.command);
    if let Some(seed) = report.seed {
        let _ = writeln!(s, "seed:    {seed}");
    }
    for (title, rows) in sections.iter().chain([&("timings (ms)", timings)]) {
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "{title}:");
        for (k, v) in rows {
            let _ = writeln!(s, "  {k:<width$}  {v}");
        }
        if *title == "results" && !report.warnings.is_empty() {
            let _ = writeln!(s, "warnings:");
            for w in &report.warnings {
                let _ = writeln!(s, "  - {w}");
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new("dim");
        r.input("config", "sys.json");
        r.input("tol", 1e-12);
        r.result("dimension", 1.349_683_820_195_577_4);
        r.result("p_star", vec![vec![0.6, 0.4]]);
        r.result("gap", Option::<f64>::None);
        r.result("trace", vec![0.1, f64::NAN]);
        r.warnings.push("note".into());
        r.timings_ms.insert("compute".into(), 1.5);
        r.seed = Some(u64::MAX);
        r
    }

    #[test]
    fn nulls_are_removed() {
        let r = sample();
        assert!(!r.results.contains_key("gap"));
        assert_eq!(r.results["trace"][1], Value::String("nan".into()));
    }

    #[test]
    fn round_trips_in_both_formats() {
        let r = sample();
        for f in [ReportFormat::Json, ReportFormat::Toml] {
            let text = to_string(&r, f).unwrap();
            assert_eq!(from_str(&text, f).unwrap(), r, "{f:?}");
        }
        let mut small = sample();
        small.seed = Some(42);
        let text = to_string(&small, ReportFormat::Toml).unwrap();
        assert!(text.contains("seed = 42"));
        assert_eq!(from_str(&text, ReportFormat::Toml).unwrap(), small);
    }

    #[test]
    fn table_lists_results() {
        let t = human_table(&sample());
        assert!(t.contains("dimension"));
        assert!(t.contains("1.349683820196"));
        assert!(t.contains("p_star"));
        assert!(t.contains("- note"));
    }

    #[test]
    fn unknown_extension() {
        assert!(ReportFormat::from_path(Path::new("out.yaml")).is_err());
        assert_eq!(ReportFormat::from_path(Path::new("OUT.TOML")).unwrap(), ReportFormat::Toml);
    }
}
