use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

/// Envelope shared by every command. Only `startedAt` and `durationMs`
/// vary between runs with the same configuration.
#[derive(Clone, Debug)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub started_at: String,
    pub duration_ms: u64,
    pub results: Value,
    pub pass: bool,
}

impl Report {
    pub fn new(
        config: &RunConfig,
        started_at: String,
        duration_ms: u64,
        results: Value,
        pass: bool,
    ) -> Self {
        Report {
            command: config.command.clone(),
            config: to_value(config),
            started_at,
            duration_ms,
            results,
            pass,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::json!({
            "command": self.command,
            "config": self.config,
            "startedAt": self.started_at,
            "durationMs": self.duration_ms,
            "results": self.results,
            "pass": self.pass,
        })
    }

    /// Pretty JSON with every float written as `{:.16e}`, so equal values
    /// always print identically.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        write_value(&mut out, &self.to_value(), 0);
        out.push('\n');
        out
    }
}

/// Serializes a payload. Non-finite floats become `null`.
pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v)
        .unwrap_or_else(|e| Value::String(format!("unserializable payload: {e}")))
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (idx, item) in items.iter().enumerate() {
                    if idx > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, level);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (idx, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                if idx + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (idx, (key, item)) in map.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, level + 1);
                if idx + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push('}');
        }
    }
}

/// `iteration,energy` rows of a descent history.
pub fn history_csv(history: &[f64]) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "energy"])?;
    for (i, e) in history.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*e)])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}
