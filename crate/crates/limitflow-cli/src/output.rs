//! Deterministic JSON and CSV writers.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::RunError;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Leaves of a JSON tree as `(dotted path, value)` rows in document order.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, x)| walk(&join(k), x, out)),
            Value::Array(xs) => xs.iter().enumerate().for_each(|(i, x)| walk(&join(&i.to_string()), x, out)),
            Value::Null => out.push((prefix.to_string(), String::new())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Io(e.to_string()))?;
    w.write_record(header).map_err(|e| RunError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| RunError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_examples() {
        let v: Value = serde_json::from_str(r#"{"a": [1.5, {"b": true}], "c": null, "d": "x"}"#).unwrap();
        let rows = flatten(&v);
        let expect = [("a.0", "1.5"), ("a.1.b", "true"), ("c", ""), ("d", "x")];
        assert_eq!(rows.len(), expect.len());
        for ((k, v), (ek, ev)) in rows.iter().zip(expect) {
            assert_eq!((k.as_str(), v.as_str()), (ek, ev));
        }
    }
}
