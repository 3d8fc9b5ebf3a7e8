//! Canonical JSON: object keys sorted bytewise, compact separators, UTF-8.
//!
//! Byte equality of canonical documents is meaningful, which is what trace
//! comparison, snapshots and cassette keys rely on.

use serde::Serialize;
use serde_json::Value;

/// Serializes any value to canonical JSON.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

/// Canonical form of an already-built [`Value`].
pub fn value_to_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_nested_keys_without_whitespace() {
        let v = json!({"b": 1, "a": {"z": [1, 2], "y": "x"}});
        assert_eq!(value_to_string(&v), r#"{"a":{"y":"x","z":[1,2]},"b":1}"#);
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"k\"": "line\nbreak"});
        assert_eq!(value_to_string(&v), r#"{"k\"":"line\nbreak"}"#);
    }
}
