//! Canonical text form shared by the event log, the HTTP bodies and scenario
//! files: JSON with object keys sorted lexicographically and no insignificant
//! whitespace.
//!
//! Two values that are equal as data always canonicalize to the same bytes,
//! which is what makes byte-level replay and wire comparisons meaningful.

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Serialize `value` to its canonical string.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(value_to_string(&value))
}

/// Canonical string of an already-built JSON value.
pub fn value_to_string(value: &Value) -> String {
    // Sorting explicitly keeps the output stable even if some dependency
    // turns on serde_json's insertion-ordered maps.
    sorted(value).to_string()
}

/// Canonical form as a sorted `Value`.
pub fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k.clone(), sorted(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

/// Lowercase hex SHA-256 of the canonical form.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_string(value)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_at_every_depth() {
        let v = json!({"b": 1, "a": {"z": [ {"y": 1, "x": 2} ], "c": null}});
        assert_eq!(
            value_to_string(&v),
            r#"{"a":{"c":null,"z":[{"x":2,"y":1}]},"b":1}"#
        );
    }

    #[test]
    fn floats_survive_a_parse_cycle() {
        let v = json!({"m": 0.1 + 0.2, "n": 5.0, "o": 1e-300});
        let s = value_to_string(&v);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(value_to_string(&back), s);
    }

    #[test]
    fn empty_digest_is_sha256_of_nothing() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
