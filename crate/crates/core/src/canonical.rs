//! Canonical JSON: sorted keys, UTF-8, no insignificant whitespace, RFC 3339
//! timestamps with a `Z` suffix.
//!
//! Every persisted or hashed artifact goes through [`to_canonical_vec`], so two
//! values that are equal serialize to the same bytes.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serializes `value` to canonical JSON bytes.
///
/// Struct fields are routed through [`serde_json::Value`], whose object map is
/// ordered by key, so the output is independent of field declaration order.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_vec(&tree)
}

/// Same as [`to_canonical_vec`] but returns a `String`.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_string(&tree)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Formats an instant the way canonical JSON does.
pub fn format_instant(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[derive(Serialize)]
    struct Sample {
        zeta: u32,
        alpha: &'static str,
        at: DateTime<Utc>,
    }

    #[test]
    fn keys_sorted_and_compact() {
        let s = Sample {
            zeta: 1,
            alpha: "a",
            at: Utc.with_ymd_and_hms(2024, 6, 5, 10, 0, 0).unwrap(),
        };
        let text = to_canonical_string(&s).unwrap();
        assert_eq!(text, r#"{"alpha":"a","at":"2024-06-05T10:00:00Z","zeta":1}"#);
    }

    #[test]
    fn nested_maps_sorted() {
        let v = serde_json::json!({"b": {"y": 1, "x": 2}, "a": [3, {"d": 0, "c": 1}]});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"a":[3,{"c":1,"d":0}],"b":{"x":2,"y":1}}"#
        );
    }

    #[test]
    fn serde_instants_match_canonical_format() {
        for at in [
            Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
            Utc.timestamp_opt(1_700_000_000, 123_000_000).unwrap(),
            Utc.timestamp_opt(1_700_000_000, 1_000).unwrap(),
        ] {
            let json = serde_json::to_string(&at).unwrap();
            assert_eq!(json, format!("\"{}\"", format_instant(at)));
        }
        assert_eq!(
            format_instant(Utc.timestamp_opt(1_700_000_000, 123_000_000).unwrap()),
            "2023-11-14T22:13:20.123Z"
        );
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
