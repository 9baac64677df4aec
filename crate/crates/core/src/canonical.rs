//! Canonical JSON values and content-addressed digests.
//!
//! Every value that gets hashed, cached, or compared in this crate first
//! passes through [`canonicalize`]. The canonical form is JCS-flavoured:
//! object keys sorted by Unicode code point, numbers reduced to their
//! shortest ECMAScript round-trip form, strings NFC-normalized. The exact
//! byte format is documented in `docs/FORMATS.md` because digests of it are
//! embedded in cassette files.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use sha2::{Digest as _, Sha256};
use unicode_normalization::{is_nfc, UnicodeNormalization};

/// Largest integer magnitude exactly representable in an IEEE-754 double.
const MAX_SAFE_INTEGER: f64 = 9_007_199_254_740_992.0; // 2^53

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CanonError {
    /// NaN or an infinity reached the canonicalizer; such numbers have no
    /// canonical decimal form.
    #[error("non-finite number cannot be canonicalized")]
    NonFiniteNumber,
    #[error("invalid JSON: {0}")]
    Parse(String),
}

/// A JSON value in canonical form.
///
/// Construct via [`canonicalize`] or [`FromStr`]; the inner value is
/// guaranteed normalized, so equality of `CanonicalValue`s is equality of
/// JSON semantics and [`canonical_hash`] is stable across platforms.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalValue(Value);

impl CanonicalValue {
    pub fn as_value(&self) -> &Value {
        &self.0
    }

    pub fn into_value(self) -> Value {
        self.0
    }

    /// Serialize to the canonical byte form.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        write_canonical(&self.0, &mut out);
        out
    }

    /// Sub-values of a canonical value are themselves canonical.
    pub fn sub_value(&self, v: &Value) -> CanonicalValue {
        debug_assert!(contains_subtree(&self.0, v) || v.is_null());
        CanonicalValue(v.clone())
    }

    /// The empty JSON object, canonical by construction.
    pub fn empty_object() -> CanonicalValue {
        CanonicalValue(Value::Object(Map::new()))
    }
}

fn contains_subtree(haystack: &Value, needle: &Value) -> bool {
    if haystack == needle {
        return true;
    }
    match haystack {
        Value::Array(items) => items.iter().any(|i| contains_subtree(i, needle)),
        Value::Object(map) => map.values().any(|i| contains_subtree(i, needle)),
        _ => false,
    }
}

impl Deref for CanonicalValue {
    type Target = Value;

    fn deref(&self) -> &Value {
        &self.0
    }
}

impl fmt::Display for CanonicalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

impl Serialize for CanonicalValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CanonicalValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(deserializer)?;
        canonicalize(&raw).map_err(serde::de::Error::custom)
    }
}

impl FromStr for CanonicalValue {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self, CanonError> {
        let raw: Value = serde_json::from_str(s).map_err(|e| CanonError::Parse(e.to_string()))?;
        canonicalize(&raw)
    }
}

/// Normalize a JSON value into canonical form.
///
/// Idempotent: `canonicalize(canonicalize(v)) == canonicalize(v)`.
pub fn canonicalize(v: &Value) -> Result<CanonicalValue, CanonError> {
    Ok(CanonicalValue(canon_value(v)?))
}

fn canon_value(v: &Value) -> Result<Value, CanonError> {
    Ok(match v {
        Value::Null => Value::Null,
        Value::Bool(b) => Value::Bool(*b),
        Value::Number(n) => Value::Number(canon_number(n)?),
        Value::String(s) => Value::String(nfc(s)),
        Value::Array(items) => Value::Array(
            items
                .iter()
                .map(canon_value)
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Value::Object(map) => {
            let mut pairs: Vec<(String, Value)> = map
                .iter()
                .map(|(k, val)| Ok((nfc(k), canon_value(val)?)))
                .collect::<Result<Vec<_>, CanonError>>()?;
            // Code-point order; NFC can merge keys, in which case the last
            // occurrence wins (JSON duplicate-key convention).
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, val) in pairs {
                out.insert(k, val);
            }
            Value::Object(out)
        }
    })
}

/// All numbers round through an IEEE-754 double (I-JSON semantics), so
/// `1.0` and `1` normalize identically. Doubles with an integral value in
/// the safe range are stored as integers.
fn canon_number(n: &Number) -> Result<Number, CanonError> {
    let f = n.as_f64().ok_or(CanonError::NonFiniteNumber)?;
    number_from_f64(f)
}

/// Build a canonical JSON number from a double.
pub fn number_from_f64(f: f64) -> Result<Number, CanonError> {
    if !f.is_finite() {
        return Err(CanonError::NonFiniteNumber);
    }
    if f.trunc() == f && f.abs() <= MAX_SAFE_INTEGER {
        if f >= 0.0 {
            Ok(Number::from(f as u64))
        } else {
            Ok(Number::from(f as i64))
        }
    } else {
        Ok(Number::from_f64(f).expect("finite double"))
    }
}

/// Shortest round-trip decimal form of a canonical number, matching
/// ECMAScript `Number::toString`.
pub fn number_to_string(n: &Number) -> String {
    if let Some(u) = n.as_u64() {
        u.to_string()
    } else if let Some(i) = n.as_i64() {
        i.to_string()
    } else {
        let f = n.as_f64().expect("canonical numbers are finite");
        let mut buf = ryu_js::Buffer::new();
        buf.format_finite(f).to_owned()
    }
}

fn nfc(s: &str) -> String {
    if is_nfc(s) {
        s.to_owned()
    } else {
        s.nfc().collect()
    }
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Number(n) => out.push_str(&number_to_string(n)),
        Value::String(s) => write_json_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            // Sort explicitly rather than trusting map iteration order:
            // a `preserve_order` feature anywhere in the dependency graph
            // would otherwise change the byte format.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json_string(k, out);
                out.push(':');
                write_canonical(&map[k.as_str()], out);
            }
            out.push('}');
        }
    }
}

fn write_json_string(s: &str, out: &mut String) {
    // serde_json emits minimal escaping: `"`, `\`, and control characters
    // only, which is the canonical string form we document.
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// A 256-bit content digest rendered as 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Digest(String);

impl Digest {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 12 hex characters, for log lines and generated identifiers.
    pub fn short(&self) -> &str {
        &self.0[..12]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Digest {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(Digest(s))
        } else {
            Err(format!("not a 64-char lowercase hex digest: {s:?}"))
        }
    }
}

impl From<Digest> for String {
    fn from(d: Digest) -> String {
        d.0
    }
}

/// SHA-256 over the canonical serialization.
pub fn canonical_hash(v: &CanonicalValue) -> Digest {
    digest_bytes(v.to_canonical_string().as_bytes())
}

/// SHA-256 of raw bytes (used for artifact manifests).
pub fn digest_bytes(bytes: &[u8]) -> Digest {
    Digest(hex::encode(Sha256::digest(bytes)))
}

/// Canonicalize then hash in one step.
pub fn digest_of(v: &Value) -> Result<Digest, CanonError> {
    Ok(canonical_hash(&canonicalize(v)?))
}

/// Human-readable JSON kind name, used in validation reports.
pub fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
