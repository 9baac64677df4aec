//! Tool identity and input-schema handling.
//!
//! Only the subset of JSON Schema that real MCP tools actually use is
//! enforced: `type`, `properties`, `required`, `items`, `enum`,
//! `minimum`/`maximum` and a boolean or schema-valued
//! `additionalProperties`. Unknown keywords are preserved verbatim in the
//! stored schema but never enforced.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonicalize, json_kind, CanonicalValue};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("malformed tool document: {0}")]
    MalformedSchema(String),
}

const SUPPORTED_TYPES: [&str; 7] = [
    "string", "number", "integer", "boolean", "array", "object", "null",
];

/// Identity of a tool: `(server_id, tool_name)` is unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ToolRef {
    pub server_id: String,
    pub tool_name: String,
}

impl ToolRef {
    pub fn new(server_id: impl Into<String>, tool_name: impl Into<String>) -> Self {
        ToolRef {
            server_id: server_id.into(),
            tool_name: tool_name.into(),
        }
    }

    /// `server_id/tool_name`, the form used in prompts and artifact files.
    pub fn qualified(&self) -> String {
        format!("{}/{}", self.server_id, self.tool_name)
    }

    pub fn parse_qualified(s: &str) -> Option<ToolRef> {
        let (server, tool) = s.split_once('/')?;
        if server.is_empty() || tool.is_empty() {
            return None;
        }
        Some(ToolRef::new(server, tool))
    }

    /// Flat name advertised over the MCP wire, where `/` is not allowed.
    /// Server ids may not contain `__` (enforced at parse time), so the
    /// mapping is reversible by splitting at the first occurrence.
    pub fn wire_name(&self) -> String {
        format!("{}__{}", self.server_id, self.tool_name)
    }

    pub fn parse_wire_name(s: &str) -> Option<ToolRef> {
        let (server, tool) = s.split_once("__")?;
        if server.is_empty() || tool.is_empty() {
            return None;
        }
        Some(ToolRef::new(server, tool))
    }
}

impl fmt::Display for ToolRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.server_id, self.tool_name)
    }
}

/// One tool: identity, free-text description, and its input schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub server_id: String,
    pub tool_name: String,
    pub description: String,
    pub input_schema: CanonicalValue,
}

impl ToolSpec {
    pub fn tool_ref(&self) -> ToolRef {
        ToolRef::new(self.server_id.clone(), self.tool_name.clone())
    }

    /// Declared parameters, in schema order of the sorted canonical form.
    pub fn params(&self) -> Vec<ParamSpec> {
        let props = match self.input_schema.get("properties").and_then(Value::as_object) {
            Some(p) => p,
            None => return Vec::new(),
        };
        let required: BTreeSet<&str> = self
            .input_schema
            .get("required")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        props
            .iter()
            .map(|(name, schema)| ParamSpec {
                name: name.clone(),
                type_keyword: schema
                    .get("type")
                    .and_then(Value::as_str)
                    .map(str::to_owned),
                description: schema
                    .get("description")
                    .and_then(Value::as_str)
                    .map(str::to_owned),
                required: required.contains(name.as_str()),
            })
            .collect()
    }

    /// Schema-clarity defects, as screened by the ingest stage: every
    /// parameter needs an explicit supported type and a non-empty
    /// description.
    pub fn clarity_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for p in self.params() {
            match &p.type_keyword {
                None => issues.push(format!("parameter '{}' has no declared type", p.name)),
                Some(t) if !SUPPORTED_TYPES.contains(&t.as_str()) => {
                    issues.push(format!("parameter '{}' has unsupported type '{t}'", p.name))
                }
                _ => {}
            }
            if p.description.as_deref().unwrap_or("").trim().is_empty() {
                issues.push(format!("parameter '{}' has no description", p.name));
            }
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub type_keyword: Option<String>,
    pub description: Option<String>,
    pub required: bool,
}

/// Parse and normalize a tool document:
/// `{"server_id", "tool_name", "description", "input_schema"}`.
pub fn parse_tool_spec(raw: &Value) -> Result<ToolSpec, SchemaError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| SchemaError::MalformedSchema("tool document must be an object".into()))?;
    let server_id = obj
        .get("server_id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_owned();
    if server_id.is_empty() {
        return Err(SchemaError::MalformedSchema("missing server_id".into()));
    }
    if server_id.contains("__") {
        return Err(SchemaError::MalformedSchema(format!(
            "server_id '{server_id}' may not contain '__' (reserved for wire names)"
        )));
    }
    let tool_name = obj
        .get("tool_name")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_owned();
    if tool_name.is_empty() {
        return Err(SchemaError::MalformedSchema("missing or empty tool_name".into()));
    }
    let description = obj
        .get("description")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_owned();
    let schema = obj
        .get("input_schema")
        .ok_or_else(|| SchemaError::MalformedSchema("missing input_schema".into()))?;
    if !schema.is_object() {
        return Err(SchemaError::MalformedSchema(format!(
            "input_schema must be an object, got {}",
            json_kind(schema)
        )));
    }
    check_type_keywords(schema, "input_schema")?;
    let input_schema = canonicalize(schema)
        .map_err(|e| SchemaError::MalformedSchema(format!("input_schema: {e}")))?;
    Ok(ToolSpec {
        server_id,
        tool_name,
        description,
        input_schema,
    })
}

/// Reject unsupported `type` keywords anywhere in a schema tree. A missing
/// `type` is tolerated here; strictness about that lives in screening.
fn check_type_keywords(schema: &Value, path: &str) -> Result<(), SchemaError> {
    let obj = match schema.as_object() {
        Some(o) => o,
        None => return Ok(()),
    };
    if let Some(t) = obj.get("type") {
        let name = t.as_str().unwrap_or("");
        if !SUPPORTED_TYPES.contains(&name) {
            return Err(SchemaError::MalformedSchema(format!(
                "unsupported type keyword {t} at {path}"
            )));
        }
    }
    if let Some(props) = obj.get("properties").and_then(Value::as_object) {
        for (k, v) in props {
            check_type_keywords(v, &format!("{path}/properties/{k}"))?;
        }
    }
    if let Some(items) = obj.get("items") {
        check_type_keywords(items, &format!("{path}/items"))?;
    }
    if let Some(ap) = obj.get("additionalProperties") {
        if ap.is_object() {
            check_type_keywords(ap, &format!("{path}/additionalProperties"))?;
        }
    }
    Ok(())
}

/// One defect found while validating a value against a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    MissingRequired { path: String, param: String },
    TypeMismatch { path: String, expected: String, found: String },
    UnexpectedParam { path: String, param: String },
    NotInEnum { path: String },
    OutOfRange { path: String, bound: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<SchemaViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn summary(&self) -> String {
        self.issues
            .iter()
            .map(|i| format!("{i:?}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Check call arguments against a tool's input schema.
pub fn validate_args(spec: &ToolSpec, args: &Value) -> ValidationReport {
    validate_value(spec.input_schema.as_value(), args)
}

/// Check any value against a subset schema.
pub fn validate_value(schema: &Value, value: &Value) -> ValidationReport {
    let mut report = ValidationReport::default();
    walk(schema, value, "", &mut report);
    report
}

fn walk(schema: &Value, value: &Value, path: &str, report: &mut ValidationReport) {
    let obj = match schema.as_object() {
        Some(o) => o,
        None => return,
    };

    if let Some(expected) = obj.get("type").and_then(Value::as_str) {
        if !type_matches(expected, value) {
            report.issues.push(SchemaViolation::TypeMismatch {
                path: path.to_owned(),
                expected: expected.to_owned(),
                found: json_kind(value).to_owned(),
            });
            return;
        }
    }

    if let Some(allowed) = obj.get("enum").and_then(Value::as_array) {
        if !allowed.iter().any(|a| a == value) {
            report.issues.push(SchemaViolation::NotInEnum {
                path: path.to_owned(),
            });
        }
    }

    if let Some(n) = value.as_f64() {
        if let Some(min) = obj.get("minimum").and_then(Value::as_f64) {
            if n < min {
                report.issues.push(SchemaViolation::OutOfRange {
                    path: path.to_owned(),
                    bound: format!("minimum {min}"),
                });
            }
        }
        if let Some(max) = obj.get("maximum").and_then(Value::as_f64) {
            if n > max {
                report.issues.push(SchemaViolation::OutOfRange {
                    path: path.to_owned(),
                    bound: format!("maximum {max}"),
                });
            }
        }
    }

    if let (Some(map), true) = (value.as_object(), obj.contains_key("properties") || obj.contains_key("required")) {
        let props = obj
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        if let Some(required) = obj.get("required").and_then(Value::as_array) {
            for name in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(name) {
                    report.issues.push(SchemaViolation::MissingRequired {
                        path: path.to_owned(),
                        param: name.to_owned(),
                    });
                }
            }
        }
        let additional = obj.get("additionalProperties");
        for (k, v) in map {
            let child_path = format!("{path}/{k}");
            if let Some(child_schema) = props.get(k) {
                walk(child_schema, v, &child_path, report);
            } else {
                match additional {
                    Some(Value::Bool(true)) => {}
                    Some(Value::Object(_)) => walk(additional.unwrap(), v, &child_path, report),
                    // Declared properties with no additionalProperties
                    // grant: anything undeclared is reported.
                    _ if !props.is_empty() => {
                        report.issues.push(SchemaViolation::UnexpectedParam {
                            path: path.to_owned(),
                            param: k.clone(),
                        })
                    }
                    _ => {}
                }
            }
        }
    }

    if let (Some(items), Some(arr)) = (obj.get("items"), value.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            walk(items, item, &format!("{path}/{i}"), report);
        }
    }
}

fn type_matches(expected: &str, value: &Value) -> bool {
    match expected {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value
            .as_f64()
            .map(|f| f.fract() == 0.0 && f.is_finite())
            .unwrap_or(false),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        "null" => value.is_null(),
        _ => true,
    }
}
