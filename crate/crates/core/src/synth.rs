//! Back-chaining task synthesis and five-gate validation.
//!
//! Tasks are written *after* execution: the synthesizer selects a subset
//! of successful DAG nodes, phrases a user request around them, and binds
//! the ground-truth answer by extracting values from the recorded outputs.
//! Each answer field carries its extraction recipe (a JSON pointer into a
//! node output, or a declared derivation over other fields), so the label
//! can be re-derived mechanically at any time — label correctness is a
//! property of construction, and [`bind_answer`] is the check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::artifact::{read_artifact, write_artifact, ArtifactError};
use crate::canonical::{canonicalize, digest_of, number_from_f64, number_to_string, CanonicalValue};
use crate::explore::CallDag;
use crate::judge::{JudgeError, JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("DAG {0} has no nodes with usable (non-error) outputs")]
    NoUsableNodes(String),
    #[error(transparent)]
    Gateway(#[from] JudgeError),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BindError {
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("re-extracted answer disagrees with stored ground truth for field '{field}': {expected} != {actual}")]
    Mismatch {
        field: String,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty '{other}'")),
        }
    }
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

/// String post-processing applied to a path-extracted value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// Keep the leading 4-digit year of a date-like string.
    Year,
}

/// Arithmetic over already-extracted fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeriveOp {
    AbsDiff,
    Sum,
    Min,
    Max,
    /// Label (from `labels`) at the position of the smallest input.
    MinLabel,
    /// Label at the position of the largest input.
    MaxLabel,
}

/// How one answer field is produced from the source DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extraction {
    Path {
        node_id: u32,
        pointer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transform: Option<Transform>,
    },
    Derived {
        op: DeriveOp,
        inputs: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
}

/// A synthesized task with its bound ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub prompt: String,
    /// Flat object template: each value is the placeholder `{<key>}`.
    pub answer_schema: CanonicalValue,
    /// One sentence using the same placeholders.
    pub answer_template: String,
    pub difficulty: Difficulty,
    /// Ground-truth trajectory: node ids into the source DAG, in
    /// execution order.
    pub selected_nodes: Vec<u32>,
    /// Per-field extraction recipes.
    pub extractions: BTreeMap<String, Extraction>,
    /// Placeholder -> string value, extracted from selected node outputs.
    pub ground_truth: CanonicalValue,
    pub source_dag: String,
}

impl TaskRecord {
    pub fn schema_keys(&self) -> Vec<String> {
        self.answer_schema
            .as_value()
            .as_object()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }
}

/// Scan `{placeholder}` markers (`[A-Za-z0-9_]+` between braces).
pub fn scan_placeholders(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len()
                && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_')
            {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.insert(text[i + 1..j].to_owned());
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn scalar_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => number_to_string(n),
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".to_owned(),
        composite => {
            let canonical = canonicalize(composite).expect("node outputs are canonical");
            canonical.to_canonical_string()
        }
    }
}

fn apply_transform(t: Transform, value: &str) -> Result<String, BindError> {
    match t {
        Transform::Year => {
            let head: String = value.chars().take(4).collect();
            if head.len() == 4 && head.chars().all(|c| c.is_ascii_digit()) {
                Ok(head)
            } else {
                Err(BindError::ExtractionFailed(format!(
                    "'{value}' does not start with a 4-digit year"
                )))
            }
        }
    }
}

fn parse_numeric(field: &str, value: &str) -> Result<f64, BindError> {
    value.trim().parse::<f64>().map_err(|_| {
        BindError::ExtractionFailed(format!(
            "field '{field}' value '{value}' is not numeric"
        ))
    })
}

fn render_numeric(x: f64) -> Result<String, BindError> {
    let n = number_from_f64(x)
        .map_err(|e| BindError::ExtractionFailed(format!("derived value: {e}")))?;
    Ok(number_to_string(&n))
}

/// Evaluate every extraction against the DAG, resolving derived fields
/// after their inputs (cycles are reported as failures).
pub fn eval_extractions(
    extractions: &BTreeMap<String, Extraction>,
    dag: &CallDag,
) -> Result<BTreeMap<String, String>, BindError> {
    let mut resolved: BTreeMap<String, String> = BTreeMap::new();
    for (field, ex) in extractions {
        if let Extraction::Path {
            node_id,
            pointer,
            transform,
        } = ex
        {
            let node = dag.node(*node_id).ok_or_else(|| {
                BindError::ExtractionFailed(format!(
                    "field '{field}': node {node_id} is not in DAG {}",
                    dag.dag_id
                ))
            })?;
            if !node.output.is_success() {
                return Err(BindError::ExtractionFailed(format!(
                    "field '{field}': node {node_id} has an error output"
                )));
            }
            let value = node.output.value().pointer(pointer).ok_or_else(|| {
                BindError::ExtractionFailed(format!(
                    "field '{field}': pointer '{pointer}' missing in node {node_id} output"
                ))
            })?;
            let mut text = scalar_to_string(value);
            if let Some(t) = transform {
                text = apply_transform(*t, &text)?;
            }
            resolved.insert(field.clone(), text);
        }
    }
    // Derived fields may reference other derived fields; iterate until no
    // progress remains.
    loop {
        let mut progressed = false;
        let mut blocked: Option<String> = None;
        for (field, ex) in extractions {
            if resolved.contains_key(field) {
                continue;
            }
            let Extraction::Derived { op, inputs, labels } = ex else {
                continue;
            };
            if !inputs.iter().all(|i| resolved.contains_key(i)) {
                blocked = Some(field.clone());
                continue;
            }
            let numbers: Vec<f64> = inputs
                .iter()
                .map(|i| parse_numeric(i, &resolved[i]))
                .collect::<Result<_, _>>()?;
            if numbers.is_empty() {
                return Err(BindError::ExtractionFailed(format!(
                    "field '{field}': derivation has no inputs"
                )));
            }
            let text = match op {
                DeriveOp::AbsDiff => {
                    if numbers.len() != 2 {
                        return Err(BindError::ExtractionFailed(format!(
                            "field '{field}': abs_diff needs exactly 2 inputs"
                        )));
                    }
                    render_numeric((numbers[0] - numbers[1]).abs())?
                }
                DeriveOp::Sum => render_numeric(numbers.iter().sum())?,
                DeriveOp::Min => render_numeric(numbers.iter().cloned().fold(f64::INFINITY, f64::min))?,
                DeriveOp::Max => {
                    render_numeric(numbers.iter().cloned().fold(f64::NEG_INFINITY, f64::max))?
                }
                DeriveOp::MinLabel | DeriveOp::MaxLabel => {
                    if labels.len() != numbers.len() {
                        return Err(BindError::ExtractionFailed(format!(
                            "field '{field}': {} labels for {} inputs",
                            labels.len(),
                            numbers.len()
                        )));
                    }
                    let pick = |better: fn(f64, f64) -> bool| {
                        let mut idx = 0;
                        for (i, n) in numbers.iter().enumerate().skip(1) {
                            if better(*n, numbers[idx]) {
                                idx = i;
                            }
                        }
                        idx
                    };
                    let idx = match op {
                        DeriveOp::MinLabel => pick(|a, b| a < b),
                        _ => pick(|a, b| a > b),
                    };
                    labels[idx].clone()
                }
            };
            resolved.insert(field.clone(), text);
            progressed = true;
        }
        if resolved.len() == extractions.len() {
            return Ok(resolved);
        }
        if !progressed {
            return Err(BindError::ExtractionFailed(format!(
                "field '{}': unresolvable inputs (missing or cyclic)",
                blocked.unwrap_or_default()
            )));
        }
    }
}

fn truth_from_values(values: &BTreeMap<String, String>) -> CanonicalValue {
    let mut map = Map::new();
    for (k, v) in values {
        map.insert(k.clone(), Value::String(v.clone()));
    }
    canonicalize(&Value::Object(map)).expect("string map canonicalizes")
}

/// Re-extract the answer from the source DAG and require it to equal the
/// stored ground truth. This is the constructive label-correctness check.
pub fn bind_answer(task: &TaskRecord, dag: &CallDag) -> Result<CanonicalValue, BindError> {
    let values = eval_extractions(&task.extractions, dag)?;
    let rebound = truth_from_values(&values);
    if rebound != task.ground_truth {
        let stored = task.ground_truth.as_value().as_object();
        for (field, actual) in &values {
            let expected = stored
                .and_then(|m| m.get(field))
                .and_then(Value::as_str)
                .unwrap_or("<missing>");
            if expected != actual {
                return Err(BindError::Mismatch {
                    field: field.clone(),
                    expected: expected.to_owned(),
                    actual: actual.clone(),
                });
            }
        }
        return Err(BindError::Mismatch {
            field: "<key set>".to_owned(),
            expected: task.ground_truth.to_canonical_string(),
            actual: rebound.to_canonical_string(),
        });
    }
    Ok(rebound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecheckViolation {
    EmptyPrompt,
    SchemaNotObject,
    SchemaValueNotFlat { key: String },
    SchemaValueNotPlaceholder { key: String, value: String },
    PlaceholderSetMismatch {
        schema_only: Vec<String>,
        template_only: Vec<String>,
    },
    NoSelectedNodes,
    DuplicateSelectedNode { node_id: u32 },
    MissingExtraction { key: String },
    GroundTruthKeyMismatch,
    InvalidDifficulty { value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecheckReport {
    pub violations: Vec<PrecheckViolation>,
}

impl PrecheckReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks: flat schema whose values are `{key}` placeholders,
/// identical placeholder sets in schema and template, non-empty prompt and
/// node selection, one extraction per field, ground truth keyed exactly by
/// the schema.
pub fn structural_precheck(task: &TaskRecord) -> PrecheckReport {
    let mut report = PrecheckReport::default();
    if task.prompt.trim().is_empty() {
        report.violations.push(PrecheckViolation::EmptyPrompt);
    }
    let mut schema_keys: BTreeSet<String> = BTreeSet::new();
    match task.answer_schema.as_value().as_object() {
        None => report.violations.push(PrecheckViolation::SchemaNotObject),
        Some(map) => {
            for (key, value) in map {
                schema_keys.insert(key.clone());
                match value {
                    Value::String(s) => {
                        if s != &format!("{{{key}}}") {
                            report
                                .violations
                                .push(PrecheckViolation::SchemaValueNotPlaceholder {
                                    key: key.clone(),
                                    value: s.clone(),
                                });
                        }
                    }
                    // Nested objects/arrays/numbers: the schema must stay
                    // a flat string template.
                    _ => report
                        .violations
                        .push(PrecheckViolation::SchemaValueNotFlat { key: key.clone() }),
                }
            }
        }
    }
    let template_keys = scan_placeholders(&task.answer_template);
    if template_keys != schema_keys {
        report
            .violations
            .push(PrecheckViolation::PlaceholderSetMismatch {
                schema_only: schema_keys.difference(&template_keys).cloned().collect(),
                template_only: template_keys.difference(&schema_keys).cloned().collect(),
            });
    }
    if task.selected_nodes.is_empty() {
        report.violations.push(PrecheckViolation::NoSelectedNodes);
    }
    let mut seen = BTreeSet::new();
    for id in &task.selected_nodes {
        if !seen.insert(*id) {
            report
                .violations
                .push(PrecheckViolation::DuplicateSelectedNode { node_id: *id });
        }
    }
    for key in &schema_keys {
        if !task.extractions.contains_key(key) {
            report
                .violations
                .push(PrecheckViolation::MissingExtraction { key: key.clone() });
        }
    }
    let truth_keys: BTreeSet<String> = task
        .ground_truth
        .as_value()
        .as_object()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    if truth_keys != schema_keys {
        report
            .violations
            .push(PrecheckViolation::GroundTruthKeyMismatch);
    }
    report
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub tasks: Vec<TaskRecord>,
    /// (candidate index, reason) for candidates that failed intake.
    pub rejected: Vec<(usize, String)>,
}

/// Ask the synthesizer for up to `variants` candidates over one DAG and
/// keep those that survive parsing, precheck, and answer binding.
pub fn synthesize_tasks(
    dag: &CallDag,
    gateway: &JudgeGateway,
    variants: usize,
) -> Result<SynthOutcome, SynthError> {
    if dag.successful_nodes().next().is_none() {
        return Err(SynthError::NoUsableNodes(dag.dag_id.clone()));
    }
    let nodes_block: String = dag
        .nodes
        .iter()
        .map(|n| {
            format!(
                "node {}: tool={} status={} args={} output={}",
                n.node_id,
                n.tool.qualified(),
                if n.output.is_success() { "success" } else { "error" },
                n.args.to_canonical_string(),
                n.output.value().to_canonical_string()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let edges_block: String = dag
        .edges
        .iter()
        .map(|e| format!("{}->{}", e.parent, e.child))
        .collect::<Vec<_>>()
        .join(", ");
    let rendered = prompt::render(
        prompt::template_for(JudgeRole::TaskSynthesizer),
        &[
            ("dag_id", dag.dag_id.clone()),
            ("start_ref", dag.start_tool.qualified()),
            ("variants", variants.to_string()),
            ("nodes", nodes_block),
            ("edges", edges_block),
        ],
    );
    let resp = gateway.complete(&JudgeRequest::for_role(JudgeRole::TaskSynthesizer, rendered))?;
    let empty = Vec::new();
    let candidates = resp
        .value
        .get("tasks")
        .and_then(Value::as_array)
        .unwrap_or(&empty);

    let mut outcome = SynthOutcome {
        tasks: Vec::new(),
        rejected: Vec::new(),
    };
    for (index, raw) in candidates.iter().take(variants).enumerate() {
        match intake_candidate(dag, index, raw) {
            Ok(task) => outcome.tasks.push(task),
            Err(reason) => outcome.rejected.push((index, reason)),
        }
    }
    Ok(outcome)
}

fn intake_candidate(dag: &CallDag, index: usize, raw: &Value) -> Result<TaskRecord, String> {
    let prompt_text = raw
        .get("prompt")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_owned();
    let difficulty_raw = raw
        .get("difficulty")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let difficulty: Difficulty = difficulty_raw
        .parse()
        .map_err(|e: String| format!("candidate {index}: {e}"))?;
    let answer_template = raw
        .get("answer_template")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_owned();
    let selected_nodes: Vec<u32> = raw
        .get("selected_nodes")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).map(|n| n as u32).collect())
        .unwrap_or_default();
    let successful: BTreeSet<u32> = dag.successful_nodes().map(|n| n.node_id).collect();
    for id in &selected_nodes {
        if !successful.contains(id) {
            return Err(format!(
                "candidate {index}: selected node {id} is not a successful node of {}",
                dag.dag_id
            ));
        }
    }
    let mut extractions = BTreeMap::new();
    let mut schema_map = Map::new();
    for field in raw.get("fields").and_then(Value::as_array).into_iter().flatten() {
        let name = field
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        if name.is_empty() {
            return Err(format!("candidate {index}: field without a name"));
        }
        let extraction: Extraction =
            serde_json::from_value(field.get("extraction").cloned().unwrap_or(Value::Null))
                .map_err(|e| format!("candidate {index}: field '{name}': {e}"))?;
        if let Extraction::Path { node_id, .. } = &extraction {
            if !selected_nodes.contains(node_id) {
                return Err(format!(
                    "candidate {index}: field '{name}' extracts from node {node_id} outside the selected set"
                ));
            }
        }
        schema_map.insert(name.clone(), Value::String(format!("{{{name}}}")));
        extractions.insert(name, extraction);
    }
    let values = eval_extractions(&extractions, dag).map_err(|e| format!("candidate {index}: {e}"))?;
    let ground_truth = truth_from_values(&values);
    let answer_schema = canonicalize(&Value::Object(schema_map)).expect("schema canonicalizes");
    let task_id = format!(
        "task_{}",
        digest_of(&json!({"dag": dag.dag_id, "index": index, "prompt": prompt_text}))
            .expect("id fields canonicalize")
            .short()
    );
    let task = TaskRecord {
        task_id,
        prompt: prompt_text,
        answer_schema,
        answer_template,
        difficulty,
        selected_nodes,
        extractions,
        ground_truth,
        source_dag: dag.dag_id.clone(),
    };
    let report = structural_precheck(&task);
    if !report.is_clean() {
        return Err(format!(
            "candidate {index}: precheck violations: {:?}",
            report.violations
        ));
    }
    bind_answer(&task, dag).map_err(|e| format!("candidate {index}: {e}"))?;
    Ok(task)
}

/// The five-criterion verdict. `pass` is recomputed locally: all four
/// booleans true and realism >= 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub verifiable: bool,
    pub well_specified: bool,
    pub interpretable: bool,
    pub realism: u8,
    pub difficulty_calibrated: bool,
    pub pass: bool,
}

pub const REALISM_THRESHOLD: u8 = 5;

impl ValidationVerdict {
    pub fn from_parts(
        verifiable: bool,
        well_specified: bool,
        interpretable: bool,
        realism: u8,
        difficulty_calibrated: bool,
    ) -> ValidationVerdict {
        ValidationVerdict {
            verifiable,
            well_specified,
            interpretable,
            realism,
            difficulty_calibrated,
            pass: verifiable
                && well_specified
                && interpretable
                && realism >= REALISM_THRESHOLD
                && difficulty_calibrated,
        }
    }
}

/// Judge one task/trajectory pair through the `task_validator` role.
pub fn validate_task(
    task: &TaskRecord,
    dag: &CallDag,
    gateway: &JudgeGateway,
) -> Result<ValidationVerdict, JudgeError> {
    let trajectory: String = task
        .selected_nodes
        .iter()
        .filter_map(|id| dag.node(*id))
        .map(|n| {
            format!(
                "call {}: tool={} args={} output={}",
                n.node_id,
                n.tool.qualified(),
                n.args.to_canonical_string(),
                n.output.value().to_canonical_string()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let rendered = prompt::render(
        prompt::template_for(JudgeRole::TaskValidator),
        &[
            ("prompt", task.prompt.clone()),
            ("difficulty", task.difficulty.as_str().to_owned()),
            ("answer_schema", task.answer_schema.to_canonical_string()),
            ("answer_template", task.answer_template.clone()),
            ("ground_truth", task.ground_truth.to_canonical_string()),
            ("trajectory", trajectory),
        ],
    );
    let resp = gateway.complete(&JudgeRequest::for_role(JudgeRole::TaskValidator, rendered))?;
    let v = resp.value.as_value();
    let flag = |k: &str| v.get(k).and_then(Value::as_bool).unwrap_or(false);
    let realism = v.get("realism").and_then(Value::as_u64).unwrap_or(0) as u8;
    Ok(ValidationVerdict::from_parts(
        flag("verifiable"),
        flag("well_specified"),
        flag("interpretable"),
        realism,
        flag("difficulty_calibrated"),
    ))
}

/// One line of tasks.jsonl: the record plus its verdict once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLine {
    pub task: TaskRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ValidationVerdict>,
}

pub fn save_tasks(path: &Path, lines: &[TaskLine], extra: Value) -> Result<(), ArtifactError> {
    write_artifact(path, "tasks", extra, lines.iter())?;
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskLine>, ArtifactError> {
    let (_, lines) = read_artifact(path, "tasks")?;
    Ok(lines)
}
