//! The retrieval-augmented tool-call simulator.
//!
//! Every recorded call `(tool, args, output)` is indexed under the digest
//! of its canonical `(tool, args)` pair. An incoming call resolves through
//! three tiers:
//!
//! 1. exact — digest hit in the cassette or the generated overlay; the
//!    cached output is returned.
//! 2. fuzzy — same tool has recorded calls: the top-k most similar are
//!    retrieved (ground-truth trajectory calls for the current task
//!    first) and the fuzzy generator selects an existing output or
//!    produces a new one. The result is written through to the overlay, so
//!    the identical call replays at tier 1 afterwards.
//! 3. no_data — the tool has no recorded calls at all: a structured error
//!    payload is returned.
//!
//! With a stub gateway the whole simulator is bit-deterministic, and every
//! ground-truth trajectory call resolves at tier 1 by construction.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{read_artifact, write_artifact, ArtifactError};
use crate::canonical::{canonicalize, CanonicalValue, Digest};
use crate::explore::{call_digest, BackendError, CallDag, CallOutput, ToolBackend};
use crate::judge::{JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;
use crate::schema::{ToolRef, ToolSpec};
use crate::synth::TaskRecord;

/// One recorded call, the simulator's indexed unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub record_id: String,
    pub dag_id: String,
    pub node_id: u32,
    pub tool: ToolRef,
    pub args: CanonicalValue,
    pub output: CanonicalValue,
    /// Digest of (tool, args); recomputed and verified on load, optional
    /// in hand-written fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
}

impl ToolCallRecord {
    pub fn call_digest(&self) -> Digest {
        call_digest(&self.tool, &self.args)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub records: usize,
    pub duplicates_skipped: usize,
    pub error_nodes_skipped: usize,
    pub per_tool: BTreeMap<String, usize>,
}

/// Content-addressed index over all recorded calls.
#[derive(Debug, Clone, Default)]
pub struct CallIndex {
    records: Vec<ToolCallRecord>,
    exact: BTreeMap<String, usize>,
    by_tool: BTreeMap<ToolRef, Vec<usize>>,
    by_record_id: BTreeMap<String, usize>,
    tool_specs: BTreeMap<ToolRef, ToolSpec>,
    /// task_id -> ground-truth record ids, for fuzzy-tier prioritization.
    tasks: BTreeMap<String, Vec<String>>,
    pub top_k: usize,
}

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("record {record_id}: stored digest {stored} != computed {computed}")]
    DigestMismatch {
        record_id: String,
        stored: String,
        computed: String,
    },
}

impl CallIndex {
    pub fn new(top_k: usize) -> CallIndex {
        CallIndex {
            top_k: top_k.max(1),
            ..CallIndex::default()
        }
    }

    pub fn add_spec(&mut self, spec: ToolSpec) {
        self.tool_specs.insert(spec.tool_ref(), spec);
    }

    pub fn specs(&self) -> &BTreeMap<ToolRef, ToolSpec> {
        &self.tool_specs
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn record_by_id(&self, id: &str) -> Option<&ToolCallRecord> {
        self.by_record_id.get(id).map(|i| &self.records[*i])
    }

    /// All records in insertion order (dag_id, node_id).
    pub fn records(&self) -> impl Iterator<Item = &ToolCallRecord> {
        self.records.iter()
    }

    pub fn exact_lookup(&self, digest: &Digest) -> Option<&ToolCallRecord> {
        self.exact.get(digest.as_str()).map(|i| &self.records[*i])
    }

    pub fn records_for_tool(&self, tool: &ToolRef) -> Vec<&ToolCallRecord> {
        self.by_tool
            .get(tool)
            .map(|ids| ids.iter().map(|i| &self.records[*i]).collect())
            .unwrap_or_default()
    }

    /// Insert one record; the first occurrence of a (tool, args) digest
    /// wins, later duplicates are reported back as `false`.
    pub fn insert(&mut self, mut record: ToolCallRecord) -> Result<bool, CassetteError> {
        let computed = record.call_digest();
        if let Some(stored) = &record.digest {
            if stored != &computed {
                return Err(CassetteError::DigestMismatch {
                    record_id: record.record_id.clone(),
                    stored: stored.to_string(),
                    computed: computed.to_string(),
                });
            }
        }
        record.digest = Some(computed.clone());
        if self.exact.contains_key(computed.as_str()) {
            return Ok(false);
        }
        let idx = self.records.len();
        self.exact.insert(computed.as_str().to_owned(), idx);
        self.by_tool.entry(record.tool.clone()).or_default().push(idx);
        self.by_record_id.insert(record.record_id.clone(), idx);
        self.records.push(record);
        Ok(true)
    }

    /// Register ground-truth trajectories so the fuzzy tier can promote
    /// their records when resolving calls for that task.
    pub fn register_tasks<'a>(&mut self, tasks: impl IntoIterator<Item = &'a TaskRecord>) {
        for task in tasks {
            let ids: Vec<String> = task
                .selected_nodes
                .iter()
                .map(|n| format!("{}:{n}", task.source_dag))
                .collect();
            self.tasks.insert(task.task_id.clone(), ids);
        }
    }

    pub fn gt_record_ids(&self, task_id: &str) -> &[String] {
        self.tasks
            .get(task_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn stats(&self) -> IndexStats {
        let mut per_tool = BTreeMap::new();
        for (tool, ids) in &self.by_tool {
            per_tool.insert(tool.qualified(), ids.len());
        }
        IndexStats {
            records: self.records.len(),
            duplicates_skipped: 0,
            error_nodes_skipped: 0,
            per_tool,
        }
    }

    /// Top-k most similar recorded calls of the same tool, by descending
    /// path-token Jaccard similarity of the flattened arguments; ties
    /// break on (dag_id, node_id) ascending.
    pub fn rank_similar(
        &self,
        tool: &ToolRef,
        args: &CanonicalValue,
        k: usize,
    ) -> Vec<&ToolCallRecord> {
        let query = flatten_args(args.as_value());
        let mut scored: Vec<(Similarity, &ToolCallRecord)> = self
            .records_for_tool(tool)
            .into_iter()
            .map(|r| (jaccard(&query, &flatten_args(r.args.as_value())), r))
            .collect();
        scored.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| (&a.1.dag_id, a.1.node_id).cmp(&(&b.1.dag_id, b.1.node_id)))
        });
        scored.into_iter().take(k).map(|(_, r)| r).collect()
    }

    pub fn save_cassette(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut lines: Vec<Value> = Vec::new();
        for spec in self.tool_specs.values() {
            lines.push(json!({"kind": "tool_spec", "spec": spec}));
        }
        for record in &self.records {
            lines.push(json!({"kind": "call", "record": record}));
        }
        write_artifact(
            path,
            "cassette",
            json!({
                "digest_algorithm": "sha-256 over canonical JSON of {\"args\",\"tool\"} (docs/FORMATS.md)",
                "top_k": self.top_k,
                "records": self.records.len(),
                "tools": self.tool_specs.len(),
            }),
            lines,
        )?;
        Ok(())
    }

    pub fn load_cassette(path: &Path) -> Result<CallIndex, CassetteError> {
        let (header, lines): (_, Vec<Value>) = read_artifact(path, "cassette")?;
        let top_k = header
            .extra
            .get("top_k")
            .and_then(Value::as_u64)
            .unwrap_or(DEFAULT_TOP_K as u64) as usize;
        let mut index = CallIndex::new(top_k);
        for (i, line) in lines.into_iter().enumerate() {
            let bad = |message: String| {
                CassetteError::Artifact(ArtifactError::Malformed {
                    path: path.display().to_string(),
                    line: i + 2,
                    message,
                })
            };
            match line.get("kind").and_then(Value::as_str) {
                Some("tool_spec") => {
                    let spec: ToolSpec =
                        serde_json::from_value(line.get("spec").cloned().unwrap_or(Value::Null))
                            .map_err(|e| bad(e.to_string()))?;
                    index.add_spec(spec);
                }
                Some("call") => {
                    let record: ToolCallRecord =
                        serde_json::from_value(line.get("record").cloned().unwrap_or(Value::Null))
                            .map_err(|e| bad(e.to_string()))?;
                    index.insert(record)?;
                }
                other => return Err(bad(format!("unknown cassette line kind {other:?}"))),
            }
        }
        Ok(index)
    }
}

/// Build the index from a DAG corpus: every non-error node, first
/// occurrence of each (tool, args) digest wins, deterministic by
/// (dag_id, node_id).
pub fn build_index(
    dags: &[CallDag],
    specs: impl IntoIterator<Item = ToolSpec>,
    top_k: usize,
) -> Result<(CallIndex, IndexStats), CassetteError> {
    let mut index = CallIndex::new(top_k);
    for spec in specs {
        index.add_spec(spec);
    }
    let mut sorted: Vec<&CallDag> = dags.iter().collect();
    sorted.sort_by(|a, b| a.dag_id.cmp(&b.dag_id));
    let mut duplicates = 0;
    let mut errors = 0;
    for dag in sorted {
        for node in &dag.nodes {
            let output = match &node.output {
                CallOutput::Success(v) => v.clone(),
                CallOutput::Failure(_) => {
                    errors += 1;
                    continue;
                }
            };
            let inserted = index.insert(ToolCallRecord {
                record_id: format!("{}:{}", dag.dag_id, node.node_id),
                dag_id: dag.dag_id.clone(),
                node_id: node.node_id,
                tool: node.tool.clone(),
                args: node.args.clone(),
                output,
                digest: None,
            })?;
            if !inserted {
                duplicates += 1;
            }
        }
    }
    let mut stats = index.stats();
    stats.duplicates_skipped = duplicates;
    stats.error_nodes_skipped = errors;
    Ok((index, stats))
}

/// Flattened argument representation: the set of (JSON pointer, token)
/// pairs. String leaves contribute one pair per lowercase alphanumeric
/// word; other scalars contribute their canonical text.
pub fn flatten_args(v: &Value) -> std::collections::BTreeSet<(String, String)> {
    let mut out = std::collections::BTreeSet::new();
    flatten_into(v, String::new(), &mut out);
    out
}

fn flatten_into(
    v: &Value,
    path: String,
    out: &mut std::collections::BTreeSet<(String, String)>,
) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten_into(child, format!("{path}/{k}"), out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten_into(child, format!("{path}/{i}"), out);
            }
        }
        Value::String(s) => {
            let mut any = false;
            for token in s
                .to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
            {
                out.insert((path.clone(), token.to_owned()));
                any = true;
            }
            if !any {
                out.insert((path, String::new()));
            }
        }
        Value::Number(n) => {
            out.insert((path, crate::canonical::number_to_string(n)));
        }
        Value::Bool(b) => {
            out.insert((path, b.to_string()));
        }
        Value::Null => {
            out.insert((path, "null".to_owned()));
        }
    }
}

/// Exact rational similarity |A∩B| / |A∪B|; two empty sets count as
/// identical. Ordering uses cross-multiplication, no float comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Similarity {
    pub intersection: u64,
    pub union: u64,
}

impl Similarity {
    pub fn as_f64(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

impl Ord for Similarity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // a/b vs c/d  ==  a*d vs c*b; empty/empty is 1.0.
        let left = self.intersection as u128 * other.union.max(1) as u128
            + if self.union == 0 { other.union.max(1) as u128 } else { 0 };
        let right = other.intersection as u128 * self.union.max(1) as u128
            + if other.union == 0 { self.union.max(1) as u128 } else { 0 };
        left.cmp(&right)
    }
}

impl PartialOrd for Similarity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub fn jaccard(
    a: &std::collections::BTreeSet<(String, String)>,
    b: &std::collections::BTreeSet<(String, String)>,
) -> Similarity {
    let intersection = a.intersection(b).count() as u64;
    let union = a.union(b).count() as u64;
    Similarity {
        intersection,
        union,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Exact,
    Fuzzy,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimProvenance {
    /// Replayed or selected from a recorded call.
    Record { record_id: String },
    /// Output produced by the fuzzy generator.
    Generated,
    /// Fuzzy generation failed; the payload is a flagged error.
    GeneratedFlagged,
    /// No recorded calls exist for the tool.
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResponse {
    pub output: CanonicalValue,
    pub is_error: bool,
    pub tier: Tier,
    pub provenance: SimProvenance,
    pub digest: Digest,
}

/// Names the current task so ground-truth trajectory records are
/// prioritized during fuzzy retrieval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskContext {
    pub task_id: Option<String>,
}

impl TaskContext {
    pub fn for_task(task_id: impl Into<String>) -> TaskContext {
        TaskContext {
            task_id: Some(task_id.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierStats {
    pub exact: u64,
    pub fuzzy: u64,
    pub no_data: u64,
}

impl TierStats {
    pub fn total(&self) -> u64 {
        self.exact + self.fuzzy + self.no_data
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OverlayEntry {
    digest: Digest,
    tool: ToolRef,
    args: CanonicalValue,
    output: CanonicalValue,
    provenance: SimProvenance,
}

#[derive(Default)]
struct OverlayState {
    entries: BTreeMap<String, OverlayEntry>,
    in_flight: BTreeMap<String, Arc<Mutex<()>>>,
}

/// The running simulator: immutable index plus the write-through overlay
/// of generated responses.
pub struct Simulator {
    index: CallIndex,
    gateway: Option<Arc<JudgeGateway>>,
    overlay: Mutex<OverlayState>,
    overlay_path: Option<PathBuf>,
    exact_count: AtomicU64,
    fuzzy_count: AtomicU64,
    no_data_count: AtomicU64,
}

impl Simulator {
    pub fn new(index: CallIndex, gateway: Option<Arc<JudgeGateway>>) -> Simulator {
        Simulator {
            index,
            gateway,
            overlay: Mutex::new(OverlayState::default()),
            overlay_path: None,
            exact_count: AtomicU64::new(0),
            fuzzy_count: AtomicU64::new(0),
            no_data_count: AtomicU64::new(0),
        }
    }

    /// Persist generated responses to an append-only JSONL overlay;
    /// existing entries are loaded so replays stay exact across processes.
    pub fn with_overlay_file(mut self, path: PathBuf) -> Result<Simulator, CassetteError> {
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CassetteError::Artifact(ArtifactError::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            })?;
            let mut state = self.overlay.lock().unwrap();
            for (idx, line) in text.lines().enumerate() {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let entry: OverlayEntry = serde_json::from_str(trimmed).map_err(|e| {
                    CassetteError::Artifact(ArtifactError::Malformed {
                        path: path.display().to_string(),
                        line: idx + 1,
                        message: e.to_string(),
                    })
                })?;
                state
                    .entries
                    .insert(entry.digest.as_str().to_owned(), entry);
            }
        }
        self.overlay_path = Some(path);
        Ok(self)
    }

    pub fn index(&self) -> &CallIndex {
        &self.index
    }

    pub fn tier_stats(&self) -> TierStats {
        TierStats {
            exact: self.exact_count.load(Ordering::Relaxed),
            fuzzy: self.fuzzy_count.load(Ordering::Relaxed),
            no_data: self.no_data_count.load(Ordering::Relaxed),
        }
    }

    /// Resolve one call through the three tiers. Never fails: tier-3 and
    /// generation failures surface as structured error payloads.
    pub fn resolve(&self, ctx: &TaskContext, tool: &ToolRef, args: &CanonicalValue) -> SimResponse {
        let digest = call_digest(tool, args);

        // Tier 1: cassette, then overlay.
        if let Some(record) = self.index.exact_lookup(&digest) {
            self.exact_count.fetch_add(1, Ordering::Relaxed);
            return SimResponse {
                output: record.output.clone(),
                is_error: false,
                tier: Tier::Exact,
                provenance: SimProvenance::Record {
                    record_id: record.record_id.clone(),
                },
                digest,
            };
        }
        let flight = {
            let mut state = self.overlay.lock().unwrap();
            if let Some(entry) = state.entries.get(digest.as_str()) {
                self.exact_count.fetch_add(1, Ordering::Relaxed);
                return SimResponse {
                    output: entry.output.clone(),
                    is_error: false,
                    tier: Tier::Exact,
                    provenance: entry.provenance.clone(),
                    digest,
                };
            }
            state
                .in_flight
                .entry(digest.as_str().to_owned())
                .or_insert_with(|| Arc::new(Mutex::new(())))
                .clone()
        };

        // Tier 3: nothing recorded for this tool at all.
        let candidates = self.index.records_for_tool(tool);
        if candidates.is_empty() {
            self.no_data_count.fetch_add(1, Ordering::Relaxed);
            return SimResponse {
                output: no_data_payload(tool),
                is_error: true,
                tier: Tier::NoData,
                provenance: SimProvenance::NoData,
                digest,
            };
        }

        // Tier 2: serialize identical unseen calls so exactly one
        // generation happens per digest.
        let _one_generation = flight.lock().unwrap();
        {
            let state = self.overlay.lock().unwrap();
            if let Some(entry) = state.entries.get(digest.as_str()) {
                self.exact_count.fetch_add(1, Ordering::Relaxed);
                return SimResponse {
                    output: entry.output.clone(),
                    is_error: false,
                    tier: Tier::Exact,
                    provenance: entry.provenance.clone(),
                    digest,
                };
            }
        }
        self.fuzzy_count.fetch_add(1, Ordering::Relaxed);
        let (ranked, promoted) = self.promoted_ranking(ctx, tool, args);
        match self.generate(tool, args, &ranked, promoted) {
            Ok((output, provenance)) => {
                let entry = OverlayEntry {
                    digest: digest.clone(),
                    tool: tool.clone(),
                    args: args.clone(),
                    output: output.clone(),
                    provenance: provenance.clone(),
                };
                {
                    let mut state = self.overlay.lock().unwrap();
                    state
                        .entries
                        .insert(digest.as_str().to_owned(), entry.clone());
                }
                self.append_overlay(&entry);
                SimResponse {
                    output,
                    is_error: false,
                    tier: Tier::Fuzzy,
                    provenance,
                    digest,
                }
            }
            Err(message) => SimResponse {
                output: canonicalize(&json!({
                    "error": {
                        "code": "fuzzy_generation_failed",
                        "message": message,
                        "tool": tool.qualified(),
                    }
                }))
                .expect("error payload canonicalizes"),
                is_error: true,
                tier: Tier::Fuzzy,
                provenance: SimProvenance::GeneratedFlagged,
                digest,
            },
        }
    }

    /// Ranked candidates with ground-truth trajectory records for the
    /// current task promoted (stably) to the head of the list. The flag
    /// reports whether any promotion happened.
    fn promoted_ranking(
        &self,
        ctx: &TaskContext,
        tool: &ToolRef,
        args: &CanonicalValue,
    ) -> (Vec<&ToolCallRecord>, bool) {
        let ranked = self.index.rank_similar(tool, args, self.index.top_k);
        let Some(task_id) = &ctx.task_id else {
            return (ranked, false);
        };
        let gt: std::collections::BTreeSet<&str> = self
            .index
            .gt_record_ids(task_id)
            .iter()
            .map(String::as_str)
            .collect();
        if gt.is_empty() {
            return (ranked, false);
        }
        let (first, rest): (Vec<_>, Vec<_>) = ranked
            .into_iter()
            .partition(|r| gt.contains(r.record_id.as_str()));
        let promoted = !first.is_empty();
        (first.into_iter().chain(rest).collect(), promoted)
    }

    fn generate(
        &self,
        tool: &ToolRef,
        args: &CanonicalValue,
        ranked: &[&ToolCallRecord],
        promoted: bool,
    ) -> Result<(CanonicalValue, SimProvenance), String> {
        let gateway = self
            .gateway
            .as_ref()
            .ok_or_else(|| "no generation backend configured".to_owned())?;
        let spec = self.index.specs().get(tool);
        let candidates_block: String = ranked
            .iter()
            .enumerate()
            .map(|(i, r)| {
                format!(
                    "candidate {i} (record {}): args={} output={}",
                    r.record_id,
                    r.args.to_canonical_string(),
                    r.output.to_canonical_string()
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let gt_note = if promoted {
            "; ground-truth trajectory calls for the current task listed first"
        } else {
            ""
        };
        let rendered = prompt::render(
            prompt::template_for(JudgeRole::FuzzyGenerator),
            &[
                ("tool_ref", tool.qualified()),
                (
                    "description",
                    spec.map(|s| s.description.clone()).unwrap_or_default(),
                ),
                (
                    "schema",
                    spec.map(|s| s.input_schema.to_canonical_string())
                        .unwrap_or_else(|| "{}".to_owned()),
                ),
                ("args", args.to_canonical_string()),
                ("gt_note", gt_note.to_owned()),
                ("candidates", candidates_block),
            ],
        );
        let resp = gateway
            .complete(&JudgeRequest::for_role(JudgeRole::FuzzyGenerator, rendered))
            .map_err(|e| e.to_string())?;
        let output = resp
            .value
            .sub_value(resp.value.get("output").unwrap_or(&Value::Null));
        // The generator "selects an existing output or generates a new
        // one": selection is detected by comparison, not self-report.
        let provenance = ranked
            .iter()
            .find(|r| r.output == output)
            .map(|r| SimProvenance::Record {
                record_id: r.record_id.clone(),
            })
            .unwrap_or(SimProvenance::Generated);
        Ok((output, provenance))
    }

    fn append_overlay(&self, entry: &OverlayEntry) {
        let Some(path) = &self.overlay_path else {
            return;
        };
        let result = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{}", serde_json::to_string(entry).unwrap()));
        if let Err(e) = result {
            log::warn!("failed to persist overlay entry: {e}");
        }
    }
}

/// The documented tier-3 error payload.
pub fn no_data_payload(tool: &ToolRef) -> CanonicalValue {
    canonicalize(&json!({
        "error": {
            "code": "no_data",
            "message": format!(
                "no recorded calls exist for tool {}; this call was never observed in any ground-truth trajectory",
                tool.qualified()
            ),
            "tool": tool.qualified(),
        }
    }))
    .expect("error payload canonicalizes")
}

/// The simulator exposed through the [`ToolBackend`] seam, with a fixed
/// task context.
pub struct SimBackend {
    sim: Arc<Simulator>,
    ctx: TaskContext,
}

impl SimBackend {
    pub fn new(sim: Arc<Simulator>, ctx: TaskContext) -> SimBackend {
        SimBackend { sim, ctx }
    }
}

impl ToolBackend for SimBackend {
    fn list_tools(&self) -> Vec<ToolSpec> {
        self.sim.index.specs().values().cloned().collect()
    }

    fn call(&self, tool: &ToolRef, args: &CanonicalValue) -> Result<CallOutput, BackendError> {
        let resp = self.sim.resolve(&self.ctx, tool, args);
        Ok(if resp.is_error {
            CallOutput::Failure(resp.output)
        } else {
            CallOutput::Success(resp.output)
        })
    }
}

/// Replay-only backend over a recorded cassette: stands in for the live
/// servers during offline exploration. Exact matches replay; anything
/// unrecorded fails with a tool-level error payload.
pub struct CassetteBackend {
    index: CallIndex,
}

impl CassetteBackend {
    pub fn new(index: CallIndex) -> CassetteBackend {
        CassetteBackend { index }
    }

    pub fn load(path: &Path) -> Result<CassetteBackend, CassetteError> {
        Ok(CassetteBackend {
            index: CallIndex::load_cassette(path)?,
        })
    }
}

impl ToolBackend for CassetteBackend {
    fn list_tools(&self) -> Vec<ToolSpec> {
        self.index.specs().values().cloned().collect()
    }

    fn call(&self, tool: &ToolRef, args: &CanonicalValue) -> Result<CallOutput, BackendError> {
        let digest = call_digest(tool, args);
        match self.index.exact_lookup(&digest) {
            Some(record) => Ok(CallOutput::Success(record.output.clone())),
            None => Ok(CallOutput::Failure(
                canonicalize(&json!({
                    "error": {
                        "code": "not_recorded",
                        "message": format!(
                            "no recorded response for {} with these arguments",
                            tool.qualified()
                        ),
                    }
                }))
                .expect("error payload canonicalizes"),
            )),
        }
    }
}
