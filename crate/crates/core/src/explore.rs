//! Graph-guided DAG exploration.
//!
//! Starting from an eligible tool, the explorer agent is offered a sampled
//! successor frontier each round and responds with one action — fan_out
//! (independent parallel calls), sequential (one chained call), or fan_in
//! (one call combining several earlier outputs). Every node in the
//! resulting DAG was actually executed against the backend, so every
//! recorded state is reachable by construction. Exploration ends when the
//! call budget is exhausted or no successors remain.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{read_artifact, write_artifact, ArtifactError};
use crate::canonical::{canonical_hash, canonicalize, CanonicalValue, Digest};
use crate::graph::{Confidence, ToolGraph};
use crate::judge::{JudgeError, JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;
use crate::rng::StageRng;
use crate::schema::{validate_args, ToolRef, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("budget must be at least 1")]
    BudgetInvalid,
    #[error("start tool {0} is not an eligible start in the graph")]
    StartNotEligible(String),
    #[error("start tool {0} is not served by the backend")]
    StartNotServed(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("explorer agent returned an unusable action: {0}")]
    AgentAction(String),
    #[error(transparent)]
    Gateway(#[from] JudgeError),
}

/// Transport-level failure talking to a backend (distinct from a tool
/// returning an error payload).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Anything that can execute tool calls: a live MCP client or the replay
/// simulator. Implementations are interchangeable.
pub trait ToolBackend {
    fn list_tools(&self) -> Vec<ToolSpec>;
    fn call(&self, tool: &ToolRef, args: &CanonicalValue) -> Result<CallOutput, BackendError>;
}

/// Result of one executed call: the tool's output, or the error payload it
/// returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "body", rename_all = "snake_case")]
pub enum CallOutput {
    Success(CanonicalValue),
    Failure(CanonicalValue),
}

impl CallOutput {
    pub fn is_success(&self) -> bool {
        matches!(self, CallOutput::Success(_))
    }

    pub fn value(&self) -> &CanonicalValue {
        match self {
            CallOutput::Success(v) | CallOutput::Failure(v) => v,
        }
    }
}

/// One executed call: tool identity, arguments, and observed output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallNode {
    pub node_id: u32,
    pub tool: ToolRef,
    pub args: CanonicalValue,
    pub args_digest: Digest,
    pub output: CallOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagEdge {
    pub parent: u32,
    pub child: u32,
}

/// An executed exploration: nodes in execution order plus data-flow edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallDag {
    pub dag_id: String,
    pub start_tool: ToolRef,
    pub budget_used: u32,
    pub nodes: Vec<CallNode>,
    pub edges: Vec<DagEdge>,
}

impl CallDag {
    pub fn node(&self, id: u32) -> Option<&CallNode> {
        self.nodes.get(id as usize).filter(|n| n.node_id == id)
    }

    pub fn successful_nodes(&self) -> impl Iterator<Item = &CallNode> {
        self.nodes.iter().filter(|n| n.output.is_success())
    }
}

/// Digest identifying a call: tool ref plus canonical arguments. This is
/// the simulator's exact-match key, documented in `docs/FORMATS.md`.
pub fn call_digest(tool: &ToolRef, args: &CanonicalValue) -> Digest {
    let raw = json!({"args": args.as_value(), "tool": tool.qualified()});
    canonical_hash(&canonicalize(&raw).expect("canonical args re-canonicalize"))
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    pub dag_id: String,
    pub budget: u32,
    pub frontier_sample: usize,
    pub frontier_floor: Confidence,
    /// Re-prompts allowed when the agent's arguments fail schema checks.
    pub arg_retries: u32,
    pub agent_temperature: f64,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            dag_id: "dag".to_owned(),
            budget: 6,
            frontier_sample: 8,
            frontier_floor: Confidence::Medium,
            arg_retries: 2,
            agent_temperature: 0.0,
        }
    }
}

struct AgentCall {
    tool: ToolRef,
    args: CanonicalValue,
    parents: Vec<u32>,
}

struct AgentAction {
    kind: String,
    calls: Vec<AgentCall>,
}

/// Run one exploration from `start` until the budget is exhausted or no
/// successors remain. Failed calls are recorded with their error payloads
/// and never spawn successors.
pub fn explore(
    start: &ToolRef,
    options: &ExploreOptions,
    backend: &dyn ToolBackend,
    graph: &ToolGraph,
    gateway: &JudgeGateway,
    rng: &mut StageRng,
) -> Result<CallDag, ExploreError> {
    if options.budget < 1 {
        return Err(ExploreError::BudgetInvalid);
    }
    if !graph.eligible_start_tools().contains(start) {
        return Err(ExploreError::StartNotEligible(start.qualified()));
    }
    let specs: BTreeMap<ToolRef, ToolSpec> = backend
        .list_tools()
        .into_iter()
        .map(|t| (t.tool_ref(), t))
        .collect();
    let start_spec = specs
        .get(start)
        .ok_or_else(|| ExploreError::StartNotServed(start.qualified()))?;

    let mut dag = CallDag {
        dag_id: options.dag_id.clone(),
        start_tool: start.clone(),
        budget_used: 0,
        nodes: Vec::new(),
        edges: Vec::new(),
    };

    // Round 0: the agent picks arguments for the start tool.
    let opening = prompt::render(
        prompt::EXPLORER_START,
        &[
            ("start_ref", start.qualified()),
            ("start_description", start_spec.description.clone()),
            ("start_schema", start_spec.input_schema.to_canonical_string()),
            ("budget", options.budget.to_string()),
        ],
    );
    let action = ask_agent(gateway, opening, options)?;
    let first = action
        .calls
        .into_iter()
        .next()
        .ok_or_else(|| ExploreError::AgentAction("round 0 returned no calls".into()))?;
    if &first.tool != start {
        return Err(ExploreError::AgentAction(format!(
            "round 0 must call the start tool, got {}",
            first.tool.qualified()
        )));
    }
    let report = validate_args(start_spec, first.args.as_value());
    if !report.is_valid() {
        return Err(ExploreError::AgentAction(format!(
            "start args violate schema: {}",
            report.summary()
        )));
    }
    let output = backend
        .call(start, &first.args)
        .map_err(|e| ExploreError::BackendUnavailable(e.0))?;
    push_node(&mut dag, start.clone(), first.args, output, &[]);

    let mut round = 0u32;
    while dag.budget_used < options.budget {
        round += 1;
        let completed: BTreeSet<ToolRef> = dag
            .successful_nodes()
            .map(|n| n.tool.clone())
            .collect();
        if completed.is_empty() {
            break;
        }
        let frontier = graph.successor_frontier(
            &completed,
            options.frontier_floor,
            options.frontier_sample,
            rng,
        );
        if frontier.is_empty() {
            break;
        }
        let frontier_set: BTreeSet<&ToolRef> = frontier.iter().collect();
        let base_prompt = step_prompt(&dag, &frontier, &specs, start, options, round);

        let mut calls = None;
        let mut feedback = String::new();
        for _attempt in 0..=options.arg_retries {
            let rendered = format!("{base_prompt}{feedback}");
            let action = ask_agent(gateway, rendered, options)?;
            match check_action(&action, &dag, &frontier_set, &specs) {
                Ok(checked) => {
                    calls = Some(checked);
                    break;
                }
                Err(problem) => {
                    feedback = format!(
                        "\nPREVIOUS ATTEMPT REJECTED: {problem}. Fix the issue and respond again."
                    );
                }
            }
        }
        let calls = calls.ok_or_else(|| {
            ExploreError::AgentAction(format!("round {round}: {}", feedback.trim()))
        })?;

        let remaining = (options.budget - dag.budget_used) as usize;
        for call in calls.into_iter().take(remaining) {
            let output = match backend.call(&call.tool, &call.args) {
                Ok(out) => out,
                // Mid-exploration transport failures are recorded as error
                // payloads; only the opening call is fatal.
                Err(BackendError(msg)) => CallOutput::Failure(
                    canonicalize(&json!({
                        "error": {"code": "backend_unavailable", "message": msg}
                    }))
                    .expect("error payload canonicalizes"),
                ),
            };
            push_node(&mut dag, call.tool, call.args, output, &call.parents);
        }
    }

    Ok(dag)
}

fn push_node(
    dag: &mut CallDag,
    tool: ToolRef,
    args: CanonicalValue,
    output: CallOutput,
    parents: &[u32],
) {
    let node_id = dag.nodes.len() as u32;
    let args_digest = call_digest(&tool, &args);
    dag.nodes.push(CallNode {
        node_id,
        tool,
        args,
        args_digest,
        output,
    });
    for &parent in parents {
        dag.edges.push(DagEdge {
            parent,
            child: node_id,
        });
    }
    dag.budget_used += 1;
}

fn step_prompt(
    dag: &CallDag,
    frontier: &[ToolRef],
    specs: &BTreeMap<ToolRef, ToolSpec>,
    start: &ToolRef,
    options: &ExploreOptions,
    round: u32,
) -> String {
    const OUTPUT_EXCERPT: usize = 2000;
    let history: String = dag
        .nodes
        .iter()
        .map(|n| {
            let mut out = n.output.value().to_canonical_string();
            if out.len() > OUTPUT_EXCERPT {
                let cut = (0..=OUTPUT_EXCERPT).rev().find(|i| out.is_char_boundary(*i)).unwrap_or(0);
                out.truncate(cut);
                out.push_str("…(truncated)");
            }
            format!(
                "node {}: tool={} status={} args={} output={}",
                n.node_id,
                n.tool.qualified(),
                if n.output.is_success() { "success" } else { "error" },
                n.args.to_canonical_string(),
                out
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let frontier_block: String = frontier
        .iter()
        .map(|t| match specs.get(t) {
            Some(spec) => format!(
                "- {}: {} schema={}",
                t.qualified(),
                spec.description,
                spec.input_schema.to_canonical_string()
            ),
            None => format!("- {}: (spec unavailable)", t.qualified()),
        })
        .collect::<Vec<_>>()
        .join("\n");
    prompt::render(
        prompt::template_for(JudgeRole::ExplorerAgent),
        &[
            ("round", round.to_string()),
            ("start_ref", start.qualified()),
            ("remaining", (options.budget - dag.budget_used).to_string()),
            ("budget", options.budget.to_string()),
            ("history", history),
            ("frontier", frontier_block),
        ],
    )
}

fn ask_agent(
    gateway: &JudgeGateway,
    rendered: String,
    options: &ExploreOptions,
) -> Result<AgentAction, ExploreError> {
    let req = JudgeRequest::for_role(JudgeRole::ExplorerAgent, rendered)
        .with_temperature(options.agent_temperature);
    let resp = gateway.complete(&req)?;
    let v = resp.value.as_value();
    let kind = v
        .get("action")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_owned();
    let mut calls = Vec::new();
    for raw in v.get("calls").and_then(Value::as_array).into_iter().flatten() {
        let tool = raw
            .get("tool")
            .and_then(Value::as_str)
            .and_then(ToolRef::parse_qualified)
            .ok_or_else(|| {
                ExploreError::AgentAction(format!("call without a valid tool ref: {raw}"))
            })?;
        let args = resp
            .value
            .sub_value(raw.get("args").unwrap_or(&Value::Null));
        let args = if args.is_null() {
            CanonicalValue::empty_object()
        } else {
            args
        };
        let parents: Vec<u32> = raw
            .get("parents")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_u64)
                    .map(|n| n as u32)
                    .collect()
            })
            .unwrap_or_default();
        calls.push(AgentCall {
            tool,
            args,
            parents,
        });
    }
    Ok(AgentAction { kind, calls })
}

/// Structural checks on an agent action before any call executes. Returns
/// a human-readable problem description used as re-prompt feedback.
fn check_action(
    action: &AgentAction,
    dag: &CallDag,
    frontier: &BTreeSet<&ToolRef>,
    specs: &BTreeMap<ToolRef, ToolSpec>,
) -> Result<Vec<AgentCall>, String> {
    match action.kind.as_str() {
        "fan_out" => {
            if action.calls.is_empty() {
                return Err("fan_out needs at least one call".into());
            }
        }
        "sequential" => {
            if action.calls.len() != 1 {
                return Err("sequential must contain exactly one call".into());
            }
        }
        "fan_in" => {
            if action.calls.len() != 1 {
                return Err("fan_in must contain exactly one call".into());
            }
            if action.calls[0].parents.len() < 2 {
                return Err("fan_in must list at least two parent node ids".into());
            }
        }
        other => return Err(format!("unknown action '{other}'")),
    }
    let successful: BTreeSet<u32> = dag.successful_nodes().map(|n| n.node_id).collect();
    for call in &action.calls {
        if !frontier.contains(&call.tool) {
            return Err(format!(
                "tool {} is not in this round's frontier",
                call.tool.qualified()
            ));
        }
        for p in &call.parents {
            if !successful.contains(p) {
                return Err(format!(
                    "parent {p} is not a successfully completed node"
                ));
            }
        }
        let spec = specs
            .get(&call.tool)
            .ok_or_else(|| format!("no schema known for {}", call.tool.qualified()))?;
        let report = validate_args(spec, call.args.as_value());
        if !report.is_valid() {
            return Err(format!(
                "args for {} violate its schema: {}",
                call.tool.qualified(),
                report.summary()
            ));
        }
    }
    // Moving the calls out keeps the borrow checker happy without cloning
    // canonical args.
    Ok(action
        .calls
        .iter()
        .map(|c| AgentCall {
            tool: c.tool.clone(),
            args: c.args.clone(),
            parents: c.parents.clone(),
        })
        .collect())
}

/// One defect found in a DAG's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DagIssue {
    NodeIdNotSequential { node_id: u32, position: u32 },
    EdgeOutOfRange { parent: u32, child: u32 },
    EdgeNotForward { parent: u32, child: u32 },
    BudgetMismatch { budget_used: u32, nodes: u32 },
    UnknownTool { node_id: u32, tool: String },
    ArgsInvalid { node_id: u32, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DagReport {
    pub issues: Vec<DagIssue>,
}

impl DagReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Check acyclicity (edges strictly forward), node-id ordering, budget
/// accounting, and per-node args validity against the given specs.
pub fn validate_dag(dag: &CallDag, specs: &BTreeMap<ToolRef, ToolSpec>) -> DagReport {
    let mut report = DagReport::default();
    for (pos, node) in dag.nodes.iter().enumerate() {
        if node.node_id != pos as u32 {
            report.issues.push(DagIssue::NodeIdNotSequential {
                node_id: node.node_id,
                position: pos as u32,
            });
        }
    }
    let n = dag.nodes.len() as u32;
    for edge in &dag.edges {
        if edge.parent >= n || edge.child >= n {
            report.issues.push(DagIssue::EdgeOutOfRange {
                parent: edge.parent,
                child: edge.child,
            });
        } else if edge.parent >= edge.child {
            // Execution order respects data flow, which also guarantees
            // acyclicity.
            report.issues.push(DagIssue::EdgeNotForward {
                parent: edge.parent,
                child: edge.child,
            });
        }
    }
    if dag.budget_used != n {
        report.issues.push(DagIssue::BudgetMismatch {
            budget_used: dag.budget_used,
            nodes: n,
        });
    }
    for node in &dag.nodes {
        match specs.get(&node.tool) {
            None => report.issues.push(DagIssue::UnknownTool {
                node_id: node.node_id,
                tool: node.tool.qualified(),
            }),
            Some(spec) => {
                let args_report = validate_args(spec, node.args.as_value());
                if !args_report.is_valid() {
                    report.issues.push(DagIssue::ArgsInvalid {
                        node_id: node.node_id,
                        detail: args_report.summary(),
                    });
                }
            }
        }
    }
    report
}

pub fn save_dags(path: &Path, dags: &[CallDag]) -> Result<(), ArtifactError> {
    write_artifact(path, "call_dags", json!({"count": dags.len()}), dags.iter())?;
    Ok(())
}

pub fn load_dags(path: &Path) -> Result<Vec<CallDag>, ArtifactError> {
    let (_, dags) = read_artifact(path, "call_dags")?;
    Ok(dags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphEdge;
    use crate::judge::{stub_ruleset_load, JudgeGateway};
    use crate::rng::stage_rng;
    use crate::schema::parse_tool_spec;
    use std::io::Write;

    fn spec(server: &str, name: &str, param: &str) -> ToolSpec {
        parse_tool_spec(&json!({
            "server_id": server,
            "tool_name": name,
            "description": format!("{name} tool"),
            "input_schema": {
                "type": "object",
                "properties": {param: {"type": "string", "description": "input"}},
                "required": [param]
            }
        }))
        .unwrap()
    }

    /// Backend that answers every call with a deterministic echo payload.
    struct EchoBackend {
        specs: Vec<ToolSpec>,
        fail_tools: BTreeSet<String>,
    }

    impl ToolBackend for EchoBackend {
        fn list_tools(&self) -> Vec<ToolSpec> {
            self.specs.clone()
        }

        fn call(&self, tool: &ToolRef, args: &CanonicalValue) -> Result<CallOutput, BackendError> {
            if self.fail_tools.contains(&tool.qualified()) {
                return Ok(CallOutput::Failure(
                    canonicalize(&json!({"error": {"code": "boom"}})).unwrap(),
                ));
            }
            Ok(CallOutput::Success(
                canonicalize(&json!({"tool": tool.qualified(), "echo": args.as_value()})).unwrap(),
            ))
        }
    }

    fn graph_for(a: &ToolSpec, b: &ToolSpec, c: &ToolSpec) -> ToolGraph {
        let mut g = ToolGraph::default();
        g.add_edge(GraphEdge {
            src: a.tool_ref(),
            dst: b.tool_ref(),
            confidence: Confidence::High,
        });
        g.add_edge(GraphEdge {
            src: a.tool_ref(),
            dst: c.tool_ref(),
            confidence: Confidence::High,
        });
        g
    }

    fn gateway(rules: &[String]) -> JudgeGateway {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for r in rules {
            writeln!(file, "{r}").unwrap();
        }
        JudgeGateway::stub(stub_ruleset_load(file.path()).unwrap())
    }

    fn start_rule(tool: &str, args: &str) -> String {
        format!(
            r#"{{"role":"explorer_agent","contains":["ROUND: 0","START TOOL: {tool}"],"response":{{"action":"sequential","calls":[{{"tool":"{tool}","args":{args}}}]}}}}"#
        )
    }

    fn step_rule(round: u32, start: &str, action: &str, calls: &str) -> String {
        format!(
            r#"{{"role":"explorer_agent","contains":["ROUND: {round}","START TOOL: {start}"],"response":{{"action":"{action}","calls":{calls}}}}}"#
        )
    }

    #[test]
    fn budget_one_yields_single_node() {
        let a = spec("s", "alpha", "q");
        let b = spec("s", "beta", "q");
        let c = spec("s", "gamma", "q");
        let backend = EchoBackend {
            specs: vec![a.clone(), b, c.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = graph_for(&a, &backend.specs[1], &c);
        let gw = gateway(&[start_rule("s/alpha", r#"{"q":"hello"}"#)]);
        let options = ExploreOptions {
            budget: 1,
            ..ExploreOptions::default()
        };
        let mut rng = stage_rng(3, "t");
        let dag = explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng).unwrap();
        assert_eq!(dag.nodes.len(), 1);
        assert_eq!(dag.budget_used, 1);
        assert_eq!(dag.nodes[0].tool, a.tool_ref());
        assert!(dag.edges.is_empty());
        assert!(validate_dag(&dag, &backend.specs.iter().map(|s| (s.tool_ref(), s.clone())).collect()).is_clean());
    }

    #[test]
    fn zero_budget_rejected() {
        let a = spec("s", "alpha", "q");
        let backend = EchoBackend {
            specs: vec![a.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = ToolGraph::default();
        let gw = gateway(&[]);
        let options = ExploreOptions {
            budget: 0,
            ..ExploreOptions::default()
        };
        let mut rng = stage_rng(3, "t");
        assert!(matches!(
            explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng),
            Err(ExploreError::BudgetInvalid)
        ));
    }

    #[test]
    fn fan_out_then_halt_when_budget_exhausted() {
        let a = spec("s", "alpha", "q");
        let b = spec("s", "beta", "q");
        let c = spec("s", "gamma", "q");
        let backend = EchoBackend {
            specs: vec![a.clone(), b.clone(), c.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = graph_for(&a, &b, &c);
        let gw = gateway(&[
            start_rule("s/alpha", r#"{"q":"first"}"#),
            step_rule(
                1,
                "s/alpha",
                "fan_out",
                r#"[{"tool":"s/beta","args":{"q":"left"},"parents":[0]},{"tool":"s/gamma","args":{"q":"right"},"parents":[0]}]"#,
            ),
        ]);
        let options = ExploreOptions {
            budget: 3,
            ..ExploreOptions::default()
        };
        let mut rng = stage_rng(3, "t");
        let dag = explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng).unwrap();
        assert_eq!(dag.nodes.len(), 3);
        assert_eq!(
            dag.edges,
            vec![DagEdge { parent: 0, child: 1 }, DagEdge { parent: 0, child: 2 }]
        );
    }

    #[test]
    fn halts_when_frontier_empty() {
        // beta/gamma have no successors, so after round 1 the frontier of
        // completed tools is just alpha's successors; once both are used
        // the agent re-calls are still offered, so instead make the start
        // call fail: no completed nodes => immediate halt.
        let a = spec("s", "alpha", "q");
        let b = spec("s", "beta", "q");
        let c = spec("s", "gamma", "q");
        let backend = EchoBackend {
            specs: vec![a.clone(), b.clone(), c.clone()],
            fail_tools: [a.tool_ref().qualified()].into_iter().collect(),
        };
        let graph = graph_for(&a, &b, &c);
        let gw = gateway(&[start_rule("s/alpha", r#"{"q":"first"}"#)]);
        let options = ExploreOptions {
            budget: 4,
            ..ExploreOptions::default()
        };
        let mut rng = stage_rng(3, "t");
        let dag = explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng).unwrap();
        assert_eq!(dag.nodes.len(), 1);
        assert!(!dag.nodes[0].output.is_success());
        assert!(dag.budget_used < options.budget);
    }

    #[test]
    fn ineligible_start_rejected() {
        let a = spec("s", "alpha", "q");
        let backend = EchoBackend {
            specs: vec![a.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = ToolGraph::default();
        let gw = gateway(&[]);
        let mut rng = stage_rng(3, "t");
        assert!(matches!(
            explore(&a.tool_ref(), &ExploreOptions::default(), &backend, &graph, &gw, &mut rng),
            Err(ExploreError::StartNotEligible(_))
        ));
    }

    #[test]
    fn agent_args_get_feedback_retry() {
        let a = spec("s", "alpha", "q");
        let b = spec("s", "beta", "q");
        let c = spec("s", "gamma", "q");
        let backend = EchoBackend {
            specs: vec![a.clone(), b.clone(), c.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = graph_for(&a, &b, &c);
        // First attempt violates beta's schema; the re-prompt (which
        // contains the rejection marker) supplies good args.
        let gw = gateway(&[
            start_rule("s/alpha", r#"{"q":"first"}"#),
            r#"{"role":"explorer_agent","contains":["ROUND: 1","PREVIOUS ATTEMPT REJECTED"],"response":{"action":"sequential","calls":[{"tool":"s/beta","args":{"q":"fixed"},"parents":[0]}]}}"#.to_owned(),
            step_rule(
                1,
                "s/alpha",
                "sequential",
                r#"[{"tool":"s/beta","args":{"q":42},"parents":[0]}]"#,
            ),
        ]);
        let options = ExploreOptions {
            budget: 2,
            ..ExploreOptions::default()
        };
        let mut rng = stage_rng(3, "t");
        let dag = explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng).unwrap();
        assert_eq!(dag.nodes.len(), 2);
        assert_eq!(dag.nodes[1].args.as_value()["q"], json!("fixed"));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = spec("s", "alpha", "q");
        let b = spec("s", "beta", "q");
        let c = spec("s", "gamma", "q");
        let backend = EchoBackend {
            specs: vec![a.clone(), b.clone(), c.clone()],
            fail_tools: BTreeSet::new(),
        };
        let graph = graph_for(&a, &b, &c);
        let rules = [
            start_rule("s/alpha", r#"{"q":"first"}"#),
            step_rule(
                1,
                "s/alpha",
                "sequential",
                r#"[{"tool":"s/beta","args":{"q":"x"},"parents":[0]}]"#,
            ),
            step_rule(
                2,
                "s/alpha",
                "fan_in",
                r#"[{"tool":"s/gamma","args":{"q":"y"},"parents":[0,1]}]"#,
            ),
        ];
        let options = ExploreOptions {
            budget: 3,
            ..ExploreOptions::default()
        };
        let run = |seed: u64| {
            let gw = gateway(&rules);
            let mut rng = stage_rng(seed, "t");
            explore(&a.tool_ref(), &options, &backend, &graph, &gw, &mut rng).unwrap()
        };
        let one = run(11);
        let two = run(11);
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&two).unwrap()
        );
        assert_eq!(one.edges.len(), 3);
    }

    #[test]
    fn validate_dag_flags_structural_problems() {
        let a = spec("s", "alpha", "q");
        let args = canonicalize(&json!({"q": "x"})).unwrap();
        let node = |id: u32| CallNode {
            node_id: id,
            tool: a.tool_ref(),
            args: args.clone(),
            args_digest: call_digest(&a.tool_ref(), &args),
            output: CallOutput::Success(canonicalize(&json!({"ok": true})).unwrap()),
        };
        let specs: BTreeMap<ToolRef, ToolSpec> = [(a.tool_ref(), a.clone())].into();

        let clean = CallDag {
            dag_id: "d".into(),
            start_tool: a.tool_ref(),
            budget_used: 2,
            nodes: vec![node(0), node(1)],
            edges: vec![DagEdge { parent: 0, child: 1 }],
        };
        assert!(validate_dag(&clean, &specs).is_clean());

        let backwards = CallDag {
            edges: vec![DagEdge { parent: 3, child: 1 }],
            ..clean.clone()
        };
        let report = validate_dag(&backwards, &specs);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, DagIssue::EdgeOutOfRange { parent: 3, child: 1 })));

        let bad_args = CallDag {
            nodes: vec![
                node(0),
                CallNode {
                    node_id: 1,
                    tool: a.tool_ref(),
                    args: canonicalize(&json!({"q": 7})).unwrap(),
                    args_digest: call_digest(&a.tool_ref(), &args),
                    output: CallOutput::Success(canonicalize(&json!({})).unwrap()),
                },
            ],
            edges: vec![],
            ..clean.clone()
        };
        let report = validate_dag(&bad_args, &specs);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, DagIssue::ArgsInvalid { node_id: 1, .. })));
    }

    #[test]
    fn dags_artifact_round_trips() {
        let a = spec("s", "alpha", "q");
        let args = canonicalize(&json!({"q": "x"})).unwrap();
        let dag = CallDag {
            dag_id: "d1".into(),
            start_tool: a.tool_ref(),
            budget_used: 1,
            nodes: vec![CallNode {
                node_id: 0,
                tool: a.tool_ref(),
                args: args.clone(),
                args_digest: call_digest(&a.tool_ref(), &args),
                output: CallOutput::Failure(canonicalize(&json!({"error": {"code": "x"}})).unwrap()),
            }],
            edges: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dags.jsonl");
        save_dags(&path, std::slice::from_ref(&dag)).unwrap();
        assert_eq!(load_dags(&path).unwrap(), vec![dag]);
    }

    #[test]
    fn call_digest_matches_across_arg_spellings() {
        let t = ToolRef::new("s", "alpha");
        let a = canonicalize(&serde_json::from_str(r#"{"x":1,"y":2}"#).unwrap()).unwrap();
        let b = canonicalize(&serde_json::from_str(r#"{ "y" : 2.0, "x" : 1 }"#).unwrap()).unwrap();
        assert_eq!(call_digest(&t, &a), call_digest(&t, &b));
    }
}
