//! The directed tool-compatibility graph.
//!
//! Nodes are all retained tools across all servers; an edge `src -> dst`
//! means the judge decided src's output can be transformed into or used as
//! input to dst, tagged with a confidence level. Self-edges are allowed
//! and mean one result can seed another call to the same tool. Both
//! intra-server and cross-server edges occur.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{read_artifact, write_artifact, ArtifactError};
use crate::canonical::CanonicalValue;
use crate::judge::{JudgeError, JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;
use crate::rng::StageRng;
use crate::schema::{ToolRef, ToolSpec};

/// Edge confidence, ordered `low < medium < high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Confidence::Low => "low",
            Confidence::Medium => "medium",
            Confidence::High => "high",
        }
    }
}

impl std::str::FromStr for Confidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low" => Ok(Confidence::Low),
            "medium" => Ok(Confidence::Medium),
            "high" => Ok(Confidence::High),
            other => Err(format!("unknown confidence '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEdge {
    pub src: ToolRef,
    pub dst: ToolRef,
    pub confidence: Confidence,
}

/// Compact serialized form: tool refs as `server/tool` strings.
#[derive(Serialize, Deserialize)]
struct EdgeLine {
    src: String,
    dst: String,
    confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub mean_out_degree: f64,
    pub medium_or_higher: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolGraph {
    nodes: BTreeSet<ToolRef>,
    adjacency: BTreeMap<ToolRef, Vec<GraphEdge>>,
}

impl ToolGraph {
    pub fn new(nodes: impl IntoIterator<Item = ToolRef>) -> ToolGraph {
        ToolGraph {
            nodes: nodes.into_iter().collect(),
            adjacency: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ToolRef> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum()
    }

    pub fn contains(&self, tool: &ToolRef) -> bool {
        self.nodes.contains(tool)
    }

    pub fn add_edge(&mut self, edge: GraphEdge) {
        self.nodes.insert(edge.src.clone());
        self.nodes.insert(edge.dst.clone());
        let list = self.adjacency.entry(edge.src.clone()).or_default();
        // One judged verdict per ordered pair; keep the list sorted by dst
        // for deterministic iteration.
        if let Some(existing) = list.iter_mut().find(|e| e.dst == edge.dst) {
            existing.confidence = edge.confidence;
        } else {
            list.push(edge);
            list.sort_by(|a, b| a.dst.cmp(&b.dst));
        }
    }

    pub fn successors(&self, tool: &ToolRef) -> &[GraphEdge] {
        self.adjacency.get(tool).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_degree(&self, tool: &ToolRef) -> usize {
        self.successors(tool).len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.adjacency.values().flatten()
    }

    pub fn stats(&self) -> GraphStats {
        let nodes = self.node_count();
        let edges = self.edge_count();
        GraphStats {
            nodes,
            edges,
            mean_out_degree: if nodes == 0 {
                0.0
            } else {
                edges as f64 / nodes as f64
            },
            medium_or_higher: self
                .edges()
                .filter(|e| e.confidence >= Confidence::Medium)
                .count(),
        }
    }

    /// Tools eligible to start an exploration: at least two distinct
    /// high-confidence successors, so fan-out is possible. Sorted.
    pub fn eligible_start_tools(&self) -> Vec<ToolRef> {
        self.nodes
            .iter()
            .filter(|n| {
                let highs: BTreeSet<&ToolRef> = self
                    .successors(n)
                    .iter()
                    .filter(|e| e.confidence == Confidence::High)
                    .map(|e| &e.dst)
                    .collect();
                highs.len() >= 2
            })
            .cloned()
            .collect()
    }

    /// Uniform sample (without replacement) from the union of successors
    /// of all completed nodes at or above the confidence floor. Returns
    /// `min(sample_size, candidates)` tools in seed-determined order.
    pub fn successor_frontier(
        &self,
        completed: &BTreeSet<ToolRef>,
        floor: Confidence,
        sample_size: usize,
        rng: &mut StageRng,
    ) -> Vec<ToolRef> {
        let candidates: BTreeSet<ToolRef> = completed
            .iter()
            .flat_map(|n| self.successors(n))
            .filter(|e| e.confidence >= floor)
            .map(|e| e.dst.clone())
            .collect();
        let pool: Vec<ToolRef> = candidates.into_iter().collect();
        if pool.is_empty() || sample_size == 0 {
            return Vec::new();
        }
        let amount = sample_size.min(pool.len());
        rand::seq::index::sample(rng, pool.len(), amount)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        let nodes: Vec<String> = self.nodes.iter().map(ToolRef::qualified).collect();
        let stats = self.stats();
        let edges: Vec<EdgeLine> = self
            .edges()
            .map(|e| EdgeLine {
                src: e.src.qualified(),
                dst: e.dst.qualified(),
                confidence: e.confidence,
            })
            .collect();
        write_artifact(
            path,
            "tool_graph",
            json!({"nodes": nodes, "stats": stats}),
            edges,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ToolGraph, ArtifactError> {
        let (header, edges): (_, Vec<EdgeLine>) = read_artifact(path, "tool_graph")?;
        let mut graph = ToolGraph::default();
        if let Some(nodes) = header.extra.get("nodes").and_then(Value::as_array) {
            for n in nodes.iter().filter_map(Value::as_str) {
                if let Some(r) = ToolRef::parse_qualified(n) {
                    graph.nodes.insert(r);
                }
            }
        }
        for (idx, line) in edges.into_iter().enumerate() {
            let src = ToolRef::parse_qualified(&line.src);
            let dst = ToolRef::parse_qualified(&line.dst);
            match (src, dst) {
                (Some(src), Some(dst)) => graph.add_edge(GraphEdge {
                    src,
                    dst,
                    confidence: line.confidence,
                }),
                _ => {
                    return Err(ArtifactError::Malformed {
                        path: path.display().to_string(),
                        line: idx + 2,
                        message: format!("bad tool ref in edge {} -> {}", line.src, line.dst),
                    })
                }
            }
        }
        Ok(graph)
    }
}

/// Ask the edge judge whether `src` chains into `dst`.
///
/// Returns `None` when the pair is judged not chainable. A chainable
/// verdict without a confidence is conservatively tagged low.
pub fn judge_edge(
    src: &ToolSpec,
    dst: &ToolSpec,
    gateway: &JudgeGateway,
) -> Result<Option<GraphEdge>, JudgeError> {
    let rendered = prompt::render(
        prompt::template_for(JudgeRole::EdgeJudge),
        &[
            ("src_ref", src.tool_ref().qualified()),
            ("src_description", src.description.clone()),
            ("src_schema", src.input_schema.to_canonical_string()),
            ("dst_ref", dst.tool_ref().qualified()),
            ("dst_description", dst.description.clone()),
            ("dst_schema", dst.input_schema.to_canonical_string()),
        ],
    );
    let resp = gateway.complete(&JudgeRequest::for_role(JudgeRole::EdgeJudge, rendered))?;
    Ok(edge_from_verdict(src, dst, &resp.value))
}

fn edge_from_verdict(src: &ToolSpec, dst: &ToolSpec, verdict: &CanonicalValue) -> Option<GraphEdge> {
    if verdict.get("chainable").and_then(Value::as_bool) != Some(true) {
        return None;
    }
    let confidence = verdict
        .get("confidence")
        .and_then(Value::as_str)
        .and_then(|s| s.parse().ok())
        .unwrap_or(Confidence::Low);
    Some(GraphEdge {
        src: src.tool_ref(),
        dst: dst.tool_ref(),
        confidence,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Skip pairs a cheap lexical check rules out (destination declares no
    /// parameters, so nothing can flow into it). Skipped pairs are
    /// reported so an exhaustive run can be compared against.
    pub prefilter: bool,
}

#[derive(Debug)]
pub struct GraphBuild {
    pub graph: ToolGraph,
    pub judged_pairs: usize,
    pub skipped: Vec<(ToolRef, ToolRef)>,
}

/// Judge all ordered pairs (including self-pairs) and assemble the graph.
///
/// Judged verdicts flow through the gateway cache, so an interrupted build
/// resumes without repeating backend calls.
pub fn build_graph(
    tools: &[ToolSpec],
    gateway: &JudgeGateway,
    options: BuildOptions,
) -> Result<GraphBuild, JudgeError> {
    let mut sorted: Vec<&ToolSpec> = tools.iter().collect();
    sorted.sort_by_key(|t| t.tool_ref());
    let mut graph = ToolGraph::new(sorted.iter().map(|t| t.tool_ref()));
    let mut skipped = Vec::new();
    let mut judged_pairs = 0;
    for src in &sorted {
        for dst in &sorted {
            if options.prefilter && !prefilter_accepts(dst) {
                skipped.push((src.tool_ref(), dst.tool_ref()));
                continue;
            }
            judged_pairs += 1;
            if let Some(edge) = judge_edge(src, dst, gateway)? {
                graph.add_edge(edge);
            }
        }
    }
    Ok(GraphBuild {
        graph,
        judged_pairs,
        skipped,
    })
}

fn prefilter_accepts(dst: &ToolSpec) -> bool {
    !dst.params().is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{stub_ruleset_load, JudgeGateway};
    use crate::rng::stage_rng;
    use crate::schema::parse_tool_spec;
    use serde_json::json;
    use std::io::Write;

    fn spec(server: &str, name: &str) -> ToolSpec {
        parse_tool_spec(&json!({
            "server_id": server,
            "tool_name": name,
            "description": format!("{name} tool"),
            "input_schema": {
                "type": "object",
                "properties": {"q": {"type": "string", "description": "query"}},
                "required": ["q"]
            }
        }))
        .unwrap()
    }

    fn rule_gateway(lines: &[String]) -> JudgeGateway {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(file, "{l}").unwrap();
        }
        JudgeGateway::stub(stub_ruleset_load(file.path()).unwrap())
    }

    fn edge_rule(src: &str, dst: &str, confidence: &str) -> String {
        format!(
            r#"{{"role":"edge_judge","contains":["SRC TOOL: {src}","DST TOOL: {dst}"],"response":{{"chainable":true,"confidence":"{confidence}"}}}}"#
        )
    }

    fn catch_all_negative() -> String {
        r#"{"role":"edge_judge","contains":[],"response":{"chainable":false}}"#.to_owned()
    }

    #[test]
    fn builds_from_stub_rules() {
        let a = spec("s", "alpha");
        let b = spec("s", "beta");
        let c = spec("t", "gamma");
        let gw = rule_gateway(&[
            edge_rule("s/alpha", "s/beta", "high"),
            edge_rule("s/alpha", "t/gamma", "high"),
            edge_rule("s/beta", "t/gamma", "medium"),
            catch_all_negative(),
        ]);
        let build = build_graph(
            &[a.clone(), b.clone(), c.clone()],
            &gw,
            BuildOptions::default(),
        )
        .unwrap();
        let g = &build.graph;
        assert_eq!(build.judged_pairs, 9);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.out_degree(&a.tool_ref()), 2);
        assert_eq!(g.stats().medium_or_higher, 3);
        assert_eq!(g.eligible_start_tools(), vec![a.tool_ref()]);
    }

    #[test]
    fn single_tool_without_self_rule_has_no_edges() {
        let a = spec("s", "solo");
        let gw = rule_gateway(&[catch_all_negative()]);
        let build = build_graph(&[a], &gw, BuildOptions::default()).unwrap();
        assert_eq!(build.graph.edge_count(), 0);
        assert!(build.graph.eligible_start_tools().is_empty());
    }

    #[test]
    fn self_edge_counts_as_one_successor() {
        let a = spec("s", "self");
        let b = spec("s", "other");
        let gw = rule_gateway(&[
            edge_rule("s/self", "s/self", "high"),
            edge_rule("s/self", "s/other", "high"),
            catch_all_negative(),
        ]);
        let build = build_graph(&[a.clone(), b], &gw, BuildOptions::default()).unwrap();
        assert_eq!(build.graph.eligible_start_tools(), vec![a.tool_ref()]);
    }

    #[test]
    fn two_highs_required_for_eligibility() {
        let a = spec("s", "alpha");
        let b = spec("s", "beta");
        let c = spec("s", "gamma");
        let gw = rule_gateway(&[
            edge_rule("s/alpha", "s/beta", "high"),
            edge_rule("s/alpha", "s/gamma", "medium"),
            catch_all_negative(),
        ]);
        let build = build_graph(&[a, b, c], &gw, BuildOptions::default()).unwrap();
        assert!(build.graph.eligible_start_tools().is_empty());
    }

    #[test]
    fn frontier_respects_floor_and_sample_size() {
        let mut g = ToolGraph::default();
        let a = ToolRef::new("s", "a");
        let b = ToolRef::new("s", "b");
        let c = ToolRef::new("s", "c");
        let d = ToolRef::new("s", "d");
        g.add_edge(GraphEdge { src: a.clone(), dst: b.clone(), confidence: Confidence::Medium });
        g.add_edge(GraphEdge { src: a.clone(), dst: c.clone(), confidence: Confidence::High });
        g.add_edge(GraphEdge { src: a.clone(), dst: d.clone(), confidence: Confidence::Low });

        let completed: BTreeSet<ToolRef> = [a.clone()].into();
        let mut rng = stage_rng(1, "frontier");
        let mut got = g.successor_frontier(&completed, Confidence::Medium, 5, &mut rng);
        got.sort();
        assert_eq!(got, vec![b.clone(), c.clone()]);

        let mut rng = stage_rng(1, "frontier");
        let highs = g.successor_frontier(&completed, Confidence::High, 5, &mut rng);
        assert_eq!(highs, vec![c.clone()]);
    }

    #[test]
    fn frontier_unions_completed_nodes() {
        let mut g = ToolGraph::default();
        let a = ToolRef::new("s", "a");
        let b = ToolRef::new("s", "b");
        let x = ToolRef::new("s", "x");
        let y = ToolRef::new("s", "y");
        g.add_edge(GraphEdge { src: a.clone(), dst: x.clone(), confidence: Confidence::High });
        g.add_edge(GraphEdge { src: b.clone(), dst: y.clone(), confidence: Confidence::High });
        let completed: BTreeSet<ToolRef> = [a.clone(), b.clone()].into();
        // Brute-force union oracle over per-node successor sets.
        let mut expected: BTreeSet<ToolRef> = BTreeSet::new();
        for n in &completed {
            for e in g.successors(n) {
                expected.insert(e.dst.clone());
            }
        }
        let mut rng = stage_rng(2, "frontier");
        let got: BTreeSet<ToolRef> = g
            .successor_frontier(&completed, Confidence::Medium, 10, &mut rng)
            .into_iter()
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn frontier_is_seed_deterministic() {
        let mut g = ToolGraph::default();
        let a = ToolRef::new("s", "a");
        for i in 0..10 {
            g.add_edge(GraphEdge {
                src: a.clone(),
                dst: ToolRef::new("s", format!("t{i}")),
                confidence: Confidence::High,
            });
        }
        let completed: BTreeSet<ToolRef> = [a.clone()].into();
        let one = g.successor_frontier(&completed, Confidence::Medium, 4, &mut stage_rng(9, "f"));
        let two = g.successor_frontier(&completed, Confidence::Medium, 4, &mut stage_rng(9, "f"));
        assert_eq!(one, two);
        assert_eq!(one.len(), 4);
    }

    #[test]
    fn save_load_round_trip() {
        let a = spec("s", "alpha");
        let b = spec("s", "beta");
        let gw = rule_gateway(&[edge_rule("s/alpha", "s/beta", "high"), catch_all_negative()]);
        let build = build_graph(&[a, b], &gw, BuildOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.jsonl");
        build.graph.save(&path).unwrap();
        let loaded = ToolGraph::load(&path).unwrap();
        assert_eq!(loaded, build.graph);
    }

    #[test]
    fn prefilter_skips_parameterless_destinations() {
        let a = spec("s", "alpha");
        let no_params = parse_tool_spec(&json!({
            "server_id": "s",
            "tool_name": "ping",
            "description": "no inputs",
            "input_schema": {"type": "object"}
        }))
        .unwrap();
        let gw = rule_gateway(&[catch_all_negative()]);
        let build = build_graph(
            &[a.clone(), no_params.clone()],
            &gw,
            BuildOptions { prefilter: true },
        )
        .unwrap();
        assert_eq!(build.judged_pairs, 2);
        assert_eq!(build.skipped.len(), 2);
        assert!(build
            .skipped
            .iter()
            .all(|(_, dst)| dst == &no_params.tool_ref()));
    }
}
