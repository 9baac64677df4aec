//! Behavior of the binary and stage runners outside the acceptance
//! criteria: structured failures, the stats report, command agents, and
//! the DAG-replay invariant that ties exploration to the simulator.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use toolforge::canonical::canonicalize;
use toolforge::explore::{load_dags, CallOutput};
use toolforge::sim::{CallIndex, Simulator, TaskContext, Tier};
use toolforge::synth::{load_tasks, TaskLine, TaskRecord, ValidationVerdict};
use toolforge_cli::config::PipelineConfig;
use toolforge_cli::stages;
use toolforge_cli::stats::corpus_stats;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_toolforge")
}

fn in_process_config(dir: &Path) -> PipelineConfig {
    let root = repo_root();
    let mut cfg = PipelineConfig::default();
    cfg.ingest.source = root.join("fixtures/servers").display().to_string();
    cfg.gateway.stub_rules = root.join("fixtures/rules/stub_rules.jsonl");
    cfg.explore.backend = format!(
        "cassette:{}",
        root.join("fixtures/live_cassette.jsonl").display()
    );
    let a = dir.join("artifacts");
    cfg.paths.servers = a.join("servers.jsonl");
    cfg.paths.graph = a.join("graph.jsonl");
    cfg.paths.dags = a.join("dags.jsonl");
    cfg.paths.tasks = a.join("tasks.jsonl");
    cfg.paths.cassette = a.join("cassette.jsonl");
    cfg.paths.overlay = a.join("overlay.jsonl");
    cfg.paths.rewards = a.join("rewards.jsonl");
    cfg.paths.passk = a.join("passk.json");
    cfg.paths.curriculum = a.join("curriculum.json");
    cfg.paths.judge_cache = a.join("judge_cache.jsonl");
    cfg.paths.manifest_dir = a.join("manifests");
    cfg
}

#[test]
fn missing_graph_file_fails_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(binary())
        .args([
            "--config",
            write_config(dir.path()).to_str().unwrap(),
            "explore",
            "--graph",
            "does/not/exist.jsonl",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let err: Value = serde_json::from_str(line).expect("stderr ends with a JSON error object");
    assert_eq!(err["error"]["stage"], json!("explore"));
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("does/not/exist.jsonl"));
}

#[test]
fn unknown_gateway_mode_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[gateway]\nmode = \"psychic\"\n").unwrap();
    let out = Command::new(binary())
        .args(["--config", "bad.toml", "ingest"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("psychic"));
}

/// The worked single-task corpus: one whois task over two calls to one
/// server with a 4-field schema.
#[test]
fn stats_on_whois_only_corpus() {
    let root = repo_root();
    let task: TaskRecord = serde_json::from_str(
        &std::fs::read_to_string(root.join("fixtures/golden/whois_task.json")).unwrap(),
    )
    .unwrap();
    let index =
        CallIndex::load_cassette(&root.join("fixtures/golden/whois_cassette.jsonl")).unwrap();
    let dag = toolforge::explore::CallDag {
        dag_id: "golden-whois".into(),
        start_tool: toolforge::ToolRef::new("networkcalc-mcp", "whois_lookup"),
        budget_used: 2,
        nodes: index
            .records()
            .map(|r| toolforge::explore::CallNode {
                node_id: r.node_id,
                tool: r.tool.clone(),
                args: r.args.clone(),
                args_digest: r.call_digest(),
                output: CallOutput::Success(r.output.clone()),
            })
            .collect(),
        edges: vec![],
    };
    let lines = vec![TaskLine {
        task,
        verdict: Some(ValidationVerdict::from_parts(true, true, true, 8, true)),
    }];
    let report = corpus_stats(&lines, &[dag]);
    assert_eq!(report.tasks, 1);
    assert_eq!(report.trajectory_calls.mean, 2.0);
    assert_eq!(report.answer_fields_mean, 4.0);
    assert_eq!(report.multi_server_fraction, 0.0);
    assert_eq!(report.distinct_servers, 1);
    assert_eq!(report.distinct_tools, 1);
}

/// Exploration ties to the simulator: an index built from a DAG replays
/// every successful node's call at tier exact with the identical output.
#[test]
fn dag_replay_reproduces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = in_process_config(dir.path());
    stages::run_ingest(&cfg).unwrap();
    stages::run_graph(&cfg).unwrap();
    stages::run_explore(&cfg).unwrap();

    let dags = load_dags(&cfg.paths.dags).unwrap();
    assert!(!dags.is_empty());
    for dag in &dags {
        let (index, _) = toolforge::sim::build_index(std::slice::from_ref(dag), [], 5).unwrap();
        let sim = Simulator::new(index, None);
        for node in dag.nodes.iter() {
            match &node.output {
                CallOutput::Success(expected) => {
                    let resp = sim.resolve(&TaskContext::default(), &node.tool, &node.args);
                    assert_eq!(resp.tier, Tier::Exact, "{} node {}", dag.dag_id, node.node_id);
                    assert_eq!(&resp.output, expected);
                    assert!(!resp.is_error);
                }
                CallOutput::Failure(_) => {
                    // Error nodes are deliberately not indexed.
                }
            }
        }
    }
}

/// External command agents: the hidden agent-stub answers every task with
/// an empty object, so the plumbing runs end to end and rewards are 0.
#[test]
fn command_agent_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = in_process_config(dir.path());
    stages::run_ingest(&cfg).unwrap();
    stages::run_graph(&cfg).unwrap();
    stages::run_explore(&cfg).unwrap();
    stages::run_synthesize(&cfg).unwrap();
    stages::run_validate(&cfg).unwrap();
    stages::run_index(&cfg).unwrap();

    cfg.eval.agent = format!("cmd:{} agent-stub", binary());
    cfg.eval.rollouts = 2;
    stages::run_evaluate(&cfg).unwrap();

    let (_, lines): (_, Vec<Value>) =
        toolforge::artifact::read_artifact(&cfg.paths.rewards, "rewards").unwrap();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|l| l["reward"] == json!(0)));

    let passk: Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg.paths.passk).unwrap()).unwrap();
    assert_eq!(passk["pass_at_k"][0]["mean"], json!(0.0));
}

/// The deterministic noisy agent produces a spread reward matrix, so
/// pass@k grows with k and the curriculum sees a mix.
#[test]
fn noisy_agent_spreads_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = in_process_config(dir.path());
    stages::run_ingest(&cfg).unwrap();
    stages::run_graph(&cfg).unwrap();
    stages::run_explore(&cfg).unwrap();
    stages::run_synthesize(&cfg).unwrap();
    stages::run_validate(&cfg).unwrap();
    stages::run_index(&cfg).unwrap();

    cfg.eval.agent = "scripted-noisy".into();
    stages::run_evaluate(&cfg).unwrap();
    let passk: Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg.paths.passk).unwrap()).unwrap();
    let means: Vec<f64> = passk["pass_at_k"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["mean"].as_f64().unwrap())
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert!(means[0] > 0.0 && means[0] < 1.0, "pass@1 should be strictly between 0 and 1, got {means:?}");

    // Deterministic: a second evaluate produces the identical report.
    let first = std::fs::read(&cfg.paths.passk).unwrap();
    std::fs::remove_file(&cfg.paths.overlay).ok();
    stages::run_evaluate(&cfg).unwrap();
    assert_eq!(first, std::fs::read(&cfg.paths.passk).unwrap());
}

#[test]
fn spot_check_prints_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(binary())
        .args([
            "--config",
            write_config(dir.path()).to_str().unwrap(),
            "ingest",
            "--spot-check",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("spot-check ").count(), 2);
}

fn write_config(dir: &Path) -> PathBuf {
    let cfg = in_process_config(dir);
    let path = dir.join("cfg.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path
}

/// Exact-match comparison ignores JSON key order (canonical values).
#[test]
fn match_answer_is_key_order_insensitive() {
    let keys = vec!["a".to_owned(), "b".to_owned()];
    let truth = canonicalize(&json!({"a": "1", "b": "2"})).unwrap();
    let candidate: toolforge::CanonicalValue = r#"{"b":"2","a":"1"}"#.parse().unwrap();
    assert!(toolforge::eval::match_answer(&keys, &truth, &candidate));
    assert!(toolforge::eval::match_answer(&keys, &truth, &truth));
}

/// Loading tasks back from disk preserves every record field.
#[test]
fn pipeline_tasks_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = in_process_config(dir.path());
    stages::run_ingest(&cfg).unwrap();
    stages::run_graph(&cfg).unwrap();
    stages::run_explore(&cfg).unwrap();
    stages::run_synthesize(&cfg).unwrap();
    let first = load_tasks(&cfg.paths.tasks).unwrap();
    toolforge::synth::save_tasks(&cfg.paths.tasks, &first, json!({})).unwrap();
    let second = load_tasks(&cfg.paths.tasks).unwrap();
    assert_eq!(first, second);
}
