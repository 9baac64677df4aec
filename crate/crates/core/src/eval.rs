//! Rewards, pass@k, and the dynamic-filtering curriculum.
//!
//! The reward is binary and two-stage: exact field-level match against the
//! answer schema first, semantic-judge fallback second. Pass@k uses the
//! unbiased combinatorial estimator over n rollouts. Dynamic filtering
//! permanently removes prompts mastered on every rollout of a batch, but
//! only once more than `activation_threshold` of them accumulate within a
//! single batch; all-fail prompts are never removed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use unicode_normalization::{is_nfc, UnicodeNormalization};

use crate::canonical::{canonicalize, digest_bytes, number_to_string, CanonicalValue};
use crate::judge::{JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;
use crate::sim::{Simulator, TaskContext, Tier};
use crate::synth::TaskRecord;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("k={k} is out of range for n={n} rollouts")]
    KOutOfRange { k: usize, n: usize },
    #[error("task {0} is not in the active set")]
    UnknownTask(String),
    #[error("reward vector for task {task}: {detail}")]
    BadVector { task: String, detail: String },
}

fn match_normalize(v: &Value) -> String {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => number_to_string(n),
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".to_owned(),
        composite => canonicalize(composite)
            .map(|c| c.to_canonical_string())
            .unwrap_or_default(),
    };
    let trimmed = text.trim();
    if is_nfc(trimmed) {
        trimmed.to_owned()
    } else {
        trimmed.nfc().collect()
    }
}

/// Exact field-level match: the candidate must contain every schema key
/// with a trimmed, NFC-normalized, byte-equal string value. Extra
/// candidate keys are ignored; leniency beyond that belongs to the
/// semantic judge.
pub fn match_answer(schema_keys: &[String], truth: &CanonicalValue, candidate: &CanonicalValue) -> bool {
    for key in schema_keys {
        let Some(expected) = truth.get(key) else {
            return false;
        };
        let Some(got) = candidate.get(key) else {
            return false;
        };
        if match_normalize(expected) != match_normalize(got) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMethod {
    ExactMatch,
    SemanticJudge,
    NoMatch,
    /// Judge backend failed; the reward stays 0 and the record is flagged.
    JudgeError,
    /// External agent failed to produce an answer.
    AgentError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward: u8,
    pub method: RewardMethod,
}

/// Binary reward: exact match short-circuits without touching the
/// gateway; otherwise the answer judge decides semantic equivalence; any
/// gateway failure yields a conservative 0.
pub fn reward(
    task: &TaskRecord,
    final_answer: &CanonicalValue,
    gateway: &JudgeGateway,
) -> RewardOutcome {
    let keys = task.schema_keys();
    if match_answer(&keys, &task.ground_truth, final_answer) {
        return RewardOutcome {
            reward: 1,
            method: RewardMethod::ExactMatch,
        };
    }
    let rendered = prompt::render(
        prompt::template_for(JudgeRole::AnswerJudge),
        &[
            ("prompt", task.prompt.clone()),
            ("answer_template", task.answer_template.clone()),
            ("expected", task.ground_truth.to_canonical_string()),
            ("candidate", final_answer.to_canonical_string()),
        ],
    );
    match gateway.complete(&JudgeRequest::for_role(JudgeRole::AnswerJudge, rendered)) {
        Ok(resp) if resp.value.get("equivalent") == Some(&Value::Bool(true)) => RewardOutcome {
            reward: 1,
            method: RewardMethod::SemanticJudge,
        },
        Ok(_) => RewardOutcome {
            reward: 0,
            method: RewardMethod::NoMatch,
        },
        Err(e) => {
            log::warn!("answer judge failed for {}: {e}", task.task_id);
            RewardOutcome {
                reward: 0,
                method: RewardMethod::JudgeError,
            }
        }
    }
}

/// Per-task binary rewards over n rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    pub n: usize,
    rows: BTreeMap<String, Vec<u8>>,
}

impl RewardMatrix {
    pub fn new(n: usize) -> RewardMatrix {
        RewardMatrix {
            n,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, task_id: impl Into<String>, rewards: Vec<u8>) -> Result<(), EvalError> {
        let task_id = task_id.into();
        if rewards.len() != self.n {
            return Err(EvalError::BadVector {
                task: task_id,
                detail: format!("length {} != n {}", rewards.len(), self.n),
            });
        }
        if rewards.iter().any(|r| *r > 1) {
            return Err(EvalError::BadVector {
                task: task_id,
                detail: "entries must be 0 or 1".into(),
            });
        }
        self.rows.insert(task_id, rewards);
        Ok(())
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.rows
    }

    pub fn successes(&self, task_id: &str) -> Option<usize> {
        self.rows
            .get(task_id)
            .map(|v| v.iter().filter(|r| **r == 1).count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: usize,
    pub mean: f64,
    pub per_task: BTreeMap<String, f64>,
}

/// Unbiased estimator `1 - C(n-c, k) / C(n, k)` per task, plus the mean
/// over tasks.
pub fn pass_at_k(matrix: &RewardMatrix, k: usize) -> Result<PassAtK, EvalError> {
    let n = matrix.n;
    if k < 1 || k > n {
        return Err(EvalError::KOutOfRange { k, n });
    }
    let mut per_task = BTreeMap::new();
    for (task_id, rewards) in matrix.rows() {
        let c = rewards.iter().filter(|r| **r == 1).count();
        per_task.insert(task_id.clone(), pass_estimate(n, c, k));
    }
    let mean = if per_task.is_empty() {
        0.0
    } else {
        per_task.values().sum::<f64>() / per_task.len() as f64
    };
    Ok(PassAtK { k, mean, per_task })
}

fn pass_estimate(n: usize, c: usize, k: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    if n - c < k {
        return 1.0;
    }
    // C(n-c, k) / C(n, k) as a running product of (n-c-i)/(n-i).
    let mut ratio = 1.0f64;
    for i in 0..k {
        ratio *= (n - c - i) as f64 / (n - i) as f64;
    }
    1.0 - ratio
}

/// Which prompts are still trained on, and which were permanently removed
/// (with the step at which that happened).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub active: BTreeSet<String>,
    pub removed: BTreeMap<String, u64>,
    pub step: u64,
}

impl CurriculumState {
    pub fn new(task_ids: impl IntoIterator<Item = String>) -> CurriculumState {
        CurriculumState {
            active: task_ids.into_iter().collect(),
            removed: BTreeMap::new(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Tasks with reward 1.0 on every rollout of this batch.
    pub mastered: Vec<String>,
    /// Mastered tasks actually removed this step (all of `mastered` when
    /// the activation threshold is exceeded, empty otherwise).
    pub removed: Vec<String>,
}

pub const DEFAULT_ROLLOUTS_PER_PROMPT: usize = 8;
pub const DEFAULT_ACTIVATION_THRESHOLD: usize = 10;

/// Apply one batch of rollout rewards to the curriculum.
///
/// Prompts with all-1 vectors are mastered; when strictly more than
/// `activation_threshold` of them occur within this batch, all of them
/// move to the removed set, permanently. All-0 prompts always stay
/// active.
pub fn filter_batch(
    batch: &BTreeMap<String, Vec<u8>>,
    state: &mut CurriculumState,
    rollouts_per_prompt: usize,
    activation_threshold: usize,
) -> Result<FilterOutcome, EvalError> {
    let mut mastered = Vec::new();
    for (task_id, rewards) in batch {
        if !state.active.contains(task_id) {
            return Err(EvalError::UnknownTask(task_id.clone()));
        }
        if rewards.len() != rollouts_per_prompt {
            return Err(EvalError::BadVector {
                task: task_id.clone(),
                detail: format!(
                    "length {} != rollouts per prompt {}",
                    rewards.len(),
                    rollouts_per_prompt
                ),
            });
        }
        if rewards.iter().any(|r| *r > 1) {
            return Err(EvalError::BadVector {
                task: task_id.clone(),
                detail: "entries must be 0 or 1".into(),
            });
        }
        if rewards.iter().all(|r| *r == 1) {
            mastered.push(task_id.clone());
        }
    }
    state.step += 1;
    let removed = if mastered.len() > activation_threshold {
        for task_id in &mastered {
            state.active.remove(task_id);
            state.removed.insert(task_id.clone(), state.step);
        }
        mastered.clone()
    } else {
        Vec::new()
    };
    Ok(FilterOutcome { mastered, removed })
}

pub fn save_curriculum(path: &Path, state: &CurriculumState) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(state).unwrap())
}

/// How rollouts get produced during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    /// Replay the ground-truth trajectory from the cassette, then answer
    /// with the bound ground truth.
    ScriptedGt,
    /// Like `ScriptedGt`, but deterministically corrupts the answer on a
    /// pseudo-random subset of (task, rollout) pairs, giving the reward
    /// matrix realistic spread without any model in the loop.
    ScriptedNoisy { fail_threshold: u8 },
    /// External command: the task (without ground truth) is written to
    /// stdin as JSON, the answer object is read from stdout.
    Command { command: String },
}

impl Agent {
    pub fn parse(s: &str) -> Result<Agent, String> {
        if s == "scripted" {
            Ok(Agent::ScriptedGt)
        } else if s == "scripted-noisy" {
            Ok(Agent::ScriptedNoisy { fail_threshold: 96 })
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                Err("empty agent command".into())
            } else {
                Ok(Agent::Command {
                    command: cmd.to_owned(),
                })
            }
        } else {
            Err(format!(
                "unknown agent '{s}' (expected scripted, scripted-noisy, or cmd:<command>)"
            ))
        }
    }
}

/// One line of rewards.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLine {
    pub task_id: String,
    pub rollout: usize,
    pub reward: u8,
    pub method: RewardMethod,
}

#[derive(Debug)]
pub struct RolloutRun {
    pub matrix: RewardMatrix,
    pub lines: Vec<RewardLine>,
    /// Tiers observed while replaying ground-truth trajectories.
    pub gt_tiers: BTreeMap<String, Vec<Tier>>,
}

/// Replay a task's ground-truth trajectory against the simulator. Returns
/// the tier of every call; missing records are reported as `None`.
pub fn replay_gt_trajectory(
    task: &TaskRecord,
    sim: &Simulator,
) -> Vec<(u32, Option<Tier>)> {
    let ctx = TaskContext::for_task(task.task_id.clone());
    let mut out = Vec::new();
    let mut order = task.selected_nodes.clone();
    order.sort_unstable();
    for node_id in order {
        let record_id = format!("{}:{node_id}", task.source_dag);
        match sim.index().record_by_id(&record_id) {
            None => out.push((node_id, None)),
            Some(record) => {
                let (tool, args) = (record.tool.clone(), record.args.clone());
                let resp = sim.resolve(&ctx, &tool, &args);
                out.push((node_id, Some(resp.tier)));
            }
        }
    }
    out
}

fn scripted_answer(task: &TaskRecord, sim: &Simulator) -> CanonicalValue {
    let replays = replay_gt_trajectory(task, sim);
    if replays.iter().any(|(_, tier)| tier.is_none()) {
        log::warn!(
            "task {}: ground-truth records missing from cassette",
            task.task_id
        );
        return CanonicalValue::empty_object();
    }
    task.ground_truth.clone()
}

fn corrupt_answer(truth: &CanonicalValue) -> CanonicalValue {
    let mut v = truth.as_value().clone();
    if let Some(map) = v.as_object_mut() {
        if let Some((_, first)) = map.iter_mut().next() {
            *first = json!("__wrong__");
        }
    }
    canonicalize(&v).expect("corrupted answer canonicalizes")
}

fn noisy_fails(task_id: &str, rollout: usize, threshold: u8) -> bool {
    let digest = digest_bytes(format!("{task_id}:{rollout}").as_bytes());
    let first_byte = u8::from_str_radix(&digest.as_str()[..2], 16).unwrap_or(0);
    first_byte < threshold
}

fn command_answer(command: &str, task: &TaskRecord, mcp_url: Option<&str>) -> Option<CanonicalValue> {
    let payload = json!({
        "task": {
            "task_id": task.task_id,
            "prompt": task.prompt,
            "answer_schema": task.answer_schema,
            "answer_template": task.answer_template,
            "difficulty": task.difficulty,
        },
        "mcp_url": mcp_url,
    });
    let mut parts = command.split_whitespace();
    let program = parts.next()?;
    let mut child = Command::new(program)
        .args(parts)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .ok()?;
    {
        let mut stdin = child.stdin.take()?;
        use std::io::Write;
        stdin.write_all(payload.to_string().as_bytes()).ok()?;
    }
    let output = child.wait_with_output().ok()?;
    if !output.status.success() {
        return None;
    }
    let parsed: Value = serde_json::from_slice(&output.stdout).ok()?;
    canonicalize(parsed.get("answer")?).ok()
}

/// Run `rollouts` rollouts per task and collect the reward matrix.
/// Rewards are computed per rollout; the scripted agents make the run
/// fully deterministic.
pub fn run_rollouts(
    tasks: &[TaskRecord],
    sim: &Arc<Simulator>,
    agent: &Agent,
    rollouts: usize,
    gateway: &JudgeGateway,
    mcp_url: Option<&str>,
) -> Result<RolloutRun, EvalError> {
    let mut matrix = RewardMatrix::new(rollouts);
    let mut lines = Vec::new();
    let mut gt_tiers = BTreeMap::new();
    for task in tasks {
        let mut row = Vec::with_capacity(rollouts);
        for rollout in 0..rollouts {
            let (answer, agent_failed) = match agent {
                Agent::ScriptedGt => (scripted_answer(task, sim), false),
                Agent::ScriptedNoisy { fail_threshold } => {
                    let base = scripted_answer(task, sim);
                    if noisy_fails(&task.task_id, rollout, *fail_threshold) {
                        (corrupt_answer(&base), false)
                    } else {
                        (base, false)
                    }
                }
                Agent::Command { command } => match command_answer(command, task, mcp_url) {
                    Some(answer) => (answer, false),
                    None => (CanonicalValue::empty_object(), true),
                },
            };
            let outcome = if agent_failed {
                RewardOutcome {
                    reward: 0,
                    method: RewardMethod::AgentError,
                }
            } else {
                reward(task, &answer, gateway)
            };
            row.push(outcome.reward);
            lines.push(RewardLine {
                task_id: task.task_id.clone(),
                rollout,
                reward: outcome.reward,
                method: outcome.method,
            });
        }
        matrix.insert(task.task_id.clone(), row)?;
        let tiers: Vec<Tier> = replay_gt_trajectory(task, sim)
            .into_iter()
            .filter_map(|(_, t)| t)
            .collect();
        gt_tiers.insert(task.task_id.clone(), tiers);
    }
    Ok(RolloutRun {
        matrix,
        lines,
        gt_tiers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{stub_ruleset_load, JudgeGateway, RuleTable};
    use crate::synth::{Difficulty, Extraction};
    use std::io::Write as _;

    fn truth() -> CanonicalValue {
        canonicalize(&json!({
            "first_registered_domain": "amazon.com",
            "amazon_registration_year": "1994",
            "netflix_registration_year": "1997",
            "years_apart": "3",
        }))
        .unwrap()
    }

    fn keys() -> Vec<String> {
        vec![
            "first_registered_domain".into(),
            "amazon_registration_year".into(),
            "netflix_registration_year".into(),
            "years_apart".into(),
        ]
    }

    #[test]
    fn exact_match_on_identical_answer() {
        assert!(match_answer(&keys(), &truth(), &truth()));
    }

    #[test]
    fn trailing_space_matches_after_trim() {
        let mut candidate = truth().as_value().clone();
        candidate["years_apart"] = json!("3 ");
        assert!(match_answer(
            &keys(),
            &truth(),
            &canonicalize(&candidate).unwrap()
        ));
    }

    #[test]
    fn wrong_value_or_missing_key_fails() {
        let mut candidate = truth().as_value().clone();
        candidate["amazon_registration_year"] = json!("1995");
        assert!(!match_answer(&keys(), &truth(), &canonicalize(&candidate).unwrap()));

        let mut short = truth().as_value().clone();
        short.as_object_mut().unwrap().remove("years_apart");
        assert!(!match_answer(&keys(), &truth(), &canonicalize(&short).unwrap()));

        // Extra keys are ignored.
        let mut extra = truth().as_value().clone();
        extra["note"] = json!("x");
        assert!(match_answer(&keys(), &truth(), &canonicalize(&extra).unwrap()));
    }

    #[test]
    fn numeric_candidate_matches_its_string_form() {
        let mut candidate = truth().as_value().clone();
        candidate["years_apart"] = json!(3);
        assert!(match_answer(&keys(), &truth(), &canonicalize(&candidate).unwrap()));
    }

    fn task() -> TaskRecord {
        TaskRecord {
            task_id: "task_t".into(),
            prompt: "Which domain was registered first?".into(),
            answer_schema: canonicalize(&json!({
                "first_registered_domain": "{first_registered_domain}",
                "amazon_registration_year": "{amazon_registration_year}",
                "netflix_registration_year": "{netflix_registration_year}",
                "years_apart": "{years_apart}",
            }))
            .unwrap(),
            answer_template: "{first_registered_domain} {amazon_registration_year} {netflix_registration_year} {years_apart}".into(),
            difficulty: Difficulty::Easy,
            selected_nodes: vec![0, 1],
            extractions: BTreeMap::<String, Extraction>::new(),
            ground_truth: truth(),
            source_dag: "dag_a".into(),
        }
    }

    #[test]
    fn exact_match_short_circuits_gateway() {
        let gw = JudgeGateway::stub(RuleTable::default());
        let outcome = reward(&task(), &truth(), &gw);
        assert_eq!(outcome.reward, 1);
        assert_eq!(outcome.method, RewardMethod::ExactMatch);
        assert_eq!(gw.requests(), 0);
    }

    #[test]
    fn semantic_fallback_and_conservative_failure() {
        let mut candidate = truth().as_value().clone();
        candidate["years_apart"] = json!("three");
        let candidate = canonicalize(&candidate).unwrap();

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"role":"answer_judge","contains":["three"],"response":{{"equivalent":true}}}}"#
        )
        .unwrap();
        let gw = JudgeGateway::stub(stub_ruleset_load(file.path()).unwrap());
        let outcome = reward(&task(), &candidate, &gw);
        assert_eq!(outcome.reward, 1);
        assert_eq!(outcome.method, RewardMethod::SemanticJudge);
        assert_eq!(gw.requests(), 1);

        // No stub rule at all: gateway errors surface as reward 0.
        let gw = JudgeGateway::stub(RuleTable::default());
        let outcome = reward(&task(), &candidate, &gw);
        assert_eq!(outcome.reward, 0);
        assert_eq!(outcome.method, RewardMethod::JudgeError);

        let empty = CanonicalValue::empty_object();
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"role":"answer_judge","contains":[],"response":{{"equivalent":false}}}}"#
        )
        .unwrap();
        let gw = JudgeGateway::stub(stub_ruleset_load(file.path()).unwrap());
        let outcome = reward(&task(), &empty, &gw);
        assert_eq!(outcome.reward, 0);
        assert_eq!(outcome.method, RewardMethod::NoMatch);
    }

    fn matrix_with(c: usize, n: usize) -> RewardMatrix {
        let mut m = RewardMatrix::new(n);
        let mut row = vec![0u8; n];
        for slot in row.iter_mut().take(c) {
            *slot = 1;
        }
        m.insert("t", row).unwrap();
        m
    }

    #[test]
    fn pass_at_k_known_values() {
        for k in [1usize, 4, 8, 16] {
            assert_eq!(pass_at_k(&matrix_with(16, 16), k).unwrap().per_task["t"], 1.0);
            assert_eq!(pass_at_k(&matrix_with(0, 16), k).unwrap().per_task["t"], 0.0);
        }
        // c=4, n=16, k=4: 1 - C(12,4)/C(16,4) = 1 - 495/1820.
        let estimate = pass_at_k(&matrix_with(4, 16), 4).unwrap().per_task["t"];
        assert!((estimate - (1.0 - 495.0 / 1820.0)).abs() < 1e-15);
        assert!((estimate - 0.728_021_978_021_978).abs() < 1e-12);
    }

    #[test]
    fn pass_at_one_is_success_rate() {
        for c in 0..=16 {
            let estimate = pass_at_k(&matrix_with(c, 16), 1).unwrap().per_task["t"];
            assert!((estimate - c as f64 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        assert_eq!(
            pass_at_k(&matrix_with(4, 16), 0).unwrap_err(),
            EvalError::KOutOfRange { k: 0, n: 16 }
        );
        assert_eq!(
            pass_at_k(&matrix_with(4, 16), 17).unwrap_err(),
            EvalError::KOutOfRange { k: 17, n: 16 }
        );
    }

    fn batch(entries: &[(&str, Vec<u8>)]) -> BTreeMap<String, Vec<u8>> {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn twelve_mastered_removes_all_twelve() {
        let ids: Vec<String> = (0..20).map(|i| format!("t{i:02}")).collect();
        let mut state = CurriculumState::new(ids.clone());
        let mut b = BTreeMap::new();
        for id in ids.iter().take(12) {
            b.insert(id.clone(), vec![1u8; 8]);
        }
        b.insert(ids[12].clone(), vec![0u8; 8]);
        let outcome = filter_batch(&b, &mut state, 8, 10).unwrap();
        assert_eq!(outcome.mastered.len(), 12);
        assert_eq!(outcome.removed.len(), 12);
        assert_eq!(state.removed.len(), 12);
        assert!(state.active.contains(&ids[12]));
    }

    #[test]
    fn exactly_ten_mastered_removes_none() {
        let ids: Vec<String> = (0..12).map(|i| format!("t{i:02}")).collect();
        let mut state = CurriculumState::new(ids.clone());
        let mut b = BTreeMap::new();
        for id in ids.iter().take(10) {
            b.insert(id.clone(), vec![1u8; 8]);
        }
        let outcome = filter_batch(&b, &mut state, 8, 10).unwrap();
        assert_eq!(outcome.mastered.len(), 10);
        assert!(outcome.removed.is_empty());
        assert_eq!(state.active.len(), 12);
    }

    #[test]
    fn all_zero_prompt_stays_active() {
        let mut state = CurriculumState::new(["a".to_owned(), "b".to_owned()]);
        let outcome = filter_batch(
            &batch(&[("a", vec![0; 8]), ("b", vec![1; 8])]),
            &mut state,
            8,
            0,
        )
        .unwrap();
        assert_eq!(outcome.removed, vec!["b".to_owned()]);
        assert!(state.active.contains("a"));
    }

    #[test]
    fn unknown_and_malformed_batches_rejected() {
        let mut state = CurriculumState::new(["a".to_owned()]);
        assert_eq!(
            filter_batch(&batch(&[("zz", vec![1; 8])]), &mut state, 8, 10).unwrap_err(),
            EvalError::UnknownTask("zz".into())
        );
        assert!(matches!(
            filter_batch(&batch(&[("a", vec![1; 5])]), &mut state, 8, 10),
            Err(EvalError::BadVector { .. })
        ));
        // Removed tasks never re-enter.
        let mut state = CurriculumState::new(["a".to_owned()]);
        filter_batch(&batch(&[("a", vec![1; 8])]), &mut state, 8, 0).unwrap();
        assert_eq!(
            filter_batch(&batch(&[("a", vec![1; 8])]), &mut state, 8, 0).unwrap_err(),
            EvalError::UnknownTask("a".into())
        );
    }

    #[test]
    fn agent_parsing() {
        assert_eq!(Agent::parse("scripted").unwrap(), Agent::ScriptedGt);
        assert!(matches!(
            Agent::parse("scripted-noisy").unwrap(),
            Agent::ScriptedNoisy { .. }
        ));
        assert_eq!(
            Agent::parse("cmd:my-agent --flag").unwrap(),
            Agent::Command {
                command: "my-agent --flag".into()
            }
        );
        assert!(Agent::parse("wat").is_err());
    }
}
