//! Corpus statistics over tasks and their source DAGs: counts, difficulty
//! distribution, ground-truth trajectory lengths, answer-schema widths,
//! server/tool coverage, and the multi-server task fraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use toolforge::explore::CallDag;
use toolforge::synth::TaskLine;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultySlice {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDist {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tasks: usize,
    pub difficulty: BTreeMap<String, DifficultySlice>,
    pub trajectory_calls: TrajectoryDist,
    pub answer_fields_mean: f64,
    pub distinct_servers: usize,
    pub distinct_tools: usize,
    pub multi_server_fraction: f64,
    pub dags: usize,
    pub validated_pass: usize,
}

/// Compute the report. Empty corpora produce an all-zero report.
pub fn corpus_stats(lines: &[TaskLine], dags: &[CallDag]) -> StatsReport {
    let dag_index: BTreeMap<&str, &CallDag> =
        dags.iter().map(|d| (d.dag_id.as_str(), d)).collect();

    let mut difficulty: BTreeMap<String, DifficultySlice> = BTreeMap::new();
    let mut lengths: Vec<usize> = Vec::new();
    let mut field_counts: Vec<usize> = Vec::new();
    let mut servers: BTreeSet<String> = BTreeSet::new();
    let mut tools: BTreeSet<String> = BTreeSet::new();
    let mut multi_server_tasks = 0usize;
    let mut validated_pass = 0usize;

    for line in lines {
        let task = &line.task;
        difficulty
            .entry(task.difficulty.as_str().to_owned())
            .or_insert(DifficultySlice {
                count: 0,
                fraction: 0.0,
            })
            .count += 1;
        lengths.push(task.selected_nodes.len());
        field_counts.push(task.schema_keys().len());
        if line.verdict.map(|v| v.pass).unwrap_or(false) {
            validated_pass += 1;
        }
        let mut task_servers: BTreeSet<String> = BTreeSet::new();
        if let Some(dag) = dag_index.get(task.source_dag.as_str()) {
            for node_id in &task.selected_nodes {
                if let Some(node) = dag.node(*node_id) {
                    task_servers.insert(node.tool.server_id.clone());
                    servers.insert(node.tool.server_id.clone());
                    tools.insert(node.tool.qualified());
                }
            }
        }
        if task_servers.len() > 1 {
            multi_server_tasks += 1;
        }
    }

    let n = lines.len();
    for slice in difficulty.values_mut() {
        slice.fraction = slice.count as f64 / n as f64;
    }
    StatsReport {
        tasks: n,
        difficulty,
        trajectory_calls: TrajectoryDist {
            mean: if n == 0 {
                0.0
            } else {
                lengths.iter().sum::<usize>() as f64 / n as f64
            },
            min: lengths.iter().copied().min().unwrap_or(0),
            max: lengths.iter().copied().max().unwrap_or(0),
        },
        answer_fields_mean: if n == 0 {
            0.0
        } else {
            field_counts.iter().sum::<usize>() as f64 / n as f64
        },
        distinct_servers: servers.len(),
        distinct_tools: tools.len(),
        multi_server_fraction: if n == 0 {
            0.0
        } else {
            multi_server_tasks as f64 / n as f64
        },
        dags: dags.len(),
        validated_pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;
    use toolforge::explore::load_dags;
    use toolforge::synth::load_tasks;

    fn workspace_fixture(rel: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../..")
            .join(rel)
    }

    #[test]
    fn empty_corpus_is_zeroed() {
        let report = corpus_stats(&[], &[]);
        assert_eq!(report.tasks, 0);
        assert_eq!(report.trajectory_calls.mean, 0.0);
        assert_eq!(report.answer_fields_mean, 0.0);
        assert_eq!(report.multi_server_fraction, 0.0);
    }

    /// Hand-tallied expectations for the bundled 10-task sample:
    /// difficulties 2/7/1, lengths 1,2,2,3,3,4,2,3,5,10 (mean 3.5),
    /// fields 4,4,5,4,6,5,4,5,5,4 (mean 4.6), servers {srv-a,srv-b,srv-c},
    /// 16 distinct tools, multi-server tasks t02/t04/t06 (30%).
    #[test]
    fn bundled_sample_matches_hand_tally() {
        let tasks = load_tasks(&workspace_fixture("fixtures/stats/tasks_sample.jsonl")).unwrap();
        let dags = load_dags(&workspace_fixture("fixtures/stats/dags_sample.jsonl")).unwrap();
        let report = corpus_stats(&tasks, &dags);
        assert_eq!(report.tasks, 10);
        assert_eq!(report.difficulty["easy"].count, 2);
        assert_eq!(report.difficulty["medium"].count, 7);
        assert_eq!(report.difficulty["hard"].count, 1);
        assert!((report.difficulty["easy"].fraction - 0.2).abs() < 1e-12);
        assert!((report.difficulty["medium"].fraction - 0.7).abs() < 1e-12);
        assert!((report.difficulty["hard"].fraction - 0.1).abs() < 1e-12);
        assert!((report.trajectory_calls.mean - 3.5).abs() < 1e-12);
        assert_eq!(report.trajectory_calls.min, 1);
        assert_eq!(report.trajectory_calls.max, 10);
        assert!((report.answer_fields_mean - 4.6).abs() < 1e-12);
        assert_eq!(report.distinct_servers, 3);
        assert_eq!(report.distinct_tools, 16);
        assert!((report.multi_server_fraction - 0.3).abs() < 1e-12);
    }
}
