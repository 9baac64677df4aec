//! Pipeline configuration: one TOML file (all keys optional) plus
//! per-stage flag overrides. The master seed fixes every sampling
//! decision; stub gateway mode requires no network at all.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use toolforge::judge::{stub_ruleset_load, HttpJudgeConfig, JudgeGateway};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub gateway: GatewayConfig,
    pub ingest: IngestConfig,
    pub graph: GraphConfig,
    pub explore: ExploreConfig,
    pub synth: SynthConfig,
    pub sim: SimConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            paths: Paths::default(),
            gateway: GatewayConfig::default(),
            ingest: IngestConfig::default(),
            graph: GraphConfig::default(),
            explore: ExploreConfig::default(),
            synth: SynthConfig::default(),
            sim: SimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub servers: PathBuf,
    pub graph: PathBuf,
    pub dags: PathBuf,
    pub tasks: PathBuf,
    pub cassette: PathBuf,
    pub overlay: PathBuf,
    pub rewards: PathBuf,
    pub passk: PathBuf,
    pub curriculum: PathBuf,
    pub judge_cache: PathBuf,
    pub manifest_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            servers: "artifacts/servers.jsonl".into(),
            graph: "artifacts/graph.jsonl".into(),
            dags: "artifacts/dags.jsonl".into(),
            tasks: "artifacts/tasks.jsonl".into(),
            cassette: "artifacts/cassette.jsonl".into(),
            overlay: "artifacts/overlay.jsonl".into(),
            rewards: "artifacts/rewards.jsonl".into(),
            passk: "artifacts/passk.json".into(),
            curriculum: "artifacts/curriculum.json".into(),
            judge_cache: "artifacts/judge_cache.jsonl".into(),
            manifest_dir: "artifacts/manifests".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// "stub" or "http".
    pub mode: String,
    pub stub_rules: PathBuf,
    /// Persist resolved judgments; also the checkpoint that makes
    /// interrupted graph builds resumable.
    pub cache: bool,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer credential (http mode).
    pub credential_env: Option<String>,
    pub retries: u32,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: "stub".into(),
            stub_rules: "fixtures/rules/stub_rules.jsonl".into(),
            cache: true,
            endpoint: String::new(),
            model: "default".into(),
            credential_env: None,
            retries: 3,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Fixture directory, or an http(s) registry base URL.
    pub source: String,
    pub queries: Vec<String>,
    /// Print N sampled verdicts for human spot-checking.
    pub spot_check: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            source: "fixtures/servers".into(),
            queries: vec![String::new()],
            spot_check: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub prefilter: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    /// "cassette:<path>" for offline replay, or an MCP http URL.
    pub backend: String,
    pub budget: u32,
    pub frontier_sample: usize,
    /// Exploration confidence floor: "low", "medium", or "high".
    pub frontier_floor: String,
    pub variants_per_start: u32,
    pub agent_temperature: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            backend: "cassette:fixtures/live_cassette.jsonl".into(),
            budget: 6,
            frontier_sample: 8,
            frontier_floor: "medium".into(),
            variants_per_start: 1,
            agent_temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub variants: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { variants: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub top_k: usize,
    pub port: u16,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            top_k: 5,
            port: 8931,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// "scripted", "scripted-noisy", or "cmd:<command>".
    pub agent: String,
    pub rollouts: usize,
    pub curriculum_rollouts: usize,
    pub activation_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            agent: "scripted".into(),
            rollouts: 16,
            curriculum_rollouts: 8,
            activation_threshold: 10,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn build_gateway(&self) -> anyhow::Result<JudgeGateway> {
        let gw = match self.gateway.mode.as_str() {
            "stub" => {
                let rules = stub_ruleset_load(&self.gateway.stub_rules).with_context(|| {
                    format!("loading stub rules {}", self.gateway.stub_rules.display())
                })?;
                JudgeGateway::stub(rules)
            }
            "http" => {
                anyhow::ensure!(
                    !self.gateway.endpoint.is_empty(),
                    "gateway.endpoint is required in http mode"
                );
                JudgeGateway::http(HttpJudgeConfig {
                    endpoint: self.gateway.endpoint.clone(),
                    model: self.gateway.model.clone(),
                    credential_env: self.gateway.credential_env.clone(),
                    timeout_secs: self.gateway.timeout_secs,
                })?
            }
            other => anyhow::bail!("unknown gateway mode '{other}' (expected stub or http)"),
        };
        let gw = gw.with_retry_budget(self.gateway.retries);
        if self.gateway.cache {
            if let Some(parent) = self.paths.judge_cache.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            Ok(gw.with_cache_file(self.paths.judge_cache.clone())?)
        } else {
            Ok(gw)
        }
    }
}
