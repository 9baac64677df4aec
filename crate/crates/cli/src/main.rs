use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use toolforge_cli::config::PipelineConfig;
use toolforge_cli::stages::{self, SimTransport};

#[derive(Parser)]
#[command(
    name = "toolforge",
    version,
    about = "Build verified tool-call tasks from MCP servers and replay them offline"
)]
struct Cli {
    /// TOML config file; flags override individual settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect, deduplicate, and screen MCP servers.
    Ingest {
        /// Fixture directory or registry base URL.
        #[arg(long)]
        source: Option<String>,
        /// Comma-separated listing queries.
        #[arg(long, value_delimiter = ',')]
        queries: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print N sampled verdicts for human review.
        #[arg(long)]
        spot_check: Option<usize>,
    },
    /// Judge all tool pairs and build the compatibility graph.
    Graph {
        #[arg(long)]
        servers: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip pairs whose destination declares no parameters.
        #[arg(long)]
        prefilter: bool,
    },
    /// Explore executed call DAGs from each eligible start tool.
    Explore {
        #[arg(long)]
        graph: Option<PathBuf>,
        /// cassette:<path> or an MCP http URL.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        sample: Option<usize>,
        /// Frontier confidence floor: low, medium, or high.
        #[arg(long)]
        floor: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Back-chain task candidates from explored DAGs.
    Synthesize {
        #[arg(long)]
        dags: Option<PathBuf>,
        #[arg(long)]
        variants: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the five-criterion validation gate over synthesized tasks.
    Validate {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        dags: Option<PathBuf>,
    },
    /// Index every recorded call into a cassette.
    Index {
        #[arg(long)]
        dags: Option<PathBuf>,
        #[arg(long)]
        servers: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a cassette as an MCP simulator (HTTP or stdio).
    Simulate {
        #[arg(long)]
        cassette: Option<PathBuf>,
        /// Tasks file for ground-truth trajectory prioritization.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, conflicts_with = "stdio")]
        port: Option<u16>,
        /// Serve newline-delimited JSON-RPC on stdin/stdout.
        #[arg(long)]
        stdio: bool,
    },
    /// Roll out an agent over validated tasks and score rewards, pass@k,
    /// and the curriculum filter.
    Evaluate {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        cassette: Option<PathBuf>,
        /// scripted, scripted-noisy, or cmd:<command>.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Where to write the pass@k report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Corpus statistics over tasks (and DAGs when available).
    Stats {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        dags: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every batch stage in order: ingest through evaluate.
    Pipeline,
    #[command(hide = true)]
    AgentStub,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stage_name = stage_name(&cli.command);
    if let Err(err) = run(cli) {
        eprintln!(
            "{}",
            json!({"error": {"stage": stage_name, "message": format!("{err:#}")}})
        );
        std::process::exit(1);
    }
}

fn stage_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Ingest { .. } => "ingest",
        Cmd::Graph { .. } => "graph",
        Cmd::Explore { .. } => "explore",
        Cmd::Synthesize { .. } => "synthesize",
        Cmd::Validate { .. } => "validate",
        Cmd::Index { .. } => "index",
        Cmd::Simulate { .. } => "simulate",
        Cmd::Evaluate { .. } => "evaluate",
        Cmd::Stats { .. } => "stats",
        Cmd::Pipeline => "pipeline",
        Cmd::AgentStub => "agent-stub",
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_ref(), cli.seed)?;
    match cli.command {
        Cmd::Ingest {
            source,
            queries,
            out,
            spot_check,
        } => {
            if let Some(v) = source {
                cfg.ingest.source = v;
            }
            if let Some(v) = queries {
                cfg.ingest.queries = v;
            }
            if let Some(v) = out {
                cfg.paths.servers = v;
            }
            if let Some(v) = spot_check {
                cfg.ingest.spot_check = v;
            }
            stages::run_ingest(&cfg)
        }
        Cmd::Graph {
            servers,
            out,
            prefilter,
        } => {
            if let Some(v) = servers {
                cfg.paths.servers = v;
            }
            if let Some(v) = out {
                cfg.paths.graph = v;
            }
            cfg.graph.prefilter |= prefilter;
            stages::run_graph(&cfg)
        }
        Cmd::Explore {
            graph,
            backend,
            budget,
            sample,
            floor,
            out,
        } => {
            if let Some(v) = graph {
                cfg.paths.graph = v;
            }
            if let Some(v) = backend {
                cfg.explore.backend = v;
            }
            if let Some(v) = budget {
                cfg.explore.budget = v;
            }
            if let Some(v) = sample {
                cfg.explore.frontier_sample = v;
            }
            if let Some(v) = floor {
                cfg.explore.frontier_floor = v;
            }
            if let Some(v) = out {
                cfg.paths.dags = v;
            }
            stages::run_explore(&cfg)
        }
        Cmd::Synthesize {
            dags,
            variants,
            out,
        } => {
            if let Some(v) = dags {
                cfg.paths.dags = v;
            }
            if let Some(v) = variants {
                cfg.synth.variants = v;
            }
            if let Some(v) = out {
                cfg.paths.tasks = v;
            }
            stages::run_synthesize(&cfg)
        }
        Cmd::Validate { tasks, dags } => {
            if let Some(v) = tasks {
                cfg.paths.tasks = v;
            }
            if let Some(v) = dags {
                cfg.paths.dags = v;
            }
            stages::run_validate(&cfg)
        }
        Cmd::Index { dags, servers, out } => {
            if let Some(v) = dags {
                cfg.paths.dags = v;
            }
            if let Some(v) = servers {
                cfg.paths.servers = v;
            }
            if let Some(v) = out {
                cfg.paths.cassette = v;
            }
            stages::run_index(&cfg)
        }
        Cmd::Simulate {
            cassette,
            tasks,
            overlay,
            port,
            stdio,
        } => {
            if let Some(v) = cassette {
                cfg.paths.cassette = v;
            }
            if let Some(v) = tasks {
                cfg.paths.tasks = v;
            }
            if let Some(v) = overlay {
                cfg.paths.overlay = v;
            }
            let transport = if stdio {
                SimTransport::Stdio
            } else {
                SimTransport::Http(port.unwrap_or(cfg.sim.port))
            };
            stages::run_simulate(&cfg, transport)
        }
        Cmd::Evaluate {
            tasks,
            cassette,
            agent,
            rollouts,
            report,
        } => {
            if let Some(v) = tasks {
                cfg.paths.tasks = v;
            }
            if let Some(v) = cassette {
                cfg.paths.cassette = v;
            }
            if let Some(v) = agent {
                cfg.eval.agent = v;
            }
            if let Some(v) = rollouts {
                cfg.eval.rollouts = v;
            }
            if let Some(v) = report {
                cfg.paths.passk = v;
            }
            stages::run_evaluate(&cfg)
        }
        Cmd::Stats { tasks, dags, out } => {
            if let Some(v) = tasks {
                cfg.paths.tasks = v;
            }
            if let Some(v) = dags {
                cfg.paths.dags = v;
            }
            stages::run_stats(&cfg, out.as_deref()).map(|_| ())
        }
        Cmd::Pipeline => stages::run_pipeline(&cfg),
        Cmd::AgentStub => stages::run_agent_stub(),
    }
}
