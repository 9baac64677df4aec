//! One function per pipeline stage. Every stage reads its inputs from the
//! merged config, writes its artifact plus a run manifest, and prints a
//! short human summary to stdout.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use serde_json::{json, Value};
use toolforge::artifact::write_artifact;
use toolforge::canonical::digest_of;
use toolforge::eval::{
    filter_batch, pass_at_k, run_rollouts, save_curriculum, Agent, CurriculumState, PassAtK,
};
use toolforge::explore::{explore, load_dags, save_dags, validate_dag, ExploreOptions, ToolBackend};
use toolforge::graph::{build_graph, BuildOptions, Confidence, ToolGraph};
use toolforge::ingest::{
    ingest_and_screen, load_servers, retained_tools, sample_verdicts, save_servers, IngestSource,
};
use toolforge::mcp::{serve_http, serve_stdio, McpBackend, McpServer};
use toolforge::rng::stage_rng;
use toolforge::schema::{ToolRef, ToolSpec};
use toolforge::sim::{build_index, CallIndex, CassetteBackend, Simulator};
use toolforge::synth::{
    bind_answer, load_tasks, save_tasks, structural_precheck, synthesize_tasks, validate_task,
    TaskLine,
};

use crate::config::PipelineConfig;
use crate::manifest::write_stage_manifest;
use crate::stats::{corpus_stats, StatsReport};

pub fn run_ingest(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gateway = cfg.build_gateway()?;
    let source = IngestSource::parse(&cfg.ingest.source);
    let (screened, funnel) = ingest_and_screen(&source, &cfg.ingest.queries, &gateway)?;
    save_servers(&cfg.paths.servers, &screened, funnel)?;
    println!(
        "ingest: {} scraped -> {} with tools -> {} passed screening",
        funnel.scraped, funnel.with_tools, funnel.passed
    );
    if cfg.ingest.spot_check > 0 {
        let mut rng = stage_rng(cfg.seed, "ingest/spot_check");
        for s in sample_verdicts(&screened, cfg.ingest.spot_check, &mut rng) {
            println!(
                "spot-check {}: pass={} {}",
                s.server.server_id,
                s.verdict.pass,
                serde_json::to_string(&s.verdict)?
            );
        }
    }
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "ingest",
        cfg.seed,
        &stub_inputs(cfg),
        &[&cfg.paths.servers],
        json!({"funnel": funnel, "judge_calls": gateway.backend_calls()}),
    )?;
    Ok(())
}

fn stub_inputs(cfg: &PipelineConfig) -> Vec<&Path> {
    if cfg.gateway.mode == "stub" {
        vec![cfg.gateway.stub_rules.as_path()]
    } else {
        Vec::new()
    }
}

pub fn run_graph(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gateway = cfg.build_gateway()?;
    let (screened, _) = load_servers(&cfg.paths.servers)?;
    let tools = retained_tools(&screened);
    anyhow::ensure!(!tools.is_empty(), "no screened-in tools to build a graph from");
    let build = build_graph(
        &tools,
        &gateway,
        BuildOptions {
            prefilter: cfg.graph.prefilter,
        },
    )?;
    build.graph.save(&cfg.paths.graph)?;
    let stats = build.graph.stats();
    println!(
        "graph: {} tools, {} edges (mean out-degree {:.2}, {} medium-or-higher), {} pairs judged, {} prefiltered",
        stats.nodes,
        stats.edges,
        stats.mean_out_degree,
        stats.medium_or_higher,
        build.judged_pairs,
        build.skipped.len()
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "graph",
        cfg.seed,
        &[cfg.paths.servers.as_path()],
        &[&cfg.paths.graph],
        json!({"stats": stats, "judged_pairs": build.judged_pairs, "prefiltered": build.skipped.len()}),
    )?;
    Ok(())
}

fn build_backend(spec: &str) -> anyhow::Result<Box<dyn ToolBackend>> {
    if let Some(path) = spec.strip_prefix("cassette:") {
        Ok(Box::new(CassetteBackend::load(Path::new(path))?))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(McpBackend::connect(spec)?))
    } else {
        anyhow::bail!("backend must be cassette:<path> or an http(s) MCP URL, got '{spec}'")
    }
}

pub fn run_explore(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gateway = cfg.build_gateway()?;
    let graph = ToolGraph::load(&cfg.paths.graph)?;
    let backend = build_backend(&cfg.explore.backend)?;
    let floor: Confidence = cfg
        .explore
        .frontier_floor
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))?;
    let specs: std::collections::BTreeMap<ToolRef, ToolSpec> = backend
        .list_tools()
        .into_iter()
        .map(|t| (t.tool_ref(), t))
        .collect();

    let starts = graph.eligible_start_tools();
    anyhow::ensure!(!starts.is_empty(), "graph has no eligible start tools");
    let mut dags = Vec::new();
    let mut skipped = 0usize;
    for start in &starts {
        for variant in 0..cfg.explore.variants_per_start {
            let label = format!("explore/{}/{variant}", start.qualified());
            let dag_id = format!(
                "dag_{}",
                digest_of(&json!({"seed": cfg.seed, "start": start.qualified(), "variant": variant}))?
                    .short()
            );
            let options = ExploreOptions {
                dag_id,
                budget: cfg.explore.budget,
                frontier_sample: cfg.explore.frontier_sample,
                frontier_floor: floor,
                arg_retries: 2,
                agent_temperature: cfg.explore.agent_temperature,
            };
            let mut rng = stage_rng(cfg.seed, &label);
            match explore(start, &options, backend.as_ref(), &graph, &gateway, &mut rng) {
                Ok(dag) => {
                    let report = validate_dag(&dag, &specs);
                    if !report.is_clean() {
                        anyhow::bail!(
                            "exploration from {} produced an invalid DAG: {:?}",
                            start.qualified(),
                            report.issues
                        );
                    }
                    dags.push(dag);
                }
                Err(e) => {
                    log::warn!("skipping exploration from {}: {e}", start.qualified());
                    skipped += 1;
                }
            }
        }
    }
    save_dags(&cfg.paths.dags, &dags)?;
    let total_calls: u32 = dags.iter().map(|d| d.budget_used).sum();
    println!(
        "explore: {} starts -> {} DAGs ({} skipped), {} executed calls",
        starts.len(),
        dags.len(),
        skipped,
        total_calls
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "explore",
        cfg.seed,
        &[cfg.paths.graph.as_path()],
        &[&cfg.paths.dags],
        json!({"dags": dags.len(), "skipped": skipped, "calls": total_calls}),
    )?;
    Ok(())
}

pub fn run_synthesize(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gateway = cfg.build_gateway()?;
    let dags = load_dags(&cfg.paths.dags)?;
    let mut lines: Vec<TaskLine> = Vec::new();
    let mut rejected = 0usize;
    for dag in &dags {
        match synthesize_tasks(dag, &gateway, cfg.synth.variants) {
            Ok(outcome) => {
                rejected += outcome.rejected.len();
                for (idx, reason) in &outcome.rejected {
                    log::warn!("{}: candidate {idx} rejected: {reason}", dag.dag_id);
                }
                lines.extend(outcome.tasks.into_iter().map(|task| TaskLine {
                    task,
                    verdict: None,
                }));
            }
            Err(toolforge::synth::SynthError::NoUsableNodes(id)) => {
                log::warn!("skipping {id}: no usable nodes");
            }
            Err(e) => return Err(e.into()),
        }
    }
    save_tasks(
        &cfg.paths.tasks,
        &lines,
        json!({"dags": dags.len(), "candidates_rejected": rejected}),
    )?;
    println!(
        "synthesize: {} DAGs -> {} task candidates ({} rejected at intake)",
        dags.len(),
        lines.len(),
        rejected
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "synthesize",
        cfg.seed,
        &[cfg.paths.dags.as_path()],
        &[&cfg.paths.tasks],
        json!({"tasks": lines.len(), "rejected": rejected}),
    )?;
    Ok(())
}

pub fn run_validate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let gateway = cfg.build_gateway()?;
    let dags = load_dags(&cfg.paths.dags)?;
    let dag_index: std::collections::BTreeMap<&str, &toolforge::CallDag> =
        dags.iter().map(|d| (d.dag_id.as_str(), d)).collect();
    let mut lines = load_tasks(&cfg.paths.tasks)?;
    let candidates = lines.len();
    let mut passed = 0usize;
    for line in &mut lines {
        let dag = dag_index
            .get(line.task.source_dag.as_str())
            .with_context(|| format!("task {} references unknown DAG", line.task.task_id))?;
        let precheck = structural_precheck(&line.task);
        anyhow::ensure!(
            precheck.is_clean(),
            "task {} fails precheck: {:?}",
            line.task.task_id,
            precheck.violations
        );
        bind_answer(&line.task, dag)
            .with_context(|| format!("task {} failed answer binding", line.task.task_id))?;
        let verdict = validate_task(&line.task, dag, &gateway)?;
        if verdict.pass {
            passed += 1;
        }
        line.verdict = Some(verdict);
    }
    save_tasks(
        &cfg.paths.tasks,
        &lines,
        json!({"candidates": candidates, "validated_pass": passed}),
    )?;
    println!(
        "validate: {passed}/{candidates} tasks pass the five-criterion gate ({:.1}% filtered out)",
        if candidates == 0 {
            0.0
        } else {
            100.0 * (candidates - passed) as f64 / candidates as f64
        }
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "validate",
        cfg.seed,
        &[cfg.paths.dags.as_path()],
        &[&cfg.paths.tasks],
        json!({"candidates": candidates, "passed": passed}),
    )?;
    Ok(())
}

pub fn run_index(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let dags = load_dags(&cfg.paths.dags)?;
    let (screened, _) = load_servers(&cfg.paths.servers)?;
    let specs = retained_tools(&screened);
    let (index, stats) = build_index(&dags, specs, cfg.sim.top_k)?;
    index.save_cassette(&cfg.paths.cassette)?;
    println!(
        "index: {} records from {} DAGs ({} duplicates, {} error nodes skipped), {} tools advertised",
        stats.records,
        dags.len(),
        stats.duplicates_skipped,
        stats.error_nodes_skipped,
        index.specs().len()
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "index",
        cfg.seed,
        &[cfg.paths.dags.as_path(), cfg.paths.servers.as_path()],
        &[&cfg.paths.cassette],
        json!({"stats": stats}),
    )?;
    Ok(())
}

pub enum SimTransport {
    Stdio,
    Http(u16),
}

fn load_simulator(cfg: &PipelineConfig) -> anyhow::Result<Simulator> {
    let mut index = CallIndex::load_cassette(&cfg.paths.cassette)?;
    if cfg.paths.tasks.exists() {
        let tasks = load_tasks(&cfg.paths.tasks)?;
        index.register_tasks(tasks.iter().map(|l| &l.task));
    }
    let gateway = Arc::new(cfg.build_gateway()?);
    Ok(Simulator::new(index, Some(gateway)).with_overlay_file(cfg.paths.overlay.clone())?)
}

/// Serve the simulator as an MCP endpoint. Blocks until EOF (stdio) or
/// forever (http).
pub fn run_simulate(cfg: &PipelineConfig, transport: SimTransport) -> anyhow::Result<()> {
    let sim = Arc::new(load_simulator(cfg)?);
    let server = McpServer::new(sim)?;
    match transport {
        SimTransport::Stdio => {
            serve_stdio(&server)?;
            let stats = server.simulator().tier_stats();
            log::info!(
                "simulate: served {} calls (exact={}, fuzzy={}, no_data={})",
                stats.total(),
                stats.exact,
                stats.fuzzy,
                stats.no_data
            );
        }
        SimTransport::Http(port) => {
            let running = serve_http(Arc::new(server), port)?;
            println!("mcp-http listening on {}", running.url());
            use std::io::Write as _;
            std::io::stdout().flush()?;
            running.wait();
        }
    }
    Ok(())
}

pub fn run_evaluate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let all_tasks = load_tasks(&cfg.paths.tasks)?;
    let validated: Vec<_> = all_tasks
        .iter()
        .filter(|l| l.verdict.map(|v| v.pass).unwrap_or(false))
        .map(|l| l.task.clone())
        .collect();
    anyhow::ensure!(
        !validated.is_empty(),
        "no validated tasks to evaluate (run `validate` first)"
    );
    let sim = Arc::new(load_simulator(cfg)?);
    let gateway = cfg.build_gateway()?;
    let agent = Agent::parse(&cfg.eval.agent).map_err(|e| anyhow::anyhow!(e))?;

    // External command agents get an MCP endpoint to talk to.
    let http = match &agent {
        Agent::Command { .. } => {
            let server = McpServer::new(sim.clone())?;
            Some(serve_http(Arc::new(server), 0)?)
        }
        _ => None,
    };
    let url = http.as_ref().map(|h| h.url());
    let run = run_rollouts(
        &validated,
        &sim,
        &agent,
        cfg.eval.rollouts,
        &gateway,
        url.as_deref(),
    )?;
    if let Some(h) = http {
        h.shutdown();
    }

    write_artifact(
        &cfg.paths.rewards,
        "rewards",
        json!({"agent": cfg.eval.agent, "rollouts": cfg.eval.rollouts}),
        run.lines.iter(),
    )?;

    let ks: Vec<usize> = [1usize, 4, 8, 16]
        .into_iter()
        .filter(|k| *k <= cfg.eval.rollouts)
        .collect();
    let reports: Vec<PassAtK> = ks
        .iter()
        .map(|k| pass_at_k(&run.matrix, *k))
        .collect::<Result<_, _>>()?;
    let tier_stats = sim.tier_stats();
    let passk = json!({
        "rollouts": cfg.eval.rollouts,
        "tasks": validated.len(),
        "pass_at_k": reports,
        "tier_stats": tier_stats,
    });
    std::fs::write(&cfg.paths.passk, serde_json::to_string_pretty(&passk)?)?;

    // One curriculum step over the first `curriculum_rollouts` columns
    // (clamped when fewer rollouts were run).
    let per_prompt = cfg.eval.curriculum_rollouts.min(cfg.eval.rollouts);
    let mut state = CurriculumState::new(validated.iter().map(|t| t.task_id.clone()));
    let batch: std::collections::BTreeMap<String, Vec<u8>> = run
        .matrix
        .rows()
        .iter()
        .map(|(task, row)| (task.clone(), row.iter().take(per_prompt).copied().collect()))
        .collect();
    let outcome = filter_batch(&batch, &mut state, per_prompt, cfg.eval.activation_threshold)?;
    save_curriculum(&cfg.paths.curriculum, &state)?;

    for report in &reports {
        println!("evaluate: pass@{} = {:.4}", report.k, report.mean);
    }
    let total = tier_stats.total().max(1);
    println!(
        "evaluate: tiers exact={} ({:.1}%) fuzzy={} ({:.1}%) no_data={} ({:.1}%)",
        tier_stats.exact,
        100.0 * tier_stats.exact as f64 / total as f64,
        tier_stats.fuzzy,
        100.0 * tier_stats.fuzzy as f64 / total as f64,
        tier_stats.no_data,
        100.0 * tier_stats.no_data as f64 / total as f64,
    );
    println!(
        "evaluate: curriculum mastered={} removed={} active={}",
        outcome.mastered.len(),
        outcome.removed.len(),
        state.active.len()
    );
    write_stage_manifest(
        &cfg.paths.manifest_dir,
        "evaluate",
        cfg.seed,
        &[cfg.paths.tasks.as_path(), cfg.paths.cassette.as_path()],
        &[
            &cfg.paths.rewards,
            &cfg.paths.passk,
            &cfg.paths.curriculum,
        ],
        json!({
            "tasks": validated.len(),
            "rollouts": cfg.eval.rollouts,
            "tier_stats": tier_stats,
            "mastered": outcome.mastered.len(),
            "removed": outcome.removed.len(),
        }),
    )?;
    Ok(())
}

pub fn run_stats(cfg: &PipelineConfig, out: Option<&Path>) -> anyhow::Result<StatsReport> {
    let tasks = load_tasks(&cfg.paths.tasks)?;
    let dags = if cfg.paths.dags.exists() {
        load_dags(&cfg.paths.dags)?
    } else {
        Vec::new()
    };
    let report = corpus_stats(&tasks, &dags);
    let rendered = serde_json::to_string_pretty(&report)?;
    println!("{rendered}");
    if let Some(path) = out {
        std::fs::write(path, &rendered)?;
        write_stage_manifest(
            &cfg.paths.manifest_dir,
            "stats",
            cfg.seed,
            &[cfg.paths.tasks.as_path()],
            &[path],
            json!({"tasks": report.tasks}),
        )?;
    }
    Ok(report)
}

/// Run all batch stages in order (everything except the `simulate`
/// daemon).
pub fn run_pipeline(cfg: &PipelineConfig) -> anyhow::Result<()> {
    run_ingest(cfg)?;
    run_graph(cfg)?;
    run_explore(cfg)?;
    run_synthesize(cfg)?;
    run_validate(cfg)?;
    run_index(cfg)?;
    run_evaluate(cfg)?;
    Ok(())
}

/// Hidden helper for exercising external-command agents: consumes the
/// task payload on stdin and answers with a fixed (empty) object.
pub fn run_agent_stub() -> anyhow::Result<()> {
    use std::io::Read;
    let mut buf = String::new();
    std::io::stdin().read_to_string(&mut buf)?;
    let _: Value = serde_json::from_str(&buf).context("agent-stub expects task JSON on stdin")?;
    println!("{}", json!({"answer": {}}));
    Ok(())
}
