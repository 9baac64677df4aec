//! Registry ingest: collect candidate MCP servers, deduplicate, and screen
//! each one against the four suitability criteria (stateless, no user
//! auth, schema clarity, non-triviality).
//!
//! Fixture-first: CI reads server documents from a directory; a live
//! registry is an HTTP adapter behind the same interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{read_artifact, write_artifact, ArtifactError};
use crate::judge::{JudgeError, JudgeGateway, JudgeRequest, JudgeRole};
use crate::prompt;
use crate::rng::StageRng;
use crate::schema::{parse_tool_spec, SchemaError, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("bad server document in {origin}: {source}")]
    BadDocument {
        origin: String,
        #[source]
        source: SchemaError,
    },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Stdio,
    Http,
    Sse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionConfig {
    pub transport: TransportKind,
    pub endpoint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Registry,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerRecord {
    pub server_id: String,
    pub display_name: String,
    pub connection: ConnectionConfig,
    pub tools: Vec<ToolSpec>,
    pub provenance: Provenance,
}

/// Parse one server document:
/// `{"server_id", "display_name", "connection": {"transport", "endpoint"}, "tools": [...]}`.
/// Tool entries omit `server_id`; it is injected from the server.
pub fn parse_server_doc(
    doc: &Value,
    provenance: Provenance,
    origin: &str,
) -> Result<ServerRecord, IngestError> {
    let bad = |s: SchemaError| IngestError::BadDocument {
        origin: origin.to_owned(),
        source: s,
    };
    let server_id = doc
        .get("server_id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_owned();
    if server_id.is_empty() {
        return Err(bad(SchemaError::MalformedSchema("missing server_id".into())));
    }
    let display_name = doc
        .get("display_name")
        .and_then(Value::as_str)
        .unwrap_or(&server_id)
        .to_owned();
    let connection: ConnectionConfig = doc
        .get("connection")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| bad(SchemaError::MalformedSchema(format!("connection: {e}"))))?
        .unwrap_or(ConnectionConfig {
            transport: TransportKind::Http,
            endpoint: String::new(),
        });
    let mut tools = Vec::new();
    if let Some(raw_tools) = doc.get("tools").and_then(Value::as_array) {
        for raw in raw_tools {
            let mut with_server = raw.clone();
            if let Some(obj) = with_server.as_object_mut() {
                obj.entry("server_id").or_insert(json!(server_id));
            }
            tools.push(parse_tool_spec(&with_server).map_err(bad)?);
        }
    }
    Ok(ServerRecord {
        server_id,
        display_name,
        connection,
        tools,
        provenance,
    })
}

#[derive(Debug, Clone)]
pub enum IngestSource {
    /// Directory of `*.json` (one document) and `*.jsonl` (one document
    /// per line) server files.
    FixtureDir(PathBuf),
    /// Registry base URL; each query becomes `GET {url}?q={query}`
    /// returning a JSON array of server documents.
    Registry(String),
}

impl IngestSource {
    pub fn parse(s: &str) -> IngestSource {
        if s.starts_with("http://") || s.starts_with("https://") {
            IngestSource::Registry(s.to_owned())
        } else {
            IngestSource::FixtureDir(PathBuf::from(s))
        }
    }
}

/// Collect servers matching each query, concatenated across queries in
/// order. Duplicates across queries are intentionally kept; dedup is a
/// separate step. An empty query list yields an empty result.
pub fn list_servers(
    source: &IngestSource,
    queries: &[String],
) -> Result<Vec<ServerRecord>, IngestError> {
    match source {
        IngestSource::FixtureDir(dir) => {
            let pool = read_fixture_dir(dir)?;
            let mut out = Vec::new();
            for q in queries {
                for record in &pool {
                    if query_matches(record, q) {
                        out.push(record.clone());
                    }
                }
            }
            Ok(out)
        }
        IngestSource::Registry(url) => {
            let client = reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .map_err(|e| IngestError::SourceUnreachable(e.to_string()))?;
            let mut out = Vec::new();
            for q in queries {
                let resp = client
                    .get(url)
                    .query(&[("q", q.as_str())])
                    .send()
                    .map_err(|e| IngestError::SourceUnreachable(e.to_string()))?;
                if !resp.status().is_success() {
                    return Err(IngestError::SourceUnreachable(format!(
                        "registry returned {}",
                        resp.status()
                    )));
                }
                let docs: Vec<Value> = resp
                    .json()
                    .map_err(|e| IngestError::SourceUnreachable(e.to_string()))?;
                for doc in docs {
                    out.push(parse_server_doc(&doc, Provenance::Registry, url)?);
                }
            }
            Ok(out)
        }
    }
}

fn read_fixture_dir(dir: &Path) -> Result<Vec<ServerRecord>, IngestError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| IngestError::SourceUnreachable(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("json") | Some("jsonl")
            )
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| IngestError::SourceUnreachable(format!("{origin}: {e}")))?;
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            for line in text.lines() {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let doc: Value = serde_json::from_str(trimmed).map_err(|e| {
                    IngestError::SourceUnreachable(format!("{origin}: bad JSON line: {e}"))
                })?;
                out.push(parse_server_doc(&doc, Provenance::Fixture, &origin)?);
            }
        } else {
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| IngestError::SourceUnreachable(format!("{origin}: bad JSON: {e}")))?;
            out.push(parse_server_doc(&doc, Provenance::Fixture, &origin)?);
        }
    }
    Ok(out)
}

fn query_matches(record: &ServerRecord, query: &str) -> bool {
    if query.is_empty() {
        return true;
    }
    let q = query.to_lowercase();
    record.server_id.to_lowercase().contains(&q)
        || record.display_name.to_lowercase().contains(&q)
        || record.tools.iter().any(|t| {
            t.tool_name.to_lowercase().contains(&q) || t.description.to_lowercase().contains(&q)
        })
}

/// Keep the first occurrence per server_id, then drop servers that expose
/// no tools.
pub fn dedup_servers(records: Vec<ServerRecord>) -> Vec<ServerRecord> {
    let mut seen = std::collections::BTreeSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.server_id.clone()))
        .filter(|r| !r.tools.is_empty())
        .collect()
}

/// Per-criterion screening verdict. `pass` is always the conjunction of
/// the four booleans, recomputed locally regardless of what the backend
/// says.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub stateless: bool,
    pub no_user_auth: bool,
    pub schema_clear: bool,
    pub nontrivial: bool,
    pub pass: bool,
    pub rationale: BTreeMap<String, String>,
}

impl ScreeningVerdict {
    pub fn from_flags(
        stateless: bool,
        no_user_auth: bool,
        schema_clear: bool,
        nontrivial: bool,
        rationale: BTreeMap<String, String>,
    ) -> ScreeningVerdict {
        ScreeningVerdict {
            stateless,
            no_user_auth,
            schema_clear,
            nontrivial,
            pass: stateless && no_user_auth && schema_clear && nontrivial,
            rationale,
        }
    }
}

/// Screen one server through the gateway's `server_screen` role.
pub fn screen_server(
    record: &ServerRecord,
    gateway: &JudgeGateway,
) -> Result<ScreeningVerdict, JudgeError> {
    let tools_block: String = record
        .tools
        .iter()
        .map(|t| {
            let params: Vec<String> = t
                .params()
                .iter()
                .map(|p| {
                    format!(
                        "{}: {}{} — {}",
                        p.name,
                        p.type_keyword.as_deref().unwrap_or("<untyped>"),
                        if p.required { " (required)" } else { "" },
                        p.description.as_deref().unwrap_or("<no description>")
                    )
                })
                .collect();
            format!(
                "- {}: {}\n  params: {}",
                t.tool_name,
                t.description,
                if params.is_empty() {
                    "(none)".to_owned()
                } else {
                    params.join("; ")
                }
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let schema_issues: Vec<String> = record
        .tools
        .iter()
        .flat_map(|t| t.clarity_issues())
        .collect();
    let rendered = prompt::render(
        prompt::template_for(JudgeRole::ServerScreen),
        &[
            ("server_id", record.server_id.clone()),
            ("display_name", record.display_name.clone()),
            (
                "transport",
                format!("{:?}", record.connection.transport).to_lowercase(),
            ),
            ("endpoint", record.connection.endpoint.clone()),
            ("tool_count", record.tools.len().to_string()),
            ("tools", tools_block),
            (
                "schema_issues",
                if schema_issues.is_empty() {
                    "none".to_owned()
                } else {
                    schema_issues.join("; ")
                },
            ),
        ],
    );
    let resp = gateway.complete(&JudgeRequest::for_role(JudgeRole::ServerScreen, rendered))?;
    let v = resp.value.as_value();
    let flag = |k: &str| v.get(k).and_then(Value::as_bool).unwrap_or(false);
    let mut rationale: BTreeMap<String, String> = v
        .get("rationale")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .filter_map(|(k, rv)| rv.as_str().map(|s| (k.clone(), s.to_owned())))
                .collect()
        })
        .unwrap_or_default();
    // Statelessness cannot be proven from metadata; make that caveat part
    // of the recorded rationale.
    let note = "judged from tool metadata only";
    rationale
        .entry("stateless".to_owned())
        .and_modify(|s| {
            if !s.contains(note) {
                *s = format!("{s} ({note})");
            }
        })
        .or_insert_with(|| note.to_owned());
    Ok(ScreeningVerdict::from_flags(
        flag("stateless"),
        flag("no_user_auth"),
        flag("schema_clear"),
        flag("nontrivial"),
        rationale,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenedServer {
    pub server: ServerRecord,
    pub verdict: ScreeningVerdict,
}

/// Stage counts: scraped -> exposing at least one tool -> passed screening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestFunnel {
    pub scraped: usize,
    pub with_tools: usize,
    pub passed: usize,
}

/// The full ingest flow: list, dedup, screen, sorted by server_id.
pub fn ingest_and_screen(
    source: &IngestSource,
    queries: &[String],
    gateway: &JudgeGateway,
) -> Result<(Vec<ScreenedServer>, IngestFunnel), IngestError> {
    let listed = list_servers(source, queries)?;
    let scraped = {
        let mut ids = std::collections::BTreeSet::new();
        listed.iter().for_each(|r| {
            ids.insert(r.server_id.clone());
        });
        ids.len()
    };
    let mut deduped = dedup_servers(listed);
    deduped.sort_by(|a, b| a.server_id.cmp(&b.server_id));
    let with_tools = deduped.len();
    let mut screened = Vec::new();
    for server in deduped {
        let verdict = screen_server(&server, gateway)?;
        screened.push(ScreenedServer { server, verdict });
    }
    let passed = screened.iter().filter(|s| s.verdict.pass).count();
    Ok((
        screened,
        IngestFunnel {
            scraped,
            with_tools,
            passed,
        },
    ))
}

/// Sample verdicts for human spot-checking.
pub fn sample_verdicts<'a>(
    screened: &'a [ScreenedServer],
    n: usize,
    rng: &mut StageRng,
) -> Vec<&'a ScreenedServer> {
    if screened.is_empty() || n == 0 {
        return Vec::new();
    }
    let amount = n.min(screened.len());
    rand::seq::index::sample(rng, screened.len(), amount)
        .into_iter()
        .map(|i| &screened[i])
        .collect()
}

pub fn save_servers(
    path: &Path,
    screened: &[ScreenedServer],
    funnel: IngestFunnel,
) -> Result<(), ArtifactError> {
    write_artifact(path, "servers", json!({"funnel": funnel}), screened.iter())?;
    Ok(())
}

pub fn load_servers(path: &Path) -> Result<(Vec<ScreenedServer>, Option<IngestFunnel>), ArtifactError> {
    let (header, items): (_, Vec<ScreenedServer>) = read_artifact(path, "servers")?;
    let funnel = header
        .extra
        .get("funnel")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok());
    Ok((items, funnel))
}

/// All tools of servers that passed screening, sorted by tool ref.
pub fn retained_tools(screened: &[ScreenedServer]) -> Vec<ToolSpec> {
    let mut tools: Vec<ToolSpec> = screened
        .iter()
        .filter(|s| s.verdict.pass)
        .flat_map(|s| s.server.tools.iter().cloned())
        .collect();
    tools.sort_by_key(|t| t.tool_ref());
    tools
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{stub_ruleset_load, JudgeGateway};
    use std::io::Write;

    fn server_doc(id: &str, tools: usize) -> Value {
        let tool_docs: Vec<Value> = (0..tools)
            .map(|i| {
                json!({
                    "tool_name": format!("tool_{i}"),
                    "description": format!("does thing {i}"),
                    "input_schema": {
                        "type": "object",
                        "properties": {"q": {"type": "string", "description": "query"}},
                        "required": ["q"]
                    }
                })
            })
            .collect();
        json!({
            "server_id": id,
            "display_name": format!("Server {id}"),
            "connection": {"transport": "http", "endpoint": format!("https://{id}.example/mcp")},
            "tools": tool_docs
        })
    }

    fn fixture_dir(docs: &[Value]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (i, doc) in docs.iter().enumerate() {
            std::fs::write(
                dir.path().join(format!("{i:02}.json")),
                serde_json::to_string_pretty(doc).unwrap(),
            )
            .unwrap();
        }
        dir
    }

    #[test]
    fn fixture_dir_lists_every_file() {
        let docs: Vec<Value> = (0..5).map(|i| server_doc(&format!("srv-{i}"), 1)).collect();
        let dir = fixture_dir(&docs);
        let records = list_servers(
            &IngestSource::FixtureDir(dir.path().to_path_buf()),
            &["".to_owned()],
        )
        .unwrap();
        assert_eq!(records.len(), 5);
    }

    #[test]
    fn overlapping_queries_duplicate_before_dedup() {
        let dir = fixture_dir(&[server_doc("alpha", 1)]);
        let records = list_servers(
            &IngestSource::FixtureDir(dir.path().to_path_buf()),
            &["alpha".to_owned(), "server".to_owned()],
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(dedup_servers(records).len(), 1);
    }

    #[test]
    fn empty_query_list_is_empty() {
        let dir = fixture_dir(&[server_doc("alpha", 1)]);
        let records =
            list_servers(&IngestSource::FixtureDir(dir.path().to_path_buf()), &[]).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn dedup_keeps_first_and_drops_toolless() {
        let a = parse_server_doc(&server_doc("a", 1), Provenance::Fixture, "t").unwrap();
        let b = parse_server_doc(&server_doc("b", 2), Provenance::Fixture, "t").unwrap();
        let empty = parse_server_doc(&server_doc("empty", 0), Provenance::Fixture, "t").unwrap();
        let out = dedup_servers(vec![a.clone(), b.clone(), a.clone(), empty]);
        assert_eq!(out, vec![a.clone(), b.clone()]);
        // Already-unique input is unchanged.
        assert_eq!(dedup_servers(vec![a.clone(), b.clone()]), vec![a, b]);
    }

    fn screen_gateway(rules: &[String]) -> JudgeGateway {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for r in rules {
            writeln!(file, "{r}").unwrap();
        }
        JudgeGateway::stub(stub_ruleset_load(file.path()).unwrap())
    }

    fn screen_rule(server_marker: &str, flags: [bool; 4]) -> String {
        format!(
            r#"{{"role":"server_screen","contains":["SERVER: {server_marker}"],"response":{{"stateless":{},"no_user_auth":{},"schema_clear":{},"nontrivial":{},"rationale":{{"nontrivial":"fixture rule"}}}}}}"#,
            flags[0], flags[1], flags[2], flags[3]
        )
    }

    #[test]
    fn screening_is_conjunctive_and_monotone() {
        let record = parse_server_doc(&server_doc("oauthy", 1), Provenance::Fixture, "t").unwrap();
        let gw = screen_gateway(&[screen_rule("oauthy", [true, false, true, true])]);
        let verdict = screen_server(&record, &gw).unwrap();
        assert!(!verdict.no_user_auth);
        assert!(!verdict.pass);
        // Flipping any criterion true -> false can never flip pass to true.
        for i in 0..4 {
            let mut flags = [
                verdict.stateless,
                verdict.no_user_auth,
                verdict.schema_clear,
                verdict.nontrivial,
            ];
            flags[i] = false;
            let weaker =
                ScreeningVerdict::from_flags(flags[0], flags[1], flags[2], flags[3], BTreeMap::new());
            assert!(!weaker.pass || verdict.pass);
        }
    }

    #[test]
    fn compliant_server_passes_and_rationale_notes_metadata_limit() {
        let record = parse_server_doc(&server_doc("goodsrv", 2), Provenance::Fixture, "t").unwrap();
        let gw = screen_gateway(&[screen_rule("goodsrv", [true, true, true, true])]);
        let verdict = screen_server(&record, &gw).unwrap();
        assert!(verdict.pass);
        assert!(verdict.rationale["stateless"].contains("metadata only"));
    }

    #[test]
    fn funnel_counts_each_stage() {
        let docs = vec![
            server_doc("a", 1),
            server_doc("b", 0),
            server_doc("c", 1),
        ];
        let dir = fixture_dir(&docs);
        let gw = screen_gateway(&[
            screen_rule("a", [true, true, true, true]),
            screen_rule("c", [true, true, true, false]),
        ]);
        let (screened, funnel) = ingest_and_screen(
            &IngestSource::FixtureDir(dir.path().to_path_buf()),
            &["".to_owned()],
            &gw,
        )
        .unwrap();
        assert_eq!(funnel, IngestFunnel { scraped: 3, with_tools: 2, passed: 1 });
        assert_eq!(screened.len(), 2);
        assert_eq!(retained_tools(&screened).len(), 1);
    }

    #[test]
    fn servers_artifact_round_trips() {
        let record = parse_server_doc(&server_doc("a", 1), Provenance::Fixture, "t").unwrap();
        let screened = vec![ScreenedServer {
            server: record,
            verdict: ScreeningVerdict::from_flags(true, true, true, true, BTreeMap::new()),
        }];
        let funnel = IngestFunnel { scraped: 1, with_tools: 1, passed: 1 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("servers.jsonl");
        save_servers(&path, &screened, funnel).unwrap();
        let (loaded, loaded_funnel) = load_servers(&path).unwrap();
        assert_eq!(loaded, screened);
        assert_eq!(loaded_funnel, Some(funnel));
    }
}
