//! MCP protocol surface for the simulator: a JSON-RPC 2.0 server speaking
//! `initialize`, `tools/list`, and `tools/call` over stdio or HTTP, plus a
//! generic blocking client and a [`ToolBackend`] adapter over it.
//!
//! Wire format notes (bit-exact details in `docs/FORMATS.md`):
//! - stdio transport is newline-delimited JSON, one message per line;
//! - HTTP transport is one JSON-RPC request per POST body;
//! - tool names on the wire are `server_id "__" tool_name`;
//! - `tools/call` results carry the resolved output as canonical JSON in
//!   `content[0].text`, with tier and provenance under `_meta`;
//! - the task context extension: a `task_id` string accepted in
//!   `initialize` params (session default) and `tools/call` params
//!   (per-call override).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::canonical::{canonicalize, CanonicalValue};
use crate::explore::{BackendError, CallOutput, ToolBackend};
use crate::schema::{ToolRef, ToolSpec};
use crate::sim::{SimResponse, Simulator, TaskContext};

pub const PROTOCOL_VERSION: &str = "2024-11-05";
pub const SERVER_NAME: &str = "toolforge-simulator";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;

#[derive(Debug, thiserror::Error)]
pub enum McpError {
    #[error("wire name collision: {0} maps to more than one tool")]
    WireNameCollision(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bind failed: {0}")]
    Bind(String),
}

#[derive(Debug, Deserialize)]
struct RpcRequest {
    #[serde(default)]
    jsonrpc: Option<String>,
    #[serde(default)]
    id: Option<Value>,
    method: Option<String>,
    #[serde(default)]
    params: Option<Value>,
}

fn rpc_ok(id: Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

fn rpc_err(id: Value, code: i64, message: String) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}})
}

/// The simulator behind an MCP endpoint.
pub struct McpServer {
    sim: Arc<Simulator>,
    wire_names: BTreeMap<String, ToolRef>,
    /// Session default task context, set by `initialize`.
    default_task: Mutex<Option<String>>,
}

impl McpServer {
    pub fn new(sim: Arc<Simulator>) -> Result<McpServer, McpError> {
        let mut wire_names = BTreeMap::new();
        for tool in sim.index().specs().keys() {
            let name = tool.wire_name();
            if wire_names.insert(name.clone(), tool.clone()).is_some() {
                return Err(McpError::WireNameCollision(name));
            }
        }
        Ok(McpServer {
            sim,
            wire_names,
            default_task: Mutex::new(None),
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Handle one raw frame. Returns the response line, or `None` for
    /// notifications. Malformed frames produce an error response and the
    /// server keeps running.
    pub fn handle_line(&self, raw: &str) -> Option<String> {
        let parsed: Result<RpcRequest, _> = serde_json::from_str(raw);
        let response = match parsed {
            Err(e) => Some(rpc_err(Value::Null, PARSE_ERROR, format!("parse error: {e}"))),
            Ok(req) => self.handle(req),
        };
        response.map(|v| v.to_string())
    }

    fn handle(&self, req: RpcRequest) -> Option<Value> {
        if req.jsonrpc.as_deref() != Some("2.0") {
            return Some(rpc_err(
                req.id.unwrap_or(Value::Null),
                INVALID_REQUEST,
                "jsonrpc must be \"2.0\"".into(),
            ));
        }
        let method = match &req.method {
            Some(m) => m.clone(),
            None => {
                return Some(rpc_err(
                    req.id.unwrap_or(Value::Null),
                    INVALID_REQUEST,
                    "missing method".into(),
                ))
            }
        };
        let is_notification = req.id.is_none();
        let id = req.id.clone().unwrap_or(Value::Null);
        let params = req.params.unwrap_or(Value::Null);

        let result = match method.as_str() {
            "initialize" => Some(self.handle_initialize(&params)),
            "notifications/initialized" => None,
            "ping" => Some(Ok(json!({}))),
            "tools/list" => Some(Ok(self.handle_tools_list())),
            "tools/call" => Some(self.handle_tools_call(&params)),
            _ => Some(Err((
                METHOD_NOT_FOUND,
                format!("method '{method}' not found"),
            ))),
        };
        match result {
            None => None,
            Some(_) if is_notification => None,
            Some(Ok(value)) => Some(rpc_ok(id, value)),
            Some(Err((code, message))) => Some(rpc_err(id, code, message)),
        }
    }

    fn handle_initialize(&self, params: &Value) -> Result<Value, (i64, String)> {
        if let Some(task) = extract_task_id(params) {
            *self.default_task.lock().unwrap() = Some(task);
        }
        Ok(json!({
            "protocolVersion": PROTOCOL_VERSION,
            "capabilities": {"tools": {}},
            "serverInfo": {"name": SERVER_NAME, "version": env!("CARGO_PKG_VERSION")},
        }))
    }

    fn handle_tools_list(&self) -> Value {
        let tools: Vec<Value> = self
            .wire_names
            .iter()
            .map(|(name, tool)| {
                let spec = &self.sim.index().specs()[tool];
                json!({
                    "name": name,
                    "description": spec.description,
                    "inputSchema": spec.input_schema,
                })
            })
            .collect();
        json!({"tools": tools})
    }

    fn handle_tools_call(&self, params: &Value) -> Result<Value, (i64, String)> {
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or((INVALID_PARAMS, "params.name is required".to_owned()))?;
        let tool = self
            .wire_names
            .get(name)
            .ok_or((INVALID_PARAMS, format!("unknown tool '{name}'")))?;
        let raw_args = params.get("arguments").cloned().unwrap_or(json!({}));
        let args = canonicalize(&raw_args)
            .map_err(|e| (INVALID_PARAMS, format!("arguments: {e}")))?;
        let ctx = TaskContext {
            task_id: extract_task_id(params).or_else(|| self.default_task.lock().unwrap().clone()),
        };
        let resp = self.sim.resolve(&ctx, tool, &args);
        Ok(call_result_value(&resp))
    }
}

fn extract_task_id(params: &Value) -> Option<String> {
    params
        .get("task_id")
        .or_else(|| params.pointer("/_meta/task_id"))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

fn call_result_value(resp: &SimResponse) -> Value {
    json!({
        "content": [{"type": "text", "text": resp.output.to_canonical_string()}],
        "isError": resp.is_error,
        "_meta": {
            "tier": resp.tier,
            "provenance": resp.provenance,
            "args_digest": resp.digest,
        },
    })
}

/// Serve over stdio until EOF: one JSON-RPC message per line.
pub fn serve_stdio(server: &McpServer) -> Result<(), McpError> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_lines(server, stdin.lock(), stdout.lock())
}

/// Line loop behind [`serve_stdio`], separated for tests.
pub fn serve_lines(
    server: &McpServer,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<(), McpError> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(response) = server.handle_line(&line) {
            writeln!(output, "{response}")?;
            output.flush()?;
        }
    }
    Ok(())
}

/// A running HTTP MCP endpoint. Requests are handled sequentially on one
/// worker thread; drop or call [`HttpSimServer::shutdown`] to stop.
pub struct HttpSimServer {
    addr: std::net::SocketAddr,
    inner: Arc<tiny_http::Server>,
    worker: Option<std::thread::JoinHandle<()>>,
}

impl HttpSimServer {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.inner.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }

    /// Block on the worker thread (it only exits on [`Self::shutdown`]),
    /// for daemon-style serving.
    pub fn wait(mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for HttpSimServer {
    fn drop(&mut self) {
        self.inner.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

/// Bind `127.0.0.1:port` (0 picks an ephemeral port) and serve JSON-RPC
/// over HTTP POST.
pub fn serve_http(server: Arc<McpServer>, port: u16) -> Result<HttpSimServer, McpError> {
    let inner = Arc::new(
        tiny_http::Server::http(("127.0.0.1", port)).map_err(|e| McpError::Bind(e.to_string()))?,
    );
    let addr = match inner.server_addr() {
        tiny_http::ListenAddr::IP(addr) => addr,
        other => return Err(McpError::Bind(format!("unexpected listen address {other:?}"))),
    };
    let loop_server = inner.clone();
    let worker = std::thread::spawn(move || {
        for mut request in loop_server.incoming_requests() {
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                let _ = request.respond(tiny_http::Response::empty(400));
                continue;
            }
            let json_header =
                tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header");
            let response = match request.method() {
                tiny_http::Method::Post => match server.handle_line(&body) {
                    Some(reply) => {
                        tiny_http::Response::from_string(reply).with_header(json_header)
                    }
                    None => tiny_http::Response::from_string("").with_status_code(202),
                },
                _ => tiny_http::Response::from_string("POST JSON-RPC 2.0 messages here")
                    .with_status_code(405),
            };
            let _ = request.respond(response);
        }
    });
    Ok(HttpSimServer {
        addr,
        inner,
        worker: Some(worker),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum McpClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// A tool advertised by `tools/list`.
#[derive(Debug, Clone)]
pub struct WireTool {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
}

/// Result of one `tools/call`.
#[derive(Debug, Clone)]
pub struct WireCallResult {
    pub output: Value,
    pub is_error: bool,
    pub meta: Value,
}

/// Generic blocking MCP client over HTTP. Knows nothing about the
/// simulator beyond the standard methods and the documented `task_id`
/// extension field.
pub struct McpHttpClient {
    url: String,
    http: reqwest::blocking::Client,
    next_id: AtomicU64,
}

impl McpHttpClient {
    pub fn new(url: impl Into<String>) -> Result<McpHttpClient, McpClientError> {
        Ok(McpHttpClient {
            url: url.into(),
            http: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .map_err(|e| McpClientError::Transport(e.to_string()))?,
            next_id: AtomicU64::new(1),
        })
    }

    fn request(&self, method: &str, params: Value) -> Result<Value, McpClientError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let resp = self
            .http
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| McpClientError::Transport(e.to_string()))?;
        let payload: Value = resp
            .json()
            .map_err(|e| McpClientError::Malformed(e.to_string()))?;
        if let Some(err) = payload.get("error") {
            return Err(McpClientError::Rpc {
                code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                message: err
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_owned(),
            });
        }
        payload
            .get("result")
            .cloned()
            .ok_or_else(|| McpClientError::Malformed("response has neither result nor error".into()))
    }

    pub fn initialize(&self, task_id: Option<&str>) -> Result<Value, McpClientError> {
        let mut params = json!({
            "protocolVersion": PROTOCOL_VERSION,
            "capabilities": {},
            "clientInfo": {"name": "toolforge-client", "version": env!("CARGO_PKG_VERSION")},
        });
        if let Some(t) = task_id {
            params["task_id"] = json!(t);
        }
        self.request("initialize", params)
    }

    pub fn tools_list(&self) -> Result<Vec<WireTool>, McpClientError> {
        let result = self.request("tools/list", json!({}))?;
        let tools = result
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| McpClientError::Malformed("tools/list result has no tools".into()))?;
        Ok(tools
            .iter()
            .map(|t| WireTool {
                name: t.get("name").and_then(Value::as_str).unwrap_or("").to_owned(),
                description: t
                    .get("description")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_owned(),
                input_schema: t.get("inputSchema").cloned().unwrap_or(json!({})),
            })
            .collect())
    }

    pub fn tools_call(
        &self,
        name: &str,
        arguments: &Value,
        task_id: Option<&str>,
    ) -> Result<WireCallResult, McpClientError> {
        let mut params = json!({"name": name, "arguments": arguments});
        if let Some(t) = task_id {
            params["task_id"] = json!(t);
        }
        let result = self.request("tools/call", params)?;
        let text = result
            .pointer("/content/0/text")
            .and_then(Value::as_str)
            .ok_or_else(|| McpClientError::Malformed("tools/call result has no text".into()))?;
        let output: Value = serde_json::from_str(text)
            .map_err(|e| McpClientError::Malformed(format!("content text is not JSON: {e}")))?;
        Ok(WireCallResult {
            output,
            is_error: result
                .get("isError")
                .and_then(Value::as_bool)
                .unwrap_or(false),
            meta: result.get("_meta").cloned().unwrap_or(Value::Null),
        })
    }
}

/// [`ToolBackend`] over a remote MCP endpoint, for exploration against
/// live servers.
pub struct McpBackend {
    client: McpHttpClient,
    specs: Vec<ToolSpec>,
}

impl McpBackend {
    /// Connect, initialize, and fetch the tool catalog.
    pub fn connect(url: &str) -> Result<McpBackend, McpClientError> {
        let client = McpHttpClient::new(url)?;
        client.initialize(None)?;
        let mut specs = Vec::new();
        for tool in client.tools_list()? {
            let Some(tool_ref) = ToolRef::parse_wire_name(&tool.name) else {
                log::warn!("skipping tool with unparseable wire name '{}'", tool.name);
                continue;
            };
            match crate::schema::parse_tool_spec(&json!({
                "server_id": tool_ref.server_id,
                "tool_name": tool_ref.tool_name,
                "description": tool.description,
                "input_schema": tool.input_schema,
            })) {
                Ok(spec) => specs.push(spec),
                Err(e) => log::warn!("skipping tool '{}': {e}", tool.name),
            }
        }
        Ok(McpBackend { client, specs })
    }
}

impl ToolBackend for McpBackend {
    fn list_tools(&self) -> Vec<ToolSpec> {
        self.specs.clone()
    }

    fn call(&self, tool: &ToolRef, args: &CanonicalValue) -> Result<CallOutput, BackendError> {
        let result = self
            .client
            .tools_call(&tool.wire_name(), args.as_value(), None)
            .map_err(|e| BackendError(e.to_string()))?;
        let output = canonicalize(&result.output).map_err(|e| BackendError(e.to_string()))?;
        Ok(if result.is_error {
            CallOutput::Failure(output)
        } else {
            CallOutput::Success(output)
        })
    }
}
