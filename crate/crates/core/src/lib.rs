//! Build verified tool-call tasks from real MCP servers and replay them
//! offline.
//!
//! The pipeline: ingest and screen servers from a registry or fixture
//! directory, judge a pairwise tool-compatibility graph, explore executed
//! call DAGs along that graph, synthesize tasks backward from observed
//! outputs, validate them, index every recorded call into a
//! content-addressed cassette, and serve the cassette as a three-tier
//! replay simulator for evaluation and RL rollouts.

pub mod artifact;
pub mod canonical;
pub mod eval;
pub mod explore;
pub mod graph;
pub mod ingest;
pub mod judge;
pub mod mcp;
pub mod prompt;
pub mod rng;
pub mod schema;
pub mod sim;
pub mod synth;

pub use canonical::{canonical_hash, canonicalize, CanonicalValue, Digest};
pub use explore::{call_digest, CallDag, CallNode, CallOutput, ToolBackend};
pub use judge::{JudgeGateway, JudgeRequest, JudgeRole};
pub use schema::{parse_tool_spec, validate_args, ToolRef, ToolSpec};
pub use sim::{CallIndex, Simulator, TaskContext, Tier};
pub use synth::TaskRecord;
