//! Record types of the unified JSONL trace schema. One run directory holds
//! six tables (`runs.jsonl`, `candidates.jsonl`, `evaluations.jsonl`,
//! `edges.jsonl`, `contexts.jsonl`, `environments.jsonl`), one JSON object
//! per line. Field names are lower_snake_case; unknown fields are preserved
//! opaquely so backend-specific metadata survives a round trip.

use serde::{Deserialize, Serialize};

use crate::diff::Dialect;

pub type JsonMap = serde_json::Map<String, serde_json::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Math,
    Ale,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOperator {
    Mutation,
    Recombination,
    Refinement,
    Repair,
    Unknown,
}

/// Run-level metadata row of `runs.jsonl`. The replay environment lives in
/// its own table and is attached at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task: String,
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub model_config: JsonMap,
    pub domain_tag: DomainTag,
    pub budget: u32,
    pub seed_candidate_id: String,
    #[serde(flatten)]
    pub extra: JsonMap,
}

/// One generated program. `source` is stored byte-identically; no
/// normalization is ever applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub iteration: u32,
    pub source: String,
    #[serde(default)]
    pub parent_ids: Vec<String>,
    #[serde(default)]
    pub context_id: Option<String>,
    pub validity: Validity,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(flatten)]
    pub extra: JsonMap,
}

/// Evaluator output for one candidate. `status == ok` if and only if a score
/// is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub candidate_id: String,
    pub status: EvalStatus,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    pub wall_time: f64,
    #[serde(default)]
    pub metrics: JsonMap,
    #[serde(flatten)]
    pub extra: JsonMap,
}

/// Parent-child relation with the operator that produced the child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub parent_id: String,
    pub child_id: String,
    #[serde(default = "default_operator")]
    pub operator: EdgeOperator,
    #[serde(flatten)]
    pub extra: JsonMap,
}

fn default_operator() -> EdgeOperator {
    EdgeOperator::Unknown
}

/// The prompt and auxiliary context the generator model saw, byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub context_id: String,
    pub prompt: String,
    #[serde(default)]
    pub auxiliary: JsonMap,
    #[serde(flatten)]
    pub extra: JsonMap,
}

/// What is needed to rerun candidates against their original evaluator.
/// `evaluator_command` is a template containing the `{program}` placeholder,
/// replaced with the path of the program file at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEnvironment {
    pub evaluator_command: String,
    pub timeout: f64,
    pub dialect: Dialect,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub notes: String,
    #[serde(flatten)]
    pub extra: JsonMap,
}

impl ReplayEnvironment {
    pub fn new(evaluator_command: impl Into<String>, timeout: f64, dialect: Dialect) -> Self {
        ReplayEnvironment {
            evaluator_command: evaluator_command.into(),
            timeout,
            dialect,
            artifacts: Vec::new(),
            notes: String::new(),
            extra: JsonMap::new(),
        }
    }
}
