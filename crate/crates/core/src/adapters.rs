//! The two runtime boundaries shared by the taxonomy, replay, and tuning
//! pipelines: a chat-completion model client and a program evaluator. Both
//! are traits here so every analysis can run against stubs; the runtime
//! crate provides the HTTP and subprocess implementations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{EvalStatus, Evaluation, JsonMap, ReplayEnvironment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Json,
    Text,
}

/// A chat completion request. Texts are forwarded byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub response_format_hint: ResponseFormat,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub from_cache: bool,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("model endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("authentication rejected: {0}")]
    AuthError(String),
    #[error("client misconfigured: {0}")]
    Misconfigured(String),
}

/// Chat-completion boundary. Implementations are expected to retry
/// transient failures and cache successful completions keyed by
/// `(model_id, system_text, user_text, temperature)`.
pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AdapterError>;
}

impl<T: ModelClient + ?Sized> ModelClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AdapterError> {
        (**self).complete(request)
    }
}

/// A program plus the environment to evaluate it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub program_source: String,
    pub environment: ReplayEnvironment,
}

/// Evaluator boundary. All failure modes are statuses on the returned
/// [`Evaluation`], never errors.
pub trait ProgramEvaluator: Send + Sync {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation;
}

/// Builds an ok-status evaluation with the given score.
pub fn ok_evaluation(score: f64) -> Evaluation {
    Evaluation {
        candidate_id: String::new(),
        status: EvalStatus::Ok,
        score: Some(score),
        stdout: String::new(),
        stderr: String::new(),
        wall_time: 0.0,
        metrics: JsonMap::new(),
        extra: JsonMap::new(),
    }
}

/// Builds an error-status evaluation with the given stderr text.
pub fn error_evaluation(stderr: impl Into<String>) -> Evaluation {
    Evaluation {
        candidate_id: String::new(),
        status: EvalStatus::Error,
        score: None,
        stdout: String::new(),
        stderr: stderr.into(),
        wall_time: 0.0,
        metrics: JsonMap::new(),
        extra: JsonMap::new(),
    }
}

/// Test doubles for the two boundaries. Used throughout the crate's own
/// tests and handy for downstream pipelines that need offline runs.
pub mod stub {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    /// Replays a fixed sequence of responses, repeating the last one once
    /// the sequence is exhausted. Counts upstream calls.
    pub struct ScriptedModel {
        responses: Vec<String>,
        calls: AtomicUsize,
    }

    impl ScriptedModel {
        pub fn fixed(content: impl Into<String>) -> Self {
            ScriptedModel {
                responses: vec![content.into()],
                calls: AtomicUsize::new(0),
            }
        }

        pub fn sequence(responses: Vec<String>) -> Self {
            assert!(!responses.is_empty(), "sequence must not be empty");
            ScriptedModel {
                responses,
                calls: AtomicUsize::new(0),
            }
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl ModelClient for ScriptedModel {
        fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, AdapterError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let content = self.responses[n.min(self.responses.len() - 1)].clone();
            Ok(ChatResponse {
                content,
                usage: TokenUsage::default(),
                from_cache: false,
            })
        }
    }

    /// Evaluates programs with a pure function over the source text.
    pub struct FnEvaluator {
        f: Box<dyn Fn(&EvalRequest) -> Evaluation + Send + Sync>,
    }

    impl FnEvaluator {
        pub fn new(f: impl Fn(&EvalRequest) -> Evaluation + Send + Sync + 'static) -> Self {
            FnEvaluator { f: Box::new(f) }
        }

        /// Maps a scoring function over sources; `None` becomes an
        /// error-status evaluation.
        pub fn scoring(f: impl Fn(&str) -> Option<f64> + Send + Sync + 'static) -> Self {
            FnEvaluator::new(move |req| match f(&req.program_source) {
                Some(score) => ok_evaluation(score),
                None => error_evaluation("stub evaluator rejected the program"),
            })
        }
    }

    impl ProgramEvaluator for FnEvaluator {
        fn evaluate(&self, request: &EvalRequest) -> Evaluation {
            (self.f)(request)
        }
    }
}
