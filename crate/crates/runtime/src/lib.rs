//! Runtime adapters behind the core traits: an HTTP chat-completion client
//! with retry and file-cache wrappers, and a subprocess program evaluator
//! with timeout enforcement.

mod chat;
mod evaluator;

pub use chat::{
    cache_key, CachedClient, HttpChatClient, RetryingClient, API_KEY_ENV, BASE_URL_ENV,
};
pub use evaluator::{SubprocessEvaluator, PROGRAM_PLACEHOLDER};
