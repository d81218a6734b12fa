//! Diagnostics for evolutionary coding-agent search traces.
//!
//! The crate ingests runs recorded in a unified JSONL schema and provides
//! the analyses a search trace supports once full sources, prompts, and
//! evaluator metadata are preserved: static trajectory and lineage metrics,
//! deterministic cycling detection, judge-based edit labeling with
//! agreement statistics, same-prompt replay summaries, a Bayesian
//! optimization tuning-gap pipeline, and public/private rescoring.
//!
//! Everything here is pure computation over immutable [`trace::Run`]s; the
//! two runtime boundaries (chat-completion models and subprocess
//! evaluators) are traits in [`adapters`], implemented by the companion
//! runtime crate.

pub mod adapters;
pub mod cycling;
pub mod diff;
pub mod metrics;
pub mod replay;
pub mod rescore;
pub mod stats;
pub mod taxonomy;
pub mod trace;
pub mod tuning;
