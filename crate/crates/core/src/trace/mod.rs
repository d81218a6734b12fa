//! The unified trace schema and its store: parsing, validation, lineage
//! graphs, and synthetic ground-truth generation.

pub mod schema;
pub mod store;
pub mod synth;

pub use schema::{
    Candidate, Context, DomainTag, Edge, EdgeOperator, EvalStatus, Evaluation, JsonMap,
    ReplayEnvironment, RunRecord, Validity,
};
pub use store::{
    emit_run, ingest_run, load_corpus, ChainEntry, Run, RunParts, TraceError, ValidationReport,
    Violation,
};
pub use synth::{
    emit_synthetic_run, generate_synthetic_run, EdgeGroundTruth, GroundTruth, LineageShape,
    PlantedLine, ScoreProfile, SynthConfig, SyntheticRun,
};
