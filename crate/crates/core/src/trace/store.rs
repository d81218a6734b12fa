//! Cross-linked runs: ingest from and emission to the JSONL layout,
//! structural validation, lineage walks, and best-so-far chains.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use super::schema::{
    Candidate, Context, Edge, Evaluation, JsonMap, ReplayEnvironment, RunRecord,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation [{code}] {detail}")]
    SchemaViolation { code: &'static str, detail: String },
    #[error("unknown candidate: {0}")]
    UnknownCandidate(String),
    #[error("lineage cycle involving candidate {0}")]
    LineageCycle(String),
    #[error("run has no scored accepted candidate")]
    NoScoredCandidates,
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("seed program has no non-blank lines")]
    EmptySeed,
}

fn schema_violation(code: &'static str, detail: impl Into<String>) -> TraceError {
    TraceError::SchemaViolation {
        code,
        detail: detail.into(),
    }
}

/// A fully cross-linked run. Immutable after assembly; every read operation
/// takes `&self` and is safe to call from multiple threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    record: RunRecord,
    environment: ReplayEnvironment,
    candidates: Vec<Candidate>,
    evaluations: Vec<Evaluation>,
    edges: Vec<Edge>,
    contexts: Vec<Context>,
    candidate_index: HashMap<String, usize>,
    context_index: HashMap<String, usize>,
    evaluation_index: HashMap<String, usize>,
}

/// Raw pieces of a run before cross-linking.
#[derive(Debug, Clone)]
pub struct RunParts {
    pub record: RunRecord,
    pub environment: ReplayEnvironment,
    pub candidates: Vec<Candidate>,
    pub evaluations: Vec<Evaluation>,
    pub edges: Vec<Edge>,
    pub contexts: Vec<Context>,
}

impl RunParts {
    /// Cross-links the parts. Fails on duplicate identifiers and dangling
    /// references; semantic invariants (acyclicity, context presence, ...)
    /// are reported by [`Run::validate`] instead.
    pub fn assemble(self) -> Result<Run, TraceError> {
        let mut candidate_index = HashMap::new();
        for (i, c) in self.candidates.iter().enumerate() {
            if candidate_index.insert(c.candidate_id.clone(), i).is_some() {
                return Err(schema_violation(
                    "duplicate-candidate",
                    format!("candidate_id {} appears twice", c.candidate_id),
                ));
            }
        }
        let mut context_index = HashMap::new();
        for (i, c) in self.contexts.iter().enumerate() {
            if context_index.insert(c.context_id.clone(), i).is_some() {
                return Err(schema_violation(
                    "duplicate-context",
                    format!("context_id {} appears twice", c.context_id),
                ));
            }
        }

        if !candidate_index.contains_key(&self.record.seed_candidate_id) {
            return Err(schema_violation(
                "dangling-seed",
                format!(
                    "seed_candidate_id {} matches no candidate",
                    self.record.seed_candidate_id
                ),
            ));
        }
        for edge in &self.edges {
            if !candidate_index.contains_key(&edge.parent_id) {
                return Err(schema_violation(
                    "dangling-parent",
                    format!("edge parent_id {} matches no candidate", edge.parent_id),
                ));
            }
            if !candidate_index.contains_key(&edge.child_id) {
                return Err(schema_violation(
                    "dangling-child",
                    format!("edge child_id {} matches no candidate", edge.child_id),
                ));
            }
        }
        for c in &self.candidates {
            for pid in &c.parent_ids {
                if !candidate_index.contains_key(pid) {
                    return Err(schema_violation(
                        "dangling-parent",
                        format!("candidate {} lists unknown parent {}", c.candidate_id, pid),
                    ));
                }
            }
            if let Some(ctx) = &c.context_id {
                if !context_index.contains_key(ctx) {
                    return Err(schema_violation(
                        "dangling-context",
                        format!("candidate {} references unknown context {}", c.candidate_id, ctx),
                    ));
                }
            }
        }
        let mut evaluation_index = HashMap::new();
        for (i, e) in self.evaluations.iter().enumerate() {
            if !candidate_index.contains_key(&e.candidate_id) {
                return Err(schema_violation(
                    "dangling-evaluation",
                    format!("evaluation references unknown candidate {}", e.candidate_id),
                ));
            }
            evaluation_index.entry(e.candidate_id.clone()).or_insert(i);
        }

        Ok(Run {
            record: self.record,
            environment: self.environment,
            candidates: self.candidates,
            evaluations: self.evaluations,
            edges: self.edges,
            contexts: self.contexts,
            candidate_index,
            context_index,
            evaluation_index,
        })
    }
}

/// One entry of the best-so-far chain: a candidate whose score strictly
/// exceeded every earlier score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub iteration: u32,
    pub candidate_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub detail: String,
}

/// Outcome of [`Run::validate`]. Violations are data, not failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: &str, detail: String) {
        self.violations.push(Violation {
            code: code.to_string(),
            detail,
        });
    }
}

impl Run {
    pub fn run_id(&self) -> &str {
        &self.record.run_id
    }
    pub fn task(&self) -> &str {
        &self.record.task
    }
    pub fn backend(&self) -> &str {
        &self.record.backend
    }
    pub fn model_config(&self) -> &JsonMap {
        &self.record.model_config
    }
    pub fn domain_tag(&self) -> super::schema::DomainTag {
        self.record.domain_tag
    }
    pub fn budget(&self) -> u32 {
        self.record.budget
    }
    pub fn seed_candidate_id(&self) -> &str {
        &self.record.seed_candidate_id
    }
    pub fn record(&self) -> &RunRecord {
        &self.record
    }
    pub fn environment(&self) -> &ReplayEnvironment {
        &self.environment
    }
    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }
    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evaluations
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn candidate(&self, candidate_id: &str) -> Option<&Candidate> {
        self.candidate_index
            .get(candidate_id)
            .map(|&i| &self.candidates[i])
    }

    pub fn context(&self, context_id: &str) -> Option<&Context> {
        self.context_index
            .get(context_id)
            .map(|&i| &self.contexts[i])
    }

    /// First evaluation recorded for a candidate, if any.
    pub fn evaluation_for(&self, candidate_id: &str) -> Option<&Evaluation> {
        self.evaluation_index
            .get(candidate_id)
            .map(|&i| &self.evaluations[i])
    }

    pub fn seed(&self) -> &Candidate {
        self.candidate(&self.record.seed_candidate_id)
            .expect("seed existence is checked at assembly")
    }

    /// Parent chain from `candidate_id` (first) back to the seed (last).
    /// Multi-parent candidates follow their first-listed parent.
    pub fn lineage_of(&self, candidate_id: &str) -> Result<Vec<&Candidate>, TraceError> {
        let mut current = self
            .candidate(candidate_id)
            .ok_or_else(|| TraceError::UnknownCandidate(candidate_id.to_string()))?;
        let mut chain = vec![current];
        while let Some(parent_id) = current.parent_ids.first() {
            if chain.len() > self.candidates.len() {
                return Err(TraceError::LineageCycle(current.candidate_id.clone()));
            }
            current = self
                .candidate(parent_id)
                .ok_or_else(|| TraceError::UnknownCandidate(parent_id.clone()))?;
            chain.push(current);
        }
        Ok(chain)
    }

    /// Candidates whose score strictly exceeds every earlier score, in
    /// iteration order. Rejected candidates are excluded.
    pub fn best_so_far_chain(&self) -> Result<Vec<ChainEntry>, TraceError> {
        self.best_so_far_chain_with(false)
    }

    /// As [`Run::best_so_far_chain`], optionally counting rejected
    /// candidates as well.
    pub fn best_so_far_chain_with(
        &self,
        include_rejected: bool,
    ) -> Result<Vec<ChainEntry>, TraceError> {
        let mut scored: Vec<&Candidate> = self
            .candidates
            .iter()
            .filter(|c| c.score.is_some())
            .filter(|c| include_rejected || c.validity == super::schema::Validity::Accepted)
            .collect();
        if scored.is_empty() {
            return Err(TraceError::NoScoredCandidates);
        }
        scored.sort_by_key(|c| c.iteration);

        let mut chain = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for c in scored {
            let score = c.score.expect("filtered to scored candidates");
            if score > best {
                best = score;
                chain.push(ChainEntry {
                    iteration: c.iteration,
                    candidate_id: c.candidate_id.clone(),
                    score,
                });
            }
        }
        Ok(chain)
    }

    /// The earliest accepted candidate achieving the run's maximum score.
    pub fn final_best(&self) -> Result<&Candidate, TraceError> {
        let chain = self.best_so_far_chain()?;
        let last = chain.last().expect("chain is non-empty");
        Ok(self
            .candidate(&last.candidate_id)
            .expect("chain entries reference existing candidates"))
    }

    /// Checks every type invariant plus acyclicity, seed reachability, and
    /// context presence for non-seed candidates. Empty report == valid run.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        if self.record.budget < 1 {
            report.push("invalid-budget", "budget must be >= 1".to_string());
        }
        if self.environment.timeout <= 0.0 {
            report.push(
                "nonpositive-timeout",
                format!("environment timeout is {}", self.environment.timeout),
            );
        }

        let seed_id = &self.record.seed_candidate_id;
        if let Some(seed) = self.candidate(seed_id) {
            if !seed.parent_ids.is_empty() {
                report.push("seed-has-parent", format!("seed {seed_id} lists parents"));
            }
        } else {
            report.push("unknown-seed", format!("seed {seed_id} not found"));
        }

        for c in &self.candidates {
            if c.iteration > self.record.budget {
                report.push(
                    "budget-exceeded",
                    format!(
                        "candidate {} at iteration {} exceeds budget {}",
                        c.candidate_id, c.iteration, self.record.budget
                    ),
                );
            }
            if c.candidate_id != *seed_id && c.context_id.is_none() {
                report.push(
                    "missing-context",
                    format!("non-seed candidate {} has no context", c.candidate_id),
                );
            }
            if let Some(ctx) = &c.context_id {
                if self.context(ctx).is_none() {
                    report.push(
                        "dangling-context",
                        format!("candidate {} references unknown context {}", c.candidate_id, ctx),
                    );
                }
            }
        }

        for e in &self.evaluations {
            let score_present = e.score.is_some();
            let status_ok = e.status == super::schema::EvalStatus::Ok;
            if score_present != status_ok {
                report.push(
                    "score-status-mismatch",
                    format!(
                        "evaluation of {} has status {:?} with score {:?}",
                        e.candidate_id, e.status, e.score
                    ),
                );
            }
            if e.wall_time < 0.0 {
                report.push(
                    "negative-wall-time",
                    format!("evaluation of {} has wall_time {}", e.candidate_id, e.wall_time),
                );
            }
        }

        let mut edge_pairs = HashSet::new();
        for e in &self.edges {
            edge_pairs.insert((e.parent_id.clone(), e.child_id.clone()));
            match (self.candidate(&e.parent_id), self.candidate(&e.child_id)) {
                (Some(p), Some(c)) => {
                    if c.iteration < p.iteration {
                        report.push(
                            "edge-iteration-order",
                            format!(
                                "edge {} -> {} goes from iteration {} to {}",
                                e.parent_id, e.child_id, p.iteration, c.iteration
                            ),
                        );
                    }
                }
                _ => report.push(
                    "dangling-edge",
                    format!("edge {} -> {} has a missing endpoint", e.parent_id, e.child_id),
                ),
            }
        }
        for c in &self.candidates {
            for pid in &c.parent_ids {
                if !edge_pairs.contains(&(pid.clone(), c.candidate_id.clone())) {
                    report.push(
                        "edges-inconsistent",
                        format!(
                            "candidate {} lists parent {} but no matching edge exists",
                            c.candidate_id, pid
                        ),
                    );
                }
            }
        }

        if let Some(cycle_node) = self.find_edge_cycle() {
            report.push("lineage-cycle", format!("edge cycle through {cycle_node}"));
        } else {
            // Seed reachability is meaningful only on acyclic edge sets.
            let mut memo: HashMap<&str, bool> = HashMap::new();
            for c in &self.candidates {
                if !self.reaches_seed(&c.candidate_id, &mut memo) {
                    report.push(
                        "seed-unreachable",
                        format!("candidate {} has no parent chain to the seed", c.candidate_id),
                    );
                }
            }
        }

        report
    }

    /// Kahn's algorithm over the edge set; returns a node on a cycle if one
    /// exists.
    fn find_edge_cycle(&self) -> Option<String> {
        let mut indegree: HashMap<&str, usize> = HashMap::new();
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for c in &self.candidates {
            indegree.entry(&c.candidate_id).or_insert(0);
        }
        for e in &self.edges {
            if self.candidate(&e.parent_id).is_none() || self.candidate(&e.child_id).is_none() {
                continue;
            }
            *indegree.entry(&e.child_id).or_insert(0) += 1;
            children.entry(&e.parent_id).or_default().push(&e.child_id);
        }
        let mut queue: Vec<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut seen = 0;
        while let Some(node) = queue.pop() {
            seen += 1;
            if let Some(kids) = children.get(node) {
                for &kid in kids {
                    let d = indegree.get_mut(kid).expect("all nodes have indegree");
                    *d -= 1;
                    if *d == 0 {
                        queue.push(kid);
                    }
                }
            }
        }
        if seen == indegree.len() {
            None
        } else {
            indegree
                .iter()
                .filter(|(_, &d)| d > 0)
                .map(|(&n, _)| n.to_string())
                .min()
        }
    }

    fn reaches_seed<'a>(&'a self, candidate_id: &'a str, memo: &mut HashMap<&'a str, bool>) -> bool {
        if candidate_id == self.record.seed_candidate_id {
            return true;
        }
        if let Some(&cached) = memo.get(candidate_id) {
            return cached;
        }
        memo.insert(candidate_id, false); // guards against parent cycles
        let reached = match self.candidate(candidate_id) {
            Some(c) => c
                .parent_ids
                .iter()
                .any(|pid| self.reaches_seed(pid.as_str(), memo)),
            None => false,
        };
        memo.insert(candidate_id, reached);
        reached
    }
}

// ---------------------------------------------------------------------------
// JSONL ingest and emission
// ---------------------------------------------------------------------------

const RUNS_FILE: &str = "runs.jsonl";
const CANDIDATES_FILE: &str = "candidates.jsonl";
const EVALUATIONS_FILE: &str = "evaluations.jsonl";
const EDGES_FILE: &str = "edges.jsonl";
const CONTEXTS_FILE: &str = "contexts.jsonl";
const ENVIRONMENTS_FILE: &str = "environments.jsonl";

fn io_err(path: &Path, source: std::io::Error) -> TraceError {
    TraceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TraceError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| {
            schema_violation(
                "invalid-record",
                format!("{}:{}: {}", path.display(), lineno + 1, e),
            )
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), TraceError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|e| {
            schema_violation("unserializable-record", format!("{}: {e}", path.display()))
        })?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads the six JSONL tables of one run directory and cross-links them.
/// `backend_hint` fills the backend field when the run record leaves it
/// empty.
pub fn ingest_run(dir: &Path, backend_hint: Option<&str>) -> Result<Run, TraceError> {
    let mut records: Vec<RunRecord> = read_jsonl(&dir.join(RUNS_FILE))?;
    if records.len() != 1 {
        return Err(schema_violation(
            "run-count",
            format!("{} contains {} run records, expected 1", dir.display(), records.len()),
        ));
    }
    let mut record = records.remove(0);
    if record.backend.is_empty() {
        if let Some(hint) = backend_hint {
            record.backend = hint.to_string();
        }
    }

    let mut environments: Vec<ReplayEnvironment> = read_jsonl(&dir.join(ENVIRONMENTS_FILE))?;
    if environments.len() != 1 {
        return Err(schema_violation(
            "environment-count",
            format!(
                "{} contains {} environment records, expected 1",
                dir.display(),
                environments.len()
            ),
        ));
    }

    RunParts {
        record,
        environment: environments.remove(0),
        candidates: read_jsonl(&dir.join(CANDIDATES_FILE))?,
        evaluations: read_jsonl(&dir.join(EVALUATIONS_FILE))?,
        edges: read_jsonl(&dir.join(EDGES_FILE))?,
        contexts: read_jsonl(&dir.join(CONTEXTS_FILE))?,
    }
    .assemble()
}

/// Writes a run back out as the six JSONL tables.
pub fn emit_run(run: &Run, dir: &Path) -> Result<(), TraceError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_jsonl(&dir.join(RUNS_FILE), std::slice::from_ref(&run.record))?;
    write_jsonl(
        &dir.join(ENVIRONMENTS_FILE),
        std::slice::from_ref(&run.environment),
    )?;
    write_jsonl(&dir.join(CANDIDATES_FILE), &run.candidates)?;
    write_jsonl(&dir.join(EVALUATIONS_FILE), &run.evaluations)?;
    write_jsonl(&dir.join(EDGES_FILE), &run.edges)?;
    write_jsonl(&dir.join(CONTEXTS_FILE), &run.contexts)?;
    Ok(())
}

/// Loads every run directory under `dir` (any subdirectory containing a
/// `runs.jsonl`), sorted by directory name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Run>, TraceError> {
    let mut run_dirs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(RUNS_FILE).is_file() {
            run_dirs.push(path);
        }
    }
    run_dirs.sort();
    run_dirs.iter().map(|d| ingest_run(d, None)).collect()
}

#[cfg(test)]
mod tests {
    use super::super::schema::*;
    use super::*;
    use crate::diff::Dialect;

    fn candidate(id: &str, iteration: u32, parents: &[&str], score: Option<f64>) -> Candidate {
        Candidate {
            candidate_id: id.to_string(),
            iteration,
            source: format!("x = {iteration}\n"),
            parent_ids: parents.iter().map(|s| s.to_string()).collect(),
            context_id: if parents.is_empty() {
                None
            } else {
                Some("ctx".to_string())
            },
            validity: Validity::Accepted,
            score,
            extra: JsonMap::new(),
        }
    }

    fn edge(parent: &str, child: &str) -> Edge {
        Edge {
            parent_id: parent.to_string(),
            child_id: child.to_string(),
            operator: EdgeOperator::Mutation,
            extra: JsonMap::new(),
        }
    }

    fn context() -> Context {
        Context {
            context_id: "ctx".to_string(),
            prompt: "improve".to_string(),
            auxiliary: JsonMap::new(),
            extra: JsonMap::new(),
        }
    }

    fn record(seed: &str, budget: u32) -> RunRecord {
        RunRecord {
            run_id: "r1".to_string(),
            task: "demo".to_string(),
            backend: "test".to_string(),
            model_config: JsonMap::new(),
            domain_tag: DomainTag::Other,
            budget,
            seed_candidate_id: seed.to_string(),
            extra: JsonMap::new(),
        }
    }

    fn env() -> ReplayEnvironment {
        ReplayEnvironment::new("true {program}", 10.0, Dialect::PyLike)
    }

    fn chain_run(scores: &[Option<f64>]) -> Run {
        let mut candidates = Vec::new();
        let mut edges = Vec::new();
        for (i, score) in scores.iter().enumerate() {
            let id = format!("c{i}");
            let parents: Vec<String> = if i == 0 {
                Vec::new()
            } else {
                vec![format!("c{}", i - 1)]
            };
            let parent_refs: Vec<&str> = parents.iter().map(|s| s.as_str()).collect();
            candidates.push(candidate(&id, i as u32, &parent_refs, *score));
            if i > 0 {
                edges.push(edge(&format!("c{}", i - 1), &id));
            }
        }
        RunParts {
            record: record("c0", scores.len().max(2) as u32),
            environment: env(),
            candidates,
            evaluations: Vec::new(),
            edges,
            contexts: vec![context()],
        }
        .assemble()
        .expect("valid run")
    }

    #[test]
    fn lineage_of_seed_is_singleton() {
        let run = chain_run(&[Some(1.0)]);
        let lineage = run.lineage_of("c0").unwrap();
        assert_eq!(lineage.len(), 1);
    }

    #[test]
    fn lineage_walks_to_seed() {
        let run = chain_run(&[Some(1.0), Some(2.0), Some(3.0)]);
        let lineage = run.lineage_of("c2").unwrap();
        let ids: Vec<&str> = lineage.iter().map(|c| c.candidate_id.as_str()).collect();
        assert_eq!(ids, vec!["c2", "c1", "c0"]);
    }

    #[test]
    fn lineage_unknown_candidate() {
        let run = chain_run(&[Some(1.0)]);
        assert!(matches!(
            run.lineage_of("nope"),
            Err(TraceError::UnknownCandidate(_))
        ));
    }

    #[test]
    fn chain_strictly_increasing() {
        let run = chain_run(&[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(run.best_so_far_chain().unwrap().len(), 3);
    }

    #[test]
    fn chain_ignores_later_lower_scores() {
        let run = chain_run(&[Some(3.0), Some(1.0), Some(2.0)]);
        let chain = run.best_so_far_chain().unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0].iteration, 0);
    }

    #[test]
    fn chain_ties_keep_first() {
        let run = chain_run(&[Some(1.0), Some(1.0)]);
        let chain = run.best_so_far_chain().unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0].candidate_id, "c0");
    }

    #[test]
    fn chain_requires_scores() {
        let run = chain_run(&[None, None]);
        assert!(matches!(
            run.best_so_far_chain(),
            Err(TraceError::NoScoredCandidates)
        ));
    }

    #[test]
    fn validate_reports_cycle() {
        let mut a = candidate("a", 0, &[], Some(1.0));
        a.parent_ids = vec!["b".to_string()];
        a.context_id = Some("ctx".to_string());
        let mut b = candidate("b", 1, &["a"], Some(2.0));
        b.context_id = Some("ctx".to_string());
        let run = RunParts {
            record: record("a", 2),
            environment: env(),
            candidates: vec![a, b],
            evaluations: Vec::new(),
            edges: vec![edge("a", "b"), edge("b", "a")],
            contexts: vec![context()],
        }
        .assemble()
        .unwrap();
        let report = run.validate();
        assert!(report.violations.iter().any(|v| v.code == "lineage-cycle"));
    }

    #[test]
    fn validate_reports_missing_context() {
        let mut c1 = candidate("c1", 1, &["c0"], Some(2.0));
        c1.context_id = None;
        let run = RunParts {
            record: record("c0", 2),
            environment: env(),
            candidates: vec![candidate("c0", 0, &[], Some(1.0)), c1],
            evaluations: Vec::new(),
            edges: vec![edge("c0", "c1")],
            contexts: vec![context()],
        }
        .assemble()
        .unwrap();
        let report = run.validate();
        assert!(report.violations.iter().any(|v| v.code == "missing-context"));
    }

    #[test]
    fn assemble_rejects_dangling_parent_edge() {
        let result = RunParts {
            record: record("c0", 2),
            environment: env(),
            candidates: vec![candidate("c0", 0, &[], Some(1.0))],
            evaluations: Vec::new(),
            edges: vec![edge("ghost", "c0")],
            contexts: vec![context()],
        }
        .assemble();
        assert!(matches!(
            result,
            Err(TraceError::SchemaViolation { code: "dangling-parent", .. })
        ));
    }

    fn single_candidate_run(backend: &str) -> Run {
        let mut rec = record("c0", 2);
        rec.backend = backend.to_string();
        RunParts {
            record: rec,
            environment: env(),
            candidates: vec![candidate("c0", 0, &[], Some(1.0))],
            evaluations: Vec::new(),
            edges: Vec::new(),
            contexts: Vec::new(),
        }
        .assemble()
        .unwrap()
    }

    #[test]
    fn ingest_applies_backend_hint_only_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        emit_run(&single_candidate_run(""), dir.path()).unwrap();

        let hinted = ingest_run(dir.path(), Some("hinted-backend")).unwrap();
        assert_eq!(hinted.backend(), "hinted-backend");
        let unhinted = ingest_run(dir.path(), None).unwrap();
        assert_eq!(unhinted.backend(), "");

        emit_run(&single_candidate_run("recorded"), dir.path()).unwrap();
        let recorded = ingest_run(dir.path(), Some("hinted-backend")).unwrap();
        assert_eq!(recorded.backend(), "recorded", "the record wins over the hint");
    }

    #[test]
    fn ingest_rejects_trace_with_two_run_records() {
        let dir = tempfile::tempdir().unwrap();
        let run = chain_run(&[Some(1.0)]);
        emit_run(&run, dir.path()).unwrap();
        let mut runs_file = fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
        runs_file.push_str(&runs_file.clone());
        fs::write(dir.path().join("runs.jsonl"), runs_file).unwrap();
        assert!(matches!(
            ingest_run(dir.path(), None),
            Err(TraceError::SchemaViolation { code: "run-count", .. })
        ));
    }

    #[test]
    fn lineage_of_cyclic_parents_terminates_with_error() {
        let mut a = candidate("a", 0, &[], Some(1.0));
        a.parent_ids = vec!["b".to_string()];
        a.context_id = Some("ctx".to_string());
        let mut b = candidate("b", 1, &["a"], Some(2.0));
        b.context_id = Some("ctx".to_string());
        let run = RunParts {
            record: record("a", 2),
            environment: env(),
            candidates: vec![a, b],
            evaluations: Vec::new(),
            edges: vec![edge("a", "b"), edge("b", "a")],
            contexts: vec![context()],
        }
        .assemble()
        .unwrap();
        assert!(matches!(
            run.lineage_of("b"),
            Err(TraceError::LineageCycle(_))
        ));
    }

    #[test]
    fn minimal_trace_is_one_candidate_zero_edges() {
        let dir = tempfile::tempdir().unwrap();
        let run = chain_run(&[Some(1.0)]);
        emit_run(&run, dir.path()).unwrap();
        let reloaded = ingest_run(dir.path(), None).unwrap();
        assert_eq!(reloaded.candidates().len(), 1);
        assert_eq!(reloaded.edges().len(), 0);
    }
}
