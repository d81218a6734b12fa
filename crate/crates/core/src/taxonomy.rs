//! The fixed 9-label edit taxonomy: judge request construction, structured
//! response parsing with validation, agreement statistics against a
//! reference annotator, and annotation persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, ChatRequest, ModelClient, ResponseFormat};
use crate::diff::unified_text;
use crate::trace::{Edge, Run};

/// The nine edit categories. The vocabulary is fixed; annotations never
/// carry anything else.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    HyperparameterTuning,
    LocalRefinement,
    ArchitecturalChange,
    Composition,
    Efficiency,
    BugFix,
    Pruning,
    Refactor,
    ExternalDependency,
}

impl Label {
    pub const ALL: [Label; 9] = [
        Label::HyperparameterTuning,
        Label::LocalRefinement,
        Label::ArchitecturalChange,
        Label::Composition,
        Label::Efficiency,
        Label::BugFix,
        Label::Pruning,
        Label::Refactor,
        Label::ExternalDependency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::HyperparameterTuning => "hyperparameter_tuning",
            Label::LocalRefinement => "local_refinement",
            Label::ArchitecturalChange => "architectural_change",
            Label::Composition => "composition",
            Label::Efficiency => "efficiency",
            Label::BugFix => "bug_fix",
            Label::Pruning => "pruning",
            Label::Refactor => "refactor",
            Label::ExternalDependency => "external_dependency",
        }
    }

    /// One-line working definition embedded in the judge prompt.
    pub fn definition(self) -> &'static str {
        match self {
            Label::HyperparameterTuning => {
                "Change to one or more numeric literals or configuration values; control flow and surrounding algorithm unchanged."
            }
            Label::LocalRefinement => {
                "Targeted edit within an existing routine; the routine's role and structure are preserved."
            }
            Label::ArchitecturalChange => {
                "A core algorithmic block is replaced by a substantively different approach."
            }
            Label::Composition => {
                "A new component (operator, phase, branch) is added alongside an existing one; existing logic is retained."
            }
            Label::Efficiency => {
                "Same input-output behaviour reimplemented at lower asymptotic or constant cost (e.g. batching, vectorization, partial sorts, caching)."
            }
            Label::BugFix => {
                "Correction of a latent defect such as a missing guard, wrong sign, off-by-one, or mishandled sentinel."
            }
            Label::Pruning => {
                "A code path, phase, or feature is removed; the remaining program is kept intact."
            }
            Label::Refactor => {
                "Behaviour-preserving restructuring: renaming, reordering, extracting helpers, or moving declarations."
            }
            Label::ExternalDependency => {
                "Introduction or removal of an import or external library."
            }
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Label {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| TaxonomyError::InvalidLabel(s.to_string()))
    }
}

/// Identifies one edit across the corpus.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct EdgeRef {
    pub run_id: String,
    pub parent_id: String,
    pub child_id: String,
}

impl EdgeRef {
    pub fn new(run: &Run, edge: &Edge) -> Self {
        EdgeRef {
            run_id: run.run_id().to_string(),
            parent_id: edge.parent_id.clone(),
            child_id: edge.child_id.clone(),
        }
    }
}

/// Judge-assigned label set for one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAnnotation {
    pub edge_ref: EdgeRef,
    pub labels: BTreeSet<Label>,
    pub driver_lines: Vec<usize>,
    pub judge_model: String,
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("no JSON object found in judge response: {0}")]
    InvalidJson(String),
    #[error("unknown label: {0}")]
    InvalidLabel(String),
    #[error("judge returned an empty label set")]
    EmptyLabels,
    #[error("reference and judged maps carry different items: {0}")]
    KeyMismatch(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed label csv at line {line}: {detail}")]
    MalformedCsv { line: usize, detail: String },
    #[error("malformed annotation record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
}

// ---------------------------------------------------------------------------
// Judge requests
// ---------------------------------------------------------------------------

/// Prompt pair sent to the judge model. Construction is deterministic, so
/// the pair doubles as a cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub system_text: String,
    pub user_text: String,
}

impl JudgeRequest {
    pub fn chat_request(&self, model_id: &str) -> ChatRequest {
        ChatRequest {
            model_id: model_id.to_string(),
            system_text: self.system_text.clone(),
            user_text: self.user_text.clone(),
            response_format_hint: ResponseFormat::Json,
            temperature: 0.0,
        }
    }
}

fn judge_system_text() -> String {
    let mut text = String::from(
        "You are labeling one edit made by a code-evolution system. The edit is \
given as a unified diff from a parent program to a child program.\n\n\
Assign every category that applies, from this fixed vocabulary:\n\n",
    );
    for label in Label::ALL {
        text.push_str(&format!("- {}: {}\n", label.name(), label.definition()));
    }
    text.push_str(
        "\nMost edits carry more than one label; assign all that apply, and at \
least one.\n\nReturn ONLY a JSON object of the form:\n\
{\"labels\": [\"...\"], \"driver_lines\": [0]}\n\
where labels is a non-empty list drawn from the vocabulary above and \
driver_lines lists the 0-based indices of the added lines that drove the \
score change (empty if none stand out). No commentary, no markdown fences.",
    );
    text
}

/// Builds the judge prompt for one edge: the nine definitions, the unified
/// diff, and the parent/child scores when present.
pub fn build_judge_request(run: &Run, edge: &Edge) -> JudgeRequest {
    let parent = run
        .candidate(&edge.parent_id)
        .expect("edge endpoints exist");
    let child = run.candidate(&edge.child_id).expect("edge endpoints exist");
    let diff = unified_text(&parent.source, &child.source, 3);

    let mut user_text = format!("Edit diff:\n\n{diff}\n");
    if let Some(score) = parent.score {
        user_text.push_str(&format!("Parent score: {score}\n"));
    }
    if let Some(score) = child.score {
        user_text.push_str(&format!("Child score: {score}\n"));
    }

    JudgeRequest {
        system_text: judge_system_text(),
        user_text,
    }
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawJudgeResponse {
    labels: Vec<String>,
    #[serde(default)]
    driver_lines: Vec<usize>,
}

/// Extracts the first JSON object from `raw`, tolerating surrounding prose
/// and markdown fences.
fn extract_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let start = raw.find('{')?;
    let mut depth = 0i64;
    let mut in_string = false;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            match b {
                b'\\' => i += 1,
                b'"' => in_string = false,
                _ => {}
            }
        } else {
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..=i]);
                    }
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}

/// Parses a judge response into a validated, deduplicated, order-normalized
/// label set plus driver lines. Each error signals a retry to the caller.
pub fn parse_judge_response(raw: &str) -> Result<(BTreeSet<Label>, Vec<usize>), TaxonomyError> {
    let json = extract_json_object(raw)
        .ok_or_else(|| TaxonomyError::InvalidJson(truncate_for_error(raw)))?;
    let parsed: RawJudgeResponse = serde_json::from_str(json)
        .map_err(|e| TaxonomyError::InvalidJson(format!("{e} in {}", truncate_for_error(json))))?;

    let mut labels = BTreeSet::new();
    for name in &parsed.labels {
        labels.insert(name.parse::<Label>()?);
    }
    if labels.is_empty() {
        return Err(TaxonomyError::EmptyLabels);
    }
    Ok((labels, parsed.driver_lines))
}

fn truncate_for_error(s: &str) -> String {
    const LIMIT: usize = 120;
    if s.len() <= LIMIT {
        s.to_string()
    } else {
        let mut end = LIMIT;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

/// Renders an annotation back into the judge response wire format.
/// `parse_judge_response` is the left inverse of this.
pub fn render_judge_response(labels: &BTreeSet<Label>, driver_lines: &[usize]) -> String {
    let names: Vec<&str> = labels.iter().map(|l| l.name()).collect();
    serde_json::json!({ "labels": names, "driver_lines": driver_lines }).to_string()
}

// ---------------------------------------------------------------------------
// Annotation pipeline
// ---------------------------------------------------------------------------

/// Retry policy for judge calls. After the retries are exhausted the edit is
/// recorded as unannotated, never silently single-labeled. `max_in_flight`
/// bounds concurrent judge calls; 1 keeps annotation sequential.
#[derive(Debug, Clone, Copy)]
pub struct AnnotatePolicy {
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for AnnotatePolicy {
    fn default() -> Self {
        AnnotatePolicy {
            max_retries: 3,
            max_in_flight: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnnotateOutcome {
    pub annotations: Vec<EditAnnotation>,
    /// Edits that failed all retries, with the final parse error.
    pub unannotated: Vec<(EdgeRef, String)>,
}

const FORMAT_REMINDER: &str = "\n\nReminder: return ONLY one JSON object \
{\"labels\": [...], \"driver_lines\": [...]} with labels drawn from the \
given vocabulary, at least one.";

/// Annotates one edge with retries; `Ok(Err(reason))` means the retries
/// were exhausted on parse failures.
fn annotate_edge(
    run: &Run,
    edge: &Edge,
    model_id: &str,
    client: &dyn ModelClient,
    policy: AnnotatePolicy,
) -> Result<Result<EditAnnotation, String>, AdapterError> {
    let request = build_judge_request(run, edge);
    let edge_ref = EdgeRef::new(run, edge);
    let mut last_error = String::new();
    for attempt in 0..=policy.max_retries {
        let mut chat = request.chat_request(model_id);
        if attempt > 0 {
            chat.user_text.push_str(FORMAT_REMINDER);
        }
        let response = client.complete(&chat)?;
        match parse_judge_response(&response.content) {
            Ok((labels, driver_lines)) => {
                return Ok(Ok(EditAnnotation {
                    edge_ref,
                    labels,
                    driver_lines,
                    judge_model: model_id.to_string(),
                    cached: response.from_cache,
                }))
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Ok(Err(last_error))
}

/// Annotates every edge of a run through the given model client, with at
/// most `policy.max_in_flight` judge calls in flight. Results keep edge
/// order regardless of the worker count.
pub fn annotate_run(
    run: &Run,
    model_id: &str,
    client: &dyn ModelClient,
    policy: AnnotatePolicy,
) -> Result<AnnotateOutcome, AdapterError> {
    let edges = run.edges();
    let results: Vec<Result<Result<EditAnnotation, String>, AdapterError>> =
        if policy.max_in_flight <= 1 {
            edges
                .iter()
                .map(|edge| annotate_edge(run, edge, model_id, client, policy))
                .collect()
        } else {
            let jobs = policy.max_in_flight.min(edges.len().max(1));
            let next = std::sync::atomic::AtomicUsize::new(0);
            let slots: std::sync::Mutex<Vec<Option<_>>> =
                std::sync::Mutex::new((0..edges.len()).map(|_| None).collect());
            std::thread::scope(|scope| {
                for _ in 0..jobs {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= edges.len() {
                            break;
                        }
                        let result = annotate_edge(run, &edges[i], model_id, client, policy);
                        slots.lock().expect("annotation worker panicked")[i] = Some(result);
                    });
                }
            });
            slots
                .into_inner()
                .expect("annotation workers joined")
                .into_iter()
                .map(|slot| slot.expect("every edge annotated"))
                .collect()
        };

    let mut outcome = AnnotateOutcome::default();
    for (edge, result) in edges.iter().zip(results) {
        match result? {
            Ok(annotation) => outcome.annotations.push(annotation),
            Err(reason) => outcome.unannotated.push((EdgeRef::new(run, edge), reason)),
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Agreement statistics
// ---------------------------------------------------------------------------

/// Multi-label agreement between a reference annotator and the judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_label_kappa: BTreeMap<Label, f64>,
    pub macro_kappa: f64,
    pub mean_jaccard: f64,
    pub micro_f1: f64,
    pub exact_match: f64,
    pub n_items: usize,
}

/// Computes per-label Cohen's kappa from each label's 2x2 presence table,
/// macro kappa as the unweighted mean, per-item Jaccard, micro-F1 over all
/// (item, label) decisions, and exact-match share.
pub fn agreement_report(
    reference: &BTreeMap<String, BTreeSet<Label>>,
    judged: &BTreeMap<String, BTreeSet<Label>>,
) -> Result<AgreementReport, TaxonomyError> {
    if reference.len() != judged.len()
        || reference.keys().any(|k| !judged.contains_key(k))
    {
        return Err(TaxonomyError::KeyMismatch(format!(
            "reference has {} items, judged has {}",
            reference.len(),
            judged.len()
        )));
    }
    let n = reference.len();
    if n == 0 {
        return Err(TaxonomyError::KeyMismatch("no items".to_string()));
    }

    let mut per_label_kappa = BTreeMap::new();
    for label in Label::ALL {
        let mut a = 0usize; // both yes
        let mut b = 0usize; // reference only
        let mut c = 0usize; // judge only
        let mut d = 0usize; // both no
        for (item, ref_labels) in reference {
            let judged_labels = &judged[item];
            match (ref_labels.contains(&label), judged_labels.contains(&label)) {
                (true, true) => a += 1,
                (true, false) => b += 1,
                (false, true) => c += 1,
                (false, false) => d += 1,
            }
        }
        per_label_kappa.insert(label, kappa_from_table(a, b, c, d));
    }
    let macro_kappa =
        per_label_kappa.values().sum::<f64>() / per_label_kappa.len() as f64;

    let mut jaccard_sum = 0.0;
    let mut exact = 0usize;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (item, ref_labels) in reference {
        let judged_labels = &judged[item];
        let inter = ref_labels.intersection(judged_labels).count();
        let union = ref_labels.union(judged_labels).count();
        jaccard_sum += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        if ref_labels == judged_labels {
            exact += 1;
        }
        tp += inter;
        fp += judged_labels.difference(ref_labels).count();
        fn_ += ref_labels.difference(judged_labels).count();
    }
    let micro_f1 = if 2 * tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };

    Ok(AgreementReport {
        per_label_kappa,
        macro_kappa,
        mean_jaccard: jaccard_sum / n as f64,
        micro_f1,
        exact_match: exact as f64 / n as f64,
        n_items: n,
    })
}

/// Cohen's kappa from a 2x2 presence table. When expected agreement is 1
/// (both raters constant), kappa is 1 for perfect observed agreement and 0
/// otherwise.
pub fn kappa_from_table(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let n = (a + b + c + d) as f64;
    if n == 0.0 {
        return 1.0;
    }
    let po = (a + d) as f64 / n;
    let pe = ((a + b) as f64 * (a + c) as f64 + (c + d) as f64 * (b + d) as f64) / (n * n);
    if (1.0 - pe).abs() < 1e-12 {
        if (1.0 - po).abs() < 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn io_err(path: &Path, source: std::io::Error) -> TaxonomyError {
    TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes annotations as one JSON object per line.
pub fn write_annotations(path: &Path, annotations: &[EditAnnotation]) -> Result<(), TaxonomyError> {
    let mut buf = String::new();
    for ann in annotations {
        buf.push_str(&serde_json::to_string(ann).expect("annotations serialize"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<EditAnnotation>, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ann: EditAnnotation = serde_json::from_str(line).map_err(|e| {
            TaxonomyError::MalformedRecord {
                line: lineno + 1,
                detail: e.to_string(),
            }
        })?;
        out.push(ann);
    }
    Ok(out)
}

/// Reads the agreement CSV format: `item_id,label1|label2` per line, with an
/// optional `item_id,labels` header.
pub fn read_label_csv(path: &Path) -> Result<BTreeMap<String, BTreeSet<Label>>, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "item_id,labels") {
            continue;
        }
        let (item, labels_field) = line.split_once(',').ok_or(TaxonomyError::MalformedCsv {
            line: lineno + 1,
            detail: "expected item_id,label|label".to_string(),
        })?;
        let mut labels = BTreeSet::new();
        for name in labels_field.split('|') {
            let name = name.trim();
            if !name.is_empty() {
                labels.insert(name.parse::<Label>()?);
            }
        }
        out.insert(item.trim().to_string(), labels);
    }
    Ok(out)
}
