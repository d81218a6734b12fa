//! The tuning-gap pipeline: one structured model call identifies tunable
//! numeric constants, validation pins each literal to a unique context
//! line, a deterministic rewrite exposes the knobs as a top-level parameter
//! block, and a short Bayesian-optimization loop drives the original
//! evaluator. The gap between a run's final-best score and the best-of-loop
//! score isolates structural discovery from parametric search.

mod bo;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bo::{bo_optimize, BoPhase, BoResult, BoTrial};

use crate::adapters::{
    AdapterError, ChatRequest, EvalRequest, ModelClient, ProgramEvaluator, ResponseFormat,
};
use crate::diff::{literal_token_occurrences, Dialect};
use crate::trace::{EvalStatus, Run, TraceError};

/// System prompt for the knob-identification call, shipped as a resource.
pub const KNOB_PROMPT: &str = include_str!("../../resources/knob_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Int,
    Float,
}

/// One tunable constant: the exact literal, the line that disambiguates it,
/// and its search interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub source_literal: String,
    pub context_line: String,
    pub default: f64,
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
    pub kind: Kind,
    #[serde(default)]
    pub rationale: String,
}

/// The knobs accepted for one frozen program structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobSpace {
    pub knobs: Vec<KnobSpec>,
    pub structure_id: String,
}

/// A knob proposal that failed validation, with the reason it was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedKnob {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum TuningError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("knob response is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("no knobs to optimize")]
    EmptySpace,
    #[error("invalid budget: {budget} total with {init} initial points")]
    InvalidBudget { budget: usize, init: usize },
    #[error("context line is not unique in the source: {0}")]
    RewriteConflict(String),
    #[error("no value provided for knob {0}")]
    MissingValue(String),
    #[error("integer knob {0} given non-integral value {1}")]
    NonIntegralInt(String, f64),
    #[error("candidate {0} has no score")]
    MissingScore(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Caps accepted knobs per target.
pub const MAX_KNOBS: usize = 8;

// ---------------------------------------------------------------------------
// Knob identification (one model call)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawKnobResponse {
    hparams: Vec<RawKnob>,
}

#[derive(Debug, Deserialize)]
struct RawKnob {
    name: String,
    source_literal: String,
    context_line: String,
    default: f64,
    low: f64,
    high: f64,
    scale: Scale,
    kind: Kind,
    #[serde(default)]
    rationale: String,
}

fn sanitize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else {
            out.push('_');
        }
    }
    if out.is_empty() || out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out.insert(0, 'k');
    }
    out
}

/// Applies the type invariants to one raw proposal. Integer bounds follow
/// the prompt's rounding rule: low = max(1, floor(low)), high = ceil(high).
fn normalize_spec(raw: RawKnob) -> Result<KnobSpec, DroppedKnob> {
    let name = sanitize_name(&raw.name);
    let reject = |reason: String| DroppedKnob {
        name: name.clone(),
        reason,
    };

    let (low, high, default) = match raw.kind {
        Kind::Int => (
            raw.low.floor().max(1.0),
            raw.high.ceil(),
            raw.default.round(),
        ),
        Kind::Float => (raw.low, raw.high, raw.default),
    };
    if !low.is_finite() || !high.is_finite() || !default.is_finite() {
        return Err(reject("non-finite bounds".to_string()));
    }
    if low >= high {
        return Err(reject(format!("low {low} must be below high {high}")));
    }
    if raw.scale == Scale::Log && low <= 0.0 {
        return Err(reject(format!("log scale requires low > 0, got {low}")));
    }
    if raw.scale == Scale::Linear && low > 0.0 && high / low >= 100.0 {
        return Err(reject(format!(
            "range {low}..{high} spans >= 100x and must be log-scaled"
        )));
    }
    if default < low || default > high {
        return Err(reject(format!(
            "default {default} outside [{low}, {high}]"
        )));
    }
    if raw.source_literal.trim().is_empty() {
        return Err(reject("empty source_literal".to_string()));
    }

    Ok(KnobSpec {
        name,
        source_literal: raw.source_literal,
        context_line: raw.context_line,
        default,
        low,
        high,
        scale: raw.scale,
        kind: raw.kind,
        rationale: raw.rationale,
    })
}

fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let bytes = raw.as_bytes();
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

/// Requests knob proposals with exactly one model call (no retries), parses
/// the `{"hparams": [...]}` response, and drops proposals that violate the
/// type invariants. At most [`MAX_KNOBS`] specs are retained, first come.
pub fn request_knobs(
    source: &str,
    dialect: Dialect,
    model_id: &str,
    client: &dyn ModelClient,
) -> Result<(Vec<KnobSpec>, Vec<DroppedKnob>), TuningError> {
    let fenced = if source.ends_with('\n') {
        format!("```{}\n{}```", dialect.fence_tag(), source)
    } else {
        format!("```{}\n{}\n```", dialect.fence_tag(), source)
    };
    let response = client.complete(&ChatRequest {
        model_id: model_id.to_string(),
        system_text: KNOB_PROMPT.to_string(),
        user_text: fenced,
        response_format_hint: ResponseFormat::Json,
        temperature: 0.0,
    })?;

    let json = extract_json_object(&response.content)
        .ok_or_else(|| TuningError::InvalidJson("no JSON object in response".to_string()))?;
    let raw: RawKnobResponse =
        serde_json::from_str(json).map_err(|e| TuningError::InvalidJson(e.to_string()))?;

    let mut accepted = Vec::new();
    let mut dropped = Vec::new();
    let mut seen = BTreeSet::new();
    for raw_knob in raw.hparams {
        match normalize_spec(raw_knob) {
            Ok(spec) => {
                if !seen.insert(spec.name.clone()) {
                    dropped.push(DroppedKnob {
                        name: spec.name,
                        reason: "duplicate knob name".to_string(),
                    });
                } else if accepted.len() >= MAX_KNOBS {
                    dropped.push(DroppedKnob {
                        name: spec.name,
                        reason: format!("over the {MAX_KNOBS}-knob cap"),
                    });
                } else {
                    accepted.push(spec);
                }
            }
            Err(drop) => dropped.push(drop),
        }
    }
    Ok((accepted, dropped))
}

// ---------------------------------------------------------------------------
// Validation against the exact source
// ---------------------------------------------------------------------------

/// Accepts a spec only when its literal occurs in the source on exactly one
/// line, its context line matches a source line exactly, and the literal
/// stands alone (token-boundary match) exactly once within that line.
/// Everything else is dropped with a reason, never retried.
pub fn validate_knobs(source: &str, specs: &[KnobSpec]) -> (Vec<KnobSpec>, Vec<DroppedKnob>) {
    let lines: Vec<&str> = source.split('\n').collect();
    let mut accepted = Vec::new();
    let mut dropped = Vec::new();

    for spec in specs {
        let lines_with_literal = lines
            .iter()
            .filter(|line| !literal_token_occurrences(line, &spec.source_literal).is_empty())
            .count();
        let reason = if lines_with_literal == 0 {
            Some("literal-not-found".to_string())
        } else if lines_with_literal > 1 {
            Some(format!(
                "ambiguous-literal: {} appears on {lines_with_literal} lines",
                spec.source_literal
            ))
        } else if !lines.iter().any(|line| *line == spec.context_line) {
            Some("context-line-not-found".to_string())
        } else {
            match literal_token_occurrences(&spec.context_line, &spec.source_literal).len() {
                0 => Some("literal-absent-from-context-line".to_string()),
                1 => None,
                n => Some(format!("literal occurs {n} times in the context line")),
            }
        };
        match reason {
            None => accepted.push(spec.clone()),
            Some(reason) => dropped.push(DroppedKnob {
                name: spec.name.clone(),
                reason,
            }),
        }
    }
    (accepted, dropped)
}

// ---------------------------------------------------------------------------
// Rewrite and substitution
// ---------------------------------------------------------------------------

fn render_number(value: f64, kind: Kind) -> String {
    match kind {
        Kind::Int => format!("{}", value.round() as i64),
        Kind::Float => {
            let s = format!("{value}");
            // Keep the text recognizably numeric for downstream parsers.
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
                s
            } else {
                format!("{s}.0")
            }
        }
    }
}

fn param_block_lines(knobs: &[KnobSpec], values: &BTreeMap<String, f64>, dialect: Dialect) -> Vec<String> {
    match dialect {
        Dialect::PyLike => {
            let mut out = vec!["PARAMS = {".to_string()];
            for knob in knobs {
                out.push(format!(
                    "    \"{}\": {},",
                    knob.name,
                    render_number(values[&knob.name], knob.kind)
                ));
            }
            out.push("}".to_string());
            out
        }
        Dialect::CLike => knobs
            .iter()
            .map(|knob| {
                format!(
                    "#define {} {}",
                    macro_name(&knob.name),
                    render_number(values[&knob.name], knob.kind)
                )
            })
            .collect(),
    }
}

fn macro_name(name: &str) -> String {
    format!("_BO_{}", name.to_ascii_uppercase())
}

/// Index of the line after which the parameter block goes: past any shebang,
/// encoding line, and leading module docstring for Python-likes; after the
/// last `#include` for C-likes.
fn insertion_index(lines: &[&str], dialect: Dialect) -> usize {
    match dialect {
        Dialect::PyLike => {
            let mut idx = 0;
            if lines.first().is_some_and(|l| l.starts_with("#!")) {
                idx = 1;
            }
            if lines
                .get(idx)
                .is_some_and(|l| l.starts_with('#') && (l.contains("coding:") || l.contains("coding=")))
            {
                idx += 1;
            }
            // Skip blank lines and comments before a possible docstring.
            let mut probe = idx;
            while probe < lines.len()
                && (lines[probe].trim().is_empty() || lines[probe].trim_start().starts_with('#'))
            {
                probe += 1;
            }
            if let Some(first_stmt) = lines.get(probe) {
                let trimmed = first_stmt.trim_start();
                for quote in ["\"\"\"", "'''"] {
                    if let Some(rest) = trimmed.strip_prefix(quote) {
                        if rest.contains(quote) {
                            return probe + 1;
                        }
                        for (offset, line) in lines[probe + 1..].iter().enumerate() {
                            if line.contains(quote) {
                                return probe + 2 + offset;
                            }
                        }
                        return lines.len();
                    }
                }
                // A single-line string statement also counts as a docstring.
                if (trimmed.starts_with('"') && trimmed.len() > 1 && trimmed[1..].contains('"'))
                    || (trimmed.starts_with('\'') && trimmed.len() > 1 && trimmed[1..].contains('\''))
                {
                    return probe + 1;
                }
            }
            idx
        }
        Dialect::CLike => {
            let mut last_include = None;
            for (i, line) in lines.iter().enumerate() {
                let t = line.trim_start();
                if t.starts_with("#include") || (t.starts_with('#') && t[1..].trim_start().starts_with("include")) {
                    last_include = Some(i);
                }
            }
            match last_include {
                Some(i) => i + 1,
                None => 0,
            }
        }
    }
}

/// Rewrites the source so every accepted literal reads from a top-level
/// parameter block: a `PARAMS = {...}` dict for Python-likes, a `#define
/// _BO_<NAME> <value>` block for C-likes. Only the inserted block and the
/// targeted occurrences inside matched context lines change.
pub fn rewrite_with_param_block(
    source: &str,
    accepted: &[KnobSpec],
    dialect: Dialect,
) -> Result<String, TuningError> {
    let mut lines: Vec<String> = source.split('\n').map(|s| s.to_string()).collect();

    // Group replacements by target line, located by exact context match.
    let mut per_line: BTreeMap<usize, Vec<&KnobSpec>> = BTreeMap::new();
    for spec in accepted {
        let matches: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, line)| **line == spec.context_line)
            .map(|(i, _)| i)
            .collect();
        if matches.len() != 1 {
            return Err(TuningError::RewriteConflict(format!(
                "context line for knob {} matches {} lines",
                spec.name,
                matches.len()
            )));
        }
        per_line.entry(matches[0]).or_default().push(spec);
    }

    for (line_idx, specs) in &per_line {
        let original = lines[*line_idx].clone();
        // Replace right to left so earlier offsets stay valid.
        let mut replacements: Vec<(usize, usize, String)> = Vec::new();
        for spec in specs {
            let occurrences = literal_token_occurrences(&original, &spec.source_literal);
            debug_assert_eq!(occurrences.len(), 1, "validated before rewrite");
            let Some(&pos) = occurrences.first() else {
                return Err(TuningError::RewriteConflict(format!(
                    "literal for knob {} vanished from its context line",
                    spec.name
                )));
            };
            let replacement = match dialect {
                Dialect::PyLike => format!("PARAMS[\"{}\"]", spec.name),
                Dialect::CLike => macro_name(&spec.name),
            };
            replacements.push((pos, spec.source_literal.len(), replacement));
        }
        replacements.sort_by_key(|r| std::cmp::Reverse(r.0));
        let mut rebuilt = original;
        for (pos, len, replacement) in replacements {
            rebuilt.replace_range(pos..pos + len, &replacement);
        }
        lines[*line_idx] = rebuilt;
    }

    let defaults: BTreeMap<String, f64> =
        accepted.iter().map(|k| (k.name.clone(), k.default)).collect();
    let block = param_block_lines(accepted, &defaults, dialect);
    let at = insertion_index(
        &lines.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        dialect,
    );
    let mut with_block: Vec<String> = Vec::with_capacity(lines.len() + block.len() + 2);
    with_block.extend(lines[..at].iter().cloned());
    with_block.push(String::new());
    with_block.extend(block);
    with_block.push(String::new());
    with_block.extend(lines[at..].iter().cloned());

    Ok(with_block.join("\n"))
}

/// Regenerates the parameter block of a rewritten source with new values;
/// the rest of the source is untouched byte-for-byte.
pub fn substitute_values(
    rewritten: &str,
    space: &KnobSpace,
    values: &BTreeMap<String, f64>,
    dialect: Dialect,
) -> Result<String, TuningError> {
    for knob in &space.knobs {
        let value = values
            .get(&knob.name)
            .ok_or_else(|| TuningError::MissingValue(knob.name.clone()))?;
        if knob.kind == Kind::Int && value.fract() != 0.0 {
            return Err(TuningError::NonIntegralInt(knob.name.clone(), *value));
        }
    }

    let mut lines: Vec<String> = rewritten.split('\n').map(|s| s.to_string()).collect();
    match dialect {
        Dialect::PyLike => {
            let start = lines
                .iter()
                .position(|l| l == "PARAMS = {")
                .ok_or_else(|| TuningError::RewriteConflict("missing PARAMS block".to_string()))?;
            let end = lines[start..]
                .iter()
                .position(|l| l == "}")
                .map(|offset| start + offset)
                .ok_or_else(|| TuningError::RewriteConflict("unterminated PARAMS block".to_string()))?;
            let block = param_block_lines(&space.knobs, values, dialect);
            lines.splice(start..=end, block);
        }
        Dialect::CLike => {
            for knob in &space.knobs {
                let prefix = format!("#define {} ", macro_name(&knob.name));
                let idx = lines
                    .iter()
                    .position(|l| l.starts_with(&prefix))
                    .ok_or_else(|| {
                        TuningError::RewriteConflict(format!("missing macro for knob {}", knob.name))
                    })?;
                lines[idx] = format!("{prefix}{}", render_number(values[&knob.name], knob.kind));
            }
        }
    }
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------------------
// The full tuning-gap report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningOutcome {
    Improves,
    NoChange,
    Regresses,
}

/// The tuning-gap outcome for one target program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    /// Original score of the frozen program.
    pub f_p0: f64,
    /// Best ok-status score over the optimization budget. Falls back to
    /// `f_p0` when no evaluation succeeded or no knob was accepted.
    pub f_star_bo: f64,
    /// The run's final-best score.
    pub f_star_evo: f64,
    /// `f_star_evo - f_star_bo`.
    pub gap: f64,
    pub outcome: TuningOutcome,
    pub knobs: Vec<KnobSpec>,
    pub dropped: Vec<DroppedKnob>,
    pub history: Vec<BoTrial>,
}

#[derive(Debug, Clone)]
pub struct TuningRunConfig {
    pub model_id: String,
    pub budget: usize,
    pub init: usize,
    pub rng_seed: u64,
    /// Score differences within this tolerance classify as no change.
    /// Zero (exact equality) suits deterministic evaluators.
    pub no_change_tolerance: f64,
}

impl TuningRunConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        TuningRunConfig {
            model_id: model_id.into(),
            budget: 24,
            init: 8,
            rng_seed: 0,
            no_change_tolerance: 0.0,
        }
    }
}

/// Runs the full pipeline against one candidate: request knobs, validate,
/// rewrite, optimize with the run's evaluator, classify the outcome. The
/// default point is not force-included in the evaluation budget. When no
/// knob survives validation the report carries an empty history and a
/// no-change outcome.
pub fn tuning_gap_report(
    run: &Run,
    candidate_id: &str,
    config: &TuningRunConfig,
    client: &dyn ModelClient,
    evaluator: &dyn ProgramEvaluator,
) -> Result<TuningReport, TuningError> {
    let candidate = run
        .candidate(candidate_id)
        .ok_or_else(|| TraceError::UnknownCandidate(candidate_id.to_string()))?;
    let f_p0 = candidate
        .score
        .ok_or_else(|| TuningError::MissingScore(candidate_id.to_string()))?;
    let f_star_evo = run
        .final_best()?
        .score
        .expect("final best carries a score");

    let dialect = run.environment().dialect;
    let (proposed, mut dropped) =
        request_knobs(&candidate.source, dialect, &config.model_id, client)?;
    let (accepted, dropped_validation) = validate_knobs(&candidate.source, &proposed);
    dropped.extend(dropped_validation);

    if accepted.is_empty() {
        return Ok(TuningReport {
            f_p0,
            f_star_bo: f_p0,
            f_star_evo,
            gap: f_star_evo - f_p0,
            outcome: TuningOutcome::NoChange,
            knobs: Vec::new(),
            dropped,
            history: Vec::new(),
        });
    }

    let rewritten = rewrite_with_param_block(&candidate.source, &accepted, dialect)?;
    let space = KnobSpace {
        knobs: accepted.clone(),
        structure_id: candidate_id.to_string(),
    };
    let environment = run.environment().clone();

    let result = bo_optimize(
        &space,
        |values| match substitute_values(&rewritten, &space, values, dialect) {
            Ok(program) => {
                let evaluation = evaluator.evaluate(&EvalRequest {
                    program_source: program,
                    environment: environment.clone(),
                });
                (evaluation.score, evaluation.status)
            }
            Err(_) => (None, EvalStatus::Error),
        },
        config.budget,
        config.init,
        config.rng_seed,
    )?;

    let f_star_bo = result.best_score.unwrap_or(f_p0);
    let outcome = if f_star_bo > f_p0 + config.no_change_tolerance {
        TuningOutcome::Improves
    } else if f_star_bo < f_p0 - config.no_change_tolerance {
        TuningOutcome::Regresses
    } else {
        TuningOutcome::NoChange
    };

    Ok(TuningReport {
        f_p0,
        f_star_bo,
        f_star_evo,
        gap: f_star_evo - f_star_bo,
        outcome,
        knobs: accepted,
        dropped,
        history: result.history,
    })
}
