//! Deterministic cycling detection: classifies every added line of every
//! edit as literal / tuning / trivial recycling or novel, against the pool
//! of lines previously deleted in the child's lineage, and aggregates
//! per-run rate series, slopes, and re-introduction spans.
//!
//! Matching rules: literal recycling is an exact-bytes match against a
//! previously removed line; tuning recycling is a skeleton match by a line
//! that carries at least one numeric literal; comment-only and blank lines
//! are trivial. Matches always use the most recent deletion, and a deletion
//! from the same edit is never a match (spans are at least 1).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{compute_diff, count_numeric_literals, DiffRecord, LineKind};
use crate::trace::{Edge, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Trivial,
    Literal,
    Tuning,
    Novel,
}

/// Classification of one added line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineClassification {
    pub category: Category,
    /// Iteration of the most recent deletion this line matches; present for
    /// literal and tuning classifications only.
    pub matched_deletion_iteration: Option<u32>,
    /// Iterations between the matched deletion and this re-introduction.
    pub span: Option<u32>,
}

/// Per-run cycling aggregate. `per_iteration_rate[t]` is the cumulative
/// literal-recycle share of added code lines over iterations `<= t`; entries
/// before the first added code line are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclingSeries {
    pub per_iteration_rate: Vec<Option<f64>>,
    pub slope: f64,
    pub run_rate: f64,
    pub tuning_share: f64,
}

#[derive(Debug, Error)]
pub enum CyclingError {
    #[error("unknown group key: {0} (expected model, backend, task, or diff_mode)")]
    UnknownGroupKey(String),
}

/// Lines deleted somewhere in a lineage, keyed by exact bytes and by
/// skeleton, each holding the iteration of its most recent deletion.
#[derive(Debug, Clone, Default)]
struct DeletionPool {
    by_bytes: HashMap<String, u32>,
    by_skeleton: HashMap<String, u32>,
}

impl DeletionPool {
    fn absorb_diff(&mut self, diff: &DiffRecord, iteration: u32) {
        for rec in &diff.removed_lines {
            bump(&mut self.by_bytes, &rec.bytes, iteration);
            bump(&mut self.by_skeleton, &rec.skeleton, iteration);
        }
    }

    fn merge(&mut self, other: &DeletionPool) {
        for (k, &v) in &other.by_bytes {
            bump(&mut self.by_bytes, k, v);
        }
        for (k, &v) in &other.by_skeleton {
            bump(&mut self.by_skeleton, k, v);
        }
    }
}

fn bump(map: &mut HashMap<String, u32>, key: &str, iteration: u32) {
    match map.get_mut(key) {
        Some(existing) => *existing = (*existing).max(iteration),
        None => {
            map.insert(key.to_string(), iteration);
        }
    }
}

/// Walks a run's lineage graph once and classifies edges on demand. Pools
/// are memoized per candidate, so classifying every edge of a run costs one
/// diff per edge.
pub struct CyclingAnalyzer<'a> {
    run: &'a Run,
    pools: HashMap<String, DeletionPool>,
    diffs: HashMap<(String, String), DiffRecord>,
}

impl<'a> CyclingAnalyzer<'a> {
    pub fn new(run: &'a Run) -> Self {
        CyclingAnalyzer {
            run,
            pools: HashMap::new(),
            diffs: HashMap::new(),
        }
    }

    fn diff_for(&mut self, parent_id: &str, child_id: &str) -> DiffRecord {
        let key = (parent_id.to_string(), child_id.to_string());
        if let Some(d) = self.diffs.get(&key) {
            return d.clone();
        }
        let parent = self.run.candidate(parent_id).expect("edge endpoints exist");
        let child = self.run.candidate(child_id).expect("edge endpoints exist");
        let mut diff = compute_diff(
            &parent.source,
            &child.source,
            self.run.environment().dialect,
        );
        diff.parent_id = parent_id.to_string();
        diff.child_id = child_id.to_string();
        self.diffs.insert(key, diff.clone());
        diff
    }

    /// Pool of deletions accumulated along the lineage of `candidate_id`:
    /// the union over all parents' pools plus the removals of the edit that
    /// produced this candidate. For multi-parent candidates the edit's own
    /// removals are taken against the first-listed parent, the lineage
    /// base; material absent from a recombination co-parent is inherited,
    /// not deleted.
    fn pool_after(&mut self, candidate_id: &str) -> DeletionPool {
        if let Some(pool) = self.pools.get(candidate_id) {
            return pool.clone();
        }
        // Guards against malformed cyclic inputs.
        self.pools
            .insert(candidate_id.to_string(), DeletionPool::default());

        let candidate = self
            .run
            .candidate(candidate_id)
            .expect("pool queried for existing candidate");
        let iteration = candidate.iteration;
        let parent_ids = candidate.parent_ids.clone();

        let mut pool = DeletionPool::default();
        for parent_id in &parent_ids {
            let parent_pool = self.pool_after(parent_id);
            pool.merge(&parent_pool);
        }
        if let Some(primary) = parent_ids.first() {
            let diff = self.diff_for(primary, candidate_id);
            pool.absorb_diff(&diff, iteration);
        }
        self.pools.insert(candidate_id.to_string(), pool.clone());
        pool
    }

    /// Pool visible to the edit(s) producing `candidate_id`: the union of
    /// all parents' lineage deletions, before this edit's own removals.
    fn pool_before(&mut self, candidate_id: &str) -> DeletionPool {
        let parent_ids = self
            .run
            .candidate(candidate_id)
            .map(|c| c.parent_ids.clone())
            .unwrap_or_default();
        let mut pool = DeletionPool::default();
        for parent_id in &parent_ids {
            let parent_pool = self.pool_after(parent_id);
            pool.merge(&parent_pool);
        }
        pool
    }

    /// Classifies every added line of `edge`, in diff order.
    pub fn classify_edge(&mut self, edge: &Edge) -> Vec<LineClassification> {
        let child = self
            .run
            .candidate(&edge.child_id)
            .expect("edge endpoints exist");
        let child_iteration = child.iteration;
        let dialect = self.run.environment().dialect;
        let pool = self.pool_before(&edge.child_id);
        let diff = self.diff_for(&edge.parent_id, &edge.child_id);

        diff.added_lines
            .iter()
            .map(|rec| {
                if rec.kind != LineKind::Code {
                    return LineClassification {
                        category: Category::Trivial,
                        matched_deletion_iteration: None,
                        span: None,
                    };
                }
                if let Some(&iter) = pool.by_bytes.get(&rec.bytes) {
                    if iter < child_iteration {
                        return LineClassification {
                            category: Category::Literal,
                            matched_deletion_iteration: Some(iter),
                            span: Some(child_iteration - iter),
                        };
                    }
                }
                if let Some(&iter) = pool.by_skeleton.get(&rec.skeleton) {
                    if iter < child_iteration && count_numeric_literals(&rec.bytes, dialect) >= 1 {
                        return LineClassification {
                            category: Category::Tuning,
                            matched_deletion_iteration: Some(iter),
                            span: Some(child_iteration - iter),
                        };
                    }
                }
                LineClassification {
                    category: Category::Novel,
                    matched_deletion_iteration: None,
                    span: None,
                }
            })
            .collect()
    }
}

/// One-shot classification of a single edge's added lines.
pub fn classify_added_lines(run: &Run, edge: &Edge) -> Vec<LineClassification> {
    CyclingAnalyzer::new(run).classify_edge(edge)
}

/// One edit per non-seed candidate: the diff against its first-listed
/// parent, in iteration order. Run-level aggregates iterate these so a
/// recombination child is counted once, not once per parent.
fn primary_edits(run: &Run) -> Vec<Edge> {
    let mut children: Vec<&crate::trace::Candidate> = run
        .candidates()
        .iter()
        .filter(|c| !c.parent_ids.is_empty())
        .collect();
    children.sort_by_key(|c| c.iteration);
    children
        .into_iter()
        .map(|c| Edge {
            parent_id: c.parent_ids[0].clone(),
            child_id: c.candidate_id.clone(),
            operator: crate::trace::EdgeOperator::Unknown,
            extra: crate::trace::JsonMap::new(),
        })
        .collect()
}

/// Cumulative per-iteration literal-recycle rates, their OLS slope, the
/// run-level literal rate, and the tuning share of code-changing added
/// lines.
pub fn run_cycling_series(run: &Run) -> CyclingSeries {
    let mut analyzer = CyclingAnalyzer::new(run);
    let budget = run.budget() as usize;
    let mut literal_delta = vec![0usize; budget + 1];
    let mut tuning_delta = vec![0usize; budget + 1];
    let mut code_delta = vec![0usize; budget + 1];

    for edge in &primary_edits(run) {
        let child = run.candidate(&edge.child_id).expect("edge endpoints exist");
        let t = (child.iteration as usize).min(budget);
        let diff = analyzer.diff_for(&edge.parent_id, &edge.child_id);
        let classes = analyzer.classify_edge(edge);
        for (rec, class) in diff.added_lines.iter().zip(&classes) {
            if rec.kind != LineKind::Code {
                continue;
            }
            code_delta[t] += 1;
            match class.category {
                Category::Literal => literal_delta[t] += 1,
                Category::Tuning => tuning_delta[t] += 1,
                _ => {}
            }
        }
    }

    let mut per_iteration_rate = Vec::with_capacity(budget + 1);
    let mut literal_cum = 0usize;
    let mut tuning_cum = 0usize;
    let mut code_cum = 0usize;
    for t in 0..=budget {
        literal_cum += literal_delta[t];
        tuning_cum += tuning_delta[t];
        code_cum += code_delta[t];
        per_iteration_rate.push(if code_cum == 0 {
            None
        } else {
            Some(literal_cum as f64 / code_cum as f64)
        });
    }

    let run_rate = if code_cum == 0 {
        0.0
    } else {
        literal_cum as f64 / code_cum as f64
    };
    let tuning_share = if code_cum == 0 {
        0.0
    } else {
        tuning_cum as f64 / code_cum as f64
    };

    CyclingSeries {
        slope: ols_slope(&per_iteration_rate),
        per_iteration_rate,
        run_rate,
        tuning_share,
    }
}

/// Ordinary-least-squares slope of the defined entries against their
/// iteration index. Zero when fewer than two entries are defined.
fn ols_slope(series: &[Option<f64>]) -> f64 {
    let points: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(t, r)| r.map(|v| (t as f64, v)))
        .collect();
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in &points {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// Distribution summary over the spans of all literal re-introductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSummary {
    pub count: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// span -> number of literal re-introductions with that span.
    pub histogram: std::collections::BTreeMap<u32, usize>,
}

pub fn reintroduction_spans(run: &Run) -> SpanSummary {
    let mut analyzer = CyclingAnalyzer::new(run);
    let mut spans = Vec::new();
    for edge in &primary_edits(run) {
        for class in analyzer.classify_edge(edge) {
            if class.category == Category::Literal {
                spans.push(class.span.expect("literal classifications carry spans"));
            }
        }
    }
    spans.sort_unstable();

    let mut histogram = std::collections::BTreeMap::new();
    for &s in &spans {
        *histogram.entry(s).or_insert(0) += 1;
    }

    SpanSummary {
        count: spans.len(),
        median: quantile(&spans, 0.5),
        q1: quantile(&spans, 0.25),
        q3: quantile(&spans, 0.75),
        histogram,
    }
}

/// Linearly interpolated quantile of a sorted slice.
fn quantile(sorted: &[u32], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Model,
    Backend,
    Task,
    DiffMode,
}

impl std::str::FromStr for GroupKey {
    type Err = CyclingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(GroupKey::Model),
            "backend" => Ok(GroupKey::Backend),
            "task" => Ok(GroupKey::Task),
            "diff_mode" => Ok(GroupKey::DiffMode),
            other => Err(CyclingError::UnknownGroupKey(other.to_string())),
        }
    }
}

fn group_value(run: &Run, key: GroupKey) -> String {
    let from_config = |name: &str| -> Option<String> {
        run.model_config().get(name).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Bool(true) => "diff".to_string(),
            serde_json::Value::Bool(false) => "no_diff".to_string(),
            other => other.to_string(),
        })
    };
    match key {
        GroupKey::Model => from_config("model").unwrap_or_else(|| "unknown".to_string()),
        GroupKey::Backend => {
            let b = run.backend();
            if b.is_empty() {
                "unknown".to_string()
            } else {
                b.to_string()
            }
        }
        GroupKey::Task => run.task().to_string(),
        GroupKey::DiffMode => from_config("diff_mode").unwrap_or_else(|| "unknown".to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub tuning_share: f64,
    pub runs: usize,
}

/// Median per-run tuning share for each group of the corpus.
pub fn tuning_share_by_group(corpus: &[Run], key: GroupKey) -> Vec<GroupShare> {
    let mut groups: std::collections::BTreeMap<String, Vec<f64>> = std::collections::BTreeMap::new();
    for run in corpus {
        let share = run_cycling_series(run).tuning_share;
        groups.entry(group_value(run, key)).or_default().push(share);
    }
    groups
        .into_iter()
        .map(|(group, mut shares)| {
            shares.sort_by(|a, b| a.total_cmp(b));
            GroupShare {
                group,
                tuning_share: median_f64(&shares),
                runs: shares.len(),
            }
        })
        .collect()
}

fn median_f64(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// For each best-so-far event after the first chain entry, the mean
/// cumulative cycling rate over `(t, t + window]` minus the mean over
/// `(t - window, t]`. Events whose windows cross the run boundaries are
/// skipped.
pub fn post_breakthrough_delta(run: &Run, window: u32) -> Vec<f64> {
    let series = run_cycling_series(run);
    let chain = match run.best_so_far_chain() {
        Ok(chain) => chain,
        Err(_) => return Vec::new(),
    };
    let budget = run.budget();
    let window_mean = |from: u32, to: u32| -> Option<f64> {
        let values: Vec<f64> = (from..=to)
            .filter_map(|t| series.per_iteration_rate.get(t as usize).copied().flatten())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    chain
        .iter()
        .skip(1)
        .filter_map(|entry| {
            let t = entry.iteration;
            if t < window || t + window > budget {
                return None;
            }
            let before = window_mean(t - window + 1, t)?;
            let after = window_mean(t + 1, t + window)?;
            Some(after - before)
        })
        .collect()
}

/// Audit row for the optional per-line JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub run_id: String,
    pub parent_id: String,
    pub child_id: String,
    pub iteration: u32,
    pub line_index: usize,
    pub bytes: String,
    pub category: Category,
    pub span: Option<u32>,
}

/// Per-line classifications for every edge, flattened for audit output.
pub fn classification_audit(run: &Run) -> Vec<AuditRow> {
    let mut analyzer = CyclingAnalyzer::new(run);
    let mut rows = Vec::new();
    for edge in &primary_edits(run) {
        let child = run.candidate(&edge.child_id).expect("edge endpoints exist");
        let diff = analyzer.diff_for(&edge.parent_id, &edge.child_id);
        let classes = analyzer.classify_edge(edge);
        for (rec, class) in diff.added_lines.iter().zip(&classes) {
            rows.push(AuditRow {
                run_id: run.run_id().to_string(),
                parent_id: edge.parent_id.clone(),
                child_id: edge.child_id.clone(),
                iteration: child.iteration,
                line_index: rec.index,
                bytes: rec.bytes.clone(),
                category: class.category,
                span: class.span,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::schema::*;
    use crate::trace::{
        generate_synthetic_run, LineageShape, RunParts, ScoreProfile, SynthConfig,
    };

    /// Chain run built from explicit line lists, one candidate per entry.
    fn chain_run(sources: &[&[&str]]) -> Run {
        let mut candidates = Vec::new();
        let mut edges = Vec::new();
        let mut contexts = Vec::new();
        for (i, lines) in sources.iter().enumerate() {
            let id = format!("c{i}");
            let mut source = lines.join("\n");
            source.push('\n');
            let context_id = if i == 0 {
                None
            } else {
                contexts.push(Context {
                    context_id: format!("ctx{i}"),
                    prompt: "edit".to_string(),
                    auxiliary: JsonMap::new(),
                    extra: JsonMap::new(),
                });
                Some(format!("ctx{i}"))
            };
            candidates.push(Candidate {
                candidate_id: id.clone(),
                iteration: i as u32,
                source,
                parent_ids: if i == 0 {
                    Vec::new()
                } else {
                    vec![format!("c{}", i - 1)]
                },
                context_id,
                validity: Validity::Accepted,
                score: Some(1.0 + i as f64),
                extra: JsonMap::new(),
            });
            if i > 0 {
                edges.push(Edge {
                    parent_id: format!("c{}", i - 1),
                    child_id: id,
                    operator: EdgeOperator::Mutation,
                    extra: JsonMap::new(),
                });
            }
        }
        RunParts {
            record: RunRecord {
                run_id: "test".to_string(),
                task: "t".to_string(),
                backend: "b".to_string(),
                model_config: JsonMap::new(),
                domain_tag: DomainTag::Other,
                budget: (sources.len() - 1).max(1) as u32,
                seed_candidate_id: "c0".to_string(),
                extra: JsonMap::new(),
            },
            environment: ReplayEnvironment::new("true {program}", 10.0, crate::diff::Dialect::PyLike),
            candidates,
            evaluations: Vec::new(),
            edges,
            contexts,
        }
        .assemble()
        .expect("test runs assemble")
    }

    #[test]
    fn literal_reintroduction_with_span() {
        // "lr = 0.1" removed at t=1, byte-identical re-add at t=6.
        let run = chain_run(&[
            &["lr = 0.1", "keep = 2"],
            &["keep = 2"],
            &["keep = 2", "pad_2 = 2"],
            &["keep = 2", "pad_2 = 2", "pad_3 = 3"],
            &["keep = 2", "pad_3 = 3"],
            &["keep = 2"],
            &["keep = 2", "lr = 0.1"],
        ]);
        let edge = &run.edges()[5];
        let classes = classify_added_lines(&run, edge);
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].category, Category::Literal);
        assert_eq!(classes[0].matched_deletion_iteration, Some(1));
        assert_eq!(classes[0].span, Some(5));
    }

    #[test]
    fn tuning_reintroduction_when_numbers_differ() {
        let run = chain_run(&[
            &["lr = 0.1", "keep = 2"],
            &["keep = 2"],
            &["keep = 2", "lr = 0.2"],
        ]);
        let classes = classify_added_lines(&run, &run.edges()[1]);
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].category, Category::Tuning);
        assert_eq!(classes[0].span, Some(1));
    }

    #[test]
    fn comment_addition_is_trivial() {
        let run = chain_run(&[&["x = 1"], &["x = 1", "# retry here"]]);
        let classes = classify_added_lines(&run, &run.edges()[0]);
        assert_eq!(classes[0].category, Category::Trivial);
    }

    #[test]
    fn fresh_line_is_novel() {
        let run = chain_run(&[&["x = 1"], &["x = 1", "brand_new = 7"]]);
        let classes = classify_added_lines(&run, &run.edges()[0]);
        assert_eq!(classes[0].category, Category::Novel);
    }

    #[test]
    fn same_edit_move_is_not_literal() {
        // "a = 1" both removed and added by the same edit (a move).
        let run = chain_run(&[&["a = 1", "b = 2"], &["b = 2", "a = 1"]]);
        let classes = classify_added_lines(&run, &run.edges()[0]);
        for class in &classes {
            assert_ne!(class.category, Category::Literal);
            if let Some(span) = class.span {
                assert!(span >= 1);
            }
        }
    }

    #[test]
    fn most_recent_deletion_wins() {
        // "v = 9" removed at t=2, present again at t=4..5, removed at t=6,
        // re-added at t=9: span must be 3, not 7.
        let run = chain_run(&[
            &["v = 9", "keep = 1"],
            &["v = 9", "keep = 1", "pad_1 = 1"],
            &["keep = 1", "pad_1 = 1"],
            &["keep = 1", "pad_1 = 1", "pad_3 = 3"],
            &["keep = 1", "pad_3 = 3", "v = 9"],
            &["keep = 1", "pad_3 = 3", "v = 9", "pad_5 = 5"],
            &["keep = 1", "pad_3 = 3", "pad_5 = 5"],
            &["keep = 1", "pad_5 = 5"],
            &["keep = 1", "pad_5 = 5", "pad_8 = 8"],
            &["keep = 1", "pad_8 = 8", "v = 9"],
        ]);
        let last_edge = &run.edges()[8];
        let classes = classify_added_lines(&run, last_edge);
        let literal = classes
            .iter()
            .find(|c| c.category == Category::Literal)
            .expect("the re-added line is literal recycling");
        assert_eq!(literal.matched_deletion_iteration, Some(6));
        assert_eq!(literal.span, Some(3));
    }

    #[test]
    fn zero_deletions_means_zero_rate() {
        let run = chain_run(&[
            &["a = 1"],
            &["a = 1", "b = 2"],
            &["a = 1", "b = 2", "c = 3"],
        ]);
        let series = run_cycling_series(&run);
        assert_eq!(series.run_rate, 0.0);
        assert_eq!(series.tuning_share, 0.0);
    }

    #[test]
    fn classifier_matches_ground_truth_sidecar() {
        for shape in [LineageShape::Chain, LineageShape::Tree] {
            for seed in [1u64, 2, 3] {
                let synthetic = generate_synthetic_run(&SynthConfig {
                    iterations: 60,
                    planted_literal_recycle_rate: 0.3,
                    planted_tuning_recycle_rate: 0.15,
                    lineage_shape: shape,
                    score_profile: ScoreProfile::Improving,
                    rng_seed: seed,
                })
                .unwrap();
                let run = &synthetic.run;

                // Compare (bytes, category, span) multisets per edge between
                // the classifier and the generator's sidecar.
                let mut audit_by_child: std::collections::HashMap<String, Vec<(String, Category, Option<u32>)>> =
                    std::collections::HashMap::new();
                for row in classification_audit(run) {
                    audit_by_child
                        .entry(row.child_id.clone())
                        .or_default()
                        .push((row.bytes, row.category, row.span));
                }
                for edge_truth in &synthetic.ground_truth.edges {
                    let mut expected: Vec<(String, Category, Option<u32>)> = edge_truth
                        .lines
                        .iter()
                        .map(|l| {
                            (
                                l.bytes.clone(),
                                l.category,
                                l.matched_deletion_iteration
                                    .map(|d| edge_truth.iteration - d),
                            )
                        })
                        .collect();
                    let mut actual = audit_by_child
                        .remove(&edge_truth.child_id)
                        .unwrap_or_default();
                    expected.sort();
                    actual.sort();
                    assert_eq!(
                        actual, expected,
                        "edge {} (shape {shape:?}, seed {seed})",
                        edge_truth.child_id
                    );
                }
                assert!(audit_by_child.is_empty(), "classifier saw extra edges");

                let series = run_cycling_series(run);
                assert!((series.run_rate - synthetic.ground_truth.literal_rate()).abs() < 1e-12);
                assert!(
                    (series.tuning_share - synthetic.ground_truth.tuning_rate()).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn full_plant_rate_yields_unit_run_rate() {
        let synthetic = generate_synthetic_run(&SynthConfig {
            iterations: 50,
            planted_literal_recycle_rate: 1.0,
            planted_tuning_recycle_rate: 0.0,
            lineage_shape: LineageShape::Chain,
            score_profile: ScoreProfile::Improving,
            rng_seed: 21,
        })
        .unwrap();
        let series = run_cycling_series(&synthetic.run);
        assert_eq!(series.run_rate, 1.0);
        assert!(series.slope.abs() < 1e-9);
    }

    #[test]
    fn spans_summary_collects_medians() {
        let run = chain_run(&[
            &["x = 5", "keep = 1"],
            &["keep = 1"],
            &["keep = 1", "pad_2 = 2"],
            &["keep = 1", "pad_2 = 2", "pad_3 = 3"],
            &["keep = 1", "pad_2 = 2", "pad_3 = 3", "pad_4 = 4"],
            &["keep = 1", "pad_2 = 2", "pad_3 = 3", "pad_4 = 4", "pad_5 = 5"],
            &["keep = 1", "pad_2 = 2", "pad_3 = 3", "pad_4 = 4", "pad_5 = 5", "x = 5"],
        ]);
        let summary = reintroduction_spans(&run);
        assert_eq!(summary.count, 1);
        assert_eq!(summary.median, Some(5.0));
        assert_eq!(summary.histogram[&5], 1);
    }

    #[test]
    fn post_breakthrough_delta_is_zero_on_flat_series() {
        let synthetic = generate_synthetic_run(&SynthConfig {
            iterations: 40,
            planted_literal_recycle_rate: 1.0,
            planted_tuning_recycle_rate: 0.0,
            lineage_shape: LineageShape::Chain,
            score_profile: ScoreProfile::Improving,
            rng_seed: 33,
        })
        .unwrap();
        let deltas = post_breakthrough_delta(&synthetic.run, 5);
        assert!(!deltas.is_empty());
        for d in deltas {
            assert!(d.abs() < 1e-9, "flat series must yield zero deltas, got {d}");
        }
    }

    #[test]
    fn events_too_close_to_boundaries_are_skipped() {
        // Budget 1 cannot fit a window of 5 on either side of any event.
        let run = chain_run(&[&["a = 1"], &["a = 1", "b = 2"]]);
        assert!(post_breakthrough_delta(&run, 5).is_empty());
    }

    #[test]
    fn group_share_of_identical_runs_matches_run_share() {
        let synthetic = generate_synthetic_run(&SynthConfig {
            iterations: 30,
            planted_literal_recycle_rate: 0.2,
            planted_tuning_recycle_rate: 0.2,
            lineage_shape: LineageShape::Chain,
            score_profile: ScoreProfile::Improving,
            rng_seed: 17,
        })
        .unwrap();
        let share = run_cycling_series(&synthetic.run).tuning_share;
        let corpus = vec![synthetic.run.clone(), synthetic.run.clone()];
        for key in [GroupKey::Model, GroupKey::Backend, GroupKey::Task, GroupKey::DiffMode] {
            let groups = tuning_share_by_group(&corpus, key);
            assert_eq!(groups.len(), 1);
            assert_eq!(groups[0].tuning_share, share);
            assert_eq!(groups[0].runs, 2);
        }
    }

    #[test]
    fn group_key_parsing() {
        assert_eq!("model".parse::<GroupKey>().unwrap(), GroupKey::Model);
        assert_eq!("diff_mode".parse::<GroupKey>().unwrap(), GroupKey::DiffMode);
        assert!(matches!(
            "bogus".parse::<GroupKey>(),
            Err(CyclingError::UnknownGroupKey(_))
        ));
    }
}
