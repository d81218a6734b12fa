//! Aggregation of annotations and score changes: label prevalence, per-edit
//! helpfulness odds ratios, event enrichment, and label-count histograms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{EdgeRef, EditAnnotation, Label};
use crate::trace::{Run, Validity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSign {
    Positive,
    NonPositive,
}

/// Sign of the score change across one edit. `normalized_delta` uses a
/// per-run min-max normalization of accepted scores; the map is monotone,
/// so the sign always agrees with `raw_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreChangeSign {
    pub edge_ref: EdgeRef,
    pub sign: ScoreSign,
    pub raw_delta: f64,
    pub normalized_delta: f64,
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty annotation set")]
    EmptyInput,
    #[error("no score-change sign for edge {0:?}")]
    MissingSign(EdgeRef),
    #[error("unknown group key: {0} (expected domain, backend, model, or task)")]
    UnknownGroupKey(String),
}

/// Computes signs for every edge whose parent and child both carry scores.
/// Returns the signs and the count of edges skipped for missing scores.
pub fn score_change_signs(run: &Run) -> (Vec<ScoreChangeSign>, usize) {
    let accepted_scores: Vec<f64> = run
        .candidates()
        .iter()
        .filter(|c| c.validity == Validity::Accepted)
        .filter_map(|c| c.score)
        .collect();
    let lo = accepted_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = accepted_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let normalize = move |score: f64| -> f64 {
        if hi > lo {
            (score - lo) / (hi - lo)
        } else {
            0.0
        }
    };

    let mut signs = Vec::new();
    let mut skipped = 0;
    for edge in run.edges() {
        let parent_score = run.candidate(&edge.parent_id).and_then(|c| c.score);
        let child_score = run.candidate(&edge.child_id).and_then(|c| c.score);
        match (parent_score, child_score) {
            (Some(p), Some(c)) => {
                let raw_delta = c - p;
                signs.push(ScoreChangeSign {
                    edge_ref: EdgeRef::new(run, edge),
                    sign: if raw_delta > 0.0 {
                        ScoreSign::Positive
                    } else {
                        ScoreSign::NonPositive
                    },
                    raw_delta,
                    normalized_delta: normalize(c) - normalize(p),
                });
            }
            _ => skipped += 1,
        }
    }
    (signs, skipped)
}

/// Share of edits carrying each label. Shares need not sum to one; edits
/// are multi-label.
pub fn prevalence(annotations: &[EditAnnotation]) -> Result<BTreeMap<Label, f64>, StatsError> {
    if annotations.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = annotations.len() as f64;
    let mut out = BTreeMap::new();
    for label in Label::ALL {
        let count = annotations.iter().filter(|a| a.labels.contains(&label)).count();
        out.insert(label, count as f64 / n);
    }
    Ok(out)
}

/// Odds ratio for positive score change plus the labeled-edit count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOdds {
    pub odds_ratio: f64,
    pub n: usize,
}

/// Per-label odds ratio of a positive normalized score change, from each
/// label's 2x2 table over annotated edges. When any cell is zero the
/// Haldane-Anscombe correction adds 0.5 to all four cells.
pub fn helpfulness_odds_ratio(
    annotations: &[EditAnnotation],
    signs: &[ScoreChangeSign],
) -> Result<BTreeMap<Label, LabelOdds>, StatsError> {
    let sign_by_edge: BTreeMap<&EdgeRef, ScoreSign> =
        signs.iter().map(|s| (&s.edge_ref, s.sign)).collect();

    let mut out = BTreeMap::new();
    for label in Label::ALL {
        let mut a = 0usize; // label & positive
        let mut b = 0usize; // label & non-positive
        let mut c = 0usize; // no label & positive
        let mut d = 0usize; // no label & non-positive
        for ann in annotations {
            let sign = sign_by_edge
                .get(&ann.edge_ref)
                .ok_or_else(|| StatsError::MissingSign(ann.edge_ref.clone()))?;
            match (ann.labels.contains(&label), sign) {
                (true, ScoreSign::Positive) => a += 1,
                (true, ScoreSign::NonPositive) => b += 1,
                (false, ScoreSign::Positive) => c += 1,
                (false, ScoreSign::NonPositive) => d += 1,
            }
        }
        out.insert(
            label,
            LabelOdds {
                odds_ratio: odds_ratio_2x2(a, b, c, d),
                n: a + b,
            },
        );
    }
    Ok(out)
}

/// Odds ratio of a 2x2 table with the Haldane-Anscombe correction applied
/// when any cell is zero.
pub fn odds_ratio_2x2(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let (a, b, c, d) = if a == 0 || b == 0 || c == 0 || d == 0 {
        (
            a as f64 + 0.5,
            b as f64 + 0.5,
            c as f64 + 0.5,
            d as f64 + 0.5,
        )
    } else {
        (a as f64, b as f64, c as f64, d as f64)
    };
    (a * d) / (b * c)
}

/// Prevalence among the event edges divided by prevalence among all edges.
/// Labels absent from the events map to 0; labels with a zero base rate are
/// omitted (the ratio is undefined).
pub fn enrichment(
    annotations: &[EditAnnotation],
    event_edges: &BTreeSet<EdgeRef>,
) -> BTreeMap<Label, f64> {
    let total = annotations.len();
    let event_annotations: Vec<&EditAnnotation> = annotations
        .iter()
        .filter(|a| event_edges.contains(&a.edge_ref))
        .collect();
    let n_events = event_annotations.len();

    let mut out = BTreeMap::new();
    if total == 0 || n_events == 0 {
        return out;
    }
    for label in Label::ALL {
        let base = annotations.iter().filter(|a| a.labels.contains(&label)).count();
        if base == 0 {
            continue;
        }
        let event = event_annotations
            .iter()
            .filter(|a| a.labels.contains(&label))
            .count();
        let base_rate = base as f64 / total as f64;
        let event_rate = event as f64 / n_events as f64;
        out.insert(label, event_rate / base_rate);
    }
    out
}

/// Share of edits carrying exactly `k` labels; shares sum to one.
pub fn label_count_histogram(
    annotations: &[EditAnnotation],
) -> Result<BTreeMap<usize, f64>, StatsError> {
    if annotations.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = annotations.len() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for ann in annotations {
        *counts.entry(ann.labels.len()).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, count)| (k, count as f64 / n))
        .collect())
}

/// Edges whose child enters the best-so-far chain.
pub fn best_so_far_event_edges(run: &Run) -> BTreeSet<EdgeRef> {
    let chain = match run.best_so_far_chain() {
        Ok(chain) => chain,
        Err(_) => return BTreeSet::new(),
    };
    let chain_ids: BTreeSet<&str> = chain.iter().map(|e| e.candidate_id.as_str()).collect();
    run.edges()
        .iter()
        .filter(|e| chain_ids.contains(e.child_id.as_str()))
        .map(|e| EdgeRef::new(run, e))
        .collect()
}

/// Per-label aggregate over one or more annotated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: Label,
    pub prevalence: f64,
    pub odds_ratio: f64,
    /// Signed annotated edits carrying the label.
    pub n: usize,
    /// Absent when the label has a zero base rate.
    pub enrichment_bsf: Option<f64>,
    pub enrichment_final_lineage: Option<f64>,
}

/// Everything the stats surface reports for a set of annotated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRunStats {
    pub labels: Vec<LabelStats>,
    pub annotations: usize,
    pub signed_annotations: usize,
    /// Edges skipped from the odds denominators for lacking a score on
    /// either side.
    pub edges_without_sign: usize,
    /// Annotated edges whose edge carries no sign (reported, excluded).
    pub annotations_excluded_from_odds: usize,
    pub label_count_histogram: BTreeMap<usize, f64>,
}

/// Aggregates annotations and score-change signs over a set of runs;
/// best-so-far and final-lineage event sets union across the runs.
pub fn annotated_run_stats(
    items: &[(&Run, &[EditAnnotation])],
) -> Result<AnnotatedRunStats, StatsError> {
    let annotations: Vec<EditAnnotation> = items
        .iter()
        .flat_map(|(_, anns)| anns.iter().cloned())
        .collect();
    if annotations.is_empty() {
        return Err(StatsError::EmptyInput);
    }

    let mut signs = Vec::new();
    let mut edges_without_sign = 0;
    let mut bsf_edges = BTreeSet::new();
    let mut lineage_edges = BTreeSet::new();
    for (run, _) in items {
        let (run_signs, skipped) = score_change_signs(run);
        signs.extend(run_signs);
        edges_without_sign += skipped;
        bsf_edges.extend(best_so_far_event_edges(run));
        lineage_edges.extend(final_lineage_event_edges(run));
    }

    let signed_edges: BTreeSet<&EdgeRef> = signs.iter().map(|s| &s.edge_ref).collect();
    let signed: Vec<EditAnnotation> = annotations
        .iter()
        .filter(|a| signed_edges.contains(&a.edge_ref))
        .cloned()
        .collect();
    let excluded = annotations.len() - signed.len();

    let prevalence = prevalence(&annotations)?;
    let odds = helpfulness_odds_ratio(&signed, &signs)?;
    let enrichment_bsf = enrichment(&annotations, &bsf_edges);
    let enrichment_lineage = enrichment(&annotations, &lineage_edges);
    let histogram = label_count_histogram(&annotations)?;

    let labels = Label::ALL
        .iter()
        .map(|&label| LabelStats {
            label,
            prevalence: prevalence[&label],
            odds_ratio: odds[&label].odds_ratio,
            n: odds[&label].n,
            enrichment_bsf: enrichment_bsf.get(&label).copied(),
            enrichment_final_lineage: enrichment_lineage.get(&label).copied(),
        })
        .collect();

    Ok(AnnotatedRunStats {
        labels,
        annotations: annotations.len(),
        signed_annotations: signed.len(),
        edges_without_sign,
        annotations_excluded_from_odds: excluded,
        label_count_histogram: histogram,
    })
}

/// Grouping axes for corpus-level stats breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsGroupKey {
    Domain,
    Backend,
    Model,
    Task,
}

impl std::str::FromStr for StatsGroupKey {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "domain" => Ok(StatsGroupKey::Domain),
            "backend" => Ok(StatsGroupKey::Backend),
            "model" => Ok(StatsGroupKey::Model),
            "task" => Ok(StatsGroupKey::Task),
            other => Err(StatsError::UnknownGroupKey(other.to_string())),
        }
    }
}

pub fn stats_group_value(run: &Run, key: StatsGroupKey) -> String {
    match key {
        StatsGroupKey::Domain => format!("{:?}", run.domain_tag()).to_lowercase(),
        StatsGroupKey::Backend => {
            if run.backend().is_empty() {
                "unknown".to_string()
            } else {
                run.backend().to_string()
            }
        }
        StatsGroupKey::Model => run
            .model_config()
            .get("model")
            .and_then(|v| v.as_str())
            .unwrap_or("unknown")
            .to_string(),
        StatsGroupKey::Task => run.task().to_string(),
    }
}

/// Edges along the lineage of the run's final best candidate.
pub fn final_lineage_event_edges(run: &Run) -> BTreeSet<EdgeRef> {
    let best = match run.final_best() {
        Ok(best) => best,
        Err(_) => return BTreeSet::new(),
    };
    let lineage = match run.lineage_of(&best.candidate_id) {
        Ok(lineage) => lineage,
        Err(_) => return BTreeSet::new(),
    };
    let mut out = BTreeSet::new();
    for pair in lineage.windows(2) {
        // lineage runs target -> seed, so pair[1] is the parent
        out.insert(EdgeRef {
            run_id: run.run_id().to_string(),
            parent_id: pair[1].candidate_id.clone(),
            child_id: pair[0].candidate_id.clone(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_ref(i: usize) -> EdgeRef {
        EdgeRef {
            run_id: "r".to_string(),
            parent_id: format!("p{i}"),
            child_id: format!("c{i}"),
        }
    }

    fn annotation(i: usize, labels: &[Label]) -> EditAnnotation {
        EditAnnotation {
            edge_ref: edge_ref(i),
            labels: labels.iter().copied().collect(),
            driver_lines: Vec::new(),
            judge_model: "stub".to_string(),
            cached: false,
        }
    }

    fn sign(i: usize, positive: bool) -> ScoreChangeSign {
        ScoreChangeSign {
            edge_ref: edge_ref(i),
            sign: if positive {
                ScoreSign::Positive
            } else {
                ScoreSign::NonPositive
            },
            raw_delta: if positive { 1.0 } else { -1.0 },
            normalized_delta: if positive { 0.1 } else { -0.1 },
        }
    }

    #[test]
    fn prevalence_counts_shares() {
        let annotations = vec![
            annotation(0, &[Label::Efficiency, Label::BugFix]),
            annotation(1, &[Label::Efficiency]),
        ];
        let p = prevalence(&annotations).unwrap();
        assert_eq!(p[&Label::Efficiency], 1.0);
        assert_eq!(p[&Label::BugFix], 0.5);
        assert_eq!(p[&Label::Refactor], 0.0);
    }

    #[test]
    fn prevalence_rejects_empty() {
        assert!(matches!(prevalence(&[]), Err(StatsError::EmptyInput)));
    }

    #[test]
    fn odds_ratio_direct_2x2() {
        assert_eq!(odds_ratio_2x2(2, 1, 1, 2), 4.0);
    }

    #[test]
    fn odds_ratio_haldane_corrected() {
        // (1.5 * 1.5) / (0.5 * 1.5) = 3.0
        assert!((odds_ratio_2x2(1, 0, 1, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn helpfulness_or_matches_table() {
        // efficiency: a=2 (0,1 positive), b=1 (2), others: c=1 (3), d=2 (4,5)
        let annotations = vec![
            annotation(0, &[Label::Efficiency]),
            annotation(1, &[Label::Efficiency]),
            annotation(2, &[Label::Efficiency]),
            annotation(3, &[Label::Refactor]),
            annotation(4, &[Label::Refactor]),
            annotation(5, &[Label::Refactor]),
        ];
        let signs = vec![
            sign(0, true),
            sign(1, true),
            sign(2, false),
            sign(3, true),
            sign(4, false),
            sign(5, false),
        ];
        let odds = helpfulness_odds_ratio(&annotations, &signs).unwrap();
        assert_eq!(odds[&Label::Efficiency].odds_ratio, 4.0);
        assert_eq!(odds[&Label::Efficiency].n, 3);
    }

    #[test]
    fn missing_sign_is_an_error() {
        let annotations = vec![annotation(0, &[Label::Efficiency])];
        assert!(matches!(
            helpfulness_odds_ratio(&annotations, &[]),
            Err(StatsError::MissingSign(_))
        ));
    }

    #[test]
    fn enrichment_over_full_edge_set_is_one() {
        let annotations = vec![
            annotation(0, &[Label::Efficiency]),
            annotation(1, &[Label::BugFix, Label::Efficiency]),
            annotation(2, &[Label::Pruning]),
        ];
        let all: BTreeSet<EdgeRef> = annotations.iter().map(|a| a.edge_ref.clone()).collect();
        let e = enrichment(&annotations, &all);
        for (_, value) in e {
            assert_eq!(value, 1.0);
        }
    }

    #[test]
    fn enrichment_absent_label_is_zero() {
        let annotations = vec![
            annotation(0, &[Label::Efficiency]),
            annotation(1, &[Label::BugFix]),
        ];
        let events: BTreeSet<EdgeRef> = [edge_ref(0)].into_iter().collect();
        let e = enrichment(&annotations, &events);
        assert_eq!(e[&Label::BugFix], 0.0);
        assert_eq!(e[&Label::Efficiency], 2.0);
        assert!(!e.contains_key(&Label::Refactor));
    }

    #[test]
    fn histogram_shares_sum_to_one() {
        let annotations = vec![
            annotation(0, &[Label::Efficiency]),
            annotation(1, &[Label::Efficiency, Label::BugFix, Label::Pruning]),
        ];
        let h = label_count_histogram(&annotations).unwrap();
        assert_eq!(h[&1], 0.5);
        assert_eq!(h[&3], 0.5);
        assert!((h.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signs_agree_between_raw_and_normalized_deltas() {
        use crate::trace::{generate_synthetic_run, LineageShape, ScoreProfile, SynthConfig};
        for seed in [5u64, 6, 7] {
            let run = generate_synthetic_run(&SynthConfig {
                iterations: 30,
                planted_literal_recycle_rate: 0.1,
                planted_tuning_recycle_rate: 0.1,
                lineage_shape: LineageShape::Tree,
                score_profile: ScoreProfile::Noisy,
                rng_seed: seed,
            })
            .unwrap()
            .run;
            let (signs, _) = score_change_signs(&run);
            assert!(!signs.is_empty());
            for s in signs {
                assert_eq!(
                    s.raw_delta > 0.0,
                    s.normalized_delta > 0.0,
                    "normalization must preserve the sign: {s:?}"
                );
                assert_eq!(s.sign == ScoreSign::Positive, s.raw_delta > 0.0);
            }
        }
    }
}
