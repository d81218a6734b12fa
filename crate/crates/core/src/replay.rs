//! Replay-stability testing: resend a breakthrough's saved generating
//! prompt n times under the original or a substituted model and summarize
//! parse / eval / exact / score-ratio outcomes per sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    AdapterError, ChatRequest, EvalRequest, ModelClient, ProgramEvaluator, ResponseFormat,
};
use crate::diff::syntactically_plausible;
use crate::trace::{EvalStatus, Run, TraceError};

/// Sampling temperature for replays. Replay needs response diversity, so
/// unlike judge calls it does not pin temperature to zero.
pub const REPLAY_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTarget {
    pub run_id: String,
    pub candidate_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub parse_ok: bool,
    pub eval_ok: bool,
    pub exact: bool,
    pub score: Option<f64>,
}

/// Outcome distribution over n replays of one breakthrough. Rates obey
/// `exact_rate <= eval_rate <= parse_rate`: a sample only counts as exact
/// when it also evaluated successfully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub target: ReplayTarget,
    pub model_id: String,
    pub n: usize,
    pub parse_rate: f64,
    pub eval_rate: f64,
    pub exact_rate: f64,
    /// Median of replayed score / original score, over samples that
    /// evaluated successfully. Absent when none did.
    pub score_ratio_median: Option<f64>,
    pub per_sample: Vec<SampleOutcome>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("candidate {0} has no saved generating context")]
    MissingContext(String),
    #[error("candidate {0} has no original score")]
    MissingScore(String),
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Extracts a program from a model response: the first fenced code block if
/// one exists, otherwise the whole content.
pub fn extract_program(content: &str) -> String {
    let mut lines = content.lines();
    let mut body: Vec<&str> = Vec::new();
    let mut in_fence = false;
    for line in lines.by_ref() {
        if line.trim_start().starts_with("```") {
            if in_fence {
                return body.join("\n") + "\n";
            }
            in_fence = true;
            continue;
        }
        if in_fence {
            body.push(line);
        }
    }
    if in_fence {
        // Unclosed fence: take everything after it.
        return body.join("\n") + "\n";
    }
    content.to_string()
}

/// Replays the saved prompt of `candidate_id` n times through `client`,
/// evaluating each extracted program in the run's replay environment.
pub fn replay_breakthrough(
    run: &Run,
    candidate_id: &str,
    n: usize,
    model_id: &str,
    client: &dyn ModelClient,
    evaluator: &dyn ProgramEvaluator,
) -> Result<ReplaySummary, ReplayError> {
    if n == 0 {
        return Err(ReplayError::InvalidSampleCount);
    }
    let candidate = run
        .candidate(candidate_id)
        .ok_or_else(|| TraceError::UnknownCandidate(candidate_id.to_string()))?;
    let context_id = candidate
        .context_id
        .as_ref()
        .ok_or_else(|| ReplayError::MissingContext(candidate_id.to_string()))?;
    let context = run
        .context(context_id)
        .ok_or_else(|| ReplayError::MissingContext(candidate_id.to_string()))?;
    let original_score = candidate
        .score
        .ok_or_else(|| ReplayError::MissingScore(candidate_id.to_string()))?;

    let environment = run.environment();
    let dialect = environment.dialect;

    let mut per_sample = Vec::with_capacity(n);
    for _ in 0..n {
        let response = client.complete(&ChatRequest {
            model_id: model_id.to_string(),
            system_text: String::new(),
            user_text: context.prompt.clone(),
            response_format_hint: ResponseFormat::Text,
            temperature: REPLAY_TEMPERATURE,
        })?;
        let program = extract_program(&response.content);
        let parse_ok = syntactically_plausible(&program, dialect);

        let (eval_ok, score) = if parse_ok {
            let evaluation = evaluator.evaluate(&EvalRequest {
                program_source: program.clone(),
                environment: environment.clone(),
            });
            (evaluation.status == EvalStatus::Ok, evaluation.score)
        } else {
            (false, None)
        };
        let exact = eval_ok && program == candidate.source;

        per_sample.push(SampleOutcome {
            parse_ok,
            eval_ok,
            exact,
            score,
        });
    }

    let rate = |f: fn(&SampleOutcome) -> bool| {
        per_sample.iter().filter(|s| f(s)).count() as f64 / n as f64
    };
    let mut ratios: Vec<f64> = per_sample
        .iter()
        .filter(|s| s.eval_ok)
        .filter_map(|s| s.score.map(|score| score / original_score))
        .collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let score_ratio_median = if ratios.is_empty() {
        None
    } else {
        let mid = ratios.len() / 2;
        Some(if ratios.len() % 2 == 1 {
            ratios[mid]
        } else {
            (ratios[mid - 1] + ratios[mid]) / 2.0
        })
    };

    Ok(ReplaySummary {
        target: ReplayTarget {
            run_id: run.run_id().to_string(),
            candidate_id: candidate_id.to_string(),
        },
        model_id: model_id.to_string(),
        n,
        parse_rate: rate(|s| s.parse_ok),
        eval_rate: rate(|s| s.eval_ok),
        exact_rate: rate(|s| s.exact),
        score_ratio_median,
        per_sample,
    })
}

/// One summary per model, all replaying the identical saved prompt bytes.
pub fn model_substitution_sweep(
    run: &Run,
    candidate_id: &str,
    n: usize,
    model_ids: &[String],
    client: &dyn ModelClient,
    evaluator: &dyn ProgramEvaluator,
) -> Result<Vec<ReplaySummary>, ReplayError> {
    model_ids
        .iter()
        .map(|model_id| replay_breakthrough(run, candidate_id, n, model_id, client, evaluator))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::stub::{FnEvaluator, ScriptedModel};
    use crate::trace::{generate_synthetic_run, LineageShape, ScoreProfile, SynthConfig};

    fn sample_run() -> Run {
        generate_synthetic_run(&SynthConfig {
            iterations: 6,
            planted_literal_recycle_rate: 0.0,
            planted_tuning_recycle_rate: 0.0,
            lineage_shape: LineageShape::Chain,
            score_profile: ScoreProfile::Improving,
            rng_seed: 13,
        })
        .unwrap()
        .run
    }

    fn accepting_evaluator() -> FnEvaluator {
        FnEvaluator::scoring(|_| Some(2.0))
    }

    #[test]
    fn extract_prefers_fenced_block() {
        let content = "Here you go:\n```python\nx = 1\n```\ntrailing";
        assert_eq!(extract_program(content), "x = 1\n");
    }

    #[test]
    fn extract_falls_back_to_whole_content() {
        assert_eq!(extract_program("x = 1\n"), "x = 1\n");
    }

    #[test]
    fn child_echo_reproduces_everything() {
        let run = sample_run();
        let target = "c0003";
        let child = run.candidate(target).unwrap();
        let original_score = child.score.unwrap();
        let client = ScriptedModel::fixed(child.source.clone());
        let evaluator = FnEvaluator::scoring(move |_| Some(original_score));
        let summary =
            replay_breakthrough(&run, target, 10, "echo", &client, &evaluator).unwrap();
        assert_eq!(summary.parse_rate, 1.0);
        assert_eq!(summary.eval_rate, 1.0);
        assert_eq!(summary.exact_rate, 1.0);
        assert_eq!(summary.score_ratio_median, Some(1.0));
        // A deterministic stub makes all samples identical.
        for sample in &summary.per_sample {
            assert_eq!(sample, &summary.per_sample[0]);
        }
    }

    #[test]
    fn garbage_fails_parse() {
        let run = sample_run();
        let client = ScriptedModel::fixed("not a program ((( ".to_string());
        let summary = replay_breakthrough(
            &run,
            "c0003",
            4,
            "garbage",
            &client,
            &accepting_evaluator(),
        )
        .unwrap();
        assert_eq!(summary.parse_rate, 0.0);
        assert_eq!(summary.eval_rate, 0.0);
        assert_eq!(summary.exact_rate, 0.0);
        assert!(summary.score_ratio_median.is_none());
    }

    #[test]
    fn rate_ordering_holds() {
        let run = sample_run();
        let child = run.candidate("c0004").unwrap();
        let client = ScriptedModel::sequence(vec![
            child.source.clone(),
            "alpha = 1\n".to_string(),
            "broken ((( ".to_string(),
        ]);
        let summary = replay_breakthrough(
            &run,
            "c0004",
            3,
            "mixed",
            &client,
            &accepting_evaluator(),
        )
        .unwrap();
        assert!(summary.exact_rate <= summary.eval_rate);
        assert!(summary.eval_rate <= summary.parse_rate);
    }

    #[test]
    fn missing_context_is_an_error() {
        let run = sample_run();
        let seed_id = run.seed_candidate_id().to_string();
        let client = ScriptedModel::fixed("x = 1".to_string());
        let result = replay_breakthrough(
            &run,
            &seed_id,
            2,
            "echo",
            &client,
            &accepting_evaluator(),
        );
        assert!(matches!(result, Err(ReplayError::MissingContext(_))));
    }

    #[test]
    fn sweep_returns_one_summary_per_model() {
        let run = sample_run();
        let client = ScriptedModel::fixed("x = 1\n".to_string());
        let models = vec!["m1".to_string(), "m2".to_string()];
        let summaries = model_substitution_sweep(
            &run,
            "c0003",
            2,
            &models,
            &client,
            &accepting_evaluator(),
        )
        .unwrap();
        assert_eq!(summaries.len(), 2);
        assert!(model_substitution_sweep(
            &run,
            "c0003",
            2,
            &[],
            &client,
            &accepting_evaluator()
        )
        .unwrap()
        .is_empty());
    }
}
