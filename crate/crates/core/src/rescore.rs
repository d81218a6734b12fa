//! Public/private rescoring: re-evaluate a run's public best-so-far chain
//! on a held-out evaluator and classify how the public gain generalizes.

use serde::{Deserialize, Serialize};

use crate::adapters::{EvalRequest, ProgramEvaluator};
use crate::trace::{EvalStatus, ReplayEnvironment, Run, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Aligned,
    MildOverfit,
    SevereOverfit,
    NoMovement,
    Unscorable,
}

/// Seed-to-final movement on both evaluators plus the resulting verdict.
/// When a delta cannot be computed the verdict is unscorable and the reason
/// says which of the possible causes applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationVerdict {
    pub run_ref: String,
    pub public_delta: Option<f64>,
    pub private_delta: Option<f64>,
    pub verdict: Verdict,
    pub unscorable_reason: Option<String>,
}

/// One best-so-far chain entry rescored on the private evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRescore {
    pub iteration: u32,
    pub candidate_id: String,
    pub public_score: f64,
    pub private_score: Option<f64>,
    pub error: Option<String>,
}

/// Default severity threshold, in the private evaluator's units.
pub const DEFAULT_OVERFIT_THRESHOLD: f64 = 200.0;

/// Evaluates every chain candidate once on the private environment.
/// Failures are recorded per entry, not raised. When the private evaluator
/// emits a `rating_delta` metric that value is used as the candidate's
/// private measure; otherwise the score is.
pub fn rescore_chain(
    run: &Run,
    private_env: &ReplayEnvironment,
    evaluator: &dyn ProgramEvaluator,
) -> Result<Vec<ChainRescore>, TraceError> {
    let chain = run.best_so_far_chain()?;
    let mut out = Vec::with_capacity(chain.len());
    for entry in chain {
        let candidate = run
            .candidate(&entry.candidate_id)
            .expect("chain entries reference existing candidates");
        let evaluation = evaluator.evaluate(&EvalRequest {
            program_source: candidate.source.clone(),
            environment: private_env.clone(),
        });
        let (private_score, error) = if evaluation.status == EvalStatus::Ok {
            let measure = evaluation
                .metrics
                .get("rating_delta")
                .and_then(|v| v.as_f64())
                .or(evaluation.score);
            (measure, None)
        } else {
            let detail = if evaluation.stderr.is_empty() {
                format!("{:?}", evaluation.status)
            } else {
                evaluation.stderr.clone()
            };
            (None, Some(detail))
        };
        out.push(ChainRescore {
            iteration: entry.iteration,
            candidate_id: entry.candidate_id,
            public_score: entry.score,
            private_score,
            error,
        });
    }
    Ok(out)
}

/// Classifies one (public delta, private delta) pair. Every pair maps to
/// exactly one verdict; a private worsening of exactly the threshold is
/// mild.
pub fn classify_generalization(public_delta: f64, private_delta: f64, threshold: f64) -> Verdict {
    if private_delta == 0.0 {
        Verdict::NoMovement
    } else if public_delta > 0.0 {
        if private_delta > 0.0 {
            Verdict::Aligned
        } else if private_delta >= -threshold {
            Verdict::MildOverfit
        } else {
            Verdict::SevereOverfit
        }
    } else {
        Verdict::Unscorable
    }
}

/// Rescoring plus classification for one run. Single-event chains, an
/// unscorable seed, and missing private metrics each produce an unscorable
/// verdict with the specific cause.
pub fn generalization_verdict(
    run: &Run,
    private_env: &ReplayEnvironment,
    evaluator: &dyn ProgramEvaluator,
    threshold: f64,
) -> GeneralizationVerdict {
    let unscorable = |reason: String, public: Option<f64>, private: Option<f64>| {
        GeneralizationVerdict {
            run_ref: run.run_id().to_string(),
            public_delta: public,
            private_delta: private,
            verdict: Verdict::Unscorable,
            unscorable_reason: Some(reason),
        }
    };

    let rescored = match rescore_chain(run, private_env, evaluator) {
        Ok(rescored) => rescored,
        Err(_) => return unscorable("unscorable seed: no scored public chain".to_string(), None, None),
    };
    if rescored.len() < 2 {
        return unscorable("single-event lineage".to_string(), Some(0.0), None);
    }

    let first = &rescored[0];
    let last = &rescored[rescored.len() - 1];
    let public_delta = last.public_score - first.public_score;

    let (Some(private_first), Some(private_last)) = (first.private_score, last.private_score)
    else {
        let which = if first.private_score.is_none() {
            &first.candidate_id
        } else {
            &last.candidate_id
        };
        return unscorable(
            format!("missing private metric for {which}"),
            Some(public_delta),
            None,
        );
    };
    let private_delta = private_last - private_first;

    GeneralizationVerdict {
        run_ref: run.run_id().to_string(),
        public_delta: Some(public_delta),
        private_delta: Some(private_delta),
        verdict: classify_generalization(public_delta, private_delta, threshold),
        unscorable_reason: None,
    }
}
