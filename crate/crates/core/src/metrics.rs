//! Static trajectory and lineage statistics: best-so-far size and
//! numeric-literal trajectories, lineage depth, budget utilization, and
//! corpus scale tables.

use serde::{Deserialize, Serialize};

use crate::diff::{count_loc, count_numeric_literals};
use crate::trace::{Run, TraceError};

/// One trajectory sample. LOC is the count of non-blank lines; both ratios
/// are relative to the run's seed program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub normalized_iteration: f64,
    pub loc_ratio: f64,
    pub hparam_ratio: f64,
}

/// Best-so-far program size and numeric-literal count per iteration,
/// normalized by the seed's values. The ratios change only at iterations
/// where the best-so-far chain gains an entry.
pub fn size_and_hparam_trajectory(run: &Run) -> Result<Vec<TrajectoryPoint>, TraceError> {
    let seed = run.seed();
    let dialect = run.environment().dialect;
    let seed_loc = count_loc(&seed.source);
    if seed_loc == 0 {
        return Err(TraceError::EmptySeed);
    }
    // A literal-free seed would make the ratio undefined; fall back to a
    // denominator of one so the series stays finite.
    let seed_hparams = count_numeric_literals(&seed.source, dialect).max(1) as f64;
    let seed_loc = seed_loc as f64;

    let chain = run.best_so_far_chain().unwrap_or_default();
    let budget = run.budget();

    let mut points = Vec::with_capacity(budget as usize + 1);
    let mut chain_pos = 0;
    let mut current = (1.0, 1.0);
    for t in 0..=budget {
        while chain_pos < chain.len() && chain[chain_pos].iteration <= t {
            let candidate = run
                .candidate(&chain[chain_pos].candidate_id)
                .expect("chain entries reference existing candidates");
            current = (
                count_loc(&candidate.source) as f64 / seed_loc,
                count_numeric_literals(&candidate.source, dialect) as f64 / seed_hparams,
            );
            chain_pos += 1;
        }
        points.push(TrajectoryPoint {
            normalized_iteration: t as f64 / budget as f64,
            loc_ratio: current.0,
            hparam_ratio: current.1,
        });
    }
    Ok(points)
}

/// Edge count along the lineage of the run's final best candidate.
pub fn final_best_lineage_depth(run: &Run) -> Result<usize, TraceError> {
    let best = run.final_best()?;
    Ok(run.lineage_of(&best.candidate_id)?.len() - 1)
}

/// Iteration at which the final best-so-far score is first reached, divided
/// by the run budget.
pub fn budget_utilization(run: &Run) -> Result<f64, TraceError> {
    let chain = run.best_so_far_chain()?;
    let last = chain.last().expect("chain is non-empty");
    Ok(last.iteration as f64 / run.budget() as f64)
}

/// Corpus-level counts plus per-run medians.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusScaleSummary {
    pub runs: usize,
    pub programs: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Programs with at least one parent.
    pub edits: usize,
    pub median_programs_per_run: f64,
    pub median_edits_per_run: f64,
}

pub fn corpus_scale_summary(corpus: &[Run]) -> CorpusScaleSummary {
    let mut summary = CorpusScaleSummary {
        runs: corpus.len(),
        ..CorpusScaleSummary::default()
    };
    let mut per_run_programs = Vec::with_capacity(corpus.len());
    let mut per_run_edits = Vec::with_capacity(corpus.len());
    for run in corpus {
        let programs = run.candidates().len();
        let edits = run
            .candidates()
            .iter()
            .filter(|c| !c.parent_ids.is_empty())
            .count();
        summary.programs += programs;
        summary.edits += edits;
        summary.accepted += run
            .candidates()
            .iter()
            .filter(|c| c.validity == crate::trace::Validity::Accepted)
            .count();
        summary.rejected += run
            .candidates()
            .iter()
            .filter(|c| c.validity == crate::trace::Validity::Rejected)
            .count();
        per_run_programs.push(programs as f64);
        per_run_edits.push(edits as f64);
    }
    summary.median_programs_per_run = median(&mut per_run_programs);
    summary.median_edits_per_run = median(&mut per_run_edits);
    summary
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}
