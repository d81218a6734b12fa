//! Synthetic ground-truth traces. The generator plants literal and tuning
//! recycling events at configurable rates and records every planted line in
//! a sidecar, so the cycling classifier can be scored against known truth.
//!
//! Planting is quota-driven rather than Bernoulli: after `n` added code
//! lines the planted literal count is within one line of `n * rate`, so a
//! 100-iteration run measures its configured rate to well under a percent.
//! Generation is a pure function of the config (including `rng_seed`):
//! identical configs produce byte-identical JSONL output.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{
    Candidate, Context, DomainTag, Edge, EdgeOperator, EvalStatus, Evaluation, JsonMap,
    ReplayEnvironment, RunRecord, Validity,
};
use super::store::{emit_run, Run, RunParts, TraceError};
use crate::cycling::Category;
use crate::diff::{skeletonize, Dialect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineageShape {
    Chain,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreProfile {
    Improving,
    JackpotThenFlat,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub iterations: u32,
    pub planted_literal_recycle_rate: f64,
    pub planted_tuning_recycle_rate: f64,
    pub lineage_shape: LineageShape,
    pub score_profile: ScoreProfile,
    pub rng_seed: u64,
}

impl SynthConfig {
    fn check(&self) -> Result<(), TraceError> {
        if self.iterations < 1 {
            return Err(TraceError::InvalidConfig("iterations must be >= 1".into()));
        }
        for (name, rate) in [
            ("planted_literal_recycle_rate", self.planted_literal_recycle_rate),
            ("planted_tuning_recycle_rate", self.planted_tuning_recycle_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(TraceError::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {rate}"
                )));
            }
        }
        if self.planted_literal_recycle_rate + self.planted_tuning_recycle_rate > 1.0 + 1e-12 {
            return Err(TraceError::InvalidConfig(
                "planted rates must sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

/// One added line as the generator intended it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLine {
    pub bytes: String,
    pub category: Category,
    pub matched_deletion_iteration: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGroundTruth {
    pub child_id: String,
    pub iteration: u32,
    pub lines: Vec<PlantedLine>,
}

/// Sidecar recording every planted recycling event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub edges: Vec<EdgeGroundTruth>,
}

impl GroundTruth {
    fn counts(&self) -> (usize, usize, usize) {
        let mut literal = 0;
        let mut tuning = 0;
        let mut code = 0;
        for edge in &self.edges {
            for line in &edge.lines {
                match line.category {
                    Category::Trivial => {}
                    Category::Literal => {
                        literal += 1;
                        code += 1;
                    }
                    Category::Tuning => {
                        tuning += 1;
                        code += 1;
                    }
                    Category::Novel => code += 1,
                }
            }
        }
        (literal, tuning, code)
    }

    /// Planted literal share of added code lines; 0 when nothing was added.
    pub fn literal_rate(&self) -> f64 {
        let (literal, _, code) = self.counts();
        if code == 0 {
            0.0
        } else {
            literal as f64 / code as f64
        }
    }

    /// Planted tuning share of added code lines.
    pub fn tuning_rate(&self) -> f64 {
        let (_, tuning, code) = self.counts();
        if code == 0 {
            0.0
        } else {
            tuning as f64 / code as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub run: Run,
    pub ground_truth: GroundTruth,
}

/// Deletion bookkeeping mirroring the classifier's pool, with deterministic
/// (sorted) key order for planting decisions.
#[derive(Debug, Clone, Default)]
struct Pool {
    by_bytes: BTreeMap<String, u32>,
    by_skeleton: BTreeMap<String, u32>,
}

impl Pool {
    fn record_removal(&mut self, line: &str, iteration: u32) {
        let update = |map: &mut BTreeMap<String, u32>, key: String| {
            let entry = map.entry(key).or_insert(iteration);
            *entry = (*entry).max(iteration);
        };
        update(&mut self.by_bytes, line.to_string());
        update(&mut self.by_skeleton, skeletonize(line, Dialect::PyLike));
    }

    fn merge(&mut self, other: &Pool) {
        for (k, &v) in &other.by_bytes {
            let entry = self.by_bytes.entry(k.clone()).or_insert(v);
            *entry = (*entry).max(v);
        }
        for (k, &v) in &other.by_skeleton {
            let entry = self.by_skeleton.entry(k.clone()).or_insert(v);
            *entry = (*entry).max(v);
        }
    }
}

fn seed_lines() -> Vec<String> {
    [
        "import math",
        "",
        "# search configuration",
        "alpha_rate = 0.5",
        "beta_weight = 1.25",
        "gamma_decay = 0.99",
        "delta_steps = 200",
        "epsilon_tol = 0.001",
        "zeta_seed = 42",
        "",
        "def step(state):",
        "    return state * gamma_decay + alpha_rate",
        "",
        "print(step(zeta_seed))",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn is_assignment(line: &str) -> bool {
    line.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && line.contains(" = ")
}

fn join_lines(lines: &[String]) -> String {
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn run_identifier(config: &SynthConfig) -> String {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    config.iterations.hash(&mut hasher);
    config.planted_literal_recycle_rate.to_bits().hash(&mut hasher);
    config.planted_tuning_recycle_rate.to_bits().hash(&mut hasher);
    (config.lineage_shape == LineageShape::Tree).hash(&mut hasher);
    (config.score_profile as u8).hash(&mut hasher);
    config.rng_seed.hash(&mut hasher);
    format!("synth-{:016x}", hasher.finish())
}

fn score_for(profile: ScoreProfile, t: u32, iterations: u32, rng: &mut ChaCha8Rng) -> f64 {
    match profile {
        ScoreProfile::Improving => 1.0 + t as f64,
        ScoreProfile::JackpotThenFlat => {
            let jackpot_at = iterations.min(10);
            if t == jackpot_at {
                10.0
            } else if t < jackpot_at {
                1.0 + 0.1 * t as f64
            } else {
                8.0 - 0.01 * (t - jackpot_at) as f64
            }
        }
        ScoreProfile::Noisy => {
            // The walk is advanced exactly once per iteration by the caller's
            // rng discipline, so just draw here.
            rng.gen_range(-1.0..1.0)
        }
    }
}

/// Generates a run that passes validation, with planted recycling recorded
/// in the returned ground-truth sidecar.
pub fn generate_synthetic_run(config: &SynthConfig) -> Result<SyntheticRun, TraceError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let run_id = run_identifier(config);

    let backends = ["loop-search", "archive-search", "bandit-search"];
    let models = ["alpha-reasoner", "beta-chat", "gamma-flash"];
    let backend = backends[rng.gen_range(0..backends.len())].to_string();
    let mut model_config = JsonMap::new();
    model_config.insert(
        "model".to_string(),
        serde_json::Value::String(models[rng.gen_range(0..models.len())].to_string()),
    );
    model_config.insert(
        "diff_mode".to_string(),
        serde_json::Value::String(
            if rng.gen_bool(0.5) { "diff" } else { "no_diff" }.to_string(),
        ),
    );

    let mut candidates = Vec::new();
    let mut evaluations = Vec::new();
    let mut edges = Vec::new();
    let mut contexts = Vec::new();
    let mut ground_truth = GroundTruth::default();

    let mut sources: Vec<Vec<String>> = Vec::new();
    let mut pools: Vec<Pool> = Vec::new();
    let mut noisy_score = 1.0f64;
    let mut uid: u64 = 1000;

    let push_candidate = |candidates: &mut Vec<Candidate>,
                              evaluations: &mut Vec<Evaluation>,
                              id: String,
                              t: u32,
                              lines: &[String],
                              parents: Vec<String>,
                              context_id: Option<String>,
                              score: Option<f64>| {
        let accepted = score.is_some();
        candidates.push(Candidate {
            candidate_id: id.clone(),
            iteration: t,
            source: join_lines(lines),
            parent_ids: parents,
            context_id,
            validity: if accepted {
                Validity::Accepted
            } else {
                Validity::Rejected
            },
            score,
            extra: JsonMap::new(),
        });
        evaluations.push(Evaluation {
            candidate_id: id,
            status: if accepted {
                EvalStatus::Ok
            } else {
                EvalStatus::Error
            },
            score,
            stdout: if accepted { "ok".to_string() } else { String::new() },
            stderr: if accepted {
                String::new()
            } else {
                "candidate rejected by the search loop".to_string()
            },
            wall_time: 0.01 + 0.001 * t as f64,
            metrics: JsonMap::new(),
            extra: JsonMap::new(),
        });
    };

    // Seed candidate.
    let seed_id = "c0000".to_string();
    let seed = seed_lines();
    let seed_score = match config.score_profile {
        ScoreProfile::Noisy => noisy_score,
        other => score_for(other, 0, config.iterations, &mut rng),
    };
    push_candidate(
        &mut candidates,
        &mut evaluations,
        seed_id.clone(),
        0,
        &seed,
        Vec::new(),
        None,
        Some(seed_score),
    );
    sources.push(seed);
    pools.push(Pool::default());

    // Quota counters over added code lines.
    let mut total_code_added: usize = 0;
    let mut literal_planted: usize = 0;
    let mut tuning_planted: usize = 0;

    for t in 1..=config.iterations {
        // The seed is never sampled as a parent after the first edit, so
        // every lineage passes through the pool-seeding deletion at t=1.
        let parent_idx = match config.lineage_shape {
            LineageShape::Chain => sources.len() - 1,
            LineageShape::Tree => {
                if sources.len() == 1 {
                    0
                } else if rng.gen_bool(0.7) {
                    sources.len() - 1
                } else {
                    rng.gen_range(1..sources.len())
                }
            }
        };
        let second_parent_idx = if config.lineage_shape == LineageShape::Tree
            && t % 7 == 0
            && sources.len() > 2
        {
            let mut idx = rng.gen_range(1..sources.len());
            if idx == parent_idx {
                idx = if idx == 1 { sources.len() - 1 } else { idx - 1 };
            }
            Some(idx)
        } else {
            None
        };

        let mut pool = pools[parent_idx].clone();
        if let Some(idx) = second_parent_idx {
            pool.merge(&pools[idx]);
        }

        let mut lines = sources[parent_idx].clone();
        let mut planted_lines = Vec::new();

        // Removals first, so literal plants can avoid same-edit deletions.
        let mut removed_bytes: Vec<String> = Vec::new();
        let n_remove = if t == 1 { 2 } else { rng.gen_range(1..=2) };
        for _ in 0..n_remove {
            let assignment_positions: Vec<usize> = lines
                .iter()
                .enumerate()
                .filter(|(_, l)| is_assignment(l))
                .map(|(i, _)| i)
                .collect();
            if assignment_positions.is_empty() {
                break;
            }
            let pos = assignment_positions[rng.gen_range(0..assignment_positions.len())];
            removed_bytes.push(lines.remove(pos));
        }

        // Additions. The first edit only deletes, seeding the pool so that
        // plants are possible from t=2 on even at rate 1.0.
        let n_add = if t == 1 { 0 } else { rng.gen_range(2..=4) };
        for _ in 0..n_add {
            let want_literal = ((total_code_added + 1) as f64
                * config.planted_literal_recycle_rate)
                .floor() as usize
                > literal_planted;
            let literal_pick = if want_literal {
                let options: Vec<&String> = pool
                    .by_bytes
                    .keys()
                    .filter(|k| !removed_bytes.contains(k))
                    .collect();
                if options.is_empty() {
                    None
                } else {
                    Some(options[rng.gen_range(0..options.len())].clone())
                }
            } else {
                None
            };

            let (line, planted) = if let Some(bytes) = literal_pick {
                let matched = pool.by_bytes[&bytes];
                literal_planted += 1;
                (
                    bytes.clone(),
                    PlantedLine {
                        bytes,
                        category: Category::Literal,
                        matched_deletion_iteration: Some(matched),
                    },
                )
            } else {
                let want_tuning = ((total_code_added + 1) as f64
                    * config.planted_tuning_recycle_rate)
                    .floor() as usize
                    > tuning_planted;
                let tuning_pick = if want_tuning {
                    let options: Vec<&String> = pool.by_bytes.keys().collect();
                    if options.is_empty() {
                        None
                    } else {
                        Some(options[rng.gen_range(0..options.len())].clone())
                    }
                } else {
                    None
                };
                if let Some(base) = tuning_pick {
                    uid += 1;
                    let fresh = format!("{uid}.75");
                    let mutated = mutate_first_number(&base, &fresh);
                    let skeleton = skeletonize(&mutated, Dialect::PyLike);
                    let matched = pool.by_skeleton[&skeleton];
                    tuning_planted += 1;
                    (
                        mutated.clone(),
                        PlantedLine {
                            bytes: mutated,
                            category: Category::Tuning,
                            matched_deletion_iteration: Some(matched),
                        },
                    )
                } else {
                    uid += 1;
                    let line = if uid.is_multiple_of(2) {
                        format!("metric_{uid} = {uid}.25")
                    } else {
                        format!("scale_{uid} = {uid}")
                    };
                    (
                        line.clone(),
                        PlantedLine {
                            bytes: line,
                            category: Category::Novel,
                            matched_deletion_iteration: None,
                        },
                    )
                }
            };
            total_code_added += 1;
            let pos = rng.gen_range(0..=lines.len());
            lines.insert(pos, line);
            planted_lines.push(planted);
        }

        // Occasional comment or blank churn (classified trivial downstream).
        if t > 1 && rng.gen_bool(0.15) {
            uid += 1;
            let line = if rng.gen_bool(0.5) {
                format!("# note {uid}")
            } else {
                String::new()
            };
            let pos = rng.gen_range(0..=lines.len());
            lines.insert(pos, line.clone());
            planted_lines.push(PlantedLine {
                bytes: line,
                category: Category::Trivial,
                matched_deletion_iteration: None,
            });
        }

        // Update the pool with this edit's removals for descendants.
        for removed in &removed_bytes {
            pool.record_removal(removed, t);
        }

        let candidate_id = format!("c{t:04}");
        let context_id = format!("ctx{t:04}");
        let parent_source = join_lines(&sources[parent_idx]);
        contexts.push(Context {
            context_id: context_id.clone(),
            prompt: format!(
                "Improve the following program so its score increases \u{2265} target:\n\n{parent_source}\nReturn the full program."
            ),
            auxiliary: JsonMap::new(),
            extra: JsonMap::new(),
        });

        let rejected = t > 1 && rng.gen_bool(0.05);
        let score = if rejected {
            None
        } else {
            Some(match config.score_profile {
                ScoreProfile::Noisy => {
                    noisy_score += score_for(ScoreProfile::Noisy, t, config.iterations, &mut rng);
                    noisy_score
                }
                other => score_for(other, t, config.iterations, &mut rng),
            })
        };

        let mut parent_ids = vec![format!("c{:04}", parent_index_to_iteration(parent_idx))];
        edges.push(Edge {
            parent_id: parent_ids[0].clone(),
            child_id: candidate_id.clone(),
            operator: if second_parent_idx.is_some() {
                EdgeOperator::Recombination
            } else if rng.gen_bool(0.5) {
                EdgeOperator::Mutation
            } else {
                EdgeOperator::Refinement
            },
            extra: JsonMap::new(),
        });
        if let Some(idx) = second_parent_idx {
            let second_id = format!("c{:04}", parent_index_to_iteration(idx));
            edges.push(Edge {
                parent_id: second_id.clone(),
                child_id: candidate_id.clone(),
                operator: EdgeOperator::Recombination,
                extra: JsonMap::new(),
            });
            parent_ids.push(second_id);
        }

        push_candidate(
            &mut candidates,
            &mut evaluations,
            candidate_id.clone(),
            t,
            &lines,
            parent_ids,
            Some(context_id),
            score,
        );
        ground_truth.edges.push(EdgeGroundTruth {
            child_id: candidate_id,
            iteration: t,
            lines: planted_lines,
        });
        sources.push(lines);
        pools.push(pool);
    }

    let record = RunRecord {
        run_id,
        task: "synthetic-opt".to_string(),
        backend,
        model_config,
        domain_tag: DomainTag::Other,
        budget: config.iterations,
        seed_candidate_id: seed_id,
        extra: JsonMap::new(),
    };
    let environment = ReplayEnvironment {
        evaluator_command: "python3 {program}".to_string(),
        timeout: 60.0,
        dialect: Dialect::PyLike,
        artifacts: Vec::new(),
        notes: "synthetic ground-truth trace".to_string(),
        extra: JsonMap::new(),
    };

    let run = RunParts {
        record,
        environment,
        candidates,
        evaluations,
        edges,
        contexts,
    }
    .assemble()?;

    Ok(SyntheticRun { run, ground_truth })
}

/// Candidate index within the generator's vectors equals its iteration.
fn parent_index_to_iteration(idx: usize) -> usize {
    idx
}

/// Replaces the first numeric-literal token of `line` with `fresh`.
fn mutate_first_number(line: &str, fresh: &str) -> String {
    let skeleton_before = skeletonize(line, Dialect::PyLike);
    let bytes = line.as_bytes();
    let mut start = None;
    for (i, b) in bytes.iter().enumerate() {
        if b.is_ascii_digit() {
            let prev_ok = i == 0 || (!crate::diff::is_ident_byte(bytes[i - 1]) && bytes[i - 1] != b'.');
            if prev_ok {
                start = Some(i);
                break;
            }
        }
    }
    let Some(s) = start else {
        return line.to_string();
    };
    let mut e = s;
    while e < bytes.len() && (bytes[e].is_ascii_digit() || bytes[e] == b'.') {
        e += 1;
    }
    let mutated = format!("{}{}{}", &line[..s], fresh, &line[e..]);
    debug_assert_eq!(skeletonize(&mutated, Dialect::PyLike), skeleton_before);
    mutated
}

/// Writes the run's six JSONL tables plus the `ground_truth.jsonl` sidecar.
pub fn emit_synthetic_run(synthetic: &SyntheticRun, dir: &Path) -> Result<(), TraceError> {
    emit_run(&synthetic.run, dir)?;
    let path = dir.join("ground_truth.jsonl");
    let mut buf = String::new();
    for edge in &synthetic.ground_truth.edges {
        buf.push_str(&serde_json::to_string(edge).expect("ground truth serializes"));
        buf.push('\n');
    }
    std::fs::write(&path, buf).map_err(|e| TraceError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(())
}
