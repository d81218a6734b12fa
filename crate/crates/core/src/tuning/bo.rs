//! Gaussian-process Bayesian optimization over a knob space: a fixed count
//! of uniform random points followed by expected-improvement acquisitions
//! on a squared-exponential surrogate with per-dimension length scales fit
//! by marginal likelihood.
//!
//! Scores maximize; internally the surrogate models the negated score so
//! expected improvement minimizes. Failed evaluations are imputed with the
//! worst observed score minus one range-width so the surrogate stays
//! defined without discarding budget.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Kind, KnobSpace, Scale, TuningError};
use crate::trace::EvalStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoPhase {
    Random,
    Guided,
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrial {
    pub theta: BTreeMap<String, f64>,
    pub score: Option<f64>,
    pub status: EvalStatus,
    pub phase: BoPhase,
}

type Objective<'a> = dyn FnMut(&BTreeMap<String, f64>) -> (Option<f64>, EvalStatus) + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub best_theta: Option<BTreeMap<String, f64>>,
    pub best_score: Option<f64>,
    pub history: Vec<BoTrial>,
}

const NOISE_JITTER: f64 = 1e-6;
const EI_UNIFORM_CANDIDATES: usize = 256;
const EI_LOCAL_CANDIDATES: usize = 64;
const LENGTHSCALE_RESTARTS: usize = 5;

struct Dim {
    name: String,
    t_lo: f64,
    t_hi: f64,
    scale: Scale,
    kind: Kind,
    lo: f64,
    hi: f64,
}

impl Dim {
    /// Maps an internal coordinate in [0, 1] to the knob's value: linear or
    /// log10 interpolation, integer knobs rounded and clamped.
    fn value_at(&self, x: f64) -> f64 {
        let t = self.t_lo + x.clamp(0.0, 1.0) * (self.t_hi - self.t_lo);
        let raw = match self.scale {
            Scale::Linear => t,
            Scale::Log => 10f64.powf(t),
        };
        match self.kind {
            Kind::Float => raw.clamp(self.lo, self.hi),
            Kind::Int => raw.round().clamp(self.lo, self.hi),
        }
    }
}

/// Runs the optimization loop: `init` uniform points in the transformed
/// space, then `budget - init` expected-improvement acquisitions. The
/// returned best is the argmax over ok-status trials. Deterministic for a
/// fixed seed and deterministic objective.
pub fn bo_optimize(
    space: &KnobSpace,
    mut objective: impl FnMut(&BTreeMap<String, f64>) -> (Option<f64>, EvalStatus),
    budget: usize,
    init: usize,
    rng_seed: u64,
) -> Result<BoResult, TuningError> {
    if space.knobs.is_empty() {
        return Err(TuningError::EmptySpace);
    }
    if init < 1 || budget < init {
        return Err(TuningError::InvalidBudget { budget, init });
    }

    let dims: Vec<Dim> = space
        .knobs
        .iter()
        .map(|k| {
            let (t_lo, t_hi) = match k.scale {
                Scale::Linear => (k.low, k.high),
                Scale::Log => (k.low.log10(), k.high.log10()),
            };
            Dim {
                name: k.name.clone(),
                t_lo,
                t_hi,
                scale: k.scale,
                kind: k.kind,
                lo: k.low,
                hi: k.high,
            }
        })
        .collect();
    let d = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut history: Vec<BoTrial> = Vec::with_capacity(budget);

    let evaluate = |x: &[f64], phase: BoPhase, history: &mut Vec<BoTrial>, objective: &mut Objective| {
        let theta: BTreeMap<String, f64> = dims
            .iter()
            .zip(x)
            .map(|(dim, &xi)| (dim.name.clone(), dim.value_at(xi)))
            .collect();
        let (score, status) = objective(&theta);
        history.push(BoTrial {
            theta,
            score,
            status,
            phase,
        });
    };

    for _ in 0..init {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        evaluate(&x, BoPhase::Random, &mut history, &mut objective);
        xs.push(x);
    }

    for _ in init..budget {
        let y = imputed_negated_scores(&history);
        let x = match fit_gp(&xs, &y, &mut rng) {
            Some(model) => propose_by_ei(&model, &xs, d, &mut rng),
            None => (0..d).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        evaluate(&x, BoPhase::Guided, &mut history, &mut objective);
        xs.push(x);
    }

    let best = history
        .iter()
        .filter(|t| t.status == EvalStatus::Ok)
        .filter_map(|t| t.score.map(|s| (t, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1));

    Ok(BoResult {
        best_theta: best.map(|(t, _)| t.theta.clone()),
        best_score: best.map(|(_, s)| s),
        history,
    })
}

/// Negated scores for the minimizing surrogate, with failed evaluations
/// imputed at the worst observed score minus one range-width.
fn imputed_negated_scores(history: &[BoTrial]) -> Vec<f64> {
    let ok_scores: Vec<f64> = history
        .iter()
        .filter(|t| t.status == EvalStatus::Ok)
        .filter_map(|t| t.score)
        .collect();
    let penalty_score = if ok_scores.is_empty() {
        0.0
    } else {
        let worst = ok_scores.iter().copied().fold(f64::INFINITY, f64::min);
        let best = ok_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst - (best - worst)
    };
    history
        .iter()
        .map(|t| match (t.status, t.score) {
            (EvalStatus::Ok, Some(s)) => -s,
            _ => -penalty_score,
        })
        .collect()
}

struct GpModel {
    x_train: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    cholesky: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    lengthscales: Vec<f64>,
    f_best: f64,
}

fn sq_exp_kernel(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for i in 0..a.len() {
        let diff = (a[i] - b[i]) / lengthscales[i];
        r2 += diff * diff;
    }
    (-0.5 * r2).exp()
}

fn kernel_matrix(x: &[Vec<f64>], lengthscales: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = sq_exp_kernel(&x[i], &x[j], lengthscales);
        if i == j {
            k + NOISE_JITTER
        } else {
            k
        }
    })
}

/// Log marginal likelihood of standardized targets under the kernel.
fn log_marginal_likelihood(x: &[Vec<f64>], y: &DVector<f64>, lengthscales: &[f64]) -> f64 {
    let n = x.len();
    let k = kernel_matrix(x, lengthscales);
    let Some(chol) = nalgebra::linalg::Cholesky::new(k) else {
        return f64::NEG_INFINITY;
    };
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * y.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Standardizes targets and fits per-dimension length scales by restarted
/// random search over the marginal likelihood.
fn fit_gp(x: &[Vec<f64>], y_raw: &[f64], rng: &mut ChaCha8Rng) -> Option<GpModel> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let d = x[0].len();
    let mean = y_raw.iter().sum::<f64>() / n as f64;
    let var = y_raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-12);
    let y: DVector<f64> = DVector::from_iterator(n, y_raw.iter().map(|v| (v - mean) / std));

    let mut best_ls = vec![0.5; d];
    let mut best_lml = log_marginal_likelihood(x, &y, &best_ls);
    for _ in 0..LENGTHSCALE_RESTARTS {
        let mut ls: Vec<f64> = (0..d)
            .map(|_| 10f64.powf(rng.gen_range(-1.3..0.3)))
            .collect();
        let mut lml = log_marginal_likelihood(x, &y, &ls);
        // Greedy per-dimension refinement.
        for _ in 0..2 {
            for dim in 0..d {
                for factor in [0.5, 2.0] {
                    let mut trial = ls.clone();
                    trial[dim] = (trial[dim] * factor).clamp(0.01, 10.0);
                    let trial_lml = log_marginal_likelihood(x, &y, &trial);
                    if trial_lml > lml {
                        lml = trial_lml;
                        ls = trial;
                    }
                }
            }
        }
        if lml > best_lml {
            best_lml = lml;
            best_ls = ls;
        }
    }

    let k = kernel_matrix(x, &best_ls);
    let chol = nalgebra::linalg::Cholesky::new(k)?;
    let alpha = chol.solve(&y);
    let f_best = y.iter().copied().fold(f64::INFINITY, f64::min);

    Some(GpModel {
        x_train: x.to_vec(),
        alpha,
        cholesky: chol,
        lengthscales: best_ls,
        f_best,
    })
}

fn predict(model: &GpModel, x: &[f64]) -> (f64, f64) {
    let k_star = DVector::from_iterator(
        model.x_train.len(),
        model
            .x_train
            .iter()
            .map(|xi| sq_exp_kernel(x, xi, &model.lengthscales)),
    );
    let mean = k_star.dot(&model.alpha);
    let v = model.cholesky.solve(&k_star);
    let var = (1.0 + NOISE_JITTER - k_star.dot(&v)).max(0.0);
    (mean, var.sqrt())
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Abramowitz-Stegun rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Expected improvement for minimization.
fn expected_improvement(mean: f64, std: f64, f_best: f64) -> f64 {
    if std < 1e-12 {
        return (f_best - mean).max(0.0);
    }
    let z = (f_best - mean) / std;
    ((f_best - mean) * norm_cdf(z) + std * norm_pdf(z)).max(0.0)
}

/// Maximizes EI over uniform candidates plus local perturbations around the
/// incumbent minimum.
fn propose_by_ei(model: &GpModel, xs: &[Vec<f64>], d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Local perturbations are seeded from the training point with the lowest
    // predicted mean.
    let mut best_train = xs[0].clone();
    let mut best_mean = f64::INFINITY;
    for x in xs {
        let (mean, _) = predict(model, x);
        if mean < best_mean {
            best_mean = mean;
            best_train = x.clone();
        }
    }

    let mut best_x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut best_ei = f64::NEG_INFINITY;
    for i in 0..(EI_UNIFORM_CANDIDATES + EI_LOCAL_CANDIDATES) {
        let candidate: Vec<f64> = if i < EI_UNIFORM_CANDIDATES {
            (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()
        } else {
            best_train
                .iter()
                .map(|&v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                .collect()
        };
        let (mean, std) = predict(model, &candidate);
        let ei = expected_improvement(mean, std, model.f_best);
        if ei > best_ei {
            best_ei = ei;
            best_x = candidate;
        }
    }
    best_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::KnobSpec;

    fn space_1d(low: f64, high: f64, scale: Scale, kind: Kind) -> KnobSpace {
        KnobSpace {
            knobs: vec![KnobSpec {
                name: "x".to_string(),
                source_literal: "0.5".to_string(),
                context_line: "x = 0.5".to_string(),
                default: 0.5,
                low,
                high,
                scale,
                kind,
                rationale: String::new(),
            }],
            structure_id: "s0".to_string(),
        }
    }

    #[test]
    fn quadratic_converges_near_optimum() {
        let space = space_1d(0.0, 1.0, Scale::Linear, Kind::Float);
        let result = bo_optimize(
            &space,
            |theta| {
                let x = theta["x"];
                (Some(-(x - 0.3) * (x - 0.3)), EvalStatus::Ok)
            },
            24,
            8,
            7,
        )
        .unwrap();
        assert!(result.best_score.unwrap() > -0.01);
    }

    #[test]
    fn phases_are_exactly_init_then_guided() {
        let space = space_1d(0.0, 1.0, Scale::Linear, Kind::Float);
        let result = bo_optimize(&space, |_| (Some(1.0), EvalStatus::Ok), 24, 8, 1).unwrap();
        assert_eq!(result.history.len(), 24);
        assert_eq!(
            result.history.iter().filter(|t| t.phase == BoPhase::Random).count(),
            8
        );
        assert_eq!(
            result.history.iter().filter(|t| t.phase == BoPhase::Guided).count(),
            16
        );
    }

    #[test]
    fn int_knobs_stay_integral_and_bounded() {
        let space = space_1d(1.0, 50.0, Scale::Log, Kind::Int);
        let result = bo_optimize(
            &space,
            |theta| {
                let x = theta["x"];
                (Some(-(x - 20.0).abs()), EvalStatus::Ok)
            },
            20,
            6,
            3,
        )
        .unwrap();
        for trial in &result.history {
            let x = trial.theta["x"];
            assert_eq!(x.fract(), 0.0);
            assert!((1.0..=50.0).contains(&x));
        }
    }

    #[test]
    fn best_equals_history_max() {
        let space = space_1d(0.0, 1.0, Scale::Linear, Kind::Float);
        let result = bo_optimize(
            &space,
            |theta| (Some((theta["x"] * 10.0).sin()), EvalStatus::Ok),
            16,
            5,
            11,
        )
        .unwrap();
        let max = result
            .history
            .iter()
            .filter_map(|t| t.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best_score.unwrap(), max);
    }

    #[test]
    fn failed_evaluations_are_tolerated() {
        let space = space_1d(0.0, 1.0, Scale::Linear, Kind::Float);
        let mut calls = 0;
        let result = bo_optimize(
            &space,
            |theta| {
                calls += 1;
                if calls % 3 == 0 {
                    (None, EvalStatus::Error)
                } else {
                    (Some(-theta["x"]), EvalStatus::Ok)
                }
            },
            15,
            5,
            2,
        )
        .unwrap();
        assert_eq!(result.history.len(), 15);
        assert!(result.best_score.is_some());
        let max_ok = result
            .history
            .iter()
            .filter(|t| t.status == EvalStatus::Ok)
            .filter_map(|t| t.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best_score.unwrap(), max_ok);
    }

    #[test]
    fn separable_quadratic_in_3d_lands_near_the_optimum() {
        let knob = |name: &str| KnobSpec {
            name: name.to_string(),
            source_literal: "0.5".to_string(),
            context_line: format!("{name} = 0.5"),
            default: 0.5,
            low: 0.0,
            high: 1.0,
            scale: Scale::Linear,
            kind: Kind::Float,
            rationale: String::new(),
        };
        let space = KnobSpace {
            knobs: vec![knob("a"), knob("b"), knob("c")],
            structure_id: "s0".to_string(),
        };
        let target = [0.2, 0.6, 0.45];
        let objective = |theta: &BTreeMap<String, f64>| {
            let v = -(theta["a"] - target[0]).powi(2)
                - (theta["b"] - target[1]).powi(2)
                - (theta["c"] - target[2]).powi(2);
            (Some(v), EvalStatus::Ok)
        };
        // Worst value over the box vs the optimum at `target` defines the
        // objective's range for the 5%-of-range criterion.
        let worst = -(1.0f64 - target[0]).powi(2) - (1.0f64 - target[1]).powi(2) - 1.0f64;
        let tolerance = 0.05 * (0.0 - worst);

        let mut hits = 0;
        for seed in 0..20u64 {
            let result = bo_optimize(&space, objective, 24, 8, seed).unwrap();
            if result.best_score.unwrap() >= -tolerance {
                hits += 1;
            }
        }
        assert!(hits >= 18, "within 5% of range in only {hits}/20 seeds");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let space = space_1d(0.0, 1.0, Scale::Linear, Kind::Float);
        let objective = |theta: &BTreeMap<String, f64>| {
            let x = theta["x"];
            (Some(-(x - 0.7).abs()), EvalStatus::Ok)
        };
        let a = bo_optimize(&space, objective, 18, 6, 42).unwrap();
        let b = bo_optimize(&space, objective, 18, 6, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_space_is_an_error() {
        let space = KnobSpace {
            knobs: Vec::new(),
            structure_id: "s0".to_string(),
        };
        assert!(matches!(
            bo_optimize(&space, |_| (Some(0.0), EvalStatus::Ok), 5, 2, 1),
            Err(TuningError::EmptySpace)
        ));
    }
}
