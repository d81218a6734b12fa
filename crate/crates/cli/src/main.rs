//! `tracelens`: batch diagnostics over recorded search traces. Subcommands
//! mirror the toolkit's capabilities: ingest/validate/metrics/cycling for
//! static analysis, annotate/agreement/stats for the edit taxonomy, replay
//! and tune for model-backed probes, rescore for public/private checks,
//! simulate for synthetic ground-truth traces, and report for corpus scale.

mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use output::{fmt_f64, fmt_opt_f64, write_report, Format, Report, Table};
use tracelens_core::{cycling, metrics, replay, rescore, stats, taxonomy, trace, tuning};
use tracelens_runtime::{CachedClient, HttpChatClient, RetryingClient, SubprocessEvaluator};

#[derive(Parser)]
#[command(
    name = "tracelens",
    version,
    about = "Diagnostics for evolutionary coding-agent search traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArgs {
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct SourceArgs {
    /// One run directory (the six JSONL tables).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// A directory of run directories.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Restrict to (or verify) this run id.
    #[arg(long)]
    run_id: Option<String>,
    /// Parallel workers for corpus analyses.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Chain,
    Tree,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Improving,
    JackpotThenFlat,
    Noisy,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-link one run directory.
    Ingest {
        #[arg(long)]
        trace: PathBuf,
        /// Backend name to use when the run record leaves it empty.
        #[arg(long)]
        backend_hint: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check every schema and graph invariant; violations are report rows.
    Validate {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Size/hyperparameter trajectories, lineage depth, budget utilization.
    Metrics {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Cycling series, slopes, re-introduction spans, tuning shares.
    Cycling {
        #[command(flatten)]
        source: SourceArgs,
        /// Aggregate tuning share by this key (model, backend, task, diff_mode).
        #[arg(long)]
        group_by: Option<String>,
        /// Also write a per-line classification audit (JSONL).
        #[arg(long)]
        audit: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Label every edit with the judge model; writes an annotations sidecar.
    Annotate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        model: String,
        /// Completion cache directory.
        #[arg(long, default_value = ".tracelens-cache")]
        cache_dir: PathBuf,
        /// Re-requests after a malformed judge response.
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        /// Sidecar path; defaults to <trace>/annotations.jsonl.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Concurrent judge calls in flight.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Agreement statistics between two label CSVs (item_id,label|label).
    Agreement {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        judged: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Prevalence, helpfulness odds ratios, enrichment, label histograms.
    Stats {
        #[command(flatten)]
        source: SourceArgs,
        /// Annotations sidecar for --trace; defaults to <trace>/annotations.jsonl.
        /// Corpus runs always read <run dir>/annotations.jsonl.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Break a corpus down by this key (domain, backend, model, task).
        #[arg(long)]
        group_by: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run a breakthrough's saved prompt n times per model.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        candidate_id: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Generator model; repeat for a substitution sweep.
        #[arg(long, required = true)]
        model: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Knob identification, rewrite, and the BO tuning-gap report.
    Tune {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        candidate_id: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 24)]
        budget: usize,
        #[arg(long, default_value_t = 8)]
        init: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".tracelens-cache")]
        cache_dir: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-score the public best-so-far chain on a private evaluator.
    Rescore {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        /// Private evaluator command template with a {program} placeholder.
        #[arg(long)]
        private_eval: String,
        #[arg(long, default_value_t = 300.0)]
        private_timeout: f64,
        /// Rating-point threshold separating mild from severe overfit.
        #[arg(long, default_value_t = rescore::DEFAULT_OVERFIT_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic ground-truth trace.
    Simulate {
        /// Run directory to write (six JSONL tables + ground_truth.jsonl).
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        iterations: u32,
        #[arg(long, default_value_t = 0.3)]
        literal_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        tuning_rate: f64,
        #[arg(long, value_enum, default_value_t = ShapeArg::Chain)]
        shape: ShapeArg,
        #[arg(long, value_enum, default_value_t = ProfileArg::Improving)]
        profile: ProfileArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Corpus scale summary (runs, programs, accepted/rejected, edits).
    Report {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_trace(dir: &Path, run_id: Option<&str>) -> anyhow::Result<trace::Run> {
    let run = trace::ingest_run(dir, None)
        .with_context(|| format!("ingesting {}", dir.display()))?;
    if let Some(expected) = run_id {
        if run.run_id() != expected {
            bail!("run {} found at {}, expected {expected}", run.run_id(), dir.display());
        }
    }
    Ok(run)
}

/// Ingests every run directory of a corpus, fanning out over `jobs`
/// workers. Order follows the sorted directory names.
fn load_corpus_parallel(dir: &Path, jobs: usize) -> anyhow::Result<Vec<trace::Run>> {
    let mut run_dirs = Vec::new();
    for entry in
        std::fs::read_dir(dir).with_context(|| format!("reading corpus {}", dir.display()))?
    {
        let path = entry?.path();
        if path.is_dir() && path.join("runs.jsonl").is_file() {
            run_dirs.push(path);
        }
    }
    run_dirs.sort();
    parallel_map(&run_dirs, jobs, |dir| {
        trace::ingest_run(dir, None).map_err(|e| anyhow::anyhow!("ingesting {}: {e}", dir.display()))
    })
    .into_iter()
    .collect()
}

fn load_runs(source: &SourceArgs) -> anyhow::Result<Vec<trace::Run>> {
    let mut runs = match (&source.trace, &source.corpus) {
        (Some(dir), None) => vec![load_trace(dir, None)?],
        (None, Some(dir)) => load_corpus_parallel(dir, source.jobs)?,
        _ => bail!("exactly one of --trace and --corpus is required"),
    };
    if let Some(run_id) = &source.run_id {
        runs.retain(|r| r.run_id() == *run_id);
        if runs.is_empty() {
            bail!("no run with id {run_id}");
        }
    }
    Ok(runs)
}

/// Index-stable parallel map over `jobs` worker threads.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: std::sync::Mutex<Vec<Option<R>>> =
        std::sync::Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("no worker panics")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every index computed"))
        .collect()
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest { trace: dir, backend_hint, out } => {
            let run = trace::ingest_run(&dir, backend_hint.as_deref())
                .with_context(|| format!("ingesting {}", dir.display()))?;
            let accepted = run
                .candidates()
                .iter()
                .filter(|c| c.validity == trace::Validity::Accepted)
                .count();
            let json = serde_json::json!({
                "run_id": run.run_id(),
                "task": run.task(),
                "backend": run.backend(),
                "domain_tag": run.domain_tag(),
                "budget": run.budget(),
                "candidates": run.candidates().len(),
                "accepted": accepted,
                "rejected": run.candidates().len() - accepted,
                "edges": run.edges().len(),
                "contexts": run.contexts().len(),
                "evaluations": run.evaluations().len(),
            });
            let mut table = Table::new(&[
                "run_id", "task", "backend", "budget", "candidates", "accepted", "rejected",
                "edges", "contexts", "evaluations",
            ]);
            table.push(vec![
                run.run_id().to_string(),
                run.task().to_string(),
                run.backend().to_string(),
                run.budget().to_string(),
                run.candidates().len().to_string(),
                accepted.to_string(),
                (run.candidates().len() - accepted).to_string(),
                run.edges().len().to_string(),
                run.contexts().len().to_string(),
                run.evaluations().len().to_string(),
            ]);
            write_report(
                &Report { json, table: Some(table), scalars: Vec::new() },
                out.format,
                out.out.as_deref(),
            )?;
        }

        Command::Validate { trace: dir, out } => {
            let run = load_trace(&dir, None)?;
            let report = run.validate();
            let mut table = Table::new(&["code", "detail"]);
            for v in &report.violations {
                table.push(vec![v.code.clone(), v.detail.clone()]);
            }
            write_report(
                &Report {
                    json: serde_json::to_value(&report)?,
                    table: Some(table),
                    scalars: vec![("violations".to_string(), report.violations.len().to_string())],
                },
                out.format,
                out.out.as_deref(),
            )?;
        }

        Command::Metrics { source, out } => {
            let runs = load_runs(&source)?;
            if runs.len() == 1 && source.trace.is_some() {
                let run = &runs[0];
                let trajectory = metrics::size_and_hparam_trajectory(run)?;
                let depth = metrics::final_best_lineage_depth(run)?;
                let utilization = metrics::budget_utilization(run)?;
                let mut table = Table::new(&["normalized_iteration", "loc_ratio", "hparam_ratio"]);
                for p in &trajectory {
                    table.push(vec![
                        fmt_f64(p.normalized_iteration),
                        fmt_f64(p.loc_ratio),
                        fmt_f64(p.hparam_ratio),
                    ]);
                }
                write_report(
                    &Report {
                        json: serde_json::json!({
                            "run_id": run.run_id(),
                            "lineage_depth": depth,
                            "budget_utilization": utilization,
                            "trajectory": trajectory,
                        }),
                        table: Some(table),
                        scalars: vec![
                            ("run_id".to_string(), run.run_id().to_string()),
                            ("lineage_depth".to_string(), depth.to_string()),
                            ("budget_utilization".to_string(), fmt_f64(utilization)),
                        ],
                    },
                    out.format,
                    out.out.as_deref(),
                )?;
            } else {
                metrics_corpus(&runs, source.jobs, &out)?;
            }
        }

        Command::Cycling { source, group_by, audit, out } => {
            let runs = load_runs(&source)?;
            if let Some(key) = group_by {
                let key: cycling::GroupKey = key.parse()?;
                let groups = cycling::tuning_share_by_group(&runs, key);
                let mut table = Table::new(&["group", "tuning_share", "runs"]);
                for g in &groups {
                    table.push(vec![g.group.clone(), fmt_f64(g.tuning_share), g.runs.to_string()]);
                }
                write_report(
                    &Report {
                        json: serde_json::to_value(&groups)?,
                        table: Some(table),
                        scalars: Vec::new(),
                    },
                    out.format,
                    out.out.as_deref(),
                )?;
            } else if runs.len() == 1 && source.trace.is_some() {
                let run = &runs[0];
                let series = cycling::run_cycling_series(run);
                let spans = cycling::reintroduction_spans(run);
                if let Some(audit_path) = audit {
                    write_audit(run, &audit_path)?;
                }
                let mut table = Table::new(&["iteration", "cumulative_literal_rate"]);
                for (t, rate) in series.per_iteration_rate.iter().enumerate() {
                    table.push(vec![t.to_string(), fmt_opt_f64(*rate)]);
                }
                write_report(
                    &Report {
                        json: serde_json::json!({
                            "run_id": run.run_id(),
                            "series": series,
                            "spans": spans,
                        }),
                        table: Some(table),
                        scalars: vec![
                            ("run_rate".to_string(), fmt_f64(series.run_rate)),
                            ("slope".to_string(), fmt_f64(series.slope)),
                            ("tuning_share".to_string(), fmt_f64(series.tuning_share)),
                            ("median_span".to_string(), fmt_opt_f64(spans.median)),
                            ("span_count".to_string(), spans.count.to_string()),
                        ],
                    },
                    out.format,
                    out.out.as_deref(),
                )?;
            } else {
                if let Some(audit_path) = audit {
                    bail!("--audit {} needs a single --trace run", audit_path.display());
                }
                cycling_corpus(&runs, source.jobs, &out)?;
            }
        }

        Command::Annotate { trace: dir, model, cache_dir, max_retries, annotations, jobs, out } => {
            let http = HttpChatClient::from_env()?;
            let client = CachedClient::new(RetryingClient::new(http, 3), &cache_dir)
                .with_context(|| format!("opening cache {}", cache_dir.display()))?;
            let run = load_trace(&dir, None)?;
            let outcome = taxonomy::annotate_run(
                &run,
                &model,
                &client,
                taxonomy::AnnotatePolicy {
                    max_retries,
                    max_in_flight: jobs.max(1),
                },
            )?;
            let sidecar = annotations.unwrap_or_else(|| dir.join("annotations.jsonl"));
            taxonomy::write_annotations(&sidecar, &outcome.annotations)?;
            let cached = outcome.annotations.iter().filter(|a| a.cached).count();
            let json = serde_json::json!({
                "meta": {"model": model, "max_retries": max_retries, "cache_dir": cache_dir},
                "run_id": run.run_id(),
                "annotated": outcome.annotations.len(),
                "from_cache": cached,
                "unannotated": outcome
                    .unannotated
                    .iter()
                    .map(|(e, reason)| serde_json::json!({"edge": e, "reason": reason}))
                    .collect::<Vec<_>>(),
                "annotations_path": sidecar,
            });
            write_report(&Report::json_only(json), out.format, out.out.as_deref())?;
        }

        Command::Agreement { reference, judged, out } => {
            let reference = taxonomy::read_label_csv(&reference)?;
            let judged = taxonomy::read_label_csv(&judged)?;
            let report = taxonomy::agreement_report(&reference, &judged)?;
            let mut table = Table::new(&["label", "kappa"]);
            for (label, kappa) in &report.per_label_kappa {
                table.push(vec![label.to_string(), fmt_f64(*kappa)]);
            }
            write_report(
                &Report {
                    json: serde_json::to_value(&report)?,
                    table: Some(table),
                    scalars: vec![
                        ("macro_kappa".to_string(), fmt_f64(report.macro_kappa)),
                        ("mean_jaccard".to_string(), fmt_f64(report.mean_jaccard)),
                        ("micro_f1".to_string(), fmt_f64(report.micro_f1)),
                        ("exact_match".to_string(), fmt_f64(report.exact_match)),
                        ("n_items".to_string(), report.n_items.to_string()),
                    ],
                },
                out.format,
                out.out.as_deref(),
            )?;
        }

        Command::Stats { source, annotations, group_by, out } => {
            match (&source.trace, &source.corpus) {
                (Some(dir), None) => {
                    if group_by.is_some() {
                        bail!("--group-by needs --corpus");
                    }
                    let run = load_trace(dir, source.run_id.as_deref())?;
                    let sidecar =
                        annotations.unwrap_or_else(|| dir.join("annotations.jsonl"));
                    let annotations = taxonomy::read_annotations(&sidecar)?;
                    stats_report(&run, &annotations, &out)?;
                }
                (None, Some(dir)) => {
                    if annotations.is_some() {
                        bail!("--annotations applies to --trace only");
                    }
                    stats_corpus_report(dir, &source, group_by.as_deref(), &out)?;
                }
                _ => bail!("exactly one of --trace and --corpus is required"),
            }
        }

        Command::Replay { trace: dir, run_id, candidate_id, n, model, out } => {
            let run = load_trace(&dir, run_id.as_deref())?;
            let http = HttpChatClient::from_env()?;
            // Replays sample the model n times, so no cache layer here:
            // identical requests must still reach the endpoint.
            let client = RetryingClient::new(http, 3);
            let evaluator = SubprocessEvaluator::new();
            let summaries = replay::model_substitution_sweep(
                &run,
                &candidate_id,
                n,
                &model,
                &client,
                &evaluator,
            )?;
            replay_report(&summaries, &candidate_id, n, &out)?;
        }

        Command::Tune { trace: dir, run_id, candidate_id, model, budget, init, seed, cache_dir, out } => {
            let run = load_trace(&dir, run_id.as_deref())?;
            let http = HttpChatClient::from_env()?;
            let client = CachedClient::new(RetryingClient::new(http, 3), &cache_dir)
                .with_context(|| format!("opening cache {}", cache_dir.display()))?;
            let evaluator = SubprocessEvaluator::new();
            let mut config = tuning::TuningRunConfig::new(model.clone());
            config.budget = budget;
            config.init = init;
            config.rng_seed = seed;
            let report =
                tuning::tuning_gap_report(&run, &candidate_id, &config, &client, &evaluator)?;
            tune_report(&report, &model, seed, &out)?;
        }

        Command::Rescore { trace: dir, run_id, private_eval, private_timeout, threshold, out } => {
            let run = load_trace(&dir, run_id.as_deref())?;
            let mut private_env = run.environment().clone();
            private_env.evaluator_command = private_eval;
            private_env.timeout = private_timeout;
            let evaluator = SubprocessEvaluator::new();
            let chain = rescore::rescore_chain(&run, &private_env, &evaluator)?;
            let verdict =
                rescore::generalization_verdict(&run, &private_env, &evaluator, threshold);
            let mut table = Table::new(&[
                "iteration", "candidate_id", "public_score", "private_score", "error",
            ]);
            for entry in &chain {
                table.push(vec![
                    entry.iteration.to_string(),
                    entry.candidate_id.clone(),
                    fmt_f64(entry.public_score),
                    fmt_opt_f64(entry.private_score),
                    entry.error.clone().unwrap_or_default(),
                ]);
            }
            write_report(
                &Report {
                    json: serde_json::json!({"chain": chain, "verdict": verdict}),
                    table: Some(table),
                    scalars: vec![
                        ("verdict".to_string(), format!("{:?}", verdict.verdict)),
                        ("public_delta".to_string(), fmt_opt_f64(verdict.public_delta)),
                        ("private_delta".to_string(), fmt_opt_f64(verdict.private_delta)),
                    ],
                },
                out.format,
                out.out.as_deref(),
            )?;
        }

        Command::Simulate { out_dir, iterations, literal_rate, tuning_rate, shape, profile, seed, out } => {
            let config = trace::SynthConfig {
                iterations,
                planted_literal_recycle_rate: literal_rate,
                planted_tuning_recycle_rate: tuning_rate,
                lineage_shape: match shape {
                    ShapeArg::Chain => trace::LineageShape::Chain,
                    ShapeArg::Tree => trace::LineageShape::Tree,
                },
                score_profile: match profile {
                    ProfileArg::Improving => trace::ScoreProfile::Improving,
                    ProfileArg::JackpotThenFlat => trace::ScoreProfile::JackpotThenFlat,
                    ProfileArg::Noisy => trace::ScoreProfile::Noisy,
                },
                rng_seed: seed,
            };
            let synthetic = trace::generate_synthetic_run(&config)?;
            trace::emit_synthetic_run(&synthetic, &out_dir)?;
            let json = serde_json::json!({
                "meta": {"seed": seed},
                "run_id": synthetic.run.run_id(),
                "path": out_dir,
                "candidates": synthetic.run.candidates().len(),
                "edges": synthetic.run.edges().len(),
                "planted_literal_rate": synthetic.ground_truth.literal_rate(),
                "planted_tuning_rate": synthetic.ground_truth.tuning_rate(),
            });
            write_report(&Report::json_only(json), out.format, out.out.as_deref())?;
        }

        Command::Report { corpus, jobs, out } => {
            let runs = load_corpus_parallel(&corpus, jobs)?;
            let summary = metrics::corpus_scale_summary(&runs);
            let mut table = Table::new(&[
                "runs", "programs", "accepted", "rejected", "edits",
                "median_programs_per_run", "median_edits_per_run",
            ]);
            table.push(vec![
                summary.runs.to_string(),
                summary.programs.to_string(),
                summary.accepted.to_string(),
                summary.rejected.to_string(),
                summary.edits.to_string(),
                fmt_f64(summary.median_programs_per_run),
                fmt_f64(summary.median_edits_per_run),
            ]);
            write_report(
                &Report {
                    json: serde_json::to_value(&summary)?,
                    table: Some(table),
                    scalars: Vec::new(),
                },
                out.format,
                out.out.as_deref(),
            )?;
        }
    }
    Ok(())
}

fn write_audit(run: &trace::Run, path: &Path) -> anyhow::Result<()> {
    let rows = cycling::classification_audit(run);
    let mut buf = String::new();
    for row in &rows {
        buf.push_str(&serde_json::to_string(row)?);
        buf.push('\n');
    }
    std::fs::write(path, buf).with_context(|| format!("writing audit {}", path.display()))?;
    Ok(())
}

struct RunMetricsRow {
    run_id: String,
    domain: String,
    programs: usize,
    lineage_depth: Option<usize>,
    budget_utilization: Option<f64>,
    final_loc_ratio: Option<f64>,
    final_hparam_ratio: Option<f64>,
}

fn metrics_corpus(runs: &[trace::Run], jobs: usize, out: &OutArgs) -> anyhow::Result<()> {
    let rows = parallel_map(runs, jobs, |run| {
        let trajectory = metrics::size_and_hparam_trajectory(run).ok();
        let last = trajectory.as_ref().and_then(|t| t.last().cloned());
        RunMetricsRow {
            run_id: run.run_id().to_string(),
            domain: format!("{:?}", run.domain_tag()).to_lowercase(),
            programs: run.candidates().len(),
            lineage_depth: metrics::final_best_lineage_depth(run).ok(),
            budget_utilization: metrics::budget_utilization(run).ok(),
            final_loc_ratio: last.as_ref().map(|p| p.loc_ratio),
            final_hparam_ratio: last.as_ref().map(|p| p.hparam_ratio),
        }
    });

    let mut table = Table::new(&[
        "run_id", "domain", "programs", "lineage_depth", "budget_utilization",
        "final_loc_ratio", "final_hparam_ratio",
    ]);
    for row in &rows {
        table.push(vec![
            row.run_id.clone(),
            row.domain.clone(),
            row.programs.to_string(),
            row.lineage_depth.map(|d| d.to_string()).unwrap_or_default(),
            fmt_opt_f64(row.budget_utilization),
            fmt_opt_f64(row.final_loc_ratio),
            fmt_opt_f64(row.final_hparam_ratio),
        ]);
    }

    let mut medians = serde_json::Map::new();
    let mut groups: BTreeMap<String, Vec<&RunMetricsRow>> = BTreeMap::new();
    groups.insert("overall".to_string(), rows.iter().collect());
    for row in &rows {
        groups.entry(row.domain.clone()).or_default().push(row);
    }
    for (name, group) in &groups {
        let depth = median_of(
            group
                .iter()
                .filter_map(|r| r.lineage_depth.map(|d| d as f64))
                .collect(),
        );
        let utilization = median_of(group.iter().filter_map(|r| r.budget_utilization).collect());
        let loc = median_of(group.iter().filter_map(|r| r.final_loc_ratio).collect());
        let hparam = median_of(group.iter().filter_map(|r| r.final_hparam_ratio).collect());
        medians.insert(
            name.clone(),
            serde_json::json!({
                "runs": group.len(),
                "lineage_depth": depth,
                "budget_utilization": utilization,
                "final_loc_ratio": loc,
                "final_hparam_ratio": hparam,
            }),
        );
    }

    let json = serde_json::json!({
        "runs": rows
            .iter()
            .map(|r| serde_json::json!({
                "run_id": r.run_id,
                "domain": r.domain,
                "programs": r.programs,
                "lineage_depth": r.lineage_depth,
                "budget_utilization": r.budget_utilization,
                "final_loc_ratio": r.final_loc_ratio,
                "final_hparam_ratio": r.final_hparam_ratio,
            }))
            .collect::<Vec<_>>(),
        "medians": medians,
    });
    write_report(
        &Report { json, table: Some(table), scalars: Vec::new() },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}

fn cycling_corpus(runs: &[trace::Run], jobs: usize, out: &OutArgs) -> anyhow::Result<()> {
    struct Row {
        run_id: String,
        series: cycling::CyclingSeries,
        spans: cycling::SpanSummary,
    }
    let rows = parallel_map(runs, jobs, |run| Row {
        run_id: run.run_id().to_string(),
        series: cycling::run_cycling_series(run),
        spans: cycling::reintroduction_spans(run),
    });

    let mut table = Table::new(&[
        "run_id", "run_rate", "slope", "tuning_share", "median_span", "span_count",
    ]);
    for row in &rows {
        table.push(vec![
            row.run_id.clone(),
            fmt_f64(row.series.run_rate),
            fmt_f64(row.series.slope),
            fmt_f64(row.series.tuning_share),
            fmt_opt_f64(row.spans.median),
            row.spans.count.to_string(),
        ]);
    }

    let positive_slopes = rows.iter().filter(|r| r.series.slope > 0.0).count();
    let mut pooled: BTreeMap<u32, usize> = BTreeMap::new();
    for row in &rows {
        for (&span, &count) in &row.spans.histogram {
            *pooled.entry(span).or_insert(0) += count;
        }
    }
    let pooled_median = {
        let total: usize = pooled.values().sum();
        if total == 0 {
            None
        } else {
            let mut seen = 0;
            let mut median = None;
            for (&span, &count) in &pooled {
                seen += count;
                if seen * 2 >= total {
                    median = Some(span as f64);
                    break;
                }
            }
            median
        }
    };

    let scalars = vec![
        ("runs".to_string(), rows.len().to_string()),
        (
            "median_run_rate".to_string(),
            fmt_opt_f64(median_of(rows.iter().map(|r| r.series.run_rate).collect())),
        ),
        (
            "median_slope".to_string(),
            fmt_opt_f64(median_of(rows.iter().map(|r| r.series.slope).collect())),
        ),
        ("positive_slope_runs".to_string(), positive_slopes.to_string()),
        ("pooled_median_span".to_string(), fmt_opt_f64(pooled_median)),
    ];

    let json = serde_json::json!({
        "runs": rows
            .iter()
            .map(|r| serde_json::json!({
                "run_id": r.run_id,
                "run_rate": r.series.run_rate,
                "slope": r.series.slope,
                "tuning_share": r.series.tuning_share,
                "median_span": r.spans.median,
                "span_count": r.spans.count,
            }))
            .collect::<Vec<_>>(),
        "summary": {
            "runs": rows.len(),
            "median_run_rate": median_of(rows.iter().map(|r| r.series.run_rate).collect()),
            "median_slope": median_of(rows.iter().map(|r| r.series.slope).collect()),
            "positive_slope_runs": positive_slopes,
            "pooled_median_span": pooled_median,
        },
    });
    write_report(
        &Report { json, table: Some(table), scalars },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}

fn label_stats_rows(table: &mut Table, group: Option<&str>, stats: &stats::AnnotatedRunStats) {
    for row in &stats.labels {
        let mut cells = Vec::new();
        if let Some(group) = group {
            cells.push(group.to_string());
        }
        cells.extend([
            row.label.to_string(),
            fmt_f64(row.prevalence),
            fmt_f64(row.odds_ratio),
            row.n.to_string(),
            fmt_opt_f64(row.enrichment_bsf),
            fmt_opt_f64(row.enrichment_final_lineage),
        ]);
        table.push(cells);
    }
}

fn stats_report(
    run: &trace::Run,
    annotations: &[taxonomy::EditAnnotation],
    out: &OutArgs,
) -> anyhow::Result<()> {
    let aggregated = stats::annotated_run_stats(&[(run, annotations)])?;
    let mut table = Table::new(&[
        "label", "prevalence", "odds_ratio", "n", "enrichment_best_so_far",
        "enrichment_final_lineage",
    ]);
    label_stats_rows(&mut table, None, &aggregated);

    let json = serde_json::json!({
        "run_id": run.run_id(),
        "stats": aggregated,
    });
    write_report(
        &Report {
            json,
            table: Some(table),
            scalars: vec![
                ("annotations".to_string(), aggregated.annotations.to_string()),
                (
                    "excluded_from_odds".to_string(),
                    aggregated.annotations_excluded_from_odds.to_string(),
                ),
            ],
        },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}

/// Corpus stats: reads each run directory plus its annotations sidecar,
/// optionally broken down by a grouping key.
fn stats_corpus_report(
    corpus: &Path,
    source: &SourceArgs,
    group_by: Option<&str>,
    out: &OutArgs,
) -> anyhow::Result<()> {
    let mut run_dirs = Vec::new();
    for entry in std::fs::read_dir(corpus)
        .with_context(|| format!("reading corpus {}", corpus.display()))?
    {
        let path = entry?.path();
        if path.is_dir() && path.join("runs.jsonl").is_file() {
            run_dirs.push(path);
        }
    }
    run_dirs.sort();

    let mut annotated: Vec<(trace::Run, Vec<taxonomy::EditAnnotation>)> = Vec::new();
    let mut without_sidecar = 0usize;
    for dir in &run_dirs {
        let run = load_trace(dir, None)?;
        if let Some(run_id) = &source.run_id {
            if run.run_id() != *run_id {
                continue;
            }
        }
        let sidecar = dir.join("annotations.jsonl");
        if sidecar.is_file() {
            let annotations = taxonomy::read_annotations(&sidecar)?;
            annotated.push((run, annotations));
        } else {
            without_sidecar += 1;
        }
    }
    if annotated.is_empty() {
        bail!("no run in {} carries an annotations.jsonl sidecar", corpus.display());
    }

    let key = group_by
        .map(|k| k.parse::<stats::StatsGroupKey>())
        .transpose()?;
    let mut groups: BTreeMap<String, Vec<&(trace::Run, Vec<taxonomy::EditAnnotation>)>> =
        BTreeMap::new();
    for item in &annotated {
        let group = match key {
            Some(key) => stats::stats_group_value(&item.0, key),
            None => "all".to_string(),
        };
        groups.entry(group).or_default().push(item);
    }

    let mut table = Table::new(&[
        "group", "label", "prevalence", "odds_ratio", "n", "enrichment_best_so_far",
        "enrichment_final_lineage",
    ]);
    let mut json_groups = serde_json::Map::new();
    for (group, items) in &groups {
        let pairs: Vec<(&trace::Run, &[taxonomy::EditAnnotation])> = items
            .iter()
            .map(|(run, anns)| (run, anns.as_slice()))
            .collect();
        let aggregated = stats::annotated_run_stats(&pairs)?;
        label_stats_rows(&mut table, Some(group), &aggregated);
        json_groups.insert(
            group.clone(),
            serde_json::json!({"runs": items.len(), "stats": aggregated}),
        );
    }

    let json = serde_json::json!({
        "annotated_runs": annotated.len(),
        "runs_without_annotations": without_sidecar,
        "group_by": group_by,
        "groups": json_groups,
    });
    write_report(
        &Report {
            json,
            table: Some(table),
            scalars: vec![
                ("annotated_runs".to_string(), annotated.len().to_string()),
                ("runs_without_annotations".to_string(), without_sidecar.to_string()),
            ],
        },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}

fn replay_report(
    summaries: &[replay::ReplaySummary],
    candidate_id: &str,
    n: usize,
    out: &OutArgs,
) -> anyhow::Result<()> {
    let mut table = Table::new(&[
        "model", "parse_rate", "eval_rate", "exact_rate", "score_ratio_median",
    ]);
    for summary in summaries {
        table.push(vec![
            summary.model_id.clone(),
            fmt_f64(summary.parse_rate),
            fmt_f64(summary.eval_rate),
            fmt_f64(summary.exact_rate),
            fmt_opt_f64(summary.score_ratio_median),
        ]);
    }
    let json = serde_json::json!({
        "meta": {
            "candidate_id": candidate_id,
            "n": n,
            "models": summaries.iter().map(|s| s.model_id.clone()).collect::<Vec<_>>(),
        },
        "summaries": summaries,
    });
    write_report(
        &Report { json, table: Some(table), scalars: Vec::new() },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}

fn tune_report(
    report: &tuning::TuningReport,
    model: &str,
    seed: u64,
    out: &OutArgs,
) -> anyhow::Result<()> {
    let mut table = Table::new(&["trial", "phase", "status", "score"]);
    for (i, trial) in report.history.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            format!("{:?}", trial.phase).to_lowercase(),
            format!("{:?}", trial.status).to_lowercase(),
            fmt_opt_f64(trial.score),
        ]);
    }
    let json = serde_json::json!({
        "meta": {"model": model, "seed": seed},
        "report": report,
    });
    write_report(
        &Report {
            json,
            table: Some(table),
            scalars: vec![
                ("f_p0".to_string(), fmt_f64(report.f_p0)),
                ("f_star_bo".to_string(), fmt_f64(report.f_star_bo)),
                ("f_star_evo".to_string(), fmt_f64(report.f_star_evo)),
                ("gap".to_string(), fmt_f64(report.gap)),
                ("outcome".to_string(), format!("{:?}", report.outcome)),
            ],
        },
        out.format,
        out.out.as_deref(),
    )?;
    Ok(())
}
