//! Property tests for the diff layer and the trace store: diff round-trips,
//! skeleton idempotence and numeric invariance, emit/ingest round-trips, and
//! kappa behavior under label-marginal-preserving permutations.

use proptest::prelude::*;

use tracelens_core::diff::{
    compute_diff, count_numeric_literals, skeletonize, Dialect, NUM_PLACEHOLDER,
};
use tracelens_core::taxonomy::{agreement_report, Label};
use tracelens_core::trace::{
    emit_run, generate_synthetic_run, ingest_run, LineageShape, ScoreProfile, SynthConfig,
};

fn line_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("    ".to_string()),
        "[a-z]{1,6} = [0-9]{1,4}",
        "[a-z]{1,6} = [0-9]\\.[0-9]{1,5}",
        "# [a-z ]{0,12}",
        "    (return|print)\\([a-z]{1,4}\\)",
        "[a-zA-Z0-9 =+*/#'\"\\(\\)\\[\\]{}.,_-]{0,32}",
    ]
}

fn source_strategy() -> impl Strategy<Value = String> {
    (proptest::collection::vec(line_strategy(), 0..30), any::<bool>()).prop_map(
        |(lines, trailing)| {
            let mut s = lines.join("\n");
            if trailing && !s.is_empty() {
                s.push('\n');
            }
            s
        },
    )
}

/// A child derived from the parent by random removals and insertions, plus
/// independent pairs, both exercised by the round-trip property.
fn source_pair_strategy() -> impl Strategy<Value = (String, String)> {
    prop_oneof![
        (source_strategy(), source_strategy()),
        (source_strategy(), proptest::collection::vec(any::<prop::sample::Index>(), 0..8))
            .prop_flat_map(|(parent, _)| {
                let parent_clone = parent.clone();
                (
                    Just(parent),
                    proptest::collection::vec(line_strategy(), 0..6),
                    proptest::collection::vec(any::<prop::sample::Index>(), 0..6),
                )
                    .prop_map(move |(_, inserts, positions)| {
                        let mut lines: Vec<String> =
                            parent_clone.split('\n').map(|s| s.to_string()).collect();
                        for (insert, pos) in inserts.into_iter().zip(positions) {
                            let at = pos.index(lines.len() + 1);
                            lines.insert(at, insert);
                        }
                        (parent_clone.clone(), lines.join("\n"))
                    })
            }),
    ]
}

proptest! {
    #[test]
    fn diff_roundtrip_reconstructs_child((parent, child) in source_pair_strategy()) {
        for dialect in [Dialect::PyLike, Dialect::CLike] {
            let diff = compute_diff(&parent, &child, dialect);
            prop_assert_eq!(diff.apply_to(&parent), child.clone());
        }
    }

    #[test]
    fn skeletonize_is_idempotent(line in line_strategy()) {
        for dialect in [Dialect::PyLike, Dialect::CLike] {
            let once = skeletonize(&line, dialect);
            prop_assert_eq!(skeletonize(&once, dialect), once);
        }
    }

    #[test]
    fn skeleton_invariant_under_numeric_replacement(
        ident in "[a-z_]{1,8}",
        a in prop_oneof!["[0-9]{1,5}", "[0-9]\\.[0-9]{1,4}", "[1-9]e-?[0-9]"],
        b in prop_oneof!["[0-9]{1,5}", "[0-9]\\.[0-9]{1,4}", "[1-9]e-?[0-9]"],
        c in "[0-9]{1,3}",
        d in "[0-9]{1,3}",
    ) {
        let line_one = format!("{ident} = {a} + scale * {c}");
        let line_two = format!("{ident} = {b} + scale * {d}");
        let skel_one = skeletonize(&line_one, Dialect::PyLike);
        let skel_two = skeletonize(&line_two, Dialect::PyLike);
        prop_assert_eq!(&skel_one, &skel_two);
        prop_assert!(skel_one.contains(NUM_PLACEHOLDER));
    }

    #[test]
    fn literal_count_invariant_under_comment_churn(
        ident in "[a-z_]{1,8}",
        n in "[0-9]{1,4}",
        comment in "[a-z 0-9]{0,16}",
    ) {
        let bare = format!("{ident} = {n}\nother = 2\n");
        let commented = format!("{ident} = {n}  # {comment} 99\n# {comment} 3\nother = 2\n");
        prop_assert_eq!(
            count_numeric_literals(&bare, Dialect::PyLike),
            count_numeric_literals(&commented, Dialect::PyLike)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn emit_ingest_roundtrip(
        seed in 0u64..1000,
        literal in 0.0f64..0.5,
        tuning in 0.0f64..0.4,
        tree in any::<bool>(),
    ) {
        let synthetic = generate_synthetic_run(&SynthConfig {
            iterations: 15,
            planted_literal_recycle_rate: literal,
            planted_tuning_recycle_rate: tuning,
            lineage_shape: if tree { LineageShape::Tree } else { LineageShape::Chain },
            score_profile: ScoreProfile::Noisy,
            rng_seed: seed,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_run(&synthetic.run, dir.path()).unwrap();
        let reloaded = ingest_run(dir.path(), None).unwrap();
        prop_assert_eq!(&reloaded, &synthetic.run);
        prop_assert!(reloaded.validate().is_empty());

        // Chain scores are strictly increasing and end at the maximum over
        // accepted scored candidates.
        let chain = reloaded.best_so_far_chain().unwrap();
        for pair in chain.windows(2) {
            prop_assert!(pair[1].score > pair[0].score);
        }
        let max_accepted = reloaded
            .candidates()
            .iter()
            .filter(|c| c.validity == tracelens_core::trace::Validity::Accepted)
            .filter_map(|c| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(chain.last().unwrap().score, max_accepted);

        // Trajectory ratios change only where the chain gains an entry.
        let trajectory =
            tracelens_core::metrics::size_and_hparam_trajectory(&reloaded).unwrap();
        let chain_iterations: std::collections::BTreeSet<u32> =
            chain.iter().map(|e| e.iteration).collect();
        for (t, pair) in trajectory.windows(2).enumerate() {
            let changed = pair[0].loc_ratio != pair[1].loc_ratio
                || pair[0].hparam_ratio != pair[1].hparam_ratio;
            if changed {
                prop_assert!(
                    chain_iterations.contains(&(t as u32 + 1)),
                    "trajectory moved at iteration {} without a chain entry",
                    t + 1
                );
            }
        }
    }
}

/// Kappa under a label-marginal-preserving permutation of the judged map is
/// close to zero: permuting which items carry each label keeps per-label
/// marginals while destroying item-level agreement. Averaged over several
/// permutations to keep the statistical check stable.
#[test]
fn kappa_near_zero_under_marginal_preserving_permutation() {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let n = 2000;
    let labels = [Label::Efficiency, Label::BugFix, Label::Refactor];

    let mut reference: BTreeMap<String, BTreeSet<Label>> = BTreeMap::new();
    for i in 0..n {
        let mut set = BTreeSet::new();
        for (j, label) in labels.iter().enumerate() {
            if rng.gen_bool(0.2 + 0.15 * j as f64) {
                set.insert(*label);
            }
        }
        if set.is_empty() {
            set.insert(Label::LocalRefinement);
        }
        reference.insert(format!("item{i:05}"), set);
    }
    let items: Vec<String> = reference.keys().cloned().collect();

    let permutations = 10;
    let mut kappa_sums: BTreeMap<Label, f64> =
        labels.iter().map(|l| (*l, 0.0)).collect();
    for _ in 0..permutations {
        // Permute each label's assignments independently across items.
        let mut judged: BTreeMap<String, BTreeSet<Label>> =
            items.iter().map(|k| (k.clone(), BTreeSet::new())).collect();
        for label in labels.iter().chain([Label::LocalRefinement].iter()) {
            let mut carriers: Vec<bool> = items
                .iter()
                .map(|k| reference[k].contains(label))
                .collect();
            carriers.shuffle(&mut rng);
            for (item, carries) in items.iter().zip(carriers) {
                if carries {
                    judged.get_mut(item).unwrap().insert(*label);
                }
            }
        }
        // The vocabulary-closure invariant wants non-empty sets; backfill.
        for set in judged.values_mut() {
            if set.is_empty() {
                set.insert(Label::Pruning);
            }
        }
        let report = agreement_report(&reference, &judged).unwrap();
        for label in labels {
            *kappa_sums.get_mut(&label).unwrap() += report.per_label_kappa[&label];
        }
    }

    for label in labels {
        let mean_kappa = kappa_sums[&label] / permutations as f64;
        assert!(
            mean_kappa.abs() < 0.05,
            "mean kappa for {label} should be ~0 under permutation, got {mean_kappa}"
        );
    }
}

/// Exact match can never exceed any single label's accuracy.
#[test]
fn exact_match_bounded_by_per_label_accuracy() {
    use std::collections::{BTreeMap, BTreeSet};

    let mut reference: BTreeMap<String, BTreeSet<Label>> = BTreeMap::new();
    let mut judged: BTreeMap<String, BTreeSet<Label>> = BTreeMap::new();
    let pattern = [
        (vec![Label::Efficiency], vec![Label::Efficiency]),
        (vec![Label::Efficiency, Label::BugFix], vec![Label::BugFix]),
        (vec![Label::Pruning], vec![Label::Pruning, Label::Refactor]),
        (vec![Label::Refactor], vec![Label::Refactor]),
    ];
    for (i, (r, j)) in pattern.iter().enumerate() {
        reference.insert(format!("i{i}"), r.iter().copied().collect());
        judged.insert(format!("i{i}"), j.iter().copied().collect());
    }
    let report = agreement_report(&reference, &judged).unwrap();

    let n = reference.len() as f64;
    for label in Label::ALL {
        let matching = reference
            .iter()
            .filter(|(item, r)| r.contains(&label) == judged[*item].contains(&label))
            .count() as f64;
        assert!(report.exact_match <= matching / n + 1e-12);
    }
}
