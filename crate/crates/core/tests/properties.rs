mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use superwords::eval::{cooccurrence_marginals, pair_accuracy, CoocMode};
use superwords::ingest::SemanticFeatures;
use superwords::likelihood::{
    compute_phi, joint_log_prob, semantic_log_likelihood, semantic_log_normalizer, text_log_likelihood, validate,
    LikelihoodMode, ModelData, PhiMatrix, SemanticCache,
};
use superwords::model::{ActiveConcept, ActiveRecord, ConceptId, Hyperparameters, LatentState, WordSet};
use superwords::sampler::{initial_state, Chain, ChainRng, InitStrategy, PiUpdate, SampleTrace, TraceDoc, TraceRecord};
use superwords::synthetic::{
    jaccard, max_weight_matching, score_recovery, GeneratorConfig, GroundTruth, RecoveredConcept,
};

use common::{corpus, phi_from_counts, semantic_reference};

fn counts_strategy(max_rows: usize, v: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..4, v), 0..=max_rows)
}

fn features_strategy(f: usize, v: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, f * v).prop_map(move |x| DMatrix::from_row_slice(f, v, &x))
}

fn semantic_case() -> impl Strategy<Value = (DMatrix<f64>, Vec<Vec<u32>>)> {
    (1usize..=4, 1usize..=2).prop_flat_map(|(v, f)| (features_strategy(f, v), counts_strategy(3, v)))
}

fn truth_of(concepts: Vec<Vec<usize>>) -> GroundTruth {
    GroundTruth {
        concepts,
        activations: Vec::new(),
        config: GeneratorConfig {
            num_docs: 0,
            num_words: 8,
            tokens_per_doc: 0,
            num_features: 0,
            feature_noise: 0.0,
            kind: "fixture".into(),
        },
        pairs: Vec::new(),
    }
}

fn ids(n: usize) -> Vec<ConceptId> {
    (0..n as u64).collect()
}

/// A latent state over `docs × words` built from per-document lists of
/// `(concept, word mask, π)`.
fn state_from(docs: &[Vec<(u64, u8, f64)>], v: usize) -> LatentState {
    let mut s = LatentState::new(Hyperparameters::with_defaults(v), docs.len(), v);
    for (d, list) in docs.iter().enumerate() {
        for &(id, mask, pi) in list {
            if s.doc(d).is_active(id) {
                continue;
            }
            let words = WordSet::from_indices(v, (0..v).filter(|i| mask >> i & 1 == 1));
            s.activate_concept(d, id, words, pi).unwrap();
        }
    }
    s
}

fn docs_strategy(num_docs: usize, v: usize) -> impl Strategy<Value = Vec<Vec<(u64, u8, f64)>>> {
    prop::collection::vec(
        prop::collection::vec((0u64..5, 0u8..(1 << v), 0.1f64..3.0), 0..4),
        num_docs,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn semantic_matches_covariance_form(
        (y, counts) in semantic_case(),
        alpha_sigma in 0.5f64..3.0,
        beta_sigma in 0.5f64..3.0,
        k in 0.3f64..3.0,
    ) {
        let v = y.ncols();
        let mut h = Hyperparameters::with_defaults(v);
        h.alpha_sigma = alpha_sigma;
        h.beta_sigma = beta_sigma;
        h.k = k;
        let phi = PhiMatrix::from_counts(ids(counts.len()), &counts, v);
        let ours = semantic_log_likelihood(&y, &phi, &h).unwrap() + semantic_log_normalizer(y.nrows(), v, &h);
        let reference = semantic_reference(&y, &phi_from_counts(&counts, v), &h);
        prop_assert!((ours - reference).abs() <= 1e-9 * reference.abs().max(1.0), "{ours} vs {reference}");
    }

    #[test]
    fn semantic_invariant_under_concept_and_word_permutation(
        (y, counts) in semantic_case(),
        rot in 0usize..4,
    ) {
        let v = y.ncols();
        let h = Hyperparameters::with_defaults(v);
        let base = semantic_log_likelihood(&y, &PhiMatrix::from_counts(ids(counts.len()), &counts, v), &h).unwrap();
        let perm: Vec<usize> = (0..v).map(|i| (i + rot) % v).collect();
        let mut rows: Vec<Vec<u32>> = counts.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect();
        rows.reverse();
        let y2 = DMatrix::from_fn(y.nrows(), v, |k, i| y[(k, perm[i])]);
        let permuted = semantic_log_likelihood(&y2, &PhiMatrix::from_counts(ids(rows.len()), &rows, v), &h).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn phi_columns_sum_to_one_or_zero(docs in docs_strategy(4, 4)) {
        let s = state_from(&docs, 4);
        let phi = compute_phi(&s);
        for i in 0..4 {
            let sum: f64 = phi.values.column(i).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12 || sum == 0.0);
            prop_assert_eq!(phi.column_totals[i] == 0, sum == 0.0);
        }
    }

    #[test]
    fn state_mutations_keep_counts_consistent(
        ops in prop::collection::vec((0usize..4, 0u64..4, 0usize..4, 0u8..16, any::<bool>(), 0.1f64..3.0), 1..60)
    ) {
        let v = 4;
        let mut s = LatentState::new(Hyperparameters::with_defaults(v), 4, v);
        for (d, id, word, mask, flag, pi) in ops {
            if s.doc(d).is_active(id) {
                if flag {
                    s.deactivate_concept(d, id).unwrap();
                } else {
                    let on = !s.doc(d).get(id).unwrap().words.contains(word);
                    s.set_word(d, id, word, on).unwrap();
                    s.set_pi(d, id, pi).unwrap();
                }
            } else {
                let words = WordSet::from_indices(v, (0..v).filter(|i| mask >> i & 1 == 1));
                s.activate_concept(d, id, words, pi).unwrap();
            }
            prop_assert!(s.check_counts().is_empty(), "{:?}", s.check_counts());
            for stats in s.concepts().values() {
                prop_assert!(stats.docs > 0);
                prop_assert!(stats.word_docs.iter().all(|&m| m <= stats.docs));
            }
        }
    }

    #[test]
    fn semantic_cache_tracks_random_flips(
        y in features_strategy(2, 4),
        docs in docs_strategy(3, 4),
        flips in prop::collection::vec((0usize..3, 0usize..4, 0usize..4), 1..20),
    ) {
        let mut s = state_from(&docs, 4);
        let mut cache = SemanticCache::new(&s, &y).unwrap();
        for (d, pick, word) in flips {
            let active: Vec<u64> = s.doc(d).concepts.iter().map(|c| c.id).collect();
            if active.is_empty() {
                continue;
            }
            let id = active[pick % active.len()];
            let on = !s.doc(d).get(id).unwrap().words.contains(word);
            let update = cache.propose_flip(id, word, on).unwrap();
            s.set_word(d, id, word, on).unwrap();
            cache.apply_column(update);
            cache.sync(&s);
            let fresh = semantic_log_likelihood(&y, &compute_phi(&s), &s.hyper).unwrap();
            prop_assert!((cache.value() - fresh).abs() <= 1e-8 * fresh.abs().max(1.0), "{} vs {fresh}", cache.value());
        }
    }

    #[test]
    fn joint_invariant_under_relabelling(docs in docs_strategy(3, 3), shift in 1u64..50) {
        let c = corpus(3, &[&[], &[], &[]]);
        let y = DMatrix::from_row_slice(1, 3, &[0.4, -1.0, 0.7]);
        let data = ModelData::new(&c, SemanticFeatures::new(y, vec![0.3; 3]).unwrap()).unwrap();
        let a = state_from(&docs, 3);
        let relabelled: Vec<Vec<(u64, u8, f64)>> = docs
            .iter()
            .map(|l| l.iter().map(|&(id, m, p)| ((4 - id) * 7 + shift, m, p)).collect())
            .collect();
        let b = state_from(&relabelled, 3);
        let ja = joint_log_prob(&a, &data, LikelihoodMode::Full).unwrap().total;
        let jb = joint_log_prob(&b, &data, LikelihoodMode::Full).unwrap().total;
        prop_assert!((ja - jb).abs() <= 1e-9 * ja.abs().max(1.0));
    }

    #[test]
    fn text_likelihood_is_product_of_token_mixtures(
        sets in prop::collection::vec((1u8..8, 0.1f64..3.0), 1..4),
        counts in prop::collection::vec(0u32..4, 3),
    ) {
        let v = 3;
        let theta = vec![1.0, 0.5, 2.0];
        let concepts: Vec<ActiveConcept> = sets
            .iter()
            .enumerate()
            .map(|(j, &(m, pi))| ActiveConcept::new(j as u64, WordSet::from_indices(v, (0..v).filter(|i| m >> i & 1 == 1)), pi, &theta))
            .collect();
        let c = corpus(v, &[&counts.iter().enumerate().filter(|(_, &n)| n > 0).map(|(w, &n)| (w, n)).collect::<Vec<_>>()]);
        let words = superwords::likelihood::DocWords::from_document(&c.documents[0]);
        let ours = text_log_likelihood(&concepts, &words, &theta);
        let total_pi: f64 = sets.iter().map(|s| s.1).sum();
        let mut expected = 0.0;
        for (w, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
            let p: f64 = sets
                .iter()
                .filter(|s| s.0 >> w & 1 == 1)
                .map(|&(m, pi)| {
                    let s: f64 = (0..v).filter(|i| m >> i & 1 == 1).map(|i| theta[i]).sum();
                    pi / total_pi * theta[w] / s
                })
                .sum();
            expected += n as f64 * p.ln();
        }
        if expected == f64::NEG_INFINITY {
            prop_assert_eq!(ours, f64::NEG_INFINITY);
        } else {
            prop_assert!((ours - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{ours} vs {expected}");
        }
    }

    #[test]
    fn matching_is_optimal(weights in (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), r)
    })) {
        let matching = max_weight_matching(&weights);
        let rows = weights.len();
        let cols = weights[0].len();
        let mut used = vec![false; cols];
        let mut total = 0.0;
        for (r, m) in matching.iter().enumerate() {
            if let Some(c) = *m {
                prop_assert!(!used[c], "column matched twice");
                used[c] = true;
                total += weights[r][c];
            }
        }
        prop_assert_eq!(matching.iter().flatten().count(), rows.min(cols));
        let best = brute_force_best(&weights, 0, &mut vec![false; cols]);
        prop_assert!((total - best).abs() < 1e-9, "{total} vs {best}");
    }

    #[test]
    fn recovery_score_ignores_recovered_order(
        truth in prop::collection::vec(prop::collection::btree_set(0usize..8, 1..4), 1..4),
        found in prop::collection::vec(prop::collection::btree_set(0usize..8, 1..4), 0..5),
    ) {
        let gt = truth_of(truth.iter().map(|s| s.iter().copied().collect()).collect());
        let rec: Vec<RecoveredConcept> = found
            .iter()
            .enumerate()
            .map(|(i, s)| RecoveredConcept { id: i as u64, words: s.iter().copied().collect(), mean_f: vec![] })
            .collect();
        let mut reversed = rec.clone();
        reversed.reverse();
        let a = score_recovery(rec, &gt);
        let b = score_recovery(reversed, &gt);
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert!(a.per_concept.iter().all(|&j| (0.0..=1.0).contains(&j)));
    }

    #[test]
    fn jaccard_symmetric_and_bounded(
        a in prop::collection::vec(0usize..10, 0..6),
        b in prop::collection::vec(0usize..10, 0..6),
    ) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        if !a.is_empty() {
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
    }

    #[test]
    fn cooccurrence_symmetric_bounded_and_doc_mode_below_corpus_mode(
        samples in prop::collection::vec(
            prop::collection::vec(prop::collection::vec((0u64..3, prop::collection::btree_set(0usize..5, 0..4)), 0..3), 1..4),
            1..5,
        )
    ) {
        let trace = SampleTrace {
            records: samples
                .iter()
                .enumerate()
                .map(|(it, docs)| TraceRecord {
                    iter: it + 1,
                    joint_log_prob: 0.0,
                    n_concepts: 0,
                    docs: docs
                        .iter()
                        .enumerate()
                        .map(|(d, cs)| {
                            let mut seen = std::collections::BTreeSet::new();
                            TraceDoc {
                                id: format!("d{d}"),
                                concepts: cs
                                    .iter()
                                    .filter(|(cid, _)| seen.insert(*cid))
                                    .map(|(cid, w)| ActiveRecord { cid: *cid, pi: 1.0, words: w.iter().copied().collect() })
                                    .collect(),
                            }
                        })
                        .collect(),
                })
                .collect(),
        };
        let corpus_mode = cooccurrence_marginals(&trace, 5, 0, CoocMode::Corpus).unwrap();
        let doc_mode = cooccurrence_marginals(&trace, 5, 0, CoocMode::Doc).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                for m in [&corpus_mode, &doc_mode] {
                    prop_assert_eq!(m.get(a, b), m.get(b, a));
                    prop_assert!((0.0..=1.0).contains(&m.get(a, b)));
                }
                if a != b {
                    prop_assert!(doc_mode.get(a, b) <= corpus_mode.get(a, b) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn pair_accuracy_bounded_and_top_score_is_perfect(
        scores in prop::collection::vec(-5.0f64..5.0, 25),
        s in 0usize..5,
        t in 0usize..5,
    ) {
        prop_assume!(s != t);
        let mut m = DMatrix::from_row_slice(5, 5, &scores);
        m = (&m + m.transpose()) / 2.0;
        let acc = pair_accuracy(&m, s, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        m[(s, t)] = 100.0;
        m[(t, s)] = 100.0;
        prop_assert_eq!(pair_accuracy(&m, s, t).unwrap(), 1.0);
    }
}

fn brute_force_best(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
    if row == w.len() {
        return 0.0;
    }
    // leaving a row unmatched is only optimal when columns run out
    let mut best = if w.len() - row > used.iter().filter(|u| !**u).count() {
        brute_force_best(w, row + 1, used)
    } else {
        f64::NEG_INFINITY
    };
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.max(w[row][c] + brute_force_best(w, row + 1, used));
            used[c] = false;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sweeps_preserve_every_invariant(
        counts in prop::collection::vec(prop::collection::vec(0u32..4, 4), 2..5),
        y in features_strategy(2, 4),
        seed in 0u64..1000,
    ) {
        let docs: Vec<Vec<(usize, u32)>> = counts
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &n)| n > 0).map(|(w, &n)| (w, n)).collect())
            .collect();
        let doc_refs: Vec<&[(usize, u32)]> = docs.iter().map(|d| d.as_slice()).collect();
        let c = corpus(4, &doc_refs);
        let data = ModelData::new(&c, SemanticFeatures::new(y, vec![0.2; 4]).unwrap()).unwrap();
        let h = Hyperparameters::with_defaults(4);
        let mut rngs = ChainRng::new(seed, data.num_docs());
        let state = initial_state(&data, &h, InitStrategy::Random { k: 2 }, &mut rngs.chain).unwrap();
        let mut chain = Chain::new(&data, state, LikelihoodMode::Full, PiUpdate::Exact).unwrap();
        for _ in 0..10 {
            chain.gibbs_sweep(&mut rngs).unwrap();
            prop_assert!(validate(chain.state(), &data, LikelihoodMode::Full).is_ok());
            prop_assert!(chain.state().joint_log_prob.is_finite());
        }
    }
}

#[test]
fn matching_prefers_global_optimum_over_greedy() {
    // greedy on the largest entry would pick (0, 0) = 0.9 then (1, 1) = 0.0
    let w = vec![vec![0.9, 0.8], vec![0.7, 0.0]];
    assert_eq!(max_weight_matching(&w), vec![Some(1), Some(0)]);
}
