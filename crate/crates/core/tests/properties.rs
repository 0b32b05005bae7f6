use hierknn::bank::{l2_normalize, BankEntry, FeatureBank};
use hierknn::ensemble::{ensemble_vote, TiePolicy};
use hierknn::knn::top_k;
use hierknn::metrics::macro_f1_of;
use hierknn::toy_train::softmax_temp;
use hierknn::Taxonomy;
use proptest::prelude::*;

/// Taxonomy text with `shape[a][b]` leaves under mid node b of lineage a.
fn taxonomy_text(shape: &[Vec<usize>]) -> String {
    let leaves: usize = shape.iter().flatten().sum();
    let mut l1 = String::new();
    let mut l2 = String::new();
    let mut l3 = String::new();
    for (a, mids) in shape.iter().enumerate() {
        l1.push_str(&format!("L{a}\n"));
        for (b, &n) in mids.iter().enumerate() {
            l2.push_str(&format!("M{a}_{b} -> L{a}\n"));
            for c in 0..n {
                l3.push_str(&format!("X{a}_{b}_{c} -> M{a}_{b}\n"));
            }
        }
    }
    format!("leaves = {leaves}\n[level1]\n{l1}[level2]\n{l2}[level3]\n{l3}")
}

fn shape() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..4)
}

fn bank_from(vectors: &[Vec<f32>], tax: &Taxonomy) -> FeatureBank {
    let entries = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| BankEntry {
            id: format!("e{i}"),
            labels: tax.path(i % tax.leaf_count()).unwrap(),
            vector: l2_normalize(v).unwrap(),
        })
        .collect();
    FeatureBank::from_entries(entries, tax).unwrap()
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(
        prop::collection::vec(-4i8..=4, dim).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0)),
        1..60,
    )
    .prop_map(|vs| {
        vs.into_iter()
            .map(|v| v.into_iter().map(f32::from).collect())
            .collect()
    })
}

proptest! {
    #[test]
    fn children_partition_each_level(s in shape()) {
        let tax = Taxonomy::parse(&taxonomy_text(&s)).unwrap();
        for level in 2..=3 {
            let mut seen = vec![0usize; tax.level_size(level).unwrap()];
            for parent in 0..tax.level_size(level - 1).unwrap() {
                for &c in tax.children(level, parent).unwrap() {
                    seen[c] += 1;
                    prop_assert_eq!(tax.parent_of(level, c).unwrap(), parent);
                }
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
        }
        for leaf in 0..tax.leaf_count() {
            let p = tax.path(leaf).unwrap();
            prop_assert!(tax.validate_path(p).is_ok());
            prop_assert_eq!(tax.ancestor(leaf, 1).unwrap(), p.l1);
        }
        let again = Taxonomy::parse(&taxonomy_text(&s)).unwrap();
        prop_assert_eq!(tax.digest(), again.digest());
    }

    // Integer-valued coordinates make exact similarity ties common.
    #[test]
    fn top_k_is_ordered_and_maximal(vs in vectors(3), q in prop::collection::vec(-4i8..=4, 3), k in 1usize..12) {
        prop_assume!(q.iter().any(|&x| x != 0));
        let tax = Taxonomy::default();
        let bank = bank_from(&vs, &tax);
        let q = l2_normalize(&q.iter().map(|&x| f32::from(x)).collect::<Vec<_>>()).unwrap();
        let got = top_k(&bank, &q, k).unwrap();
        prop_assert_eq!(got.len(), k.min(vs.len()));
        for w in got.entry_indices.windows(2).zip(got.similarities.windows(2)) {
            let ((i, j), (a, b)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
            prop_assert!(a > b || (a == b && i < j));
        }
        let last = *got.similarities.last().unwrap();
        let last_idx = *got.entry_indices.last().unwrap();
        for (i, e) in bank.entries().iter().enumerate() {
            if got.entry_indices.contains(&i) {
                continue;
            }
            let s = hierknn::cosine_similarity(e.vector.as_slice(), q.as_slice()).unwrap();
            prop_assert!(s < last || (s == last && i > last_idx));
        }
    }

    #[test]
    fn macro_f1_is_invariant_to_class_relabeling(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let base = macro_f1_of(&truth, &preds, 6).unwrap();
        let t2: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
        prop_assert!((macro_f1_of(&t2, &p2, 6).unwrap() - base).abs() < 1e-12);
        let mut rev_t = truth.clone();
        let mut rev_p = preds.clone();
        rev_t.reverse();
        rev_p.reverse();
        prop_assert!((macro_f1_of(&rev_t, &rev_p, 6).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn ensemble_picks_a_plurality_leaf(
        votes in prop::collection::vec((0usize..5, 0.0f64..1.0), 1..10),
        first_member in any::<bool>(),
    ) {
        let policy = if first_member { TiePolicy::FirstMember } else { TiePolicy::SimilarityMargin };
        let leaves: Vec<usize> = votes.iter().map(|v| v.0).collect();
        let margins: Vec<f64> = votes.iter().map(|v| v.1).collect();
        let winner = ensemble_vote(&leaves, &margins, policy).unwrap();
        let count = |l: usize| leaves.iter().filter(|&&x| x == l).count();
        let top = (0..5).map(count).max().unwrap();
        prop_assert_eq!(count(winner), top);

        // A strict plurality does not depend on member order.
        if (0..5).filter(|&l| count(l) == top).count() == 1 {
            let mut rl = leaves.clone();
            let mut rm = margins.clone();
            rl.reverse();
            rm.reverse();
            prop_assert_eq!(ensemble_vote(&rl, &rm, policy).unwrap(), winner);
        }
    }

    #[test]
    fn bank_round_trip(vs in vectors(5)) {
        let tax = Taxonomy::default();
        let bank = bank_from(&vs, &tax);
        let bytes = bank.to_bytes();
        let back = FeatureBank::load(bytes.as_slice(), &tax).unwrap();
        prop_assert_eq!(&back, &bank);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..10), tau in 0.01f64..2.0) {
        let p = softmax_temp(&logits, tau).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
