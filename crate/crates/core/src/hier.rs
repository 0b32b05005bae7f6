//! Coarse-to-fine kNN voting.
//!
//! The lineage is the plain majority over the k neighbors. Each finer level
//! votes only over neighbors whose label is a child of the node chosen one
//! level up. If no retrieved neighbor qualifies, the bank is re-queried with
//! retrieval restricted to those children and the flag for that level is set.

use std::collections::BTreeMap;

use crate::bank::{Embedding, FeatureBank};
use crate::error::{Error, Result};
use crate::knn::{top_k, top_k_filtered, LabelFilter, NeighborSet};
use crate::taxonomy::Taxonomy;

/// Votes per node at one level.
pub type Tally = BTreeMap<usize, usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct HierPrediction {
    pub y1: usize,
    pub y2: usize,
    pub y3: usize,
    /// Index 0 is level 1.
    pub tallies: [Tally; 3],
    pub fallback_used: [bool; 3],
    pub k: usize,
}

impl HierPrediction {
    /// `(top count - runner-up count) / k` of the leaf vote.
    pub fn leaf_margin(&self) -> f64 {
        margin(&self.tallies[2], self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatPrediction {
    pub leaf: usize,
    pub tally: Tally,
    pub k: usize,
}

impl FlatPrediction {
    pub fn leaf_margin(&self) -> f64 {
        margin(&self.tally, self.k)
    }
}

fn margin(tally: &Tally, k: usize) -> f64 {
    let mut counts: Vec<usize> = tally.values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let top = counts.first().copied().unwrap_or(0);
    let second = counts.get(1).copied().unwrap_or(0);
    (top - second) as f64 / k as f64
}

/// Majority label. Count ties go to the larger similarity sum, then to the
/// lower node index.
pub fn vote_mode(labels: &[usize], sims: &[f64]) -> Result<usize> {
    Ok(vote(labels, sims)?.0)
}

fn vote(labels: &[usize], sims: &[f64]) -> Result<(usize, Tally)> {
    if labels.is_empty() {
        return Err(Error::EmptyVote);
    }
    if labels.len() != sims.len() {
        return Err(Error::LengthMismatch(labels.len(), sims.len()));
    }
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&l, &s) in labels.iter().zip(sims) {
        let slot = acc.entry(l).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += s;
    }
    // BTreeMap iterates by ascending node, so strict comparisons keep the
    // lower index on a full tie.
    let mut best: Option<(usize, usize, f64)> = None;
    for (&node, &(count, sum)) in &acc {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum > bs),
        };
        if better {
            best = Some((node, count, sum));
        }
    }
    let tally = acc.into_iter().map(|(n, (c, _))| (n, c)).collect();
    Ok((best.expect("nonempty").0, tally))
}

pub fn predict_hierarchical(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    tax: &Taxonomy,
) -> Result<HierPrediction> {
    bank.check_taxonomy(tax)?;
    let neighbors = top_k(bank, q, k)?;
    predict_with_neighbors(bank, q, k, tax, &neighbors)
}

/// The voting procedure applied to an already retrieved neighbor set.
/// `q` is only used when a level has to fall back to restricted retrieval.
pub fn predict_with_neighbors(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    tax: &Taxonomy,
    neighbors: &NeighborSet,
) -> Result<HierPrediction> {
    bank.check_taxonomy(tax)?;
    let entries = bank.entries();

    let (labels, sims): (Vec<usize>, Vec<f64>) = neighbors
        .iter()
        .map(|(i, s)| (entries[i].labels.l1, s))
        .unzip();
    let (y1, t1) = vote(&labels, &sims)?;

    let mut chosen = [y1, 0, 0];
    let mut tallies = [t1, Tally::new(), Tally::new()];
    let mut fallback_used = [false; 3];
    for level in 2..=3 {
        let v = constrained_vote(bank, q, k, tax, level, chosen[level - 2], neighbors)?;
        chosen[level - 1] = v.node;
        tallies[level - 1] = v.tally;
        fallback_used[level - 1] = v.fallback_used;
    }

    Ok(HierPrediction {
        y1: chosen[0],
        y2: chosen[1],
        y3: chosen[2],
        tallies,
        fallback_used,
        k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelVote {
    pub node: usize,
    pub tally: Tally,
    pub fallback_used: bool,
}

/// Vote at `level` (2 or 3) among the neighbors whose label there is a child
/// of `parent`. With no such neighbor, retrieval is repeated over the bank
/// restricted to those children.
pub fn constrained_vote(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    tax: &Taxonomy,
    level: usize,
    parent: usize,
    neighbors: &NeighborSet,
) -> Result<LevelVote> {
    let entries = bank.entries();
    let allowed = tax.children(level, parent)?;
    let (mut labels, mut sims): (Vec<usize>, Vec<f64>) = neighbors
        .iter()
        .map(|(i, s)| (entries[i].labels.at(level), s))
        .filter(|(l, _)| allowed.contains(l))
        .unzip();

    let fallback_used = labels.is_empty();
    if fallback_used {
        let filter = LabelFilter {
            level,
            nodes: allowed,
        };
        let refetch = top_k_filtered(bank, q, k, filter)?;
        if refetch.is_empty() {
            return Err(Error::NoSupport {
                level,
                parent: tax.name(level - 1, parent)?.to_string(),
            });
        }
        (labels, sims) = refetch
            .iter()
            .map(|(i, s)| (entries[i].labels.at(level), s))
            .unzip();
    }

    let (node, tally) = vote(&labels, &sims)?;
    Ok(LevelVote {
        node,
        tally,
        fallback_used,
    })
}

/// Leaf vote over the k neighbors with no level constraints.
pub fn predict_flat(bank: &FeatureBank, q: &Embedding, k: usize) -> Result<FlatPrediction> {
    let neighbors = top_k(bank, q, k)?;
    let (labels, sims): (Vec<usize>, Vec<f64>) = neighbors
        .iter()
        .map(|(i, s)| (bank.entries()[i].labels.l3, s))
        .unzip();
    let (leaf, tally) = vote(&labels, &sims)?;
    Ok(FlatPrediction { leaf, tally, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::l2_normalize;
    use crate::records::Record;

    const A: usize = 4;
    const B: usize = 9;

    fn bank_of(tax: &Taxonomy, items: &[(&str, Vec<f32>)]) -> FeatureBank {
        let recs = items.iter().enumerate().map(|(i, (leaf, v))| Record {
            id: format!("e{i}"),
            label: Some(leaf.to_string()),
            vector: v.clone(),
        });
        FeatureBank::build(recs, tax).unwrap()
    }

    // unit vector near e0, tilted by `t` toward e1
    fn near(t: f32) -> Vec<f32> {
        vec![1.0, t, 0.0, 0.0]
    }

    #[test]
    fn vote_strict_majority() {
        assert_eq!(vote_mode(&[A, A, B], &[0.1, 0.1, 0.9]).unwrap(), A);
    }

    #[test]
    fn vote_tie_by_similarity_sum() {
        assert_eq!(vote_mode(&[B, A], &[0.9, 0.8]).unwrap(), B);
        assert_eq!(vote_mode(&[A, B], &[0.9, 0.8]).unwrap(), A);
    }

    #[test]
    fn vote_tie_by_index() {
        assert_eq!(vote_mode(&[B, A], &[0.5, 0.5]).unwrap(), A.min(B));
    }

    #[test]
    fn vote_empty() {
        assert!(matches!(vote_mode(&[], &[]), Err(Error::EmptyVote)));
    }

    #[test]
    fn unanimous_neighborhood() {
        let tax = Taxonomy::default();
        let items: Vec<_> = (0..5).map(|i| ("SNE", near(i as f32 * 0.01))).collect();
        let bank = bank_of(&tax, &items);
        let q = l2_normalize(&near(0.0)).unwrap();
        let p = predict_hierarchical(&bank, &q, 5, &tax).unwrap();
        let sne = tax.leaf_index("SNE").unwrap();
        assert_eq!(
            (p.y1, p.y2, p.y3),
            (
                tax.ancestor(sne, 1).unwrap(),
                tax.ancestor(sne, 2).unwrap(),
                sne
            )
        );
        assert_eq!(p.fallback_used, [false; 3]);
        assert_eq!(predict_flat(&bank, &q, 5).unwrap().leaf, sne);
    }

    #[test]
    fn lineage_majority_restricts_finer_votes() {
        let tax = Taxonomy::default();
        // two LY neighbors are the closest, three SNE slightly further
        let bank = bank_of(
            &tax,
            &[
                ("LY", near(0.0)),
                ("LY", near(0.01)),
                ("SNE", near(0.02)),
                ("SNE", near(0.03)),
                ("SNE", near(0.04)),
                ("BL", vec![0.0, 0.0, 1.0, 0.0]),
            ],
        );
        let q = l2_normalize(&near(0.0)).unwrap();
        let p = predict_hierarchical(&bank, &q, 5, &tax).unwrap();
        assert_eq!(tax.name(1, p.y1).unwrap(), "Myeloid");
        assert_eq!(tax.leaf_name(p.y3).unwrap(), "SNE");
        assert_eq!(p.tallies[0].values().sum::<usize>(), 5);
        assert_eq!(p.tallies[2].values().sum::<usize>(), 3);
    }

    #[test]
    fn blast_majority_with_distant_blast_entries() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("BL", near(0.0)),
                ("PMY", near(0.01)),
                ("BL", near(0.02)),
                ("BL", vec![0.0, 0.0, 1.0, 0.0]),
                ("BL", vec![0.0, 0.0, 0.0, 1.0]),
            ],
        );
        let q = l2_normalize(&near(0.0)).unwrap();
        let p = predict_hierarchical(&bank, &q, 3, &tax).unwrap();
        assert_eq!(tax.name(1, p.y1).unwrap(), "Blast");
        assert_eq!(tax.name(2, p.y2).unwrap(), "blast");
        assert_eq!(tax.leaf_name(p.y3).unwrap(), "BL");
        assert_eq!(p.fallback_used, [false; 3]);
    }

    #[test]
    fn flat_and_hierarchical_disagree_on_fragmented_lineage() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("BL", near(0.0)),
                ("BL", near(0.01)),
                ("BL", near(0.02)),
                ("LY", near(0.03)),
                ("VLY", near(0.04)),
                ("PLY", near(0.05)),
                ("PC", near(0.06)),
            ],
        );
        let q = l2_normalize(&near(0.0)).unwrap();
        assert_eq!(
            tax.leaf_name(predict_flat(&bank, &q, 7).unwrap().leaf)
                .unwrap(),
            "BL"
        );
        let p = predict_hierarchical(&bank, &q, 7, &tax).unwrap();
        assert_eq!(tax.name(1, p.y1).unwrap(), "Lymphoid");
        // mature (LY, VLY) vs activated (PLY, PC) tie on count; closer pair wins
        assert_eq!(tax.name(2, p.y2).unwrap(), "mature_lymphoid");
        assert_eq!(tax.leaf_name(p.y3).unwrap(), "LY");
    }

    #[test]
    fn k_one_is_nearest_leaf() {
        let tax = Taxonomy::default();
        let bank = bank_of(&tax, &[("MO", near(0.5)), ("EO", near(0.0))]);
        let q = l2_normalize(&near(0.0)).unwrap();
        assert_eq!(
            tax.leaf_name(predict_flat(&bank, &q, 1).unwrap().leaf)
                .unwrap(),
            "EO"
        );
    }

    #[test]
    fn empty_constrained_subset_falls_back_to_restricted_retrieval() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("SNE", near(0.0)),
                ("MO", near(0.01)),
                ("BL", vec![0.0, 1.0, 0.0, 0.0]),
                ("BL", vec![0.0, 0.0, 1.0, 0.0]),
            ],
        );
        let q = l2_normalize(&near(0.0)).unwrap();
        let neighbors = top_k(&bank, &q, 2).unwrap();
        assert_eq!(neighbors.entry_indices, [0, 1]);

        let blast = tax.find(1, "Blast").unwrap();
        let v = constrained_vote(&bank, &q, 2, &tax, 2, blast, &neighbors).unwrap();
        assert!(v.fallback_used);
        assert_eq!(tax.name(2, v.node).unwrap(), "blast");
        assert_eq!(v.tally.values().sum::<usize>(), 2);

        let myeloid = tax.find(1, "Myeloid").unwrap();
        let v = constrained_vote(&bank, &q, 2, &tax, 2, myeloid, &neighbors).unwrap();
        assert!(!v.fallback_used);
    }

    #[test]
    fn no_support_under_parent() {
        let tax = Taxonomy::default();
        let bank = bank_of(&tax, &[("SNE", near(0.0))]);
        let q = l2_normalize(&near(0.0)).unwrap();
        let neighbors = top_k(&bank, &q, 1).unwrap();
        let lymphoid = tax.find(1, "Lymphoid").unwrap();
        let err = constrained_vote(&bank, &q, 1, &tax, 2, lymphoid, &neighbors).unwrap_err();
        assert!(matches!(err, Error::NoSupport { level: 2, .. }));
    }

    #[test]
    fn bank_from_other_taxonomy_rejected() {
        let tax = Taxonomy::default();
        let other = Taxonomy::parse("[level1]\nr\n[level2]\nm -> r\n[level3]\nBL -> m\n").unwrap();
        let bank = bank_of(&other, &[("BL", near(0.0))]);
        let q = l2_normalize(&near(0.0)).unwrap();
        assert!(matches!(
            predict_hierarchical(&bank, &q, 1, &tax),
            Err(Error::TaxonomyMismatch)
        ));
    }

    #[test]
    fn deterministic() {
        let tax = Taxonomy::default();
        let items: Vec<_> = ["SNE", "LY", "BL", "MO", "EO", "PC"]
            .iter()
            .enumerate()
            .map(|(i, l)| (*l, near(i as f32 * 0.1)))
            .collect();
        let bank = bank_of(&tax, &items);
        let q = l2_normalize(&near(0.15)).unwrap();
        let a = predict_hierarchical(&bank, &q, 4, &tax).unwrap();
        let b = predict_hierarchical(&bank, &q, 4, &tax).unwrap();
        assert_eq!(a, b);
    }
}
