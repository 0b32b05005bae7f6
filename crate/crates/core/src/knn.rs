//! Exact cosine top-k over a feature bank.

use std::cmp::Ordering;

use crate::bank::{Embedding, FeatureBank};
use crate::error::{Error, Result};

/// Retrieval result, best first. Ties in similarity are ordered by ascending
/// entry index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub entry_indices: Vec<usize>,
    pub similarities: Vec<f64>,
    pub k_requested: usize,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.entry_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entry_indices
            .iter()
            .copied()
            .zip(self.similarities.iter().copied())
    }
}

/// Restrict retrieval to entries whose label at `level` is one of `nodes`.
#[derive(Debug, Clone, Copy)]
pub struct LabelFilter<'a> {
    pub level: usize,
    pub nodes: &'a [usize],
}

/// Dot product of two unit vectors, accumulated in f64.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

// best first: higher similarity, then lower index
#[inline]
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

pub fn top_k(bank: &FeatureBank, q: &Embedding, k: usize) -> Result<NeighborSet> {
    search(bank, q, k, None)
}

pub fn top_k_filtered(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    allowed: LabelFilter<'_>,
) -> Result<NeighborSet> {
    if allowed.nodes.is_empty() || !(1..=3).contains(&allowed.level) {
        return Err(Error::InvalidConfig(
            "label filter must name a level and at least one node".into(),
        ));
    }
    search(bank, q, k, Some(allowed))
}

fn search(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    filter: Option<LabelFilter<'_>>,
) -> Result<NeighborSet> {
    if k < 1 {
        return Err(Error::InvalidK(k));
    }
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if q.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            found: q.dim(),
        });
    }

    let query = q.as_slice();
    let mut scored: Vec<(f64, usize)> = bank
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| match filter {
            Some(f) => f.nodes.contains(&e.labels.at(f.level)),
            None => true,
        })
        .map(|(i, e)| (dot(query, e.vector.as_slice()), i))
        .collect();

    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank);

    let (similarities, entry_indices) = scored.into_iter().unzip();
    Ok(NeighborSet {
        entry_indices,
        similarities,
        k_requested: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::l2_normalize;
    use crate::records::Record;
    use crate::taxonomy::Taxonomy;

    fn bank_of(tax: &Taxonomy, items: &[(&str, &[f32])]) -> FeatureBank {
        let recs = items.iter().enumerate().map(|(i, (leaf, v))| Record {
            id: format!("e{i}"),
            label: Some(leaf.to_string()),
            vector: v.to_vec(),
        });
        FeatureBank::build(recs, tax).unwrap()
    }

    #[test]
    fn cosine_cases() {
        let u = l2_normalize(&[0.3, -1.2, 2.0]).unwrap();
        let s = cosine_similarity(u.as_slice(), u.as_slice()).unwrap();
        assert!((s - 1.0).abs() <= 1e-6);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn nearest_of_two() {
        let tax = Taxonomy::default();
        let bank = bank_of(&tax, &[("BL", &[1.0, 0.0]), ("LY", &[0.0, 1.0])]);
        let q = l2_normalize(&[1.0, 0.0]).unwrap();
        let n = top_k(&bank, &q, 1).unwrap();
        assert_eq!(n.entry_indices, [0]);
        assert_eq!(n.similarities, [1.0]);
    }

    #[test]
    fn k_at_least_bank_size_returns_everything_sorted() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("BL", &[0.0, 1.0]),
                ("LY", &[1.0, 0.0]),
                ("MO", &[1.0, 1.0]),
            ],
        );
        let q = l2_normalize(&[1.0, 0.1]).unwrap();
        for k in [3, 10] {
            let n = top_k(&bank, &q, k).unwrap();
            assert_eq!(n.entry_indices, [1, 2, 0]);
            assert_eq!(n.k_requested, k);
        }
    }

    #[test]
    fn ties_break_by_index() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("BL", &[0.0, 1.0]),
                ("LY", &[1.0, 0.0]),
                ("MO", &[1.0, 0.0]),
                ("EO", &[1.0, 0.0]),
            ],
        );
        let q = l2_normalize(&[1.0, 0.0]).unwrap();
        let n = top_k(&bank, &q, 2).unwrap();
        assert_eq!(n.entry_indices, [1, 2]);
    }

    #[test]
    fn filtered_retrieval() {
        let tax = Taxonomy::default();
        let bank = bank_of(
            &tax,
            &[
                ("SNE", &[1.0, 0.0]),
                ("LY", &[0.9, 0.1]),
                ("MO", &[0.0, 1.0]),
            ],
        );
        let q = l2_normalize(&[1.0, 0.0]).unwrap();
        let myeloid = tax.find(1, "Myeloid").unwrap();
        let n = top_k_filtered(
            &bank,
            &q,
            5,
            LabelFilter {
                level: 1,
                nodes: &[myeloid],
            },
        )
        .unwrap();
        assert_eq!(n.entry_indices, [0, 2]);

        let all = [0, 1, 2];
        let n = top_k_filtered(
            &bank,
            &q,
            2,
            LabelFilter {
                level: 1,
                nodes: &all,
            },
        )
        .unwrap();
        assert_eq!(n, top_k(&bank, &q, 2).unwrap());

        let blast = tax.find(1, "Blast").unwrap();
        let n = top_k_filtered(
            &bank,
            &q,
            3,
            LabelFilter {
                level: 1,
                nodes: &[blast],
            },
        )
        .unwrap();
        assert!(n.is_empty());
    }

    #[test]
    fn errors() {
        let tax = Taxonomy::default();
        let bank = bank_of(&tax, &[("BL", &[1.0, 0.0])]);
        let q = l2_normalize(&[1.0, 0.0]).unwrap();
        assert!(matches!(top_k(&bank, &q, 0), Err(Error::InvalidK(0))));
        let empty = FeatureBank::empty(2, &tax);
        assert!(matches!(top_k(&empty, &q, 1), Err(Error::EmptyBank)));
        let q3 = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            top_k(&bank, &q3, 1),
            Err(Error::DimMismatch { .. })
        ));
    }
}
