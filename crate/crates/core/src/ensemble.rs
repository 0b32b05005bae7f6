//! Majority vote over several feature banks.
//!
//! A member is one bank (one data split or model export) queried with the
//! same k. Each member yields a leaf and a margin, and the ensemble takes the
//! most frequent leaf.

use std::str::FromStr;

use rayon::prelude::*;

use crate::bank::{Embedding, FeatureBank};
use crate::error::{Error, Result};
use crate::hier::{predict_flat, predict_hierarchical};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Larger summed member margin, then the leaf backed by the lower member index.
    #[default]
    SimilarityMargin,
    /// The leaf backed by the lowest member index.
    FirstMember,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity-margin" => Ok(Self::SimilarityMargin),
            "first-member" => Ok(Self::FirstMember),
            other => Err(Error::InvalidConfig(format!("unknown tie policy {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteMode {
    #[default]
    Hierarchical,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberVote {
    pub leaf: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub leaf: usize,
    /// Members that voted for `leaf`.
    pub votes: usize,
    pub members: Vec<MemberVote>,
}

pub struct EnsembleConfig<'a> {
    pub members: &'a [FeatureBank],
    pub k: usize,
    pub tie_policy: TiePolicy,
    pub mode: VoteMode,
}

pub fn ensemble_vote(preds: &[usize], margins: &[f64], policy: TiePolicy) -> Result<usize> {
    if preds.is_empty() {
        return Err(Error::EmptyVote);
    }
    if preds.len() != margins.len() {
        return Err(Error::LengthMismatch(preds.len(), margins.len()));
    }

    // (leaf, count, margin sum, first member index), in first-seen order
    let mut acc: Vec<(usize, usize, f64, usize)> = Vec::new();
    for (member, (&leaf, &m)) in preds.iter().zip(margins).enumerate() {
        match acc.iter_mut().find(|a| a.0 == leaf) {
            Some(a) => {
                a.1 += 1;
                a.2 += m;
            }
            None => acc.push((leaf, 1, m, member)),
        }
    }

    // first-seen order means earlier entries win on a full tie
    let mut best = acc[0];
    for &cand in &acc[1..] {
        let better = match cand.1.cmp(&best.1) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => match policy {
                TiePolicy::SimilarityMargin => cand.2 > best.2,
                TiePolicy::FirstMember => false,
            },
        };
        if better {
            best = cand;
        }
    }
    Ok(best.0)
}

/// One member's vote for one query.
pub fn member_vote(
    bank: &FeatureBank,
    q: &Embedding,
    k: usize,
    tax: &Taxonomy,
    mode: VoteMode,
) -> Result<MemberVote> {
    Ok(match mode {
        VoteMode::Hierarchical => {
            let p = predict_hierarchical(bank, q, k, tax)?;
            MemberVote {
                leaf: p.y3,
                margin: p.leaf_margin(),
            }
        }
        VoteMode::Flat => {
            let p = predict_flat(bank, q, k)?;
            MemberVote {
                leaf: p.leaf,
                margin: p.leaf_margin(),
            }
        }
    })
}

pub fn combine(members: Vec<MemberVote>, policy: TiePolicy) -> Result<EnsemblePrediction> {
    let leaves: Vec<usize> = members.iter().map(|m| m.leaf).collect();
    let margins: Vec<f64> = members.iter().map(|m| m.margin).collect();
    let leaf = ensemble_vote(&leaves, &margins, policy)?;
    let votes = leaves.iter().filter(|&&l| l == leaf).count();
    Ok(EnsemblePrediction {
        leaf,
        votes,
        members,
    })
}

fn check_members(cfg: &EnsembleConfig<'_>, tax: &Taxonomy) -> Result<()> {
    let first = cfg.members.first().ok_or(Error::EmptyVote)?;
    for bank in cfg.members {
        bank.check_taxonomy(tax)?;
        if bank.is_empty() {
            return Err(Error::EmptyBank);
        }
        if bank.dim() != first.dim() {
            return Err(Error::DimMismatch {
                expected: first.dim(),
                found: bank.dim(),
            });
        }
    }
    Ok(())
}

/// Every member's vote for every query: `out[query][member]`.
pub fn member_votes(
    cfg: &EnsembleConfig<'_>,
    queries: &[Embedding],
    tax: &Taxonomy,
) -> Result<Vec<Vec<MemberVote>>> {
    let shared = vec![queries; cfg.members.len()];
    member_votes_split(cfg, &shared, tax)
}

/// Like [`member_votes`], but member `m` embeds the queries as
/// `queries[m]`. All query lists must have the same length.
pub fn member_votes_split(
    cfg: &EnsembleConfig<'_>,
    queries: &[&[Embedding]],
    tax: &Taxonomy,
) -> Result<Vec<Vec<MemberVote>>> {
    check_members(cfg, tax)?;
    if queries.len() != cfg.members.len() {
        return Err(Error::LengthMismatch(cfg.members.len(), queries.len()));
    }
    let n = queries[0].len();
    if let Some(q) = queries.iter().find(|q| q.len() != n) {
        return Err(Error::LengthMismatch(n, q.len()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            cfg.members
                .iter()
                .zip(queries)
                .map(|(bank, qs)| member_vote(bank, &qs[i], cfg.k, tax, cfg.mode))
                .collect()
        })
        .collect()
}

pub fn run_ensemble(
    cfg: &EnsembleConfig<'_>,
    queries: &[Embedding],
    tax: &Taxonomy,
) -> Result<Vec<EnsemblePrediction>> {
    member_votes(cfg, queries, tax)?
        .into_iter()
        .map(|votes| combine(votes, cfg.tie_policy))
        .collect()
}
