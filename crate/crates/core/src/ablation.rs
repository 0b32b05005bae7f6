//! Hierarchy on/off × ensemble size grid on synthetic data.
//!
//! One synthetic pool is generated per run and the held-out queries go through
//! a domain shift. Each member stands for a separately trained model: it keeps
//! a seeded per-leaf subsample of the pool (its split) and sees every vector,
//! bank and query alike, through its own embedding noise. The ensemble of the
//! first `m` members is scored for m = 1..=members.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bank::{l2_normalize, BankEntry, Embedding, FeatureBank};
use crate::ensemble::{combine, member_vote, MemberVote, TiePolicy, VoteMode};
use crate::error::{Error, Result};
use crate::metrics::macro_f1_of;
use crate::synth::{apply_shift, generate, ShiftSpec, SynthConfig};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub shift: ShiftSpec,
    pub shift_seed: u64,
    pub members: usize,
    pub k: usize,
    /// Share of each leaf's pool entries that a member bank keeps.
    pub member_fraction: f64,
    /// Per-coordinate sigma of the noise a member adds before re-normalizing.
    pub member_noise: f64,
    pub tie_policy: TiePolicy,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            shift: ShiftSpec::moderate(),
            shift_seed: 0,
            members: 7,
            k: 7,
            member_fraction: 0.8,
            member_noise: 0.05,
            tie_policy: TiePolicy::SimilarityMargin,
        }
    }
}

impl AblationConfig {
    /// Default settings with every seed derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.synth.seed = seed;
        cfg.shift_seed = seed.wrapping_add(0x5eed);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub members: usize,
    pub flat_mf1: f64,
    pub hier_mf1: f64,
}

/// `members` per-leaf subsamples of `pool`, each keeping the pool order.
pub fn member_banks(
    pool: &FeatureBank,
    members: usize,
    fraction: f64,
    seed: u64,
    tax: &Taxonomy,
) -> Result<Vec<FeatureBank>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("member fraction {fraction}")));
    }
    let mut by_leaf: Vec<Vec<usize>> = vec![Vec::new(); tax.leaf_count()];
    for (i, e) in pool.entries().iter().enumerate() {
        by_leaf[e.labels.l3].push(i);
    }
    (0..members)
        .map(|m| {
            let mut rng = member_rng(seed, m);
            let mut keep = Vec::new();
            for idx in &by_leaf {
                if idx.is_empty() {
                    continue;
                }
                let take = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                keep.extend_from_slice(&shuffled[..take]);
            }
            keep.sort_unstable();
            let entries = keep.iter().map(|&i| pool.entries()[i].clone()).collect();
            FeatureBank::from_entries(entries, tax)
        })
        .collect()
}

fn scores_by_size(
    votes: &[Vec<MemberVote>],
    truth: &[usize],
    policy: TiePolicy,
    classes: usize,
) -> Result<Vec<f64>> {
    let members = votes.first().map_or(0, Vec::len);
    (1..=members)
        .map(|m| {
            let preds = votes
                .iter()
                .map(|v| Ok(combine(v[..m].to_vec(), policy)?.leaf))
                .collect::<Result<Vec<_>>>()?;
            macro_f1_of(truth, &preds, classes)
        })
        .collect()
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (member as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn perturb(v: &[f32], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Result<Embedding> {
    let raw: Vec<f32> = v
        .iter()
        .map(|&x| (x as f64 + noise.sample(rng)) as f32)
        .collect();
    l2_normalize(&raw)
}

/// A member's own embedding of a bank: every vector gets independent noise.
pub fn embed_bank(
    bank: &FeatureBank,
    sigma: f64,
    seed: u64,
    tax: &Taxonomy,
) -> Result<FeatureBank> {
    if sigma == 0.0 {
        return Ok(bank.clone());
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = bank
        .entries()
        .iter()
        .map(|e| {
            Ok(BankEntry {
                id: e.id.clone(),
                labels: e.labels,
                vector: perturb(e.vector.as_slice(), &noise, &mut rng)?,
            })
        })
        .collect::<Result<_>>()?;
    FeatureBank::from_entries(entries, tax)
}

pub fn run_ablation(cfg: &AblationConfig, tax: &Taxonomy) -> Result<Vec<AblationRow>> {
    if cfg.members == 0 {
        return Err(Error::InvalidConfig("need at least one member".into()));
    }
    if !(cfg.member_noise >= 0.0 && cfg.member_noise.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "member noise {}",
            cfg.member_noise
        )));
    }
    let data = generate(&cfg.synth, tax)?;
    let shifted = apply_shift(&data.queries, &cfg.shift, cfg.shift_seed)?;
    let truth = shifted
        .iter()
        .map(|r| tax.leaf_index(r.label.as_deref().unwrap_or_default()))
        .collect::<Result<Vec<_>>>()?;
    let splits = member_banks(
        &data.bank,
        cfg.members,
        cfg.member_fraction,
        cfg.synth.seed.wrapping_add(1),
        tax,
    )?;

    let noise =
        Normal::new(0.0, cfg.member_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut banks = Vec::with_capacity(cfg.members);
    let mut queries: Vec<Vec<Embedding>> = Vec::with_capacity(cfg.members);
    for (m, split) in splits.iter().enumerate() {
        let seed = cfg.synth.seed.wrapping_add(2);
        banks.push(embed_bank(
            split,
            cfg.member_noise,
            member_rng(seed, m).random(),
            tax,
        )?);
        let mut rng = member_rng(seed.wrapping_add(1), m);
        queries.push(
            shifted
                .iter()
                .map(|r| {
                    if cfg.member_noise == 0.0 {
                        l2_normalize(&r.vector)
                    } else {
                        perturb(&r.vector, &noise, &mut rng)
                    }
                })
                .collect::<Result<_>>()?,
        );
    }

    let mut per_mode = Vec::with_capacity(2);
    for mode in [VoteMode::Flat, VoteMode::Hierarchical] {
        let votes: Vec<Vec<MemberVote>> = (0..truth.len())
            .into_par_iter()
            .map(|qi| {
                banks
                    .iter()
                    .zip(&queries)
                    .map(|(bank, qs)| member_vote(bank, &qs[qi], cfg.k, tax, mode))
                    .collect()
            })
            .collect::<Result<_>>()?;
        per_mode.push(scores_by_size(
            &votes,
            &truth,
            cfg.tie_policy,
            tax.leaf_count(),
        )?);
    }
    Ok((0..cfg.members)
        .map(|i| AblationRow {
            members: i + 1,
            flat_mf1: per_mode[0][i],
            hier_mf1: per_mode[1][i],
        })
        .collect())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("members,without_hierarchy_mf1,with_hierarchy_mf1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.members, r.flat_mf1, r.hier_mf1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn members_are_subsets_in_pool_order() {
        let tax = Taxonomy::default();
        let pool = generate(&SynthConfig::default(), &tax).unwrap().bank;
        let banks = member_banks(&pool, 3, 0.5, 7, &tax).unwrap();
        assert_eq!(banks.len(), 3);
        for b in &banks {
            assert!(b.len() < pool.len());
            let pos: Vec<usize> = b
                .entries()
                .iter()
                .map(|e| pool.entries().iter().position(|p| p.id == e.id).unwrap())
                .collect();
            assert!(pos.windows(2).all(|w| w[0] < w[1]));
            let h = b.leaf_histogram(13);
            assert!(h.iter().all(|&n| n >= 1));
        }
        assert_ne!(banks[0], banks[1]);
    }

    #[test]
    fn grid_shape_and_csv() {
        let tax = Taxonomy::default();
        let cfg = AblationConfig {
            members: 3,
            ..AblationConfig::with_seed(1)
        };
        let rows = run_ablation(&cfg, &tax).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.flat_mf1)));
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("members,without_hierarchy_mf1,with_hierarchy_mf1\n1,"));
    }
}
