//! Synthetic embeddings whose cluster geometry follows the taxonomy.
//!
//! Lineage centers sit roughly `lineage_separation` apart. Each level-2 node
//! is offset from its lineage by about `leaf_separation`, and each leaf is
//! offset from its level-2 node by half that, so siblings are closer than
//! cousins and cousins closer than leaves of another lineage. Samples are the
//! leaf mean plus isotropic Gaussian noise, then L2-normalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{l2_normalize, BankEntry, FeatureBank};
use crate::error::{Error, Result};
use crate::records::Record;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    /// One count per leaf, in taxonomy order.
    pub per_leaf_counts: Vec<usize>,
    pub lineage_separation: f64,
    pub leaf_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Long-tailed counts: the two mature granulocyte leaves and the mature
    /// lymphocyte dominate, blasts and basophils are rare.
    fn default() -> Self {
        Self {
            dim: 32,
            //                 PMY MY MMY BNE SNE MO  EO  BA PLY  LY  PC VLY BL
            per_leaf_counts: vec![20, 30, 25, 80, 300, 90, 60, 12, 15, 240, 10, 40, 18],
            lineage_separation: 2.0,
            leaf_separation: 1.4,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::InvalidConfig(format!("dim {} < 4", self.dim)));
        }
        if self.per_leaf_counts.len() != tax.leaf_count() {
            return Err(Error::InvalidConfig(format!(
                "{} leaf counts for {} leaves",
                self.per_leaf_counts.len(),
                tax.leaf_count()
            )));
        }
        if !(self.lineage_separation > self.leaf_separation && self.leaf_separation > 0.0) {
            return Err(Error::InvalidConfig(
                "need lineage_separation > leaf_separation > 0".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise_sigma must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Number of samples that go to the bank; the rest become queries.
pub fn bank_share(count: usize) -> usize {
    if count >= 2 {
        (count * 4 / 5).max(1)
    } else {
        count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub bank: FeatureBank,
    pub queries: Vec<Record>,
}

fn unit_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn offset(base: &[f64], dir: &[f64], len: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + len * d).collect()
}

/// Cluster means per leaf.
pub fn leaf_means(
    cfg: &SynthConfig,
    tax: &Taxonomy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let origin = vec![0.0; cfg.dim];
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let lineages: Vec<Vec<f64>> = (0..tax.level_size(1)?)
        .map(|_| {
            offset(
                &origin,
                &unit_direction(cfg.dim, rng),
                cfg.lineage_separation * half,
            )
        })
        .collect();
    let mids: Vec<Vec<f64>> = (0..tax.level_size(2)?)
        .map(|m| {
            let parent = tax.parent_of(2, m)?;
            Ok(offset(
                &lineages[parent],
                &unit_direction(cfg.dim, rng),
                cfg.leaf_separation * half,
            ))
        })
        .collect::<Result<_>>()?;
    (0..tax.leaf_count())
        .map(|leaf| {
            let parent = tax.parent_of(3, leaf)?;
            Ok(offset(
                &mids[parent],
                &unit_direction(cfg.dim, rng),
                cfg.leaf_separation * half * 0.5,
            ))
        })
        .collect()
}

/// Draw every leaf's samples and split each leaf 80/20 into bank and queries.
pub fn generate(cfg: &SynthConfig, tax: &Taxonomy) -> Result<SynthData> {
    cfg.validate(tax)?;
    if let Some(leaf) = cfg.per_leaf_counts.iter().position(|&n| n == 1) {
        return Err(Error::InvalidConfig(format!(
            "leaf {} has a single sample; it cannot be split",
            tax.leaf_name(leaf)?
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = leaf_means(cfg, tax, &mut rng)?;
    let noise =
        Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut entries = Vec::new();
    let mut queries = Vec::new();
    for (leaf, (&count, mean)) in cfg.per_leaf_counts.iter().zip(&means).enumerate() {
        let name = tax.leaf_name(leaf)?;
        let path = tax.path(leaf)?;
        let to_bank = bank_share(count);
        for i in 0..count {
            let raw: Vec<f32> = mean
                .iter()
                .map(|m| (m + noise.sample(&mut rng)) as f32)
                .collect();
            let vector = l2_normalize(&raw)?;
            let id = format!("{name}-{i:05}");
            if i < to_bank {
                entries.push(BankEntry {
                    id,
                    labels: path,
                    vector,
                });
            } else {
                queries.push(Record {
                    id,
                    label: Some(name.to_string()),
                    vector: vector.into_inner(),
                });
            }
        }
    }
    let bank = if entries.is_empty() {
        FeatureBank::empty(cfg.dim, tax)
    } else {
        FeatureBank::from_entries(entries, tax)?
    };
    Ok(SynthData { bank, queries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bias {
    /// Length of a bias vector along a seeded random direction.
    Magnitude(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Radians, applied in one seeded random 2-plane.
    pub rotation_angle: f64,
    pub bias: Bias,
    /// Per-coordinate Gaussian sigma added after rotation and bias.
    pub extra_noise: f64,
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self {
            rotation_angle: 0.0,
            bias: Bias::Magnitude(0.0),
            extra_noise: 0.0,
        }
    }

    /// The shift used by the ablation defaults.
    pub fn moderate() -> Self {
        Self {
            rotation_angle: 0.3,
            bias: Bias::Magnitude(0.0),
            extra_noise: 0.1,
        }
    }
}

/// Orthonormal pair spanning a random plane.
fn random_plane<R: Rng>(dim: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let u = unit_direction(dim, rng);
    loop {
        let mut v = unit_direction(dim, rng);
        let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&u).for_each(|(x, ui)| *x -= d * ui);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return (u, v);
        }
    }
}

/// Rotate in a seeded plane, add the bias and noise, re-normalize. Labels and
/// order are kept.
pub fn apply_shift(queries: &[Record], spec: &ShiftSpec, seed: u64) -> Result<Vec<Record>> {
    let Some(first) = queries.first() else {
        return Ok(Vec::new());
    };
    let dim = first.vector.len();
    if dim < 2 {
        return Err(Error::InvalidConfig("shift needs dim >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v) = random_plane(dim, &mut rng);
    let bias = match &spec.bias {
        Bias::Magnitude(m) => {
            let d = unit_direction(dim, &mut rng);
            d.into_iter().map(|x| x * m).collect()
        }
        Bias::Vector(b) if b.len() == dim => b.clone(),
        Bias::Vector(b) => {
            return Err(Error::DimMismatch {
                expected: dim,
                found: b.len(),
            })
        }
    };
    let noise =
        Normal::new(0.0, spec.extra_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (sin, cos) = spec.rotation_angle.sin_cos();

    queries
        .iter()
        .map(|rec| {
            if rec.vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: rec.vector.len(),
                });
            }
            let x: Vec<f64> = rec.vector.iter().map(|&a| a as f64).collect();
            let a: f64 = x.iter().zip(&u).map(|(p, q)| p * q).sum();
            let b: f64 = x.iter().zip(&v).map(|(p, q)| p * q).sum();
            // in-plane component (a, b) -> (a cos - b sin, a sin + b cos)
            let da = a * cos - b * sin - a;
            let db = a * sin + b * cos - b;
            let shifted: Vec<f32> = (0..dim)
                .map(|i| {
                    let n = if spec.extra_noise > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (x[i] + da * u[i] + db * v[i] + bias[i] + n) as f32
                })
                .collect();
            Ok(Record {
                id: rec.id.clone(),
                label: rec.label.clone(),
                vector: l2_normalize(&shifted)?.into_inner(),
            })
        })
        .collect()
}
