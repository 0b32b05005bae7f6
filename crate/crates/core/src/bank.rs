//! Feature bank: unit-norm embeddings with their hierarchical labels.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "HBNK" | version u32 = 1 | dim u32 | count u64 | taxonomy digest [u8; 32]
//! per entry: id_len u16 | id bytes (UTF-8) | l1 u16 | l2 u16 | l3 u16 | dim x f32
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::records::Record;
use crate::taxonomy::{LabelPath, Taxonomy};

pub const MAGIC: [u8; 4] = *b"HBNK";
pub const VERSION: u32 = 1;
/// Vectors at or below this norm cannot be normalized.
pub const NORM_EPSILON: f64 = 1e-12;
/// Allowed deviation of a stored vector's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Wrap a vector that is already unit norm within [`UNIT_TOLERANCE`].
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let n = norm(&values)?;
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::MalformedBank(format!("vector norm {n} is not 1")));
        }
        Ok(Self(values))
    }
}

fn norm(v: &[f32]) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt())
}

/// Scale `v` to unit L2 norm.
pub fn l2_normalize(v: &[f32]) -> Result<Embedding> {
    let n = norm(v)?;
    if n <= NORM_EPSILON {
        return Err(Error::ZeroNorm);
    }
    Ok(Embedding(
        v.iter().map(|&x| (x as f64 / n) as f32).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub id: String,
    pub labels: LabelPath,
    pub vector: Embedding,
}

/// Immutable once built; entry order is insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    entries: Vec<BankEntry>,
    taxonomy_digest: [u8; 32],
}

impl FeatureBank {
    /// Build from manifest records: resolve leaf names, normalize vectors.
    pub fn build<I>(records: I, tax: &Taxonomy) -> Result<Self>
    where
        I: IntoIterator<Item = Record>,
    {
        let mut entries = Vec::new();
        for rec in records {
            let label = rec
                .label
                .as_deref()
                .ok_or_else(|| Error::UnknownLeaf(format!("<missing label on {}>", rec.id)))?;
            let leaf = tax.leaf_index(label)?;
            entries.push(BankEntry {
                labels: tax.path(leaf)?,
                vector: l2_normalize(&rec.vector)?,
                id: rec.id,
            });
        }
        Self::from_entries(entries, tax)
    }

    /// Assemble a bank from already-normalized entries, checking every
    /// invariant.
    pub fn from_entries(entries: Vec<BankEntry>, tax: &Taxonomy) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.vector.dim());
        if dim > u32::MAX as usize {
            return Err(Error::InvalidConfig("dim exceeds u32".into()));
        }
        let mut ids = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: e.vector.dim(),
                });
            }
            if e.id.len() > u16::MAX as usize {
                return Err(Error::InvalidConfig(format!(
                    "id longer than {} bytes",
                    u16::MAX
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            tax.validate_path(e.labels)?;
        }
        Ok(Self {
            dim,
            entries,
            taxonomy_digest: tax.digest(),
        })
    }

    pub fn empty(dim: usize, tax: &Taxonomy) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            taxonomy_digest: tax.digest(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn taxonomy_digest(&self) -> [u8; 32] {
        self.taxonomy_digest
    }

    /// Fails unless the bank was built against `tax`.
    pub fn check_taxonomy(&self, tax: &Taxonomy) -> Result<()> {
        if self.taxonomy_digest == tax.digest() {
            Ok(())
        } else {
            Err(Error::TaxonomyMismatch)
        }
    }

    /// Entry count per leaf index.
    pub fn leaf_histogram(&self, leaf_count: usize) -> Vec<usize> {
        let mut h = vec![0; leaf_count];
        for e in &self.entries {
            if let Some(slot) = h.get_mut(e.labels.l3) {
                *slot += 1;
            }
        }
        h
    }

    /// Entries of `self` followed by entries of `other`.
    pub fn merge(&self, other: &FeatureBank) -> Result<FeatureBank> {
        if self.taxonomy_digest != other.taxonomy_digest {
            return Err(Error::TaxonomyMismatch);
        }
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let ids: HashSet<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        if let Some(dup) = other.entries.iter().find(|e| ids.contains(e.id.as_str())) {
            return Err(Error::DuplicateId(dup.id.clone()));
        }
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        Ok(FeatureBank {
            dim: self.dim,
            entries,
            taxonomy_digest: self.taxonomy_digest,
        })
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(&MAGIC)?;
        sink.write_all(&VERSION.to_le_bytes())?;
        sink.write_all(&(self.dim as u32).to_le_bytes())?;
        sink.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        sink.write_all(&self.taxonomy_digest)?;
        for e in &self.entries {
            sink.write_all(&(e.id.len() as u16).to_le_bytes())?;
            sink.write_all(e.id.as_bytes())?;
            for l in [e.labels.l1, e.labels.l2, e.labels.l3] {
                sink.write_all(&(l as u16).to_le_bytes())?;
            }
            for x in e.vector.as_slice() {
                sink.write_all(&x.to_le_bytes())?;
            }
        }
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load<R: Read>(mut source: R, tax: &Taxonomy) -> Result<Self> {
        let mut magic = [0u8; 4];
        source.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = read_u32(&mut source)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = read_u32(&mut source)? as usize;
        let count = read_u64(&mut source)?;
        let mut digest = [0u8; 32];
        source.read_exact(&mut digest)?;
        if digest != tax.digest() {
            return Err(Error::TaxonomyMismatch);
        }

        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        let mut raw = vec![0u8; dim * 4];
        for _ in 0..count {
            let id_len = read_u16(&mut source)? as usize;
            let mut id = vec![0u8; id_len];
            source.read_exact(&mut id)?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::MalformedBank("id is not UTF-8".into()))?;
            let labels = LabelPath {
                l1: read_u16(&mut source)? as usize,
                l2: read_u16(&mut source)? as usize,
                l3: read_u16(&mut source)? as usize,
            };
            source.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(BankEntry {
                id,
                labels,
                vector: Embedding::from_unit(values)?,
            });
        }
        let mut trailing = [0u8; 1];
        if source.read(&mut trailing)? != 0 {
            return Err(Error::MalformedBank("trailing bytes".into()));
        }

        let mut bank = Self::from_entries(entries, tax)?;
        bank.dim = dim;
        Ok(bank)
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str, vector: &[f32]) -> Record {
        Record {
            id: id.into(),
            label: Some(label.into()),
            vector: vector.to_vec(),
        }
    }

    fn small_bank(tax: &Taxonomy, prefix: &str, n: usize) -> FeatureBank {
        let leaves = ["BL", "LY", "SNE", "MO"];
        let recs = (0..n).map(|i| {
            rec(
                &format!("{prefix}{i}"),
                leaves[i % leaves.len()],
                &[1.0 + i as f32, 2.0, -0.5, 0.25],
            )
        });
        FeatureBank::build(recs, tax).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let e = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(e.as_slice(), [0.6, 0.8]);
    }

    #[test]
    fn normalize_zero_vector() {
        let err = l2_normalize(&[0.0; 8]).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm vector");
        assert!(matches!(
            l2_normalize(&[f32::NAN, 1.0]),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn build_resolves_lineages() {
        let tax = Taxonomy::default();
        let recs = vec![
            rec("a", "BL", &[1.0, 0.0, 0.0, 0.0]),
            rec("b", "LY", &[0.0, 2.0, 0.0, 0.0]),
            rec("c", "SNE", &[0.0, 0.0, 3.0, 4.0]),
        ];
        let bank = FeatureBank::build(recs, &tax).unwrap();
        assert_eq!(bank.len(), 3);
        let l1: Vec<&str> = bank
            .entries()
            .iter()
            .map(|e| tax.name(1, e.labels.l1).unwrap())
            .collect();
        assert_eq!(l1, ["Blast", "Lymphoid", "Myeloid"]);
        assert_eq!(bank.entries()[2].vector.as_slice(), [0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn build_errors() {
        let tax = Taxonomy::default();
        let err = FeatureBank::build(vec![rec("a", "XYZ", &[1.0])], &tax).unwrap_err();
        assert!(err.to_string().contains("unknown leaf"));

        let mixed = vec![rec("a", "BL", &[1.0; 4]), rec("b", "BL", &[1.0; 5])];
        let err = FeatureBank::build(mixed, &tax).unwrap_err();
        assert!(err.to_string().contains("dim mismatch"));

        let dup = vec![rec("a", "BL", &[1.0; 4]), rec("a", "LY", &[1.0; 4])];
        assert!(matches!(
            FeatureBank::build(dup, &tax),
            Err(Error::DuplicateId(_))
        ));

        let zero = vec![rec("a", "BL", &[0.0; 4])];
        assert!(matches!(
            FeatureBank::build(zero, &tax),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let tax = Taxonomy::default();
        let bank = small_bank(&tax, "x", 9);
        let bytes = bank.to_bytes();
        let back = FeatureBank::load(bytes.as_slice(), &tax).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn load_rejects_bad_input() {
        let tax = Taxonomy::default();
        let mut bytes = small_bank(&tax, "x", 3).to_bytes();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        let err = FeatureBank::load(wrong.as_slice(), &tax).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");

        let other = Taxonomy::parse("[level1]\nr\n[level2]\nm -> r\n[level3]\na -> m\n").unwrap();
        let err = FeatureBank::load(bytes.as_slice(), &other).unwrap_err();
        assert_eq!(err.to_string(), "taxonomy mismatch");

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            FeatureBank::load(cut, &tax),
            Err(Error::Truncated)
        ));

        bytes.push(0);
        assert!(matches!(
            FeatureBank::load(bytes.as_slice(), &tax),
            Err(Error::MalformedBank(_))
        ));
    }

    #[test]
    fn merge_orders_and_checks() {
        let tax = Taxonomy::default();
        let a = small_bank(&tax, "a", 2);
        let b = small_bank(&tax, "b", 3);
        let m = a.merge(&b).unwrap();
        let ids: Vec<&str> = m.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a0", "a1", "b0", "b1", "b2"]);

        let err = a.merge(&small_bank(&tax, "a", 1)).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));

        let empty = FeatureBank::empty(0, &tax);
        assert_eq!(empty.merge(&b).unwrap(), b);
    }

    #[test]
    fn histogram_counts_leaves() {
        let tax = Taxonomy::default();
        let bank = small_bank(&tax, "x", 8);
        let h = bank.leaf_histogram(tax.leaf_count());
        assert_eq!(h.iter().sum::<usize>(), 8);
        assert_eq!(h[tax.leaf_index("BL").unwrap()], 2);
    }
}
