//! C ABI over `hierknn`.
//!
//! Taxonomies and banks cross the boundary as opaque handles created by
//! `hk_*_load`/`hk_*_default` style constructors and released with the
//! matching `*_free`. Every fallible call returns an [`HkStatus`]; on failure
//! `hk_last_error_message` describes the error for the calling thread. Panics
//! never unwind into C: they surface as `HK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hierknn::bank::{l2_normalize, BankEntry, FeatureBank};
use hierknn::ensemble::{combine, member_vote, TiePolicy, VoteMode};
use hierknn::hier::{predict_flat, predict_hierarchical};
use hierknn::metrics::macro_f1_of;
use hierknn::{Error, Taxonomy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    TaxonomyMismatch = 5,
    DimMismatch = 6,
    UnknownLabel = 7,
    Data = 8,
    Panic = 99,
}

/// Leaf, level-2 and lineage indices of one prediction. For flat votes the
/// coarse levels are the ancestors of the leaf and no fallback is reported.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HkPrediction {
    pub y1: usize,
    pub y2: usize,
    pub y3: usize,
    pub fallback: [bool; 3],
}

pub struct HkTaxonomy {
    inner: Taxonomy,
    leaf_names: Vec<CString>,
}

pub struct HkBank {
    inner: FeatureBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HkStatus {
    match e {
        Error::Io(_) => HkStatus::Io,
        Error::TaxonomySyntax { .. }
        | Error::OrphanNode(_)
        | Error::DuplicateName(_)
        | Error::WrongParentLevel { .. }
        | Error::UnknownParent { .. }
        | Error::Childless { .. }
        | Error::LeafCountMismatch { .. }
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::Truncated
        | Error::MalformedBank(_)
        | Error::Manifest { .. } => HkStatus::Format,
        Error::TaxonomyMismatch => HkStatus::TaxonomyMismatch,
        Error::DimMismatch { .. } => HkStatus::DimMismatch,
        Error::UnknownLeaf(_) | Error::UnknownNode { .. } | Error::InvalidLevel(_) => {
            HkStatus::UnknownLabel
        }
        Error::InvalidK(_)
        | Error::InvalidConfig(_)
        | Error::LengthMismatch(..)
        | Error::LabelOutOfRange { .. } => HkStatus::InvalidArgument,
        _ => HkStatus::Data,
    }
}

struct Fail(HkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HkStatus::NullArgument, format!("{what} is null"))
}

/// Run `f`, record any failure for `hk_last_error_message`, and never let a
/// panic cross the boundary.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> HkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HkStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn wrap_taxonomy(inner: Taxonomy) -> *mut HkTaxonomy {
    let leaf_names = (0..inner.leaf_count())
        .map(|l| CString::new(inner.leaf_name(l).unwrap_or_default()).unwrap_or_default())
        .collect();
    Box::into_raw(Box::new(HkTaxonomy { inner, leaf_names }))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn hk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The built-in 13-leaf taxonomy.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_default(out: *mut *mut HkTaxonomy) -> HkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = wrap_taxonomy(Taxonomy::default());
        Ok(())
    })
}

/// Parse a taxonomy from NUL-terminated text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_parse(
    text: *const c_char,
    out: *mut *mut HkTaxonomy,
) -> HkStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = wrap_taxonomy(Taxonomy::parse(text)?);
        Ok(())
    })
}

/// Read and parse a taxonomy file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_load(
    path: *const c_char,
    out: *mut *mut HkTaxonomy,
) -> HkStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        *out = wrap_taxonomy(Taxonomy::parse(&text)?);
        Ok(())
    })
}

/// # Safety
/// `tax` must come from a taxonomy constructor and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_free(tax: *mut HkTaxonomy) {
    if !tax.is_null() {
        drop(Box::from_raw(tax));
    }
}

/// Number of leaves, or 0 for a null handle.
///
/// # Safety
/// `tax` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_leaf_count(tax: *const HkTaxonomy) -> usize {
    tax.as_ref().map_or(0, |t| t.inner.leaf_count())
}

/// Name of `leaf`, or null when out of range. Owned by the handle.
///
/// # Safety
/// `tax` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_leaf_name(
    tax: *const HkTaxonomy,
    leaf: usize,
) -> *const c_char {
    tax.as_ref()
        .and_then(|t| t.leaf_names.get(leaf))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Leaf index of `name`.
///
/// # Safety
/// `tax` must be a live handle, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_leaf_index(
    tax: *const HkTaxonomy,
    name: *const c_char,
    out: *mut usize,
) -> HkStatus {
    guard(|| {
        let tax = ref_arg(tax, "tax")?;
        let name = str_arg(name, "name")?;
        *out_arg(out, "out")? = tax.inner.leaf_index(name)?;
        Ok(())
    })
}

/// Ancestor of `leaf` at `level` (1, 2 or 3).
///
/// # Safety
/// `tax` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hk_taxonomy_ancestor(
    tax: *const HkTaxonomy,
    leaf: usize,
    level: usize,
    out: *mut usize,
) -> HkStatus {
    guard(|| {
        let tax = ref_arg(tax, "tax")?;
        *out_arg(out, "out")? = tax.inner.ancestor(leaf, level)?;
        Ok(())
    })
}

/// Load a bank file built against `tax`.
///
/// # Safety
/// `path` must be NUL-terminated, `tax` live, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_load(
    path: *const c_char,
    tax: *const HkTaxonomy,
    out: *mut *mut HkBank,
) -> HkStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let tax = ref_arg(tax, "tax")?;
        let out = out_arg(out, "out")?;
        let file = File::open(path).map_err(Error::from)?;
        let inner = FeatureBank::load(BufReader::new(file), &tax.inner)?;
        *out = Box::into_raw(Box::new(HkBank { inner }));
        Ok(())
    })
}

/// Build a bank from `count` row-major vectors of length `dim` and one leaf
/// index per vector. Vectors are L2-normalized; entry ids are "0", "1", ...
///
/// # Safety
/// `vectors` must hold `count * dim` floats, `leaves` `count` indices.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_build(
    tax: *const HkTaxonomy,
    vectors: *const f32,
    count: usize,
    dim: usize,
    leaves: *const usize,
    out: *mut *mut HkBank,
) -> HkStatus {
    guard(|| {
        let tax = ref_arg(tax, "tax")?;
        let out = out_arg(out, "out")?;
        if dim == 0 {
            return Err(Fail(
                HkStatus::InvalidArgument,
                "dim must be positive".into(),
            ));
        }
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Fail(HkStatus::InvalidArgument, "count * dim overflows".into()))?;
        let data = slice_arg(vectors, total, "vectors")?;
        let leaves = slice_arg(leaves, count, "leaves")?;
        let inner = if count == 0 {
            FeatureBank::empty(dim, &tax.inner)
        } else {
            let entries = data
                .chunks_exact(dim)
                .zip(leaves)
                .enumerate()
                .map(|(i, (v, &leaf))| {
                    Ok(BankEntry {
                        id: i.to_string(),
                        labels: tax.inner.path(leaf)?,
                        vector: l2_normalize(v)?,
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            FeatureBank::from_entries(entries, &tax.inner)?
        };
        *out = Box::into_raw(Box::new(HkBank { inner }));
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_save(bank: *const HkBank, path: *const c_char) -> HkStatus {
    guard(|| {
        let bank = ref_arg(bank, "bank")?;
        let path = str_arg(path, "path")?;
        let mut w = BufWriter::new(File::create(path).map_err(Error::from)?);
        bank.inner.save(&mut w)?;
        w.flush().map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `bank` must come from a bank constructor and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_free(bank: *mut HkBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_dim(bank: *const HkBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.dim())
}

/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_bank_len(bank: *const HkBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.len())
}

fn classify_one(
    bank: &FeatureBank,
    tax: &Taxonomy,
    query: &[f32],
    k: usize,
    flat: bool,
) -> Result<HkPrediction, Error> {
    let q = l2_normalize(query)?;
    if flat {
        bank.check_taxonomy(tax)?;
        let p = predict_flat(bank, &q, k)?;
        let path = tax.path(p.leaf)?;
        Ok(HkPrediction {
            y1: path.l1,
            y2: path.l2,
            y3: path.l3,
            fallback: [false; 3],
        })
    } else {
        let p = predict_hierarchical(bank, &q, k, tax)?;
        Ok(HkPrediction {
            y1: p.y1,
            y2: p.y2,
            y3: p.y3,
            fallback: p.fallback_used,
        })
    }
}

/// Classify one query vector of length `dim`.
///
/// # Safety
/// Handles must be live, `query` must hold `dim` floats, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hk_classify(
    bank: *const HkBank,
    tax: *const HkTaxonomy,
    query: *const f32,
    dim: usize,
    k: usize,
    flat: bool,
    out: *mut HkPrediction,
) -> HkStatus {
    guard(|| {
        let bank = ref_arg(bank, "bank")?;
        let tax = ref_arg(tax, "tax")?;
        let query = slice_arg(query, dim, "query")?;
        let out = out_arg(out, "out")?;
        *out = classify_one(&bank.inner, &tax.inner, query, k, flat)?;
        Ok(())
    })
}

/// Majority vote of `members` banks on one query. `tie_policy` is 0 for
/// similarity margin, 1 for first member. Writes the winning leaf and the
/// number of members that voted for it.
///
/// # Safety
/// `banks` must hold `members` live handles and `query` `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn hk_ensemble_classify(
    banks: *const *const HkBank,
    members: usize,
    tax: *const HkTaxonomy,
    query: *const f32,
    dim: usize,
    k: usize,
    flat: bool,
    tie_policy: u32,
    leaf_out: *mut usize,
    votes_out: *mut usize,
) -> HkStatus {
    guard(|| {
        let banks = slice_arg(banks, members, "banks")?;
        let tax = ref_arg(tax, "tax")?;
        let query = slice_arg(query, dim, "query")?;
        let leaf_out = out_arg(leaf_out, "leaf_out")?;
        let policy = match tie_policy {
            0 => TiePolicy::SimilarityMargin,
            1 => TiePolicy::FirstMember,
            other => {
                return Err(Fail(
                    HkStatus::InvalidArgument,
                    format!("unknown tie policy {other}"),
                ))
            }
        };
        let mode = if flat {
            VoteMode::Flat
        } else {
            VoteMode::Hierarchical
        };
        let q = l2_normalize(query)?;
        let votes = banks
            .iter()
            .map(|&b| {
                let b = ref_arg(b, "banks[i]")?;
                b.inner.check_taxonomy(&tax.inner)?;
                Ok(member_vote(&b.inner, &q, k, &tax.inner, mode)?)
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        let p = combine(votes, policy)?;
        *leaf_out = p.leaf;
        if let Some(v) = votes_out.as_mut() {
            *v = p.votes;
        }
        Ok(())
    })
}

/// Macro F1 over `classes` classes; absent classes count as F1 = 0.
///
/// # Safety
/// `truth` and `preds` must each hold `n` values; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hk_macro_f1(
    truth: *const usize,
    preds: *const usize,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> HkStatus {
    guard(|| {
        let truth = slice_arg(truth, n, "truth")?;
        let preds = slice_arg(preds, n, "preds")?;
        *out_arg(out, "out")? = macro_f1_of(truth, preds, classes)?;
        Ok(())
    })
}
