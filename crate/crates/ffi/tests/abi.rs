use std::ffi::{CStr, CString};
use std::ptr;

use hierknn_ffi::*;

fn taxonomy() -> *mut HkTaxonomy {
    let mut tax = ptr::null_mut();
    assert_eq!(unsafe { hk_taxonomy_default(&mut tax) }, HkStatus::Ok);
    tax
}

fn leaf(tax: *const HkTaxonomy, name: &str) -> usize {
    let name = CString::new(name).unwrap();
    let mut out = 0;
    assert_eq!(
        unsafe { hk_taxonomy_leaf_index(tax, name.as_ptr(), &mut out) },
        HkStatus::Ok
    );
    out
}

fn last_error() -> String {
    let p = hk_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn two_cluster_bank(tax: *const HkTaxonomy) -> *mut HkBank {
    let (bl, ly) = (leaf(tax, "BL"), leaf(tax, "LY"));
    let vectors = [1.0f32, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9];
    let leaves = [bl, bl, ly, ly];
    let mut bank = ptr::null_mut();
    let s = unsafe { hk_bank_build(tax, vectors.as_ptr(), 4, 2, leaves.as_ptr(), &mut bank) };
    assert_eq!(s, HkStatus::Ok);
    bank
}

#[test]
fn taxonomy_queries() {
    let tax = taxonomy();
    unsafe {
        assert_eq!(hk_taxonomy_leaf_count(tax), 13);
        let bl = leaf(tax, "BL");
        let mut lineage = usize::MAX;
        assert_eq!(hk_taxonomy_ancestor(tax, bl, 1, &mut lineage), HkStatus::Ok);
        assert_eq!(lineage, 2);
        assert_eq!(
            CStr::from_ptr(hk_taxonomy_leaf_name(tax, bl))
                .to_str()
                .unwrap(),
            "BL"
        );
        assert!(hk_taxonomy_leaf_name(tax, 99).is_null());
        assert_eq!(
            hk_taxonomy_ancestor(tax, 99, 1, &mut lineage),
            HkStatus::UnknownLabel
        );

        let bad = CString::new("leaves = 1\n[level1]\nA\n").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(
            hk_taxonomy_parse(bad.as_ptr(), &mut other),
            HkStatus::Format
        );
        assert!(other.is_null());
        hk_taxonomy_free(tax);
    }
}

#[test]
fn classify_and_errors() {
    let tax = taxonomy();
    let bank = two_cluster_bank(tax);
    unsafe {
        assert_eq!(hk_bank_len(bank), 4);
        assert_eq!(hk_bank_dim(bank), 2);
        let mut p = HkPrediction::default();
        let q = [0.2f32, 1.0];
        assert_eq!(
            hk_classify(bank, tax, q.as_ptr(), 2, 3, false, &mut p),
            HkStatus::Ok
        );
        assert_eq!(p.y3, leaf(tax, "LY"));
        assert_eq!(p.y1, 1);
        assert_eq!(p.fallback, [false; 3]);
        assert_eq!(
            hk_classify(bank, tax, q.as_ptr(), 2, 3, true, &mut p),
            HkStatus::Ok
        );
        assert_eq!(p.y3, leaf(tax, "LY"));

        let q3 = [1.0f32, 0.0, 0.0];
        assert_eq!(
            hk_classify(bank, tax, q3.as_ptr(), 3, 3, false, &mut p),
            HkStatus::DimMismatch
        );
        assert!(last_error().contains("dim mismatch"));
        assert_eq!(
            hk_classify(bank, tax, q.as_ptr(), 2, 0, false, &mut p),
            HkStatus::InvalidArgument
        );
        assert_eq!(
            hk_classify(ptr::null(), tax, q.as_ptr(), 2, 3, false, &mut p),
            HkStatus::NullArgument
        );
        let zero = [0.0f32, 0.0];
        assert_eq!(
            hk_classify(bank, tax, zero.as_ptr(), 2, 3, false, &mut p),
            HkStatus::Data
        );
        assert!(last_error().contains("zero-norm"));

        hk_bank_free(bank);
        hk_taxonomy_free(tax);
    }
}

#[test]
fn ensemble_and_macro_f1() {
    let tax = taxonomy();
    let a = two_cluster_bank(tax);
    let b = two_cluster_bank(tax);
    unsafe {
        let banks = [a as *const HkBank, b as *const HkBank];
        let q = [1.0f32, 0.1];
        let (mut l, mut v) = (0usize, 0usize);
        let s = hk_ensemble_classify(
            banks.as_ptr(),
            2,
            tax,
            q.as_ptr(),
            2,
            3,
            false,
            0,
            &mut l,
            &mut v,
        );
        assert_eq!(s, HkStatus::Ok);
        assert_eq!((l, v), (leaf(tax, "BL"), 2));
        let s = hk_ensemble_classify(
            banks.as_ptr(),
            2,
            tax,
            q.as_ptr(),
            2,
            3,
            false,
            7,
            &mut l,
            &mut v,
        );
        assert_eq!(s, HkStatus::InvalidArgument);

        let truth = [0usize, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let preds = [0usize, 0, 0, 1, 1, 1, 1, 1, 0, 0];
        let mut f1 = 0.0;
        assert_eq!(
            hk_macro_f1(truth.as_ptr(), preds.as_ptr(), 10, 2, &mut f1),
            HkStatus::Ok
        );
        assert!((f1 - (2.0 / 3.0 + 8.0 / 11.0) / 2.0).abs() < 1e-12);
        assert_eq!(
            hk_macro_f1(truth.as_ptr(), preds.as_ptr(), 10, 1, &mut f1),
            HkStatus::InvalidArgument
        );

        hk_bank_free(a);
        hk_bank_free(b);
        hk_taxonomy_free(tax);
    }
}

#[test]
fn bank_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("b.hbnk").to_str().unwrap()).unwrap();
    let tax = taxonomy();
    let bank = two_cluster_bank(tax);
    unsafe {
        assert_eq!(hk_bank_save(bank, path.as_ptr()), HkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(hk_bank_load(path.as_ptr(), tax, &mut back), HkStatus::Ok);
        assert_eq!(hk_bank_len(back), 4);

        let missing = CString::new(dir.path().join("nope.hbnk").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(hk_bank_load(missing.as_ptr(), tax, &mut none), HkStatus::Io);

        hk_bank_free(back);
        hk_bank_free(bank);
        hk_taxonomy_free(tax);
    }
}
