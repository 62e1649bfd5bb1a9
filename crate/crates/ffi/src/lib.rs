//! C ABI over `tripaug`.
//!
//! Objects cross the boundary as opaque handles created by `ta_*_new` /
//! `ta_*_load` / `ta_*_build` and released by the matching `ta_*_free`.
//! Fallible calls return a `TaStatus`; on failure `ta_last_error` holds a
//! message for the calling thread until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::RngCore;
use tripaug::ingest::{self, Dataset, PredictionDump};
use tripaug::mp_sampler::SamplerTable;
use tripaug::types::BBox;
use tripaug::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullArgument = 1,
    Invalid = 2,
    Parse = 3,
    Io = 4,
    NonFinite = 5,
    Panic = 6,
}

pub struct TaDataset(Dataset);

pub struct TaPredictions(PredictionDump);

pub struct TaSampler(SamplerTable);

pub struct TaRng(tripaug::rng::Rng);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> TaStatus {
    match e {
        Error::Invalid { .. } => TaStatus::Invalid,
        Error::Parse { .. } => TaStatus::Parse,
        Error::NonFinite { .. } => TaStatus::NonFinite,
        Error::Io { .. } => TaStatus::Io,
    }
}

/// Runs `f` with panics contained and errors recorded.
fn guard<F: FnOnce() -> Result<(), TaStatus>>(f: F) -> TaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TaStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside tripaug");
            TaStatus::Panic
        }
    }
}

fn lib<T>(r: tripaug::Result<T>) -> Result<T, TaStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> TaStatus {
    set_error(format!("{what} is null"));
    TaStatus::NullArgument
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, TaStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not valid UTF-8");
        TaStatus::Invalid
    })
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, TaStatus> {
    p.as_mut().ok_or_else(|| null("output pointer"))
}

unsafe fn in_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, TaStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the calling thread's last failure (empty if none). Valid until
/// the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads an annotation file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ta_dataset_load(path: *const c_char, out: *mut *mut TaDataset) -> TaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let d = lib(ingest::load_annotations(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(TaDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must come from `ta_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ta_dataset_free(d: *mut TaDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of annotated triplets, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ta_dataset_num_triplets(d: *const TaDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.num_triplets())
}

/// Predicate vocabulary size including background, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ta_dataset_num_predicates(d: *const TaDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.label_space().num_predicates())
}

/// Loads a prediction dump aligned with `dataset`.
///
/// # Safety
/// `dataset` must be live, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_predictions_load(
    dataset: *const TaDataset,
    path: *const c_char,
    out: *mut *mut TaPredictions,
) -> TaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let d = in_arg(dataset, "dataset")?;
        let p = lib(ingest::load_predictions(path_arg(path)?, &d.0))?;
        *out = Box::into_raw(Box::new(TaPredictions(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `ta_predictions_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ta_predictions_free(p: *mut TaPredictions) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Counts the internal decisions and external triplets a transfer would
/// produce.
///
/// # Safety
/// Handles must be live; `n_internal` and `n_external` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_transfer_counts(
    dataset: *const TaDataset,
    predictions: *const TaPredictions,
    k_i: f64,
    k_e: f64,
    aff_threshold: f64,
    n_internal: *mut usize,
    n_external: *mut usize,
) -> TaStatus {
    guard(|| {
        let d = &in_arg(dataset, "dataset")?.0;
        let p = &in_arg(predictions, "predictions")?.0;
        let (ni, ne) = (out_arg(n_internal)?, out_arg(n_external)?);
        let map = tripaug::ietrans::build_parent_child(p, &d.predicate_counts(), aff_threshold);
        *ni = lib(tripaug::ietrans::internal_transfer(d, p, &map, k_i))?.len();
        *ne = lib(tripaug::ietrans::external_transfer(d, p, k_e))?.len();
        Ok(())
    })
}

/// Builds the object-class sampler from a dataset and its dump.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_sampler_build(
    dataset: *const TaDataset,
    predictions: *const TaPredictions,
    out: *mut *mut TaSampler,
) -> TaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let d = in_arg(dataset, "dataset")?;
        let p = in_arg(predictions, "predictions")?;
        *out = Box::into_raw(Box::new(TaSampler(SamplerTable::build(d.0.label_space(), &p.0))));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `ta_sampler_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ta_sampler_free(s: *mut TaSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of `(subject, predicate)` keys, 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live sampler handle.
#[no_mangle]
pub unsafe extern "C" fn ta_sampler_len(s: *const TaSampler) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Draws an object class for `(subject, predicate)`.
///
/// # Safety
/// Handles must be live and `out_class` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_sampler_draw(
    sampler: *const TaSampler,
    subject: u32,
    predicate: u32,
    rng: *mut TaRng,
    out_class: *mut u32,
) -> TaStatus {
    guard(|| {
        let s = in_arg(sampler, "sampler")?;
        let r = rng.as_mut().ok_or_else(|| null("rng"))?;
        let out = out_arg(out_class)?;
        *out = lib(s.0.draw(subject, predicate, &mut r.0))?;
        Ok(())
    })
}

/// Seeded stream for `module` under `seed`, identical to the library's.
///
/// # Safety
/// `module` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_rng_new(seed: u64, module: *const c_char, out: *mut *mut TaRng) -> TaStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let m = path_arg(module)?;
        *out = Box::into_raw(Box::new(TaRng(tripaug::rng::substream(seed, m))));
        Ok(())
    })
}

/// # Safety
/// `r` must be a live rng handle.
#[no_mangle]
pub unsafe extern "C" fn ta_rng_next_u64(r: *mut TaRng) -> u64 {
    r.as_mut().map_or(0, |r| r.0.next_u64())
}

/// # Safety
/// `r` must come from `ta_rng_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ta_rng_free(r: *mut TaRng) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Two-class soft label for reliability weight `q` in [0, 1].
///
/// # Safety
/// `out_source` and `out_target` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_soft_label(
    q: f64,
    source: u32,
    target: u32,
    out_source: *mut f64,
    out_target: *mut f64,
) -> TaStatus {
    guard(|| {
        let (s, t) = (out_arg(out_source)?, out_arg(out_target)?);
        let l = lib(tripaug::soft_transfer::soft_label(q, source, target))?;
        *s = l.prob(source);
        *t = l.prob(target);
        Ok(())
    })
}

/// Harmonic mean of recall and mean recall (0 when both are 0).
#[no_mangle]
pub extern "C" fn ta_f1(recall: f64, mean_recall: f64) -> f64 {
    tripaug::metrics::f1(recall, mean_recall)
}

#[no_mangle]
pub extern "C" fn ta_avg(recall: f64, mean_recall: f64) -> f64 {
    tripaug::metrics::avg(recall, mean_recall)
}

/// IoU of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` must each point to four doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_iou(a: *const f64, b: *const f64, out: *mut f64) -> TaStatus {
    guard(|| {
        let o = out_arg(out)?;
        if a.is_null() || b.is_null() {
            return Err(null("box"));
        }
        let load = |p: *const f64| {
            let v = std::slice::from_raw_parts(p, 4);
            lib(BBox::new(v[0], v[1], v[2], v[3]))
        };
        *o = tripaug::types::iou(&load(a)?, &load(b)?);
        Ok(())
    })
}
