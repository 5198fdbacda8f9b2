// SPDX-License-Identifier: Apache-2.0

//! C ABI over the postcheck library.
//!
//! Objects cross the boundary as opaque handles created by `pc_*_load` or
//! `pc_*_generate` and released with the matching `pc_*_free`. Every
//! fallible call returns a [`PcStatus`] code; on failure the message is
//! available from [`pc_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use postcheck::corpus::{Corpus, IngestOptions, Label};
use postcheck::model::{explain, ConsistencyScores, Detector, Explanation, Modality};
use postcheck::synthesis::{build_balanced_dataset, demo, SynthesisConfig, Toolkit};
use postcheck::train_eval::evaluate;
use postcheck::Error;

/// Status codes; values 2 through 6 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    Failed = 1,
    InputNotFound = 2,
    DuplicatePostId = 3,
    Shortfall = 4,
    CheckpointHash = 5,
    EmptySubset = 6,
    NullArgument = 7,
    InvalidUtf8 = 8,
    NotFound = 9,
    Panic = 10,
}

/// Modality named by an explanation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcExplanation {
    None = 0,
    Video = 1,
    Speech = 2,
    Claim = 3,
}

impl From<Explanation> for PcExplanation {
    fn from(e: Explanation) -> Self {
        match e {
            Explanation::None => PcExplanation::None,
            Explanation::Video => PcExplanation::Video,
            Explanation::Speech => PcExplanation::Speech,
            Explanation::Claim => PcExplanation::Claim,
        }
    }
}

/// A loaded corpus.
pub struct PcCorpus(Corpus);

/// A trained detector restored from a checkpoint.
pub struct PcDetector(Detector);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcVerdict {
    pub p_inconsistent: f64,
    /// 1 when the record is judged inconsistent, 0 otherwise.
    pub inconsistent: i32,
    pub c_vs: f64,
    pub c_vc: f64,
    pub c_cs: f64,
    pub explanation: PcExplanation,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcMetrics {
    pub total: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub explanation_accuracy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(PcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.code() {
            2 => PcStatus::InputNotFound,
            3 => PcStatus::DuplicatePostId,
            4 => PcStatus::Shortfall,
            5 => PcStatus::CheckpointHash,
            6 => PcStatus::EmptySubset,
            _ => PcStatus::Failed,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PcStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call into this library on this thread.
#[no_mangle]
pub extern "C" fn pc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a corpus file. Invalid records are skipped, as in `ingest`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_load(path: *const c_char, out: *mut *mut PcCorpus) -> PcStatus {
    guard(|| {
        let path = text(path, "path")?;
        let (c, _) = Corpus::ingest(Path::new(path), IngestOptions::default())?;
        put(out, PcCorpus(c))
    })
}

/// Generates `n` pristine demo posts, or a balanced corpus of `2n` records
/// when `balanced` is nonzero.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_generate_demo(
    n: usize,
    seed: u64,
    balanced: i32,
    out: *mut *mut PcCorpus,
) -> PcStatus {
    guard(|| {
        let shape = demo::DemoShape::default();
        let c = if balanced != 0 { demo::balanced(n, seed, shape)?.0 } else { demo::generate(n, seed, shape)? };
        put(out, PcCorpus(c))
    })
}

/// Adds generated fakes to a pristine corpus using the built-in stub
/// toolkit and an even taxonomy mix.
///
/// # Safety
/// `pristine` must be a live corpus handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_synthesize(
    pristine: *const PcCorpus,
    seed: u64,
    out: *mut *mut PcCorpus,
) -> PcStatus {
    guard(|| {
        let c = handle(pristine, "pristine")?;
        let cfg = SynthesisConfig { seed, ..SynthesisConfig::default() };
        let (balanced, _) = build_balanced_dataset(&c.0, &Toolkit::stub(seed), &cfg)?;
        put(out, PcCorpus(balanced))
    })
}

/// Writes the corpus in its JSONL interchange format.
///
/// # Safety
/// `corpus` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_save(corpus: *const PcCorpus, path: *const c_char) -> PcStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let path = text(path, "path")?;
        c.0.save(Path::new(path))?;
        Ok(())
    })
}

/// Number of records; 0 for a NULL handle.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_len(corpus: *const PcCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Writes 1 to `out` if record `index` is labelled inconsistent, else 0.
///
/// # Safety
/// `corpus` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_label(corpus: *const PcCorpus, index: usize, out: *mut i32) -> PcStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let r =
            c.0.records().get(index).ok_or_else(|| {
                Fail(PcStatus::NotFound, format!("index {index} out of range for {} records", c.0.len()))
            })?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(r.label == Label::Inconsistent);
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_corpus_free(corpus: *mut PcCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Restores a detector, verifying the checkpoint hashes.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_detector_load(path: *const c_char, out: *mut *mut PcDetector) -> PcStatus {
    guard(|| {
        let path = text(path, "path")?;
        put(out, PcDetector(Detector::load(Path::new(path))?))
    })
}

/// # Safety
/// `detector` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_detector_free(detector: *mut PcDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Scores the record with `post_id`.
///
/// # Safety
/// Handles must be live, `post_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_detector_predict(
    detector: *const PcDetector,
    corpus: *const PcCorpus,
    post_id: *const c_char,
    out: *mut PcVerdict,
) -> PcStatus {
    guard(|| {
        let d = handle(detector, "detector")?;
        let c = handle(corpus, "corpus")?;
        let id = text(post_id, "post_id")?;
        let post = c.0.get(id).ok_or_else(|| Fail(PcStatus::NotFound, format!("no record with post_id {id:?}")))?;
        let v = d.0.forward(post)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = PcVerdict {
            p_inconsistent: v.p_inconsistent,
            inconsistent: i32::from(v.predicted_label == Label::Inconsistent),
            c_vs: v.scores.c_vs,
            c_vc: v.scores.c_vc,
            c_cs: v.scores.c_cs,
            explanation: v.explanation.into(),
        };
        Ok(())
    })
}

/// Accuracy, F1, and explanation accuracy over every record.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_detector_evaluate(
    detector: *const PcDetector,
    corpus: *const PcCorpus,
    out: *mut PcMetrics,
) -> PcStatus {
    guard(|| {
        let d = handle(detector, "detector")?;
        let c = handle(corpus, "corpus")?;
        let r = evaluate(&d.0, c.0.records())?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = PcMetrics {
            total: r.total,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            explanation_accuracy: r.explanation_accuracy,
        };
        Ok(())
    })
}

/// The modality shared by the two lowest of three pair scores.
#[no_mangle]
pub extern "C" fn pc_explain_scores(c_vs: f64, c_vc: f64, c_cs: f64) -> PcExplanation {
    match explain(&ConsistencyScores::from_triple(c_vs, c_vc, c_cs)) {
        Modality::Video => PcExplanation::Video,
        Modality::Speech => PcExplanation::Speech,
        Modality::Claim => PcExplanation::Claim,
    }
}
