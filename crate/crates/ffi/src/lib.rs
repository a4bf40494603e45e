//! C ABI over the markfeed library.
//!
//! Every function returns an [`MfStatus`]; results come back through out
//! pointers. On failure the message is available from [`mf_last_error`] on
//! the same thread. Strings handed out by the library are released with
//! [`mf_string_free`], handles with their own `*_free` function. Text inputs
//! are UTF-8 and tokenized the same way as the command line tool.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use markfeed::agreement::{krippendorff_alpha, Level, RatingMatrix};
use markfeed::cli::Codecs;
use markfeed::corpus::tokenize;
use markfeed::model::ModelParams;
use markfeed::planner::{assign, verify_assignment, AssignmentPlan};
use markfeed::training::translate_all;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Infeasible = 5,
    BufferTooSmall = 6,
    OutOfRange = 7,
    Internal = 8,
}

/// Measurement level for agreement.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfLevel {
    Nominal = 0,
    Interval = 1,
}

/// An annotator assignment plan.
pub struct MfPlan {
    plan: AssignmentPlan,
}

/// A loaded model with its vocabularies.
pub struct MfTranslator {
    codecs: Codecs,
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MfStatus, String);

type Outcome<T> = Result<T, Failure>;

impl From<markfeed::Error> for Failure {
    fn from(e: markfeed::Error) -> Self {
        use markfeed::Error as E;
        let status = match &e {
            E::Io(_) | E::NotFound(_) => MfStatus::Io,
            E::Infeasible(_) => MfStatus::Infeasible,
            E::Numerical(_) => MfStatus::Internal,
            _ => MfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any error or panic, and converts to a status.
fn guard(f: impl FnOnce() -> Outcome<()>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MfStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn text_array<'a>(p: *const *const c_char, n: usize, what: &str) -> Outcome<Vec<&'a str>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&s| text(s, what))
        .collect()
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Outcome<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> Outcome<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(MfStatus::Internal, "string contains a NUL byte".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Translation edit rate of one hypothesis against one reference, as a
/// fraction of the reference length.
///
/// # Safety
/// Pointers must be valid NUL-terminated strings and a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn mf_ter(
    hyp: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let h = tokenize(text(hyp, "hyp")?);
        let r = tokenize(text(reference, "reference")?);
        let score = markfeed::metrics::ter(&h, &r)?;
        put(out, score, "out")
    })
}

/// Corpus BLEU in [0, 100] over `n` hypothesis/reference pairs.
///
/// # Safety
/// `hyps` and `refs` must point to `n` valid strings each.
#[no_mangle]
pub unsafe extern "C" fn mf_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let h: Vec<Vec<String>> = text_array(hyps, n, "hyps")?
            .into_iter()
            .map(tokenize)
            .collect();
        let r: Vec<Vec<String>> = text_array(refs, n, "refs")?
            .into_iter()
            .map(tokenize)
            .collect();
        let score = markfeed::metrics::bleu(&h, &r)?;
        put(out, score, "out")
    })
}

/// Marks the hypothesis tokens that are not part of a longest common
/// subsequence with the reference. Writes one byte per token (1 = marked)
/// into `flags`. `out_len` always receives the token count; when it exceeds
/// `capacity` nothing is written and the status is buffer-too-small.
///
/// # Safety
/// `flags` must have room for `capacity` bytes (it may be null when
/// `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn mf_simulate_markings(
    hyp: *const c_char,
    reference: *const c_char,
    flags: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> MfStatus {
    guard(|| {
        let h = tokenize(text(hyp, "hyp")?);
        let r = tokenize(text(reference, "reference")?);
        let m = markfeed::feedback::simulate_markings("", &h, &r);
        put(out_len, m.flags.len(), "out_len")?;
        if m.flags.len() > capacity {
            return Err(Failure(
                MfStatus::BufferTooSmall,
                format!("need {} flags, capacity {capacity}", m.flags.len()),
            ));
        }
        if !m.flags.is_empty() {
            if flags.is_null() {
                return Err(null("flags"));
            }
            let dst = std::slice::from_raw_parts_mut(flags, m.flags.len());
            for (d, f) in dst.iter_mut().zip(&m.flags) {
                *d = u8::from(*f);
            }
        }
        Ok(())
    })
}

/// Krippendorff's alpha for a row-major `n_units` x `n_raters` matrix.
/// Missing ratings are NaN.
///
/// # Safety
/// `values` must point to `n_units * n_raters` doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_alpha(
    values: *const f64,
    n_units: usize,
    n_raters: usize,
    level: MfLevel,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let total = n_units
            .checked_mul(n_raters)
            .ok_or_else(|| Failure(MfStatus::InvalidArgument, "matrix too large".into()))?;
        if total == 0 {
            return Err(Failure(
                MfStatus::InvalidArgument,
                "empty rating matrix".into(),
            ));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let flat = std::slice::from_raw_parts(values, total);
        let rows = flat
            .chunks(n_raters)
            .map(|row| row.iter().map(|v| (!v.is_nan()).then_some(*v)).collect())
            .collect();
        let level = match level {
            MfLevel::Nominal => Level::Nominal,
            MfLevel::Interval => Level::Interval,
        };
        let units = (0..n_units).map(|i| format!("u{i}")).collect();
        let raters = (0..n_raters).map(|i| format!("r{i}")).collect();
        let alpha = krippendorff_alpha(&RatingMatrix::new(units, raters, rows, level)?)?;
        put(out, alpha, "out")
    })
}

/// Assigns talk parts and feedback modes to annotators.
///
/// # Safety
/// `talks` and `annotators` must point to the given number of strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_plan_assign(
    talks: *const *const c_char,
    n_talks: usize,
    annotators: *const *const c_char,
    n_annotators: usize,
    seed: u64,
    out: *mut *mut MfPlan,
) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let t: Vec<String> = text_array(talks, n_talks, "talks")?
            .into_iter()
            .map(String::from)
            .collect();
        let a: Vec<String> = text_array(annotators, n_annotators, "annotators")?
            .into_iter()
            .map(String::from)
            .collect();
        let plan = assign(&t, &a, seed)?;
        out.write(Box::into_raw(Box::new(MfPlan { plan })));
        Ok(())
    })
}

/// Number of entries in the plan.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_plan_len(plan: *const MfPlan, out: *mut usize) -> MfStatus {
    guard(|| {
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        put(out, p.plan.entries.len(), "out")
    })
}

/// Entry `index` as a JSON object with `talk_id`, `part`, `annotator_id`
/// and `mode`. Free the result with [`mf_string_free`].
///
/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_plan_entry(
    plan: *const MfPlan,
    index: usize,
    out: *mut *mut c_char,
) -> MfStatus {
    guard(|| {
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        let e = p.plan.entries.get(index).ok_or_else(|| {
            Failure(
                MfStatus::OutOfRange,
                format!(
                    "index {index} out of range for {} entries",
                    p.plan.entries.len()
                ),
            )
        })?;
        let json =
            serde_json::to_string(e).map_err(|e| Failure(MfStatus::Internal, e.to_string()))?;
        put(out, owned_string(json)?, "out")
    })
}

/// Checks the plan against every assignment constraint and reports the
/// number of violations (0 for a valid plan).
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_plan_verify(
    plan: *const MfPlan,
    out_violations: *mut usize,
) -> MfStatus {
    guard(|| {
        let p = plan.as_ref().ok_or_else(|| null("plan"))?;
        put(
            out_violations,
            verify_assignment(&p.plan).len(),
            "out_violations",
        )
    })
}

/// Releases a plan. Null is ignored.
///
/// # Safety
/// `plan` must come from [`mf_plan_assign`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mf_plan_free(plan: *mut MfPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Loads vocabularies from a `prepare` output directory and a checkpoint
/// trained against them.
///
/// # Safety
/// Paths must be valid strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_translator_open(
    prepared_dir: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut MfTranslator,
) -> MfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let io = |e: anyhow::Error| Failure(MfStatus::Io, format!("{e:#}"));
        let codecs = Codecs::load(Path::new(text(prepared_dir, "prepared_dir")?)).map_err(io)?;
        let params = codecs
            .load_checkpoint(Path::new(text(checkpoint, "checkpoint")?))
            .map_err(io)?;
        out.write(Box::into_raw(Box::new(MfTranslator { codecs, params })));
        Ok(())
    })
}

/// Translates one sentence; a beam width of 0 or 1 decodes greedily.
/// Free the result with [`mf_string_free`].
///
/// # Safety
/// `translator` must be a live handle, `source` a valid string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mf_translator_translate(
    translator: *const MfTranslator,
    source: *const c_char,
    beam_width: usize,
    out: *mut *mut c_char,
) -> MfStatus {
    guard(|| {
        let t = translator.as_ref().ok_or_else(|| null("translator"))?;
        let x = t.codecs.src.encode(text(source, "source")?);
        let words = translate_all(&t.params, &[x], &t.codecs.trg, beam_width)?;
        put(out, owned_string(words[0].join(" "))?, "out")
    })
}

/// Releases a translator. Null is ignored.
///
/// # Safety
/// `translator` must come from [`mf_translator_open`] and not have been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mf_translator_free(translator: *mut MfTranslator) {
    if !translator.is_null() {
        drop(Box::from_raw(translator));
    }
}
