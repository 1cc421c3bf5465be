//! C ABI over trained taggers: load a checkpoint, tag whitespace-separated
//! sentences, read contextual representations and FLOPs estimates.
//!
//! Every call returns an `LmpStatus`. On failure the message is kept per
//! thread and can be read with `lmp_last_error`. Strings returned to the
//! caller are freed with `lmp_string_free`, taggers with `lmp_tagger_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use lmprune::io::checkpoint;
use lmprune::pruning::{estimate_flops, ModelShape};
use lmprune::tagger::Tagger;
use lmprune::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    NoLm = 8,
    Internal = 9,
}

/// Opaque tagger handle.
pub struct LmpTagger {
    inner: Tagger,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: LmpStatus, msg: impl Into<String>) -> LmpStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> LmpStatus {
    match e {
        Error::Io { .. } => LmpStatus::Io,
        Error::Parse { .. } => LmpStatus::Parse,
        Error::Checkpoint(_) => LmpStatus::Checkpoint,
        Error::Config(_) | Error::Empty(_) | Error::Contract(_) | Error::Dimension { .. } => LmpStatus::InvalidArgument,
        _ => LmpStatus::Internal,
    }
}

fn from_err(e: Error) -> LmpStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, LmpStatus> {
    if p.is_null() {
        return Err(fail(LmpStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LmpStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn tagger_ref<'a>(t: *const LmpTagger) -> Result<&'a Tagger, LmpStatus> {
    t.as_ref()
        .map(|t| &t.inner)
        .ok_or_else(|| fail(LmpStatus::NullPointer, "null tagger handle"))
}

fn words_of(s: &str) -> Result<Vec<&str>, LmpStatus> {
    let w: Vec<&str> = s.split_whitespace().collect();
    if w.is_empty() {
        return Err(fail(LmpStatus::InvalidArgument, "empty sentence"));
    }
    Ok(w)
}

macro_rules! guard {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lmp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lmp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a tagger checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_load(path: *const c_char, out: *mut *mut LmpTagger) -> LmpStatus {
    if out.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    *out = ptr::null_mut();
    let path = guard!(read_str(path));
    match checkpoint::load_tagger(Path::new(path)) {
        Ok((t, _)) => {
            *out = Box::into_raw(Box::new(LmpTagger { inner: t }));
            LmpStatus::Ok
        }
        Err(e) => from_err(e),
    }
}

/// # Safety
/// `t` must come from `lmp_tagger_load` and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_free(t: *mut LmpTagger) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `s` must come from this library, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn lmp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Tag a whitespace-separated sentence. `*out` receives the labels joined
/// by single spaces; free it with `lmp_string_free`.
///
/// # Safety
/// Pointers must be valid; `sentence` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_predict(
    t: *const LmpTagger,
    sentence: *const c_char,
    out: *mut *mut c_char,
) -> LmpStatus {
    if out.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    *out = ptr::null_mut();
    let tagger = guard!(tagger_ref(t));
    let words = guard!(words_of(guard!(read_str(sentence))));
    match tagger.predict(&words) {
        Ok(labels) => match CString::new(labels.join(" ")) {
            Ok(s) => {
                *out = s.into_raw();
                LmpStatus::Ok
            }
            Err(_) => fail(LmpStatus::Internal, "label contains NUL"),
        },
        Err(e) => from_err(e),
    }
}

/// Number of labels the tagger predicts.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_num_labels(t: *const LmpTagger, out: *mut usize) -> LmpStatus {
    let tagger = guard!(tagger_ref(t));
    if out.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    *out = tagger.labels.len();
    LmpStatus::Ok
}

/// Surviving layers in the forward and backward LM stacks. Fails with
/// `NO_LM` for taggers without LM features.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_lm_layers(t: *const LmpTagger, fwd: *mut usize, bwd: *mut usize) -> LmpStatus {
    let tagger = guard!(tagger_ref(t));
    if fwd.is_null() || bwd.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    let Some(e) = &tagger.embedder else {
        return fail(LmpStatus::NoLm, "tagger has no LM features");
    };
    *fwd = e.fwd.stack.num_layers();
    *bwd = e.bwd.stack.num_layers();
    LmpStatus::Ok
}

/// Estimated multiply-adds per word. `chars_per_word` scales the character
/// path; pass 0 for the default.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_flops(t: *const LmpTagger, chars_per_word: f64, out: *mut f64) -> LmpStatus {
    let tagger = guard!(tagger_ref(t));
    if out.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    if !(chars_per_word >= 0.0 && chars_per_word.is_finite()) {
        return fail(LmpStatus::InvalidArgument, "chars_per_word must be finite and >= 0");
    }
    let cpw = if chars_per_word == 0.0 {
        lmprune::pruning::flops::DEFAULT_CHARS_PER_WORD
    } else {
        chars_per_word
    };
    *out = estimate_flops(&ModelShape::of_tagger(tagger, cpw)).total();
    LmpStatus::Ok
}

/// Contextual representations for a sentence, row-major `rows x cols`.
/// `*rows` and `*cols` are always set on success or `BUFFER_TOO_SMALL`; call
/// with `cap = 0` to size the buffer.
///
/// # Safety
/// `buf` must hold `cap` doubles (or be NULL when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn lmp_tagger_embed(
    t: *const LmpTagger,
    sentence: *const c_char,
    buf: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> LmpStatus {
    let tagger = guard!(tagger_ref(t));
    if rows.is_null() || cols.is_null() {
        return fail(LmpStatus::NullPointer, "null output pointer");
    }
    let Some(e) = &tagger.embedder else {
        return fail(LmpStatus::NoLm, "tagger has no LM features");
    };
    let words = guard!(words_of(guard!(read_str(sentence))));
    let r = match e.embed_sequence(&words) {
        Ok(r) => r,
        Err(err) => return from_err(err),
    };
    *rows = r.rows();
    *cols = r.cols();
    if cap < r.len() {
        return fail(
            LmpStatus::BufferTooSmall,
            format!("need {} doubles, buffer holds {cap}", r.len()),
        );
    }
    if buf.is_null() {
        return fail(LmpStatus::NullPointer, "null buffer");
    }
    ptr::copy_nonoverlapping(r.data().as_ptr(), buf, r.len());
    LmpStatus::Ok
}
