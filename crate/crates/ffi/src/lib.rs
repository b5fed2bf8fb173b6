//! C interface to a trained summarizer.
//!
//! Models are opaque `QtModel` handles. Every fallible call returns a
//! `QtStatus`; on failure `qt_last_error_message` describes the error for
//! the calling thread. Strings handed out by the library are released with
//! `qt_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qt_core::corpus::CorpusError;
use qt_core::extraction::{EncodedEntity, ExtractionError};
use qt_core::model::{checkpoint_from_bytes, load_checkpoint, CheckpointError};
use qt_core::{ExtractionConfig, ReviewCorpus, Scope, TrainedModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Io = 5,
    Checkpoint = 6,
    TokenizerMismatch = 7,
    Parse = 8,
    Extraction = 9,
    Panic = 10,
}

/// ROUGE F1 scores of one system text against one reference.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QtRouge {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// A loaded model.
pub struct QtModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QtStatus, String);

type Outcome = Result<(), Failure>;

fn fail(status: QtStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: Option<String>) {
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
    });
}

fn guard(f: impl FnOnce() -> Outcome) -> QtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            QtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(Some(format!("panic: {msg}")));
            QtStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(QtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(QtStatus::InvalidUtf8, format!("{what} is not UTF-8: {e}")))
}

unsafe fn model<'a>(m: *const QtModel) -> Result<&'a TrainedModel, Failure> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| fail(QtStatus::NullPointer, "model is null"))
}

fn checkpoint_failure(e: CheckpointError) -> Failure {
    let status = match e {
        CheckpointError::Io { .. } => QtStatus::Io,
        CheckpointError::TokenizerMismatch { .. } => QtStatus::TokenizerMismatch,
        _ => QtStatus::Checkpoint,
    };
    fail(status, e.to_string())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(QtStatus::InvalidArgument, "output contains a nul byte"))
}

unsafe fn publish(out: *mut *mut QtModel, inner: TrainedModel) {
    *out = Box::into_raw(Box::new(QtModel { inner }));
}

/// Loads a checkpoint file. On success `*out` owns a model to be released
/// with `qt_model_free`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qt_model_load(path: *const c_char, out: *mut *mut QtModel) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(QtStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let inner = load_checkpoint(path).map_err(checkpoint_failure)?;
        publish(out, inner);
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut QtModel) -> QtStatus {
    guard(|| {
        if out.is_null() || bytes.is_null() {
            return Err(fail(QtStatus::NullPointer, "bytes or out is null"));
        }
        *out = ptr::null_mut();
        let inner = checkpoint_from_bytes(std::slice::from_raw_parts(bytes, len)).map_err(checkpoint_failure)?;
        publish(out, inner);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a load call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qt_model_free(model: *mut QtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sentence heads, per-head dimension and codebook size. Any output
/// pointer may be null.
///
/// # Safety
/// Non-null pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qt_model_dims(
    model: *const QtModel,
    heads: *mut usize,
    head_dim: *mut usize,
    codebook_size: *mut usize,
) -> QtStatus {
    guard(|| {
        let m = self::model(model)?;
        if let Some(h) = heads.as_mut() {
            *h = m.config.sentence_heads;
        }
        if let Some(d) = head_dim.as_mut() {
            *d = m.codebook.dim();
        }
        if let Some(k) = codebook_size.as_mut() {
            *k = m.codebook.size();
        }
        Ok(())
    })
}

unsafe fn fill<T: Copy>(values: &[T], out: *mut T, capacity: usize, written: *mut usize) -> Outcome {
    if let Some(w) = written.as_mut() {
        *w = values.len();
    }
    if capacity < values.len() {
        return Err(fail(
            QtStatus::BufferTooSmall,
            format!("need room for {} values, got {capacity}", values.len()),
        ));
    }
    if out.is_null() {
        return Err(fail(QtStatus::NullPointer, "out is null"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Encodes one sentence into `heads * head_dim` floats, head-major.
/// `*written` always receives the required length, so a call with
/// `capacity` 0 sizes the buffer.
///
/// # Safety
/// `out` must hold `capacity` floats; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn qt_model_encode(
    model: *const QtModel,
    sentence: *const c_char,
    out: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> QtStatus {
    guard(|| {
        let m = self::model(model)?;
        let enc = m
            .encode_text(text(sentence, "sentence")?)
            .map_err(|e| fail(QtStatus::InvalidArgument, e.to_string()))?;
        fill(enc.as_slice(), out, capacity, written)
    })
}

/// Nearest code of each head for one sentence.
///
/// # Safety
/// `out` must hold `capacity` values; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn qt_model_assign(
    model: *const QtModel,
    sentence: *const c_char,
    out: *mut u32,
    capacity: usize,
    written: *mut usize,
) -> QtStatus {
    guard(|| {
        let m = self::model(model)?;
        let enc = m
            .encode_text(text(sentence, "sentence")?)
            .map_err(|e| fail(QtStatus::InvalidArgument, e.to_string()))?;
        let codes: Vec<u32> = (0..enc.heads()).map(|h| m.codebook.nearest(enc.head(h)).0 as u32).collect();
        fill(&codes, out, capacity, written)
    })
}

/// General summaries for every entity in `reviews_jsonl` (one review per
/// line, as in the training corpus). `config_json` holds extraction
/// settings and may be null for defaults. `*out` receives one summary JSON
/// object per line; free it with `qt_string_free`. Entities without
/// usable sentences are skipped.
///
/// # Safety
/// Strings must be nul-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_model_summarize(
    model: *const QtModel,
    reviews_jsonl: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(QtStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let m = self::model(model)?;
        let cfg: ExtractionConfig = if config_json.is_null() {
            ExtractionConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?)
                .map_err(|e| fail(QtStatus::Parse, format!("config: {e}")))?
        };
        cfg.validate().map_err(|e| fail(QtStatus::InvalidArgument, e.to_string()))?;
        let corpus = ReviewCorpus::from_reader(text(reviews_jsonl, "reviews_jsonl")?.as_bytes(), "ffi")
            .map_err(|e: CorpusError| fail(QtStatus::Parse, e.to_string()))?;
        let mut lines = String::new();
        for entity in &corpus.entities {
            let summary = match EncodedEntity::new(m, entity) {
                Ok(enc) => enc.summarize(&m.codebook, &cfg, Scope::General, None),
                Err(ExtractionError::EmptyEntity) => continue,
                Err(e) => Err(e),
            }
            .map_err(|e| fail(QtStatus::Extraction, format!("{}: {e}", entity.entity_id)))?;
            lines.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
            lines.push('\n');
        }
        *out = to_c_string(lines)?;
        Ok(())
    })
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 of `system` against `reference`.
///
/// # Safety
/// Strings must be nul-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_rouge(system: *const c_char, reference: *const c_char, out: *mut QtRouge) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(QtStatus::NullPointer, "out is null"));
        }
        let reference = text(reference, "reference")?.to_string();
        let t = qt_core::eval::score_against(text(system, "system")?, &[reference]);
        *out = QtRouge {
            rouge1: t.rouge1,
            rouge2: t.rouge2,
            rouge_l: t.rouge_l,
        };
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next library call on the thread.
#[no_mangle]
pub extern "C" fn qt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { qt_model_load(ptr::null(), &mut out) }, QtStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(qt_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "path is null");
        assert!(out.is_null());
    }

    #[test]
    fn success_clears_the_last_error() {
        unsafe { qt_model_free(ptr::null_mut()) };
        let mut r = QtRouge::default();
        assert_eq!(unsafe { qt_rouge(ptr::null(), ptr::null(), &mut r) }, QtStatus::NullPointer);
        assert!(!qt_last_error_message().is_null());
        let a = c"the room was quiet";
        assert_eq!(unsafe { qt_rouge(a.as_ptr(), a.as_ptr(), &mut r) }, QtStatus::Ok);
        assert!(qt_last_error_message().is_null());
        assert_eq!(r.rouge1, 1.0);
    }

    #[test]
    fn panics_become_a_status() {
        assert_eq!(guard(|| panic!("boom")), QtStatus::Panic);
        let msg = unsafe { CStr::from_ptr(qt_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn version_matches_the_crate() {
        let v = unsafe { CStr::from_ptr(qt_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
