use std::ffi::{CStr, CString};
use std::ptr;

use qt_core::extraction::summarize_entity;
use qt_core::model::checkpoint_bytes;
use qt_core::ExtractionConfig;
use qt_ffi::*;

mod common;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qt_last_error_message()) }.to_str().unwrap().to_string()
}

#[test]
fn round_trip_matches_the_core_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model, corpus) = common::toy_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { qt_model_load(cpath.as_ptr(), &mut handle) }, QtStatus::Ok);
    assert!(!handle.is_null());

    let (mut h, mut d, mut k) = (0, 0, 0);
    assert_eq!(unsafe { qt_model_dims(handle, &mut h, &mut d, &mut k) }, QtStatus::Ok);
    assert_eq!((h, d, k), (2, 32, 16));

    let sentence = CString::new("the room was quiet").unwrap();
    let mut needed = 0;
    let status = unsafe { qt_model_encode(handle, sentence.as_ptr(), ptr::null_mut(), 0, &mut needed) };
    assert_eq!(status, QtStatus::BufferTooSmall);
    assert_eq!(needed, 64);
    let mut buf = vec![0f32; needed];
    let status = unsafe { qt_model_encode(handle, sentence.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut needed) };
    assert_eq!(status, QtStatus::Ok);
    let expected = model.encode_text("the room was quiet").unwrap();
    assert_eq!(buf, expected.as_slice());

    let mut codes = [0u32; 2];
    let status = unsafe { qt_model_assign(handle, sentence.as_ptr(), codes.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(status, QtStatus::Ok);
    for (head, &c) in codes.iter().enumerate() {
        assert_eq!(c as usize, model.codebook.nearest(expected.head(head)).0);
    }

    let mut jsonl = Vec::new();
    corpus.write_jsonl(&mut jsonl).unwrap();
    let reviews = CString::new(jsonl).unwrap();
    let cfg = ExtractionConfig {
        seed: 3,
        ..ExtractionConfig::default()
    };
    let cfg_json = CString::new(serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { qt_model_summarize(handle, reviews.as_ptr(), cfg_json.as_ptr(), &mut out) };
    assert_eq!(status, QtStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { qt_string_free(out) };
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), corpus.entities.len());
    for (line, entity) in lines.iter().zip(&corpus.entities) {
        let direct = summarize_entity(&model, entity, &cfg).unwrap();
        assert_eq!(*line, serde_json::to_string(&direct).unwrap());
    }

    let bytes = checkpoint_bytes(&model);
    let mut from_bytes = ptr::null_mut();
    assert_eq!(unsafe { qt_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut from_bytes) }, QtStatus::Ok);
    let mut again = [0u32; 2];
    unsafe { qt_model_assign(from_bytes, sentence.as_ptr(), again.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(again, codes);

    let mut broken = ptr::null_mut();
    let status = unsafe { qt_model_load_bytes(bytes.as_ptr(), bytes.len() / 2, &mut broken) };
    assert_eq!(status, QtStatus::Checkpoint);
    assert!(broken.is_null());

    let bad_cfg = CString::new(r#"{"word_budget": "many"}"#).unwrap();
    let status = unsafe { qt_model_summarize(handle, reviews.as_ptr(), bad_cfg.as_ptr(), &mut out) };
    assert_eq!(status, QtStatus::Parse);
    assert!(last_error().starts_with("config:"));
    let zero_budget = CString::new(r#"{"word_budget": 0}"#).unwrap();
    let status = unsafe { qt_model_summarize(handle, reviews.as_ptr(), zero_budget.as_ptr(), &mut out) };
    assert_eq!(status, QtStatus::InvalidArgument);
    let garbage = CString::new("not json").unwrap();
    let status = unsafe { qt_model_summarize(handle, garbage.as_ptr(), ptr::null(), &mut out) };
    assert_eq!(status, QtStatus::Parse);
    assert!(out.is_null());

    unsafe {
        qt_model_free(handle);
        qt_model_free(from_bytes);
    }
}

#[test]
fn load_errors_map_to_statuses() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.qtckpt").unwrap();
    assert_eq!(unsafe { qt_model_load(missing.as_ptr(), &mut handle) }, QtStatus::Io);
    assert!(last_error().contains("/nonexistent/model.qtckpt"));

    let junk = b"definitely not a checkpoint";
    assert_eq!(unsafe { qt_model_load_bytes(junk.as_ptr(), junk.len(), &mut handle) }, QtStatus::Checkpoint);
    assert!(handle.is_null());

    let invalid = [0x66u8, 0xff, 0x00];
    let status = unsafe { qt_model_load(invalid.as_ptr().cast(), &mut handle) };
    assert_eq!(status, QtStatus::InvalidUtf8);

    let null_model = ptr::null();
    assert_eq!(unsafe { qt_model_dims(null_model, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, QtStatus::NullPointer);
}

#[test]
fn rouge_matches_the_core_scorer() {
    let sys = "the staff were friendly and the room was clean";
    let reference = "the room was clean and quiet";
    let (a, b) = (CString::new(sys).unwrap(), CString::new(reference).unwrap());
    let mut r = QtRouge::default();
    assert_eq!(unsafe { qt_rouge(a.as_ptr(), b.as_ptr(), &mut r) }, QtStatus::Ok);
    let t = qt_core::eval::score_against(sys, &[reference.to_string()]);
    assert_eq!((r.rouge1, r.rouge2, r.rouge_l), (t.rouge1, t.rouge2, t.rouge_l));
    assert!(r.rouge1 > r.rouge2 && r.rouge2 > 0.0);
}
