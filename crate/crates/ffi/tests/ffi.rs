use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ugro_ffi::*;

fn cstrs(items: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = items.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs = owned.iter().map(|c| c.as_ptr()).collect();
    (owned, ptrs)
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ugro_string_free(p);
    s
}

fn last_error() -> String {
    let p = ugro_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn bleu_matches_hand_example() {
    let (_h, hp) = cstrs(&["a b c d e"]);
    let (_r, rp) = cstrs(&["a b c d f"]);
    let mut bleu = -1.0;
    let st = unsafe { ugro_corpus_bleu(hp.as_ptr(), rp.as_ptr(), 1, &mut bleu) };
    assert_eq!(st, UgroStatus::Ok);
    assert!((bleu - 0.2f64.powf(0.25)).abs() < 1e-9);
}

#[test]
fn rouge_and_mean() {
    let (_h, hp) = cstrs(&["the cat sat"]);
    let (_r, rp) = cstrs(&["the cat sat on the mat"]);
    let mut out = UgroRouge::default();
    assert_eq!(unsafe { ugro_corpus_rouge(hp.as_ptr(), rp.as_ptr(), 1, &mut out) }, UgroStatus::Ok);
    assert!((out.r1_f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((out.mean_f1 - (out.r1_f1 + out.r2_f1 + out.rl_f1) / 3.0).abs() < 1e-12);
}

#[test]
fn empty_metric_input_is_an_error() {
    let mut bleu = 0.0;
    let st = unsafe { ugro_corpus_bleu(ptr::null(), ptr::null(), 0, &mut bleu) };
    assert_eq!(st, UgroStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn null_out_pointer_is_rejected() {
    let (_h, hp) = cstrs(&["a"]);
    let st = unsafe { ugro_corpus_bleu(hp.as_ptr(), hp.as_ptr(), 1, ptr::null_mut()) };
    assert_eq!(st, UgroStatus::NullArgument);
    assert!(last_error().contains("out_bleu"));
}

#[test]
fn classification_report_json() {
    let preds = [3u8, 3, 4];
    let golds = [3u8, 4, 4];
    let mut json = ptr::null_mut();
    let st = unsafe { ugro_classification_report_json(preds.as_ptr(), golds.as_ptr(), 3, &mut json) };
    assert_eq!(st, UgroStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&unsafe { take_string(json) }).unwrap();
    assert!((v["macro_f1"].as_f64().unwrap() - 0.8 / 3.0).abs() < 1e-9);

    let bad = [9u8];
    let st = unsafe { ugro_classification_report_json(bad.as_ptr(), bad.as_ptr(), 1, &mut json) };
    assert_eq!(st, UgroStatus::InvalidArgument);
}

#[test]
fn parse_output() {
    let text = CString::new("Explanation: fine.\nSatisfaction score: 4").unwrap();
    let mut score = 0u8;
    let mut expl = ptr::null_mut();
    assert_eq!(unsafe { ugro_parse_simulator_output(text.as_ptr(), &mut score, &mut expl) }, UgroStatus::Ok);
    assert_eq!(score, 4);
    assert!(unsafe { take_string(expl) }.contains("fine"));

    let junk = CString::new("no rating here").unwrap();
    let st = unsafe { ugro_parse_simulator_output(junk.as_ptr(), &mut score, ptr::null_mut()) };
    assert_eq!(st, UgroStatus::ParseError);
    assert_eq!(score, 4, "outputs untouched on failure");
}

#[test]
fn invalid_utf8_is_reported() {
    let bytes = [0xffu8, 0xfe, 0];
    let mut score = 0u8;
    let st = unsafe { ugro_parse_simulator_output(bytes.as_ptr().cast(), &mut score, ptr::null_mut()) };
    assert_eq!(st, UgroStatus::InvalidUtf8);
}

#[test]
fn scripted_score_and_rerank() {
    let resp = CString::new("a cheap place in the north").unwrap();
    let (_k, kp) = cstrs(&["cheap", "north"]);
    let mut score = 0u8;
    assert_eq!(
        unsafe { ugro_scripted_score(resp.as_ptr(), kp.as_ptr(), 2, &mut score, ptr::null_mut()) },
        UgroStatus::Ok
    );
    assert_eq!(score, 5);

    let scores = [2u8, 5, 5, 1];
    let mut idx = usize::MAX;
    assert_eq!(unsafe { ugro_rerank(scores.as_ptr(), 4, &mut idx) }, UgroStatus::Ok);
    assert_eq!(idx, 1);
    assert_eq!(unsafe { ugro_rerank(ptr::null(), 0, &mut idx) }, UgroStatus::InvalidArgument);
}

#[test]
fn corpus_handle_round_trip() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { ugro_corpus_synthetic(5, 3, &mut c) }, UgroStatus::Ok);
    assert_eq!(unsafe { ugro_corpus_len(c) }, 5);
    let mut jsonl = ptr::null_mut();
    assert_eq!(unsafe { ugro_corpus_to_jsonl(c, &mut jsonl) }, UgroStatus::Ok);
    let text = CString::new(unsafe { take_string(jsonl) }).unwrap();
    unsafe { ugro_corpus_free(c) };

    let mut c2 = ptr::null_mut();
    assert_eq!(unsafe { ugro_corpus_parse(text.as_ptr(), &mut c2) }, UgroStatus::Ok);
    assert_eq!(unsafe { ugro_corpus_len(c2) }, 5);
    unsafe { ugro_corpus_free(c2) };

    assert_eq!(unsafe { ugro_corpus_len(ptr::null()) }, 0);
    unsafe { ugro_corpus_free(ptr::null_mut()) };
}

#[test]
fn missing_files_are_io_errors() {
    let p = CString::new("/nonexistent/corpus.jsonl").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { ugro_corpus_load(p.as_ptr(), &mut c) }, UgroStatus::IoError);
    assert!(c.is_null());
    let mut pol = ptr::null_mut();
    assert_eq!(unsafe { ugro_policy_load(p.as_ptr(), &mut pol) }, UgroStatus::IoError);
}

#[test]
fn policy_handle_generates() {
    use ugro_core::corpus::generate_synthetic_corpus;
    use ugro_core::policy::{build_tokenizer, save_checkpoint, HeadInit, ModelConfig, PolicyModel};

    let corpus = generate_synthetic_corpus(4, 0).unwrap();
    let tok = build_tokenizer(&corpus, 200, 1).unwrap();
    let cfg = ModelConfig {
        vocab_size: tok.vocab_size(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 128,
    };
    let model = PolicyModel::<f32>::new(cfg, 1, HeadInit::FullyRandom).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt.json");
    save_checkpoint(&path, &model, &tok).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut pol = ptr::null_mut();
    assert_eq!(unsafe { ugro_policy_load(cpath.as_ptr(), &mut pol) }, UgroStatus::Ok);
    assert_eq!(unsafe { ugro_policy_vocab_size(pol) }, tok.vocab_size());

    let history = CString::new(r#"[{"speaker":"user","text":"i need a cheap hotel"}]"#).unwrap();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { ugro_policy_generate(pol, history.as_ptr(), 8, &mut a) }, UgroStatus::Ok);
    assert_eq!(unsafe { ugro_policy_generate(pol, history.as_ptr(), 8, &mut b) }, UgroStatus::Ok);
    assert_eq!(unsafe { take_string(a) }, unsafe { take_string(b) }, "greedy decoding is deterministic");

    let bad = CString::new("not json").unwrap();
    assert_eq!(unsafe { ugro_policy_generate(pol, bad.as_ptr(), 8, &mut a) }, UgroStatus::ParseError);
    unsafe { ugro_policy_free(pol) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(ugro_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ugro.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "ugro_last_error",
        "ugro_version",
        "ugro_string_free",
        "ugro_corpus_bleu",
        "ugro_corpus_rouge",
        "ugro_classification_report_json",
        "ugro_parse_simulator_output",
        "ugro_scripted_score",
        "ugro_rerank",
        "ugro_corpus_load",
        "ugro_corpus_parse",
        "ugro_corpus_synthetic",
        "ugro_corpus_len",
        "ugro_corpus_to_jsonl",
        "ugro_corpus_free",
        "ugro_policy_load",
        "ugro_policy_vocab_size",
        "ugro_policy_generate",
        "ugro_policy_free",
    ] {
        assert!(text.contains(&format!("{f}(")), "header lacks {f}");
    }
    // Syntax-check with a C compiler when one is installed.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
