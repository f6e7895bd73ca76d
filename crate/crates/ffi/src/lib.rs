//! C ABI over `ugro-core`.
//!
//! Conventions:
//! - Every fallible function returns a [`UgroStatus`]; on failure the message
//!   is available from [`ugro_last_error`] on the same thread.
//! - Results are written through out-pointers only on success.
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with [`ugro_string_free`]; handles with their `_free` function.
//! - Panics never cross the boundary; they surface as `UGRO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ugro_core::corpus::{generate_synthetic_corpus, load_corpus, parse_corpus, Corpus, Turn};
use ugro_core::metrics::{classification_report, corpus_bleu, corpus_rouge};
use ugro_core::policy::{load_checkpoint, greedy_decoding, PolicyModel, Tokenizer};
use ugro_core::simulator::{parse_simulator_output, scripted_score, SatisfactionJudgment};
use ugro_core::train::generate_response;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UgroStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    IoError = 5,
    Panic = 6,
}

/// ROUGE F1 scores and their mean.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UgroRouge {
    pub r1_f1: f64,
    pub r2_f1: f64,
    pub rl_f1: f64,
    pub mean_f1: f64,
}

/// Opaque dialogue corpus.
pub struct UgroCorpus(Corpus);

/// Opaque trained policy with its tokenizer.
pub struct UgroPolicy {
    model: PolicyModel<f32>,
    tokenizer: Tokenizer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(UgroStatus, String);

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Failure(UgroStatus::InvalidArgument, msg.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UgroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UgroStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            UgroStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(UgroStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(UgroStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn str_array<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Failure(UgroStatus::NullArgument, format!("{name} is NULL")));
    }
    (0..n).map(|i| str_arg(*p.add(i), &format!("{name}[{i}]"))).collect()
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(UgroStatus::NullArgument, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(UgroStatus::NullArgument, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs replaced").into_raw()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ugro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ugro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ugro_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corpus-level BLEU-4 in [0, 1].
///
/// # Safety
/// `hyps` and `refs` must point to `n` valid C strings each.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out_bleu: *mut f64,
) -> UgroStatus {
    guard(|| {
        out_ptr(out_bleu, "out_bleu")?;
        let h = str_array(hyps, n, "hyps")?;
        let r = str_array(refs, n, "refs")?;
        let report = corpus_bleu(&h, &r).map_err(Failure::invalid)?;
        *out_bleu = report.bleu;
        Ok(())
    })
}

/// Mean per-pair ROUGE-1/2/L F1 over `n` pairs.
///
/// # Safety
/// `hyps` and `refs` must point to `n` valid C strings each.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_rouge(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut UgroRouge,
) -> UgroStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let h = str_array(hyps, n, "hyps")?;
        let r = str_array(refs, n, "refs")?;
        let rep = corpus_rouge(&h, &r).map_err(Failure::invalid)?;
        *out = UgroRouge {
            r1_f1: rep.r1.f1,
            r2_f1: rep.r2.f1,
            rl_f1: rep.rl.f1,
            mean_f1: rep.mean_f1,
        };
        Ok(())
    })
}

/// Five-class satisfaction classification report as a JSON object.
///
/// # Safety
/// `predictions` and `golds` must point to `n` bytes each; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_classification_report_json(
    predictions: *const u8,
    golds: *const u8,
    n: usize,
    out_json: *mut *mut c_char,
) -> UgroStatus {
    guard(|| {
        out_ptr(out_json, "out_json")?;
        let p = slice_arg(predictions, n, "predictions")?;
        let g = slice_arg(golds, n, "golds")?;
        let report = classification_report(p, g).map_err(Failure::invalid)?;
        *out_json = into_c_string(serde_json::to_string(&report).expect("report serializes"));
        Ok(())
    })
}

fn write_judgment(j: SatisfactionJudgment, out_score: *mut u8, out_explanation: *mut *mut c_char) {
    // SAFETY: callers checked `out_score`; `out_explanation` may be NULL.
    unsafe {
        *out_score = j.score;
        if !out_explanation.is_null() {
            *out_explanation = into_c_string(j.explanation);
        }
    }
}

/// Extracts the satisfaction score (1-5) and explanation from raw scorer
/// output. `out_explanation` may be NULL.
///
/// # Safety
/// `text` must be a valid C string; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_parse_simulator_output(
    text: *const c_char,
    out_score: *mut u8,
    out_explanation: *mut *mut c_char,
) -> UgroStatus {
    guard(|| {
        out_ptr(out_score, "out_score")?;
        let t = str_arg(text, "text")?;
        let j = parse_simulator_output(t).map_err(|e| Failure(UgroStatus::ParseError, e.to_string()))?;
        write_judgment(j, out_score, out_explanation);
        Ok(())
    })
}

/// Offline keyword-coverage oracle. `out_explanation` may be NULL.
///
/// # Safety
/// `response` must be a valid C string and `keywords` must point to
/// `n_keywords` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn ugro_scripted_score(
    response: *const c_char,
    keywords: *const *const c_char,
    n_keywords: usize,
    out_score: *mut u8,
    out_explanation: *mut *mut c_char,
) -> UgroStatus {
    guard(|| {
        out_ptr(out_score, "out_score")?;
        let r = str_arg(response, "response")?;
        let kw: Vec<String> = str_array(keywords, n_keywords, "keywords")?
            .into_iter()
            .map(str::to_string)
            .collect();
        let j = scripted_score(&[], r, &kw).map_err(Failure::invalid)?;
        write_judgment(j, out_score, out_explanation);
        Ok(())
    })
}

/// Index of the highest score; ties go to the lowest index.
///
/// # Safety
/// `scores` must point to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn ugro_rerank(scores: *const u8, n: usize, out_index: *mut usize) -> UgroStatus {
    guard(|| {
        out_ptr(out_index, "out_index")?;
        let s = slice_arg(scores, n, "scores")?;
        let judgments: Vec<SatisfactionJudgment> = s
            .iter()
            .map(|&score| SatisfactionJudgment {
                score,
                explanation: String::new(),
                raw_text: String::new(),
            })
            .collect();
        let (best, _) = ugro_core::simulator::rerank_candidates(&judgments).map_err(Failure::invalid)?;
        *out_index = best;
        Ok(())
    })
}

fn emit_corpus(c: Corpus, out: *mut *mut UgroCorpus) {
    // SAFETY: callers checked `out`.
    unsafe { *out = Box::into_raw(Box::new(UgroCorpus(c))) }
}

/// Loads a JSONL corpus file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_load(path: *const c_char, out: *mut *mut UgroCorpus) -> UgroStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let p = str_arg(path, "path")?;
        let c = load_corpus(p).map_err(|e| match e {
            ugro_core::corpus::CorpusError::Io { .. } => Failure(UgroStatus::IoError, e.to_string()),
            _ => Failure(UgroStatus::ParseError, e.to_string()),
        })?;
        emit_corpus(c, out);
        Ok(())
    })
}

/// Parses JSONL corpus text.
///
/// # Safety
/// `jsonl` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_parse(jsonl: *const c_char, out: *mut *mut UgroCorpus) -> UgroStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = str_arg(jsonl, "jsonl")?;
        let c = parse_corpus(text).map_err(|e| Failure(UgroStatus::ParseError, e.to_string()))?;
        emit_corpus(c, out);
        Ok(())
    })
}

/// Deterministic synthetic booking corpus.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_synthetic(n_dialogues: usize, seed: u64, out: *mut *mut UgroCorpus) -> UgroStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let c = generate_synthetic_corpus(n_dialogues, seed).map_err(Failure::invalid)?;
        emit_corpus(c, out);
        Ok(())
    })
}

/// Number of dialogues; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_len(corpus: *const UgroCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Serializes the corpus back to JSONL.
///
/// # Safety
/// `corpus` must be a live handle; `out_jsonl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_to_jsonl(corpus: *const UgroCorpus, out_jsonl: *mut *mut c_char) -> UgroStatus {
    guard(|| {
        out_ptr(out_jsonl, "out_jsonl")?;
        let c = corpus
            .as_ref()
            .ok_or_else(|| Failure(UgroStatus::NullArgument, "corpus is NULL".into()))?;
        *out_jsonl = into_c_string(c.0.to_jsonl());
        Ok(())
    })
}

/// Releases a corpus handle. NULL is ignored.
///
/// # Safety
/// `corpus` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ugro_corpus_free(corpus: *mut UgroCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads a policy checkpoint written by the `sft` or `ppo` commands.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_policy_load(path: *const c_char, out: *mut *mut UgroPolicy) -> UgroStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let p = str_arg(path, "path")?;
        let (model, tokenizer) = load_checkpoint(p).map_err(|e| match e {
            ugro_core::policy::PolicyError::Io(_) => Failure(UgroStatus::IoError, e.to_string()),
            _ => Failure(UgroStatus::ParseError, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(UgroPolicy { model, tokenizer }));
        Ok(())
    })
}

/// Vocabulary size of the policy's tokenizer; 0 for NULL.
///
/// # Safety
/// `policy` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugro_policy_vocab_size(policy: *const UgroPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.tokenizer.vocab_size())
}

/// Greedy response for a dialogue history given as a JSON array of turns
/// (`[{"speaker": "user", "text": "..."}, ...]`).
///
/// # Safety
/// `policy` must be a live handle, `history_json` a valid C string and
/// `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn ugro_policy_generate(
    policy: *const UgroPolicy,
    history_json: *const c_char,
    max_new_tokens: usize,
    out_text: *mut *mut c_char,
) -> UgroStatus {
    guard(|| {
        out_ptr(out_text, "out_text")?;
        let p = policy
            .as_ref()
            .ok_or_else(|| Failure(UgroStatus::NullArgument, "policy is NULL".into()))?;
        let h = str_arg(history_json, "history_json")?;
        let history: Vec<Turn> =
            serde_json::from_str(h).map_err(|e| Failure(UgroStatus::ParseError, e.to_string()))?;
        let text = generate_response(&p.model, &p.tokenizer, &history, &greedy_decoding(max_new_tokens))
            .map_err(Failure::invalid)?;
        *out_text = into_c_string(text);
        Ok(())
    })
}

/// Releases a policy handle. NULL is ignored.
///
/// # Safety
/// `policy` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ugro_policy_free(policy: *mut UgroPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
