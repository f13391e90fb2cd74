//! C interface to skelgen.
//!
//! Every fallible function returns an [`SkgStatus`]; on anything other than
//! `SKG_STATUS_OK` a message is available from [`skg_last_error`] on the same
//! thread. Objects are opaque handles released with their `_free` function,
//! and strings returned through `char **` are released with
//! [`skg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::Serialize;
use skelgen::corpus::{make_batches, parse_corpus, DiiPolicy};
use skelgen::eval::{meteor_lite, score_story};
use skelgen::models::{GenerateOptions, ModelBundle};
use skelgen::skeleton::{skeleton_of, tokenize_lower, Lexicons, SkeletonRepr, STORY_LEN};
use skelgen::train::{effective_repr, encode_corpus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkgRepr {
    Surface = 0,
    Nominalized = 1,
    Abstract = 2,
}

impl From<SkgRepr> for SkeletonRepr {
    fn from(r: SkgRepr) -> Self {
        match r {
            SkgRepr::Surface => SkeletonRepr::Surface,
            SkgRepr::Nominalized => SkeletonRepr::Nominalized,
            SkgRepr::Abstract => SkeletonRepr::Abstract,
        }
    }
}

/// Scores of one generated story against its reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SkgStoryScore {
    /// Story-level METEOR-lite, 0 to 100.
    pub meteor_lite: f64,
    pub skeleton_distance: f64,
    pub distinct_entities: usize,
    pub reference_distinct_entities: usize,
}

/// Pronoun, category and stop-noun lexicons.
pub struct SkgLexicons {
    inner: Lexicons,
}

/// A trained model with its vocabularies.
pub struct SkgModel {
    bundle: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SkgStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: SkgStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Outcome<()>>(f: F) -> SkgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkgStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            SkgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(SkgStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SkgStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn story<'a>(sentences: *const *const c_char, count: usize, what: &str) -> Outcome<Vec<&'a str>> {
    if sentences.is_null() {
        return Err(Failure(SkgStatus::NullArgument, format!("{what} is null")));
    }
    if count != STORY_LEN {
        return Err(Failure(
            SkgStatus::InvalidArgument,
            format!("{what} must have {STORY_LEN} sentences, got {count}"),
        ));
    }
    (0..count)
        .map(|i| text(*sentences.add(i), &format!("{what}[{i}]")))
        .collect()
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Outcome<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(SkgStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Outcome<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(SkgStatus::NullArgument, format!("{what} is null")))
}

fn into_c_string(s: String) -> Outcome<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(fail(SkgStatus::InvalidArgument))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn skg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn skg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the lexicons compiled into the library.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn skg_lexicons_bundled(out: *mut *mut SkgLexicons) -> SkgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(SkgLexicons { inner: Lexicons::bundled() }));
        Ok(())
    })
}

/// Loads `pronouns.txt`, `categories.tsv` and `stop_nouns.txt` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_lexicons_from_dir(dir: *const c_char, out: *mut *mut SkgLexicons) -> SkgStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        let out = out_ptr(out, "out")?;
        let inner = Lexicons::from_dir(Path::new(dir)).map_err(fail(SkgStatus::Io))?;
        *out = Box::into_raw(Box::new(SkgLexicons { inner }));
        Ok(())
    })
}

/// # Safety
/// `lex` must be NULL or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skg_lexicons_free(lex: *mut SkgLexicons) {
    if !lex.is_null() {
        drop(Box::from_raw(lex));
    }
}

/// Extracts the entity skeleton of a five-sentence story and writes it as
/// JSON (`{"repr": ..., "slots": [...]}`) to `out_json`.
///
/// # Safety
/// `sentences` must point to `count` NUL-terminated strings; `lex` must be a
/// live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_extract_skeleton(
    lex: *const SkgLexicons,
    sentences: *const *const c_char,
    count: usize,
    repr: SkgRepr,
    out_json: *mut *mut c_char,
) -> SkgStatus {
    guard(|| {
        let lex = handle(lex, "lex")?;
        let sentences = story(sentences, count, "sentences")?;
        let out = out_ptr(out_json, "out_json")?;
        let skeleton = skeleton_of(&sentences, &lex.inner, repr.into());
        *out = into_c_string(serde_json::to_string(&skeleton).map_err(fail(SkgStatus::Model))?)?;
        Ok(())
    })
}

/// Writes the five presence bits of the story's central chain to `out`.
///
/// # Safety
/// As [`skg_extract_skeleton`]; `out` must have room for five bytes.
#[no_mangle]
pub unsafe extern "C" fn skg_presence(
    lex: *const SkgLexicons,
    sentences: *const *const c_char,
    count: usize,
    out: *mut u8,
) -> SkgStatus {
    guard(|| {
        let lex = handle(lex, "lex")?;
        let sentences = story(sentences, count, "sentences")?;
        if out.is_null() {
            return Err(Failure(SkgStatus::NullArgument, "out is null".into()));
        }
        let bits = skeleton_of(&sentences, &lex.inner, SkeletonRepr::Surface).presence_vector();
        ptr::copy_nonoverlapping(bits.as_ptr(), out, STORY_LEN);
        Ok(())
    })
}

/// METEOR-lite of one hypothesis sentence against one reference, in [0, 1].
///
/// # Safety
/// `hypothesis` and `reference` must be NUL-terminated strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_meteor(hypothesis: *const c_char, reference: *const c_char, out: *mut f64) -> SkgStatus {
    guard(|| {
        let h = tokenize_lower(text(hypothesis, "hypothesis")?);
        let r = tokenize_lower(text(reference, "reference")?);
        let out = out_ptr(out, "out")?;
        *out = meteor_lite(&h, &r).map_err(fail(SkgStatus::InvalidArgument))?;
        Ok(())
    })
}

/// Scores a generated five-sentence story against its reference.
///
/// # Safety
/// Both story arrays must hold five NUL-terminated strings; `lex` must be a
/// live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_score_story(
    lex: *const SkgLexicons,
    reference: *const *const c_char,
    generated: *const *const c_char,
    count: usize,
    out: *mut SkgStoryScore,
) -> SkgStatus {
    guard(|| {
        let lex = handle(lex, "lex")?;
        let reference = story(reference, count, "reference")?;
        let generated = story(generated, count, "generated")?;
        let out = out_ptr(out, "out")?;
        let s = score_story(&reference, &generated, &lex.inner).map_err(fail(SkgStatus::InvalidArgument))?;
        *out = SkgStoryScore {
            meteor_lite: s.meteor_lite,
            skeleton_distance: s.skeleton_distance,
            distinct_entities: s.distinct_entities,
            reference_distinct_entities: s.reference_distinct_entities,
        };
        Ok(())
    })
}

/// Loads a checkpoint written by `skelgen train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_model_load(path: *const c_char, out: *mut *mut SkgModel) -> SkgStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ptr(out, "out")?;
        let bundle = ModelBundle::load(Path::new(path)).map_err(fail(SkgStatus::Io))?;
        *out = Box::into_raw(Box::new(SkgModel { bundle }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skg_model_free(model: *mut SkgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model configuration and vocabulary sizes as JSON.
///
/// # Safety
/// `model` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_model_info(model: *const SkgModel, out_json: *mut *mut c_char) -> SkgStatus {
    #[derive(Serialize)]
    struct Info<'a> {
        config: &'a skelgen::models::ModelConfig,
        vocab_size: usize,
        skeleton_vocab_size: usize,
    }
    guard(|| {
        let b = &handle(model, "model")?.bundle;
        let out = out_ptr(out_json, "out_json")?;
        let info = Info {
            config: b.model.config(),
            vocab_size: b.vocab.len(),
            skeleton_vocab_size: b.skeleton_vocab.len(),
        };
        *out = into_c_string(serde_json::to_string(&info).map_err(fail(SkgStatus::Model))?)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct GeneratedLine {
    id: String,
    sentences: Vec<String>,
}

/// Greedily generates a story for every line of `corpus_jsonl` (the corpus
/// format read by `skelgen generate`). Missing DII are copied from the SIS.
/// Writes one `{"id", "sentences"}` JSON line per story to `out_jsonl`.
///
/// # Safety
/// `model` and `lex` must be live handles, `corpus_jsonl` a NUL-terminated
/// string and `out_jsonl` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skg_model_generate(
    model: *const SkgModel,
    lex: *const SkgLexicons,
    corpus_jsonl: *const c_char,
    max_len: usize,
    out_jsonl: *mut *mut c_char,
) -> SkgStatus {
    guard(|| {
        let b = &handle(model, "model")?.bundle;
        let lex = handle(lex, "lex")?;
        let corpus = text(corpus_jsonl, "corpus_jsonl")?;
        let out = out_ptr(out_jsonl, "out_jsonl")?;
        if max_len == 0 {
            return Err(Failure(SkgStatus::InvalidArgument, "max_len must be positive".into()));
        }
        let config = b.model.config();
        let stories = parse_corpus(corpus, Some(config.image_dim), true)
            .map_err(fail(SkgStatus::InvalidArgument))?
            .stories;
        let encoded = encode_corpus(
            &stories,
            &lex.inner,
            &b.vocab,
            &b.skeleton_vocab,
            effective_repr(config),
            DiiPolicy::CopySis,
            config.max_dii_len,
        )
        .map_err(fail(SkgStatus::InvalidArgument))?;
        let options = GenerateOptions {
            max_len,
            ..GenerateOptions::default()
        };
        let mut text = String::new();
        for batch in make_batches(&encoded, 16, None) {
            let stories = b
                .model
                .generate_batch(&batch, &b.vocab, &b.skeleton_vocab, &options)
                .map_err(fail(SkgStatus::Model))?;
            for g in stories {
                let line = GeneratedLine {
                    sentences: g.sentence_texts(),
                    id: g.id,
                };
                text.push_str(&serde_json::to_string(&line).map_err(fail(SkgStatus::Model))?);
                text.push('\n');
            }
        }
        *out = into_c_string(text)?;
        Ok(())
    })
}
