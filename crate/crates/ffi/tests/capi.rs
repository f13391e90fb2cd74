use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use skelgen::corpus::synthetic::toy_corpus;
use skelgen::corpus::Story;
use skelgen::models::{ModelConfig, Variant};
use skelgen::skeleton::Lexicons;
use skelgen::train::{prepare_data, train, TrainConfig};
use skelgen_ffi::*;

const WEDDING: [&str; 5] = [
    "The cake was amazing for this event!",
    "The bride and groom were so happy.",
    "They kissed with such passion and force.",
    "When their son arrived, he was already sleeping.",
    "After the event, I took pictures of the guests.",
];

struct CStory {
    _owned: Vec<CString>,
    ptrs: Vec<*const c_char>,
}

fn c_story(sentences: &[&str]) -> CStory {
    let owned: Vec<CString> = sentences.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs = owned.iter().map(|s| s.as_ptr()).collect();
    CStory { _owned: owned, ptrs }
}

fn last_error() -> String {
    let p = skg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    skg_string_free(s);
    out
}

fn lexicons() -> *mut SkgLexicons {
    let mut lex = ptr::null_mut();
    assert_eq!(unsafe { skg_lexicons_bundled(&mut lex) }, SkgStatus::Ok);
    lex
}

#[test]
fn skeleton_and_presence_of_wedding_story() {
    let lex = lexicons();
    let story = c_story(&WEDDING);
    unsafe {
        let mut json = ptr::null_mut();
        let s = skg_extract_skeleton(lex, story.ptrs.as_ptr(), 5, SkgRepr::Nominalized, &mut json);
        assert_eq!(s, SkgStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(v["slots"], serde_json::json!([[0, 0], [1, 0], [1, 1], [1, 1], [0, 0]]));

        let mut json = ptr::null_mut();
        assert_eq!(skg_extract_skeleton(lex, story.ptrs.as_ptr(), 5, SkgRepr::Abstract, &mut json), SkgStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(v["slots"], serde_json::json!([null, "person", "person", "person", null]));

        let mut bits = [9u8; 5];
        assert_eq!(skg_presence(lex, story.ptrs.as_ptr(), 5, bits.as_mut_ptr()), SkgStatus::Ok);
        assert_eq!(bits, [0, 1, 1, 1, 0]);
        skg_lexicons_free(lex);
    }
}

#[test]
fn errors_set_status_and_message() {
    let lex = lexicons();
    let story = c_story(&WEDDING[..4]);
    unsafe {
        let mut json = ptr::null_mut();
        let s = skg_extract_skeleton(lex, story.ptrs.as_ptr(), 4, SkgRepr::Surface, &mut json);
        assert_eq!(s, SkgStatus::InvalidArgument);
        assert!(last_error().contains("5 sentences"));
        assert!(json.is_null());

        assert_eq!(skg_extract_skeleton(ptr::null(), story.ptrs.as_ptr(), 5, SkgRepr::Surface, &mut json), SkgStatus::NullArgument);
        assert!(last_error().contains("lex"));

        let mut out = 0.0;
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(skg_meteor(bad.as_ptr().cast(), c"x".as_ptr(), &mut out), SkgStatus::InvalidArgument);
        assert!(last_error().contains("UTF-8"));
        assert_eq!(skg_meteor(c"a".as_ptr(), c"a".as_ptr(), &mut out), SkgStatus::Ok);
        assert!(skg_last_error().is_null());

        let mut model = ptr::null_mut();
        assert_eq!(skg_model_load(c"/no/such/model.sklg".as_ptr(), &mut model), SkgStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("/no/such/model.sklg"));

        let mut l2 = ptr::null_mut();
        assert_eq!(skg_lexicons_from_dir(c"/no/such/dir".as_ptr(), &mut l2), SkgStatus::Io);
        skg_lexicons_free(lex);
        skg_lexicons_free(ptr::null_mut());
        skg_model_free(ptr::null_mut());
        skg_string_free(ptr::null_mut());
    }
}

#[test]
fn meteor_and_story_scores() {
    let lex = lexicons();
    unsafe {
        let mut m = 0.0;
        assert_eq!(skg_meteor(c"the cat sat".as_ptr(), c"the dog sat".as_ptr(), &mut m), SkgStatus::Ok);
        assert!((m - 1.0 / 3.0).abs() < 1e-9);

        let story = c_story(&WEDDING);
        let mut score = SkgStoryScore::default();
        assert_eq!(skg_score_story(lex, story.ptrs.as_ptr(), story.ptrs.as_ptr(), 5, &mut score), SkgStatus::Ok);
        assert_eq!(score.skeleton_distance, 0.0);
        assert_eq!(score.distinct_entities, 2);
        assert_eq!(score.reference_distinct_entities, 2);
        assert!(score.meteor_lite > 99.0);
        skg_lexicons_free(lex);
    }
}

fn trained_checkpoint(dir: &std::path::Path, stories: &[Story]) -> (PathBuf, Vec<Vec<String>>) {
    let mc = ModelConfig {
        embed_dim: 8,
        hidden_dim: 12,
        image_dim: 6,
        attn_dim: 6,
        skeleton_vocab_k: 10,
        max_dii_len: 8,
        ..ModelConfig::desk(Variant::Glocal, 2)
    };
    let tc = TrainConfig {
        lr: 0.01,
        batch_size: 2,
        epochs: 2,
        ..TrainConfig::default()
    };
    let d = prepare_data(stories, &Lexicons::bundled(), &mc, &tc).unwrap();
    let out = train(&mc, &tc, &d, None).unwrap();
    let path = dir.join("model.sklg");
    out.bundle.save(&path).unwrap();
    let batch = skelgen::corpus::Batch::from_stories(&d.encoded.iter().collect::<Vec<_>>());
    let opts = skelgen::models::GenerateOptions { max_len: 7, ..Default::default() };
    let expect = out
        .bundle
        .model
        .generate_batch(&batch, &d.vocab, &d.skeleton_vocab, &opts)
        .unwrap()
        .iter()
        .map(|g| g.sentence_texts())
        .collect();
    (path, expect)
}

#[test]
fn model_generation_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let stories = toy_corpus(6, 1);
    let (path, expect) = trained_checkpoint(dir.path(), &stories);
    let corpus: String = stories.iter().map(|s| s.to_json_line() + "\n").collect();
    let corpus = CString::new(corpus).unwrap();
    let lex = lexicons();
    unsafe {
        let mut model = ptr::null_mut();
        let p = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(skg_model_load(p.as_ptr(), &mut model), SkgStatus::Ok);

        let mut info = ptr::null_mut();
        assert_eq!(skg_model_info(model, &mut info), SkgStatus::Ok);
        let info: serde_json::Value = serde_json::from_str(&take(info)).unwrap();
        assert_eq!(info["config"]["variant"], "glocal");

        let mut out = ptr::null_mut();
        assert_eq!(skg_model_generate(model, lex, corpus.as_ptr(), 7, &mut out), SkgStatus::Ok);
        let text = take(out);
        let got: Vec<Vec<String>> = text
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                serde_json::from_value(v["sentences"].clone()).unwrap()
            })
            .collect();
        assert_eq!(got, expect);

        assert_eq!(skg_model_generate(model, lex, corpus.as_ptr(), 0, &mut out), SkgStatus::InvalidArgument);
        let wrong = CString::new(toy_corpus(9, 1)[0].to_json_line()).unwrap();
        assert_eq!(skg_model_generate(model, lex, wrong.as_ptr(), 5, &mut out), SkgStatus::InvalidArgument);
        skg_model_free(model);
        skg_lexicons_free(lex);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(skg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "skelgen.h"

int main(int argc, char **argv) {
    const char *story[5] = {
        "The cake was amazing for this event!",
        "The bride and groom were so happy.",
        "They kissed with such passion and force.",
        "When their son arrived, he was already sleeping.",
        "After the event, I took pictures of the guests.",
    };
    SkgLexicons *lex = NULL;
    if (skg_lexicons_bundled(&lex) != SKG_STATUS_OK) return 1;
    uint8_t bits[5];
    if (skg_presence(lex, story, 5, bits) != SKG_STATUS_OK) return 2;
    char *json = NULL;
    if (skg_extract_skeleton(lex, story, 5, SKG_REPR_SURFACE, &json) != SKG_STATUS_OK) return 3;
    printf("%d%d%d%d%d %s\n", bits[0], bits[1], bits[2], bits[3], bits[4], json);
    skg_string_free(json);
    SkgModel *model = NULL;
    if (skg_model_load(argv[1], &model) != SKG_STATUS_IO) return 4;
    printf("%s\n", skg_last_error());
    skg_lexicons_free(lex);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let archive = profile_dir.join("libskelgen_ffi.a");
    let cc_ok = Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success());
    if !cc_ok || !archive.exists() {
        eprintln!("skipping: no C compiler or {} missing", archive.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let o = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = Command::new(&exe).arg("/missing.sklg").output().unwrap();
    assert!(o.status.success(), "exit {:?}", o.status.code());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("01110 "), "{out}");
    assert!(out.contains("The bride and groom"));
    assert!(out.contains("/missing.sklg"));
}
