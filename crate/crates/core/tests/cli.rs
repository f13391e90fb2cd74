use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skelgen::corpus::synthetic::toy_corpus;
use skelgen::corpus::{write_corpus, Story, StoryStep};

const WEDDING: [&str; 5] = [
    "The cake was amazing for this event!",
    "The bride and groom were so happy.",
    "They kissed with such passion and force.",
    "When their son arrived, he was already sleeping.",
    "After the event, I took pictures of the guests.",
];

fn skelgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelgen")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn story(id: &str, sentences: [&str; 5], dim: usize) -> Story {
    Story {
        id: id.into(),
        steps: sentences
            .iter()
            .map(|s| StoryStep::new(vec![0.1; dim], None, s))
            .collect(),
        gold_chains: None,
    }
}

fn write(dir: &Path, name: &str, stories: &[Story]) -> PathBuf {
    let p = dir.join(name);
    write_corpus(&p, stories).unwrap();
    p
}

fn tiny_config(dir: &Path, variant: &str, extra: &str) -> PathBuf {
    let p = dir.join(format!("{variant}.toml"));
    let text = format!(
        "seed = 3\n\n[model]\nvariant = \"{variant}\"\nembed_dim = 6\nhidden_dim = 8\nimage_dim = 6\nattn_dim = 4\nskeleton_vocab_k = 8\nmax_dii_len = 8\n{extra}\n[train]\nbatch_size = 2\nepochs = 3\nlr = 0.01\n"
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_renders_each_representation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.jsonl", &[story("wedding", WEDDING, 3)]);
    let out = dir.path().join("nom");
    let o = skelgen(&["extract", "--corpus", s(&corpus), "--repr", "nominalized", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = std::fs::read_to_string(out.join("skeletons.jsonl")).unwrap();
    assert!(line.contains("[[0,0],[1,0],[1,1],[1,1],[0,0]]"), "{line}");
    assert!(line.contains("\"presence\":[0,1,1,1,0]"));
    assert!(out.join("manifest.json").exists());

    let out = dir.path().join("abs");
    let o = skelgen(&["extract", "--corpus", s(&corpus), "--repr", "abstract", "--out-dir", s(&out)]);
    assert!(o.status.success());
    let line = std::fs::read_to_string(out.join("skeletons.jsonl")).unwrap();
    assert!(line.contains("[null,\"person\",\"person\",\"person\",null]"), "{line}");
}

#[test]
fn extract_entity_free_corpus_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.jsonl", &[story("e", ["ran .", "so fast .", "wow !", "ok .", "bye ."], 2)]);
    let out = dir.path().join("o");
    let o = skelgen(&["extract", "--corpus", s(&corpus), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let line = std::fs::read_to_string(out.join("skeletons.jsonl")).unwrap();
    assert!(line.contains("[null,null,null,null,null]"));
}

#[test]
fn train_is_deterministic_and_validates_first() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.jsonl", &toy_corpus(6, 1));
    let cfg = tiny_config(dir.path(), "mtg", "alpha = 0.4\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = skelgen(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out-dir", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("l2"));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.jsonl", "steps.jsonl", "model.sklg", "manifest.json", "checkpoints/epoch-003.sklg", "checkpoints/best.sklg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(a.join("metrics.jsonl")).unwrap().lines().count(), 3);

    let out = dir.path().join("bad");
    let o = skelgen(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--alpha", "1.5", "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_one() {
    let o = skelgen(&["train", "--config", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("desk-glocal"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[model]\nvariant = \"baseline\"\nembed_dim = 4\nhidden_dim = 4\nimage_dim = 4\nattn_dim = 4\nskeleton_vocab_k = 4\n").unwrap();
    let o = skelgen(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));
    assert_eq!(skelgen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(skelgen(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_writes_stories_and_attention() {
    let dir = tempfile::tempdir().unwrap();
    let stories = toy_corpus(6, 1);
    let corpus = write(dir.path(), "c.jsonl", &stories);
    let cfg = tiny_config(dir.path(), "glocal", "");
    let train_dir = dir.path().join("t");
    let o = skelgen(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out-dir", s(&train_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = train_dir.join("model.sklg");

    let gen = |name: &str| {
        let out = dir.path().join(name);
        let o = skelgen(&["generate", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--max-len", "5", "--out-dir", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (gen("g1"), gen("g2"));
    let text = std::fs::read_to_string(a.join("generated.jsonl")).unwrap();
    assert_eq!(text, std::fs::read_to_string(b.join("generated.jsonl")).unwrap());
    assert_eq!(text.lines().count(), 2);
    for s in &stories {
        assert!(a.join("attention").join(format!("{}.sentence.csv", s.id)).exists());
        assert!(a.join("attention").join(format!("{}.word.csv", s.id)).exists());
    }

    let wrong = write(dir.path(), "w.jsonl", &toy_corpus(9, 1));
    let o = skelgen(&["generate", "--checkpoint", s(&ckpt), "--corpus", s(&wrong), "--out-dir", s(&dir.path().join("w"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains('9') && err.contains('6'), "{err}");
}

#[test]
fn eval_self_disjoint_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let refs = write(
        dir.path(),
        "r.jsonl",
        &[story("a", ["w1 w2 w3 w4 w5", "the dog ran .", "it sat .", "the dog ate .", "we left ."], 2)],
    );
    let generated = dir.path().join("g.jsonl");
    let eval = |gen: &str| {
        std::fs::write(&generated, gen).unwrap();
        skelgen(&["eval", "--generated", s(&generated), "--references", s(&refs), "--out-dir", s(&dir.path().join("e"))])
    };
    let o = eval(r#"{"id":"a","sentences":["w1 w2 w3 w4 w5","the dog ran .","it sat .","the dog ate .","we left ."]}"#);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["skeleton_distance"], 0.0);
    assert!(report["meteor_lite"].as_f64().unwrap() > 99.0);
    assert!(dir.path().join("e/per_story.jsonl").exists());

    let o = eval(r#"{"id":"a","sentences":["x","y","z","q","v"]}"#);
    assert!(o.status.success());
    assert!(stdout(&o).contains("meteor_lite"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["meteor_lite"], 0.0);

    let o = eval(r#"{"id":"zzz-missing","sentences":["x","y","z","q","v"]}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zzz-missing"));
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "skeleton_informed", "");
    let out = dir.path().join("gc");
    let o = skelgen(&["gradcheck", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["params"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(names.contains(&"skeleton.embed"));

    let o = skelgen(&["gradcheck", "--config", s(&cfg), "--inject-fault", "tanh:1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("decoder."), "{}", stderr(&o));
}

#[test]
fn stats_prints_dataset_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut stories = toy_corpus(2, 1);
    stories[0].steps[1].dii = None;
    stories[0].steps[1].dii_text = None;
    let corpus = write(dir.path(), "c.jsonl", &stories);
    let o = skelgen(&["stats", "--corpus", s(&corpus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# Stories          2"));
    assert!(text.contains("# Images           10"));
    assert!(text.contains("# with no DII      1"));
}
