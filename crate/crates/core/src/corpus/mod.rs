//! JSON-lines story corpora, vocabularies, skeleton targets and batching.

mod batch;
pub mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{
    extract_chains, select_central_chain, tokenize, tokenize_lower, CorefChain, EntitySkeleton,
    Lexicons, Mention, SkeletonRepr, STORY_LEN,
};

pub use batch::{encode_story, make_batches, Batch, EncodedStory, SentenceBatch};
pub use vocab::{
    build_skeleton_vocab, build_vocab, skeleton_classes, skeleton_num_classes, SkeletonVocab, Vocab,
    BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("story {id}: {message}")]
    Story { id: String, message: String },
    #[error("story {id} step {step}: DII missing under policy \"provided\"")]
    MissingDii { id: String, step: usize },
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoryStep {
    pub image_features: Vec<f64>,
    pub dii_text: Option<String>,
    /// Lowercased DII tokens.
    pub dii: Option<Vec<String>>,
    pub sis_text: String,
    /// Lowercased SIS tokens.
    pub sis: Vec<String>,
}

impl StoryStep {
    pub fn new(image_features: Vec<f64>, dii: Option<&str>, sis: &str) -> Self {
        Self {
            image_features,
            dii_text: dii.map(str::to_string),
            dii: dii.map(tokenize_lower),
            sis_text: sis.to_string(),
            sis: tokenize_lower(sis),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub id: String,
    pub steps: Vec<StoryStep>,
    pub gold_chains: Option<Vec<CorefChain>>,
}

#[derive(Serialize, Deserialize)]
struct RawStep {
    image_features: Vec<f64>,
    #[serde(default)]
    dii: Option<String>,
    sis: String,
}

#[derive(Serialize, Deserialize)]
struct RawStory {
    id: String,
    steps: Vec<RawStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chains: Option<Vec<Vec<Mention>>>,
}

impl Story {
    pub fn sis_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.sis_text.as_str()).collect()
    }

    /// Chains for skeleton purposes: the gold chains when the corpus
    /// provides them, the rule-based resolver's otherwise.
    pub fn chains(&self, lex: &Lexicons) -> Vec<CorefChain> {
        match &self.gold_chains {
            Some(c) => c.clone(),
            None => {
                let toks: Vec<Vec<String>> = self.steps.iter().map(|s| tokenize(&s.sis_text)).collect();
                extract_chains(&toks, lex)
            }
        }
    }

    pub fn central_chain(&self, lex: &Lexicons) -> Option<CorefChain> {
        select_central_chain(&self.chains(lex)).cloned()
    }

    pub fn skeleton(&self, lex: &Lexicons, repr: SkeletonRepr) -> EntitySkeleton {
        match self.central_chain(lex) {
            Some(c) => EntitySkeleton::from_chain(&c, repr),
            None => EntitySkeleton::empty(repr),
        }
    }

    pub fn to_json_line(&self) -> String {
        let raw = RawStory {
            id: self.id.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| RawStep {
                    image_features: s.image_features.clone(),
                    dii: s.dii_text.clone(),
                    sis: s.sis_text.clone(),
                })
                .collect(),
            chains: self
                .gold_chains
                .as_ref()
                .map(|cs| cs.iter().map(|c| c.mentions.clone()).collect()),
        };
        serde_json::to_string(&raw).expect("story serializes")
    }

    fn from_raw(raw: RawStory, dim: Option<usize>) -> Result<Self, String> {
        if raw.id.is_empty() {
            return Err("empty story id".into());
        }
        let fail = |m: String| format!("story {}: {m}", raw.id);
        if raw.steps.len() != STORY_LEN {
            return Err(fail(format!("expected {STORY_LEN} steps, found {}", raw.steps.len())));
        }
        let mut steps = Vec::with_capacity(STORY_LEN);
        for (i, s) in raw.steps.into_iter().enumerate() {
            if let Some(d) = dim {
                if s.image_features.len() != d {
                    return Err(fail(format!(
                        "step {i}: image feature dimension {} does not match expected {d}",
                        s.image_features.len()
                    )));
                }
            }
            if s.image_features.is_empty() {
                return Err(fail(format!("step {i}: empty image features")));
            }
            if s.image_features.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("step {i}: non-finite image feature")));
            }
            let step = StoryStep::new(s.image_features, s.dii.as_deref(), &s.sis);
            if step.sis.is_empty() {
                return Err(fail(format!("step {i}: empty SIS sentence")));
            }
            steps.push(step);
        }
        let gold_chains = match raw.chains {
            None => None,
            Some(chains) => {
                let lens: Vec<usize> = steps.iter().map(|s| tokenize(&s.sis_text).len()).collect();
                let mut out = Vec::with_capacity(chains.len());
                for mentions in chains {
                    out.push(CorefChain::new(mentions, &lens).map_err(|e| fail(e.to_string()))?);
                }
                Some(out)
            }
        };
        Ok(Story {
            id: raw.id,
            steps,
            gold_chains,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.steps[0].image_features.len()
    }
}

/// Result of a non-fatal load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub stories: Vec<Story>,
    /// One message per skipped line, prefixed with its line number.
    pub warnings: Vec<String>,
}

/// Parses a JSON-lines corpus. With `expected_dim` unset, the first story's
/// feature dimension becomes the expectation. Under `strict` the first bad
/// line is an error; otherwise it is skipped with a warning.
pub fn parse_corpus(text: &str, expected_dim: Option<usize>, strict: bool) -> Result<LoadedCorpus, CorpusError> {
    let mut dim = expected_dim;
    let mut stories: Vec<Story> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawStory>(line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|raw| Story::from_raw(raw, dim))
            .and_then(|s| {
                if seen.contains(&s.id) {
                    Err(format!("duplicate story id {}", s.id))
                } else {
                    Ok(s)
                }
            });
        match parsed {
            Ok(s) => {
                dim.get_or_insert(s.feature_dim());
                seen.insert(s.id.clone());
                stories.push(s);
            }
            Err(message) if strict => return Err(CorpusError::Line { line: lineno, message }),
            Err(message) => warnings.push(format!("line {lineno}: {message}")),
        }
    }
    Ok(LoadedCorpus { stories, warnings })
}

pub fn load_corpus(path: &Path, expected_dim: Option<usize>, strict: bool) -> Result<LoadedCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text, expected_dim, strict)
}

pub fn write_corpus(path: &Path, stories: &[Story]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for s in stories {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))
}

/// What to do with a step whose DII sentence is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiiPolicy {
    #[default]
    CopySis,
    Placeholder,
    Provided,
}

impl FromStr for DiiPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "copy_sis" => Ok(DiiPolicy::CopySis),
            "placeholder" => Ok(DiiPolicy::Placeholder),
            "provided" => Ok(DiiPolicy::Provided),
            _ => Err(format!("unknown DII policy {s:?} (expected copy_sis, placeholder or provided)")),
        }
    }
}

impl fmt::Display for DiiPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiiPolicy::CopySis => "copy_sis",
            DiiPolicy::Placeholder => "placeholder",
            DiiPolicy::Provided => "provided",
        })
    }
}

/// Fills absent (or empty) DII sentences according to `policy`.
pub fn fill_missing_dii(story: &Story, policy: DiiPolicy) -> Result<Story, CorpusError> {
    let mut out = story.clone();
    for (i, step) in out.steps.iter_mut().enumerate() {
        if step.dii.as_ref().is_some_and(|d| !d.is_empty()) {
            continue;
        }
        match policy {
            DiiPolicy::CopySis => {
                step.dii = Some(step.sis.clone());
            }
            DiiPolicy::Placeholder => {
                step.dii = Some(vec![UNK_TOKEN.to_string()]);
            }
            DiiPolicy::Provided => {
                return Err(CorpusError::MissingDii {
                    id: story.id.clone(),
                    step: i,
                })
            }
        }
    }
    Ok(out)
}

/// Counts mirroring the dataset table: stories, images, steps without DII.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub stories: usize,
    pub images: usize,
    pub steps_without_dii: usize,
    pub sis_tokens: usize,
    pub sis_types: usize,
    pub stories_with_gold_chains: usize,
}

pub fn corpus_stats(stories: &[Story]) -> CorpusStats {
    let types: BTreeSet<&str> = stories
        .iter()
        .flat_map(|s| s.steps.iter().flat_map(|st| st.sis.iter().map(String::as_str)))
        .collect();
    CorpusStats {
        stories: stories.len(),
        images: stories.iter().map(|s| s.steps.len()).sum(),
        steps_without_dii: stories
            .iter()
            .flat_map(|s| &s.steps)
            .filter(|st| st.dii.as_ref().is_none_or(|d| d.is_empty()))
            .count(),
        sis_tokens: stories
            .iter()
            .flat_map(|s| &s.steps)
            .map(|st| st.sis.len())
            .sum(),
        sis_types: types.len(),
        stories_with_gold_chains: stories.iter().filter(|s| s.gold_chains.is_some()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, steps: usize, dim: usize, dii: Option<&str>) -> String {
        let step = serde_json::json!({
            "image_features": vec![0.5; dim],
            "dii": dii,
            "sis": "The dog ran home."
        });
        serde_json::json!({"id": id, "steps": vec![step; steps]}).to_string()
    }

    #[test]
    fn parses_well_formed_file() {
        let text = format!("{}\n{}\n", line("a", 5, 3, Some("a dog")), line("b", 5, 3, None));
        let c = parse_corpus(&text, Some(3), true).unwrap();
        assert_eq!(c.stories.len(), 2);
        assert!(c.warnings.is_empty());
        assert_eq!(c.stories[0].steps[0].sis, ["the", "dog", "ran", "home", "."]);
        assert_eq!(c.stories[1].steps[0].dii, None);
        assert_eq!(parse_corpus(&text, Some(3), true).unwrap(), c);
    }

    #[test]
    fn wrong_step_count_names_the_story() {
        let text = line("short", 4, 3, None);
        let err = parse_corpus(&text, Some(3), true).unwrap_err();
        assert_eq!(
            err,
            CorpusError::Line {
                line: 1,
                message: "story short: expected 5 steps, found 4".into()
            }
        );
    }

    #[test]
    fn non_strict_skips_bad_lines() {
        let text = format!("{}\nnot json\n", line("a", 5, 3, None));
        let c = parse_corpus(&text, Some(3), false).unwrap();
        assert_eq!(c.stories.len(), 1);
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].starts_with("line 2:"));
    }

    #[test]
    fn dimension_and_duplicate_checks() {
        let err = parse_corpus(&line("a", 5, 4, None), Some(3), true).unwrap_err();
        assert!(err.to_string().contains("dimension 4 does not match expected 3"));
        let text = format!("{}\n{}\n", line("a", 5, 3, None), line("b", 5, 2, None));
        assert!(parse_corpus(&text, None, true).is_err());
        let text = format!("{}\n{}\n", line("a", 5, 3, None), line("a", 5, 3, None));
        let err = parse_corpus(&text, None, true).unwrap_err();
        assert!(err.to_string().contains("duplicate story id a"));
    }

    #[test]
    fn dii_policies() {
        let c = parse_corpus(&line("a", 5, 2, None), None, true).unwrap();
        let s = &c.stories[0];
        let p = fill_missing_dii(s, DiiPolicy::Placeholder).unwrap();
        assert_eq!(p.steps[2].dii.as_deref(), Some(&[UNK_TOKEN.to_string()][..]));
        let cp = fill_missing_dii(s, DiiPolicy::CopySis).unwrap();
        assert_eq!(cp.steps[3].dii.as_ref(), Some(&cp.steps[3].sis));
        assert_eq!(
            fill_missing_dii(s, DiiPolicy::Provided).unwrap_err(),
            CorpusError::MissingDii { id: "a".into(), step: 0 }
        );
        let full = parse_corpus(&line("b", 5, 2, Some("x y")), None, true).unwrap().stories[0].clone();
        for policy in [DiiPolicy::CopySis, DiiPolicy::Placeholder, DiiPolicy::Provided] {
            assert_eq!(fill_missing_dii(&full, policy).unwrap(), full);
        }
    }

    #[test]
    fn gold_chains_are_validated() {
        let step = serde_json::json!({"image_features": [0.0], "sis": "The dog ran."});
        let m = |s: usize| serde_json::json!({"sentence_index": s, "token_span": [1, 2], "text": "dog", "is_pronoun": false, "category": "other"});
        let good = serde_json::json!({"id": "g", "steps": vec![step.clone(); 5], "chains": [[m(0), m(3)]]});
        let c = parse_corpus(&good.to_string(), None, true).unwrap();
        let s = &c.stories[0];
        assert_eq!(s.gold_chains.as_ref().unwrap()[0].mentions.len(), 2);
        assert_eq!(s.skeleton(&Lexicons::bundled(), SkeletonRepr::Nominalized).presence_vector(), [1, 0, 0, 1, 0]);
        let bad_m = serde_json::json!({"sentence_index": 0, "token_span": [3, 9], "text": "x", "is_pronoun": false, "category": "other"});
        let bad = serde_json::json!({"id": "g", "steps": vec![step; 5], "chains": [[bad_m]]});
        assert!(parse_corpus(&bad.to_string(), None, true).is_err());
    }

    #[test]
    fn json_line_roundtrip() {
        let c = parse_corpus(&line("a", 5, 2, Some("x")), None, true).unwrap();
        let again = parse_corpus(&c.stories[0].to_json_line(), None, true).unwrap();
        assert_eq!(again.stories, c.stories);
    }

    #[test]
    fn stats_count_missing_dii() {
        let text = format!("{}\n{}\n", line("a", 5, 3, Some("a dog")), line("b", 5, 3, None));
        let st = corpus_stats(&parse_corpus(&text, None, true).unwrap().stories);
        assert_eq!((st.stories, st.images, st.steps_without_dii), (2, 10, 5));
    }
}
