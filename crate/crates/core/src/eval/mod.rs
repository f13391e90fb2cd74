//! Story-level evaluation: METEOR-lite, skeleton adherence, entity
//! diversity and noun/pronoun shares.

mod attention;
mod meteor;

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::skeleton::{
    extract_chains, is_noun_at, is_punctuation, skeleton_of, tokenize, Lexicons, SkeletonRepr, STORY_LEN,
};

pub use attention::{export_attention, sentence_csv, word_csv};
pub use meteor::{align, chunks, meteor_lite, stem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("{0} references for {1} hypotheses")]
    Mismatch(usize, usize),
    #[error("io: {0}")]
    Io(String),
}

pub fn presence_distance(a: &[u8; STORY_LEN], b: &[u8; STORY_LEN]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn presence_of<S: AsRef<str>>(story: &[S], lex: &Lexicons) -> [u8; STORY_LEN] {
    let sentences: Vec<&str> = story.iter().map(AsRef::as_ref).collect();
    skeleton_of(&sentences, lex, SkeletonRepr::Surface).presence_vector()
}

/// Euclidean distance between the presence vectors of the two stories'
/// central skeletons.
pub fn skeleton_distance<S: AsRef<str>>(gold: &[S], generated: &[S], lex: &Lexicons) -> f64 {
    presence_distance(&presence_of(gold, lex), &presence_of(generated, lex))
}

/// Distinct entity chains in one story, keyed by the lemma of the head word.
pub fn distinct_entities<S: AsRef<str>>(story: &[S], lex: &Lexicons) -> usize {
    let toks: Vec<Vec<String>> = story.iter().map(|s| tokenize(s.as_ref())).collect();
    extract_chains(&toks, lex)
        .iter()
        .map(|c| lex.lemma(&c.head_word()))
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn avg_distinct_entities<S: AsRef<str>>(stories: &[Vec<S>], lex: &Lexicons) -> f64 {
    if stories.is_empty() {
        return 0.0;
    }
    stories.iter().map(|s| distinct_entities(s, lex) as f64).sum::<f64>() / stories.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TokenCounts {
    pub tokens: usize,
    pub nouns: usize,
    pub pronouns: usize,
}

impl TokenCounts {
    pub fn noun_pct(&self) -> f64 {
        pct(self.nouns, self.tokens)
    }

    pub fn pronoun_pct(&self) -> f64 {
        pct(self.pronouns, self.tokens)
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Word-token counts over all sentences. Punctuation and the special
/// `<...>` vocabulary tokens are not counted.
pub fn token_counts<S: AsRef<str>>(sentences: &[S], lex: &Lexicons) -> TokenCounts {
    let mut c = TokenCounts::default();
    for s in sentences {
        let toks: Vec<String> = tokenize(s.as_ref())
            .into_iter()
            .filter(|t| !is_punctuation(t))
            .collect();
        for (i, t) in toks.iter().enumerate() {
            c.tokens += 1;
            if lex.is_pronoun(&t.to_lowercase()) {
                c.pronouns += 1;
            } else if is_noun_at(&toks, i, lex) {
                c.nouns += 1;
            }
        }
    }
    c
}

/// `(noun_pct, pronoun_pct)` over all sentences of all stories.
pub fn noun_pronoun_stats<S: AsRef<str>>(stories: &[Vec<S>], lex: &Lexicons) -> (f64, f64) {
    let all: Vec<&str> = stories.iter().flatten().map(AsRef::as_ref).collect();
    let c = token_counts(&all, lex);
    (c.noun_pct(), c.pronoun_pct())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub stories: usize,
    /// Mean story-level METEOR-lite, ×100.
    pub meteor_lite: f64,
    pub skeleton_distance: f64,
    pub avg_distinct_entities: f64,
    pub noun_pct: f64,
    pub pronoun_pct: f64,
    pub reference_avg_distinct_entities: f64,
    pub reference_noun_pct: f64,
    pub reference_pronoun_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoryScore {
    pub meteor_lite: f64,
    pub skeleton_distance: f64,
    pub distinct_entities: usize,
    pub reference_distinct_entities: usize,
}

fn story_words<S: AsRef<str>>(story: &[S]) -> Vec<String> {
    story
        .iter()
        .flat_map(|s| tokenize(s.as_ref()))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Scores one generated story against its reference. METEOR-lite compares
/// the concatenated tokens of the whole story and is reported ×100.
pub fn score_story<S: AsRef<str>>(reference: &[S], generated: &[S], lex: &Lexicons) -> Result<StoryScore, EvalError> {
    Ok(StoryScore {
        meteor_lite: 100.0 * meteor_lite(&story_words(generated), &story_words(reference))?,
        skeleton_distance: skeleton_distance(reference, generated, lex),
        distinct_entities: distinct_entities(generated, lex),
        reference_distinct_entities: distinct_entities(reference, lex),
    })
}

/// Scores generated stories against references, pairwise by position.
pub fn evaluate<S: AsRef<str>>(references: &[Vec<S>], generated: &[Vec<S>], lex: &Lexicons) -> Result<EvalReport, EvalError> {
    if references.len() != generated.len() {
        return Err(EvalError::Mismatch(references.len(), generated.len()));
    }
    let scores = references
        .iter()
        .zip(generated)
        .map(|(r, g)| score_story(r, g, lex))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report_from_scores(&scores, references, generated, lex))
}

pub fn report_from_scores<S: AsRef<str>>(
    scores: &[StoryScore],
    references: &[Vec<S>],
    generated: &[Vec<S>],
    lex: &Lexicons,
) -> EvalReport {
    let n = scores.len();
    let mean = |f: &dyn Fn(&StoryScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let (noun_pct, pronoun_pct) = noun_pronoun_stats(generated, lex);
    let (reference_noun_pct, reference_pronoun_pct) = noun_pronoun_stats(references, lex);
    EvalReport {
        stories: n,
        meteor_lite: mean(&|s| s.meteor_lite),
        skeleton_distance: mean(&|s| s.skeleton_distance),
        avg_distinct_entities: mean(&|s| s.distinct_entities as f64),
        noun_pct,
        pronoun_pct,
        reference_avg_distinct_entities: mean(&|s| s.reference_distinct_entities as f64),
        reference_noun_pct,
        reference_pronoun_pct,
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>10}", "metric", "generated", "reference")?;
        writeln!(f, "{:<24} {:>10}", "stories", self.stories)?;
        writeln!(f, "{:<24} {:>10.2}", "meteor_lite", self.meteor_lite)?;
        writeln!(f, "{:<24} {:>10.4}", "skeleton_distance", self.skeleton_distance)?;
        writeln!(
            f,
            "{:<24} {:>10.4} {:>10.4}",
            "avg_distinct_entities", self.avg_distinct_entities, self.reference_avg_distinct_entities
        )?;
        writeln!(f, "{:<24} {:>10.2} {:>10.2}", "noun_pct", self.noun_pct, self.reference_noun_pct)?;
        write!(f, "{:<24} {:>10.2} {:>10.2}", "pronoun_pct", self.pronoun_pct, self.reference_pronoun_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_distance() {
        assert_eq!(presence_distance(&[1, 1, 1, 0, 0], &[1, 0, 1, 0, 1]), 2f64.sqrt());
    }

    #[test]
    fn pronoun_counts() {
        let lex = Lexicons::bundled();
        let c = token_counts(&["they saw it ."], &lex);
        assert_eq!((c.tokens, c.pronouns), (3, 2));
        let (n, p) = noun_pronoun_stats(&[vec!["he saw them", "she and they"]], &lex);
        assert_eq!(n, 0.0);
        assert!(p > 0.0);
    }

    #[test]
    fn identical_stories_score_zero_distance() {
        let lex = Lexicons::bundled();
        let s = ["the dog ran .", "it was happy .", "the dog slept .", "we left .", "the end ."];
        assert_eq!(skeleton_distance(&s, &s, &lex), 0.0);
        let empty = ["ran .", "ran .", "ran .", "ran .", "ran ."];
        assert_eq!(distinct_entities(&empty, &lex), 0);
    }

    #[test]
    fn report_of_identical_corpus() {
        let lex = Lexicons::bundled();
        let s = vec![vec!["the dog ran .", "it was happy .", "the dog slept .", "we left .", "we ate ."]];
        let r = evaluate(&s, &s, &lex).unwrap();
        assert_eq!(r.skeleton_distance, 0.0);
        assert!(r.meteor_lite > 99.0 && r.meteor_lite <= 100.0);
        assert_eq!(r.noun_pct, r.reference_noun_pct);
        assert!(r.to_string().contains("meteor_lite"));
        assert!(evaluate(&s, &[], &lex).is_err());
    }
}
