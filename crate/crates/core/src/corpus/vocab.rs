use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Story};
use crate::skeleton::{surface_heads, Category, Lexicons, SkeletonRepr, STORY_LEN};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Orders `(token, count)` by count descending, then token.
fn ranked(counts: BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Word vocabulary with PAD, BOS, EOS and UNK at indices 0..=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    itos: Vec<String>,
    stoi: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(itos: Vec<String>) -> Result<Self, String> {
        if itos.len() < RESERVED.len() || itos[..RESERVED.len()] != RESERVED {
            return Err("vocabulary must start with <pad>, <bos>, <eos>, <unk>".into());
        }
        let stoi: HashMap<String, usize> = itos.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if stoi.len() != itos.len() {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(Self { itos, stoi })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.itos
    }
}

impl Vocab {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self, String> {
        let mut itos: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        itos.extend(tokens);
        Self::try_from(itos)
    }

    pub fn len(&self) -> usize {
        self.itos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itos.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.stoi.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.stoi.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        self.itos.get(index).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.itos
    }
}

/// Vocabulary over SIS and DII tokens. Tokens seen fewer than `min_count`
/// times are dropped; `max_size` caps content tokens (reserved entries do
/// not count against it). Order is frequency descending, then alphabetical.
pub fn build_vocab(stories: &[Story], min_count: usize, max_size: Option<usize>) -> Result<Vocab, CorpusError> {
    if stories.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for step in stories.iter().flat_map(|s| &s.steps) {
        let dii = step.dii.iter().flatten();
        for t in step.sis.iter().chain(dii) {
            if !RESERVED.contains(&t.as_str()) {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
    }
    let kept = ranked(counts)
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .take(max_size.unwrap_or(usize::MAX))
        .map(|(t, _)| t);
    Ok(Vocab::from_tokens(kept).expect("content tokens never collide with reserved ones"))
}

/// Most frequent surface skeleton head tokens. Class 0 is "no mention",
/// class 1 an out-of-vocabulary head, classes `2..` the kept tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkeletonVocab {
    tokens: Vec<String>,
}

pub const SKELETON_NONE_LABEL: &str = "NONE";
pub const SKELETON_UNK_LABEL: &str = "UNK";

impl SkeletonVocab {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    /// Kept tokens plus UNK.
    pub fn len(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn class_of(&self, head: Option<&str>) -> usize {
        match head {
            None => 0,
            Some(h) => self.tokens.iter().position(|t| t == h).map_or(1, |i| i + 2),
        }
    }

    pub fn label(&self, class: usize) -> &str {
        match class {
            0 => SKELETON_NONE_LABEL,
            1 => SKELETON_UNK_LABEL,
            c => self.tokens.get(c - 2).map_or(SKELETON_UNK_LABEL, String::as_str),
        }
    }
}

pub fn build_skeleton_vocab(stories: &[Story], lex: &Lexicons, k: usize) -> SkeletonVocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for story in stories {
        if let Some(chain) = story.central_chain(lex) {
            for head in surface_heads(&chain).into_iter().flatten() {
                *counts.entry(head).or_default() += 1;
            }
        }
    }
    SkeletonVocab::new(ranked(counts).into_iter().take(k).map(|(t, _)| t).collect())
}

pub fn skeleton_num_classes(repr: SkeletonRepr, vocab: &SkeletonVocab) -> usize {
    match repr {
        SkeletonRepr::Surface => vocab.num_classes(),
        // 00, 10, 11 and the never-produced 01
        SkeletonRepr::Nominalized => 4,
        SkeletonRepr::Abstract => 1 + Category::ALL.len(),
    }
}

/// Per-sentence class indices of a story's central skeleton.
pub fn skeleton_classes(story: &Story, lex: &Lexicons, repr: SkeletonRepr, vocab: &SkeletonVocab) -> [usize; STORY_LEN] {
    let chain = story.central_chain(lex);
    match repr {
        SkeletonRepr::Surface => {
            let heads = chain.as_ref().map(surface_heads).unwrap_or_default();
            std::array::from_fn(|s| vocab.class_of(heads[s].as_deref()))
        }
        SkeletonRepr::Nominalized => std::array::from_fn(|s| {
            match chain.as_ref().and_then(|c| c.mention_in(s)) {
                None => 0,
                Some(m) if m.is_pronoun => 2,
                Some(_) => 1,
            }
        }),
        SkeletonRepr::Abstract => {
            let head = chain.as_ref().map(|c| c.head_category());
            std::array::from_fn(|s| match chain.as_ref().and_then(|c| c.mention_in(s)) {
                None => 0,
                Some(m) => {
                    let cat = if m.is_pronoun { head.unwrap_or(m.category) } else { m.category };
                    1 + Category::ALL.iter().position(|&c| c == cat).unwrap()
                }
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StoryStep;

    fn story(sents: [&str; 5]) -> Story {
        Story {
            id: "s".into(),
            steps: sents.iter().map(|s| StoryStep::new(vec![0.0], None, s)).collect(),
            gold_chains: None,
        }
    }

    #[test]
    fn min_count_filters() {
        let s = story(["a a b", "a", "c", "c", "a"]);
        let v = build_vocab(&[s], 2, None).unwrap();
        assert_eq!(&v.tokens()[4..], ["a", "c"]);
        assert!(!v.contains("b"));
        assert_eq!(v.index("b"), UNK);
    }

    #[test]
    fn max_size_excludes_reserved() {
        let s = story(["a b c d e f g", "a b c", "a", "x", "y"]);
        let v = build_vocab(&[s], 1, Some(5)).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(&v.tokens()[4..], ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(build_vocab(&[], 1, None).unwrap_err(), CorpusError::Empty);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = build_vocab(&[story(["the dog .", "a cat", "x", "y", "z"])], 1, None).unwrap();
        let toks = ["the", "cat", "."];
        let ids = v.encode(&toks);
        assert_eq!(v.decode(&ids), toks);
        assert_eq!(v.encode(&v.decode(&ids)), ids);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["a","b"]"#).is_err());
    }

    #[test]
    fn skeleton_classes_by_repr() {
        let lex = Lexicons::bundled();
        let s = story([
            "The cake was amazing for this event!",
            "The bride and groom were so happy.",
            "They kissed with such passion and force.",
            "When their son arrived, he was already sleeping.",
            "After the event, I took pictures of the guests.",
        ]);
        let sv = build_skeleton_vocab(std::slice::from_ref(&s), &lex, 50);
        assert_eq!(sv.tokens(), ["groom", "their", "they"]);
        assert_eq!(skeleton_classes(&s, &lex, SkeletonRepr::Surface, &sv), [0, 2, 4, 3, 0]);
        assert_eq!(skeleton_classes(&s, &lex, SkeletonRepr::Nominalized, &sv), [0, 1, 2, 2, 0]);
        assert_eq!(skeleton_classes(&s, &lex, SkeletonRepr::Abstract, &sv), [0, 1, 1, 1, 0]);
        let small = build_skeleton_vocab(std::slice::from_ref(&s), &lex, 1);
        assert_eq!(skeleton_classes(&s, &lex, SkeletonRepr::Surface, &small), [0, 2, 1, 1, 0]);
        assert_eq!(small.label(1), "UNK");
        assert_eq!(small.label(2), "groom");
    }
}
