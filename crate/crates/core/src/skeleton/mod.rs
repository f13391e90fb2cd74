//! Mention detection, coreference chains and the three skeleton renderings.

mod lexicon;
mod resolve;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{
    is_determiner, is_function_word, is_possessive, pronoun_info, Lexicons, Number, Person,
    PronounInfo, CATEGORIES_FILE, PRONOUNS_FILE, STOP_NOUNS_FILE,
};
pub use resolve::{detect_mentions, extract_chains, is_noun_at};
pub use tokenize::{is_punctuation, tokenize, tokenize_lower};

pub const STORY_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkeletonError {
    #[error("{file}:{line}: {message}")]
    Lexicon {
        file: String,
        line: usize,
        message: String,
    },
    #[error("pronoun lexicon is empty")]
    EmptyPronouns,
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Person,
    Location,
    Object,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Person,
        Category::Location,
        Category::Object,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Location => "location",
            Category::Object => "object",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?} (expected person, location, object or other)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub sentence_index: usize,
    /// Half-open token range `[start, end)`.
    pub token_span: [usize; 2],
    pub text: String,
    pub is_pronoun: bool,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorefChain {
    pub mentions: Vec<Mention>,
}

impl CorefChain {
    /// Sorts mentions and checks the chain invariants against sentence
    /// lengths.
    pub fn new(mut mentions: Vec<Mention>, sentence_lens: &[usize]) -> Result<Self, SkeletonError> {
        if mentions.is_empty() {
            return Err(SkeletonError::InvalidChain("chain has no mentions".into()));
        }
        mentions.sort_by_key(|m| (m.sentence_index, m.token_span[0]));
        for m in &mentions {
            let [start, end] = m.token_span;
            let len = sentence_lens.get(m.sentence_index).copied().ok_or_else(|| {
                SkeletonError::InvalidChain(format!("mention {:?} in missing sentence {}", m.text, m.sentence_index))
            })?;
            if start >= end || end > len {
                return Err(SkeletonError::InvalidChain(format!(
                    "mention {:?} span [{start}, {end}) outside sentence {} of length {len}",
                    m.text, m.sentence_index
                )));
            }
        }
        for w in mentions.windows(2) {
            if w[0].sentence_index == w[1].sentence_index && w[1].token_span[0] < w[0].token_span[1] {
                return Err(SkeletonError::InvalidChain(format!(
                    "mentions {:?} and {:?} overlap",
                    w[0].text, w[1].text
                )));
            }
        }
        Ok(Self { mentions })
    }

    pub fn first_position(&self) -> (usize, usize) {
        self.mentions
            .iter()
            .map(|m| (m.sentence_index, m.token_span[0]))
            .min()
            .unwrap_or((usize::MAX, usize::MAX))
    }

    pub fn covered_sentences(&self) -> usize {
        (0..STORY_LEN).filter(|&s| self.mention_in(s).is_some()).count()
    }

    /// First mention by position inside sentence `s`.
    pub fn mention_in(&self, s: usize) -> Option<&Mention> {
        self.mentions
            .iter()
            .filter(|m| m.sentence_index == s)
            .min_by_key(|m| m.token_span[0])
    }

    /// Category of the first non-pronoun mention, or of the first mention
    /// when the chain is pronoun-only.
    pub fn head_category(&self) -> Category {
        self.mentions
            .iter()
            .find(|m| !m.is_pronoun)
            .or(self.mentions.first())
            .map_or(Category::Other, |m| m.category)
    }

    /// Lowercased last token of the first non-pronoun mention; pronoun-only
    /// chains use their first pronoun.
    pub fn head_word(&self) -> String {
        let m = self
            .mentions
            .iter()
            .find(|m| !m.is_pronoun)
            .or(self.mentions.first());
        m.and_then(|m| m.text.split_whitespace().last())
            .unwrap_or("")
            .to_lowercase()
    }
}

/// Picks the chain with the fewest empty sentences, then the most mentions,
/// then the earliest first mention.
pub fn select_central_chain(chains: &[CorefChain]) -> Option<&CorefChain> {
    chains.iter().min_by(|a, b| {
        b.covered_sentences()
            .cmp(&a.covered_sentences())
            .then(b.mentions.len().cmp(&a.mentions.len()))
            .then(a.first_position().cmp(&b.first_position()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonRepr {
    #[default]
    Surface,
    Nominalized,
    Abstract,
}

impl SkeletonRepr {
    pub fn as_str(self) -> &'static str {
        match self {
            SkeletonRepr::Surface => "surface",
            SkeletonRepr::Nominalized => "nominalized",
            SkeletonRepr::Abstract => "abstract",
        }
    }
}

impl FromStr for SkeletonRepr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "surface" => Ok(SkeletonRepr::Surface),
            "nominalized" => Ok(SkeletonRepr::Nominalized),
            "abstract" => Ok(SkeletonRepr::Abstract),
            _ => Err(format!("unknown skeleton representation {s:?}")),
        }
    }
}

impl fmt::Display for SkeletonRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One chain rendered as five per-sentence slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "repr", content = "slots", rename_all = "snake_case")]
pub enum EntitySkeleton {
    Surface([Option<String>; STORY_LEN]),
    /// `[h, p]`: mention present, mention is a pronoun.
    Nominalized([[u8; 2]; STORY_LEN]),
    Abstract([Option<Category>; STORY_LEN]),
}

impl EntitySkeleton {
    /// Skeleton of a story without any chain.
    pub fn empty(repr: SkeletonRepr) -> Self {
        match repr {
            SkeletonRepr::Surface => EntitySkeleton::Surface(Default::default()),
            SkeletonRepr::Nominalized => EntitySkeleton::Nominalized([[0, 0]; STORY_LEN]),
            SkeletonRepr::Abstract => EntitySkeleton::Abstract([None; STORY_LEN]),
        }
    }

    pub fn from_chain(chain: &CorefChain, repr: SkeletonRepr) -> Self {
        match repr {
            SkeletonRepr::Surface => to_surface(chain),
            SkeletonRepr::Nominalized => to_nominalized(chain),
            SkeletonRepr::Abstract => to_abstract(chain),
        }
    }

    pub fn repr(&self) -> SkeletonRepr {
        match self {
            EntitySkeleton::Surface(_) => SkeletonRepr::Surface,
            EntitySkeleton::Nominalized(_) => SkeletonRepr::Nominalized,
            EntitySkeleton::Abstract(_) => SkeletonRepr::Abstract,
        }
    }

    pub fn presence_vector(&self) -> [u8; STORY_LEN] {
        let mut out = [0u8; STORY_LEN];
        for (s, o) in out.iter_mut().enumerate() {
            *o = match self {
                EntitySkeleton::Surface(slots) => u8::from(slots[s].is_some()),
                EntitySkeleton::Nominalized(slots) => slots[s][0],
                EntitySkeleton::Abstract(slots) => u8::from(slots[s].is_some()),
            };
        }
        out
    }
}

pub fn to_surface(chain: &CorefChain) -> EntitySkeleton {
    EntitySkeleton::Surface(std::array::from_fn(|s| chain.mention_in(s).map(|m| m.text.clone())))
}

pub fn to_nominalized(chain: &CorefChain) -> EntitySkeleton {
    EntitySkeleton::Nominalized(std::array::from_fn(|s| match chain.mention_in(s) {
        Some(m) => [1, u8::from(m.is_pronoun)],
        None => [0, 0],
    }))
}

pub fn to_abstract(chain: &CorefChain) -> EntitySkeleton {
    let head = chain.head_category();
    EntitySkeleton::Abstract(std::array::from_fn(|s| {
        chain
            .mention_in(s)
            .map(|m| if m.is_pronoun { head } else { m.category })
    }))
}

/// Per-sentence surface head token of a chain: the lowercased last token of
/// the slot text.
pub fn surface_heads(chain: &CorefChain) -> [Option<String>; STORY_LEN] {
    std::array::from_fn(|s| {
        chain
            .mention_in(s)
            .and_then(|m| m.text.split_whitespace().last().map(str::to_lowercase))
    })
}

/// Central chain of a story given as raw sentence strings.
pub fn central_chain_of(sentences: &[&str], lex: &Lexicons) -> Option<CorefChain> {
    let toks: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s)).collect();
    let chains = extract_chains(&toks, lex);
    select_central_chain(&chains).cloned()
}

/// Skeleton of a story given as raw sentence strings; all-empty when the
/// story has no chain.
pub fn skeleton_of(sentences: &[&str], lex: &Lexicons, repr: SkeletonRepr) -> EntitySkeleton {
    match central_chain_of(sentences, lex) {
        Some(c) => EntitySkeleton::from_chain(&c, repr),
        None => EntitySkeleton::empty(repr),
    }
}
