use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{Category, SkeletonError};

const BUNDLED_PRONOUNS: &str = include_str!("../../data/pronouns.txt");
const BUNDLED_CATEGORIES: &str = include_str!("../../data/categories.tsv");
const BUNDLED_STOP_NOUNS: &str = include_str!("../../data/stop_nouns.txt");

pub const PRONOUNS_FILE: &str = "pronouns.txt";
pub const CATEGORIES_FILE: &str = "categories.tsv";
pub const STOP_NOUNS_FILE: &str = "stop_nouns.txt";

/// Closed-class words that are never nouns.
const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "already", "also", "am", "an", "and",
    "are", "around", "as", "at", "be", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "down", "during", "each", "even", "ever",
    "every", "few", "finally", "for", "from", "had", "has", "have", "here", "how", "if", "in",
    "into", "is", "just", "later", "many", "more", "most", "much", "must", "no", "not", "now",
    "of", "off", "on", "once", "only", "or", "other", "out", "over", "really", "several",
    "should", "so", "some", "soon", "such", "than", "that", "the", "then", "there", "these",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "were",
    "what", "when", "where", "which", "while", "who", "why", "will", "with", "would", "yet",
];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "every", "each", "some", "any",
];

const POSSESSIVES: &[&str] = &["my", "your", "his", "her", "its", "our", "their"];

const IRREGULAR_PLURALS: &[&str] = &["people", "children", "men", "women", "folks", "police"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Person {
    First,
    Second,
    Third,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Number {
    Singular,
    Plural,
    Any,
}

/// Grammatical features of a pronoun form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PronounInfo {
    pub person: Person,
    pub number: Number,
    /// Category of antecedents the pronoun may refer to; `None` means any.
    pub refers_to: Option<Category>,
    /// Identity key for first and second person forms.
    pub identity: Option<&'static str>,
}

pub fn pronoun_info(form: &str) -> PronounInfo {
    let (person, number, refers_to, identity) = match form {
        "i" | "me" | "my" | "mine" | "myself" => {
            (Person::First, Number::Singular, Some(Category::Person), Some("i"))
        }
        "we" | "us" | "our" | "ours" | "ourselves" => {
            (Person::First, Number::Plural, Some(Category::Person), Some("we"))
        }
        "you" | "your" | "yours" | "yourself" | "yourselves" => {
            (Person::Second, Number::Any, Some(Category::Person), Some("you"))
        }
        "he" | "him" | "his" | "himself" | "she" | "her" | "hers" | "herself" => {
            (Person::Third, Number::Singular, Some(Category::Person), None)
        }
        "it" | "its" | "itself" => (Person::Third, Number::Singular, Some(Category::Other), None),
        "they" | "them" | "their" | "theirs" | "themselves" => {
            (Person::Third, Number::Plural, Some(Category::Person), None)
        }
        _ => (Person::Third, Number::Any, None, None),
    };
    PronounInfo {
        person,
        number,
        refers_to,
        identity,
    }
}

/// Word lists driving mention detection and abstraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pronouns: BTreeSet<String>,
    categories: BTreeMap<String, Category>,
    stop_nouns: BTreeSet<String>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_words(text: &str) -> BTreeSet<String> {
    content_lines(text).map(|(_, l)| l.to_lowercase()).collect()
}

fn parse_categories(text: &str, file: &str) -> Result<BTreeMap<String, Category>, SkeletonError> {
    let mut map = BTreeMap::new();
    for (line, l) in content_lines(text) {
        let err = |message: String| SkeletonError::Lexicon {
            file: file.to_string(),
            line,
            message,
        };
        let (lemma, cat) = l
            .split_once('\t')
            .ok_or_else(|| err("expected lemma<TAB>category".into()))?;
        let cat: Category = cat.trim().parse().map_err(err)?;
        map.insert(lemma.trim().to_lowercase(), cat);
    }
    Ok(map)
}

impl Lexicons {
    /// The lexicons shipped with the crate.
    pub fn bundled() -> Self {
        Self {
            pronouns: parse_words(BUNDLED_PRONOUNS),
            categories: parse_categories(BUNDLED_CATEGORIES, CATEGORIES_FILE)
                .expect("bundled category lexicon is well formed"),
            stop_nouns: parse_words(BUNDLED_STOP_NOUNS),
        }
    }

    pub fn from_parts<P, C, S>(pronouns: P, categories: C, stop_nouns: S) -> Result<Self, SkeletonError>
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        C: IntoIterator<Item = (String, Category)>,
        S: IntoIterator,
        S::Item: AsRef<str>,
    {
        let pronouns: BTreeSet<String> = pronouns
            .into_iter()
            .map(|p| p.as_ref().to_lowercase())
            .collect();
        if pronouns.is_empty() {
            return Err(SkeletonError::EmptyPronouns);
        }
        Ok(Self {
            pronouns,
            categories: categories
                .into_iter()
                .map(|(k, v)| (k.to_lowercase(), v))
                .collect(),
            stop_nouns: stop_nouns
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
        })
    }

    /// Reads `pronouns.txt`, `categories.tsv` and `stop_nouns.txt` from a
    /// directory. A missing stop-noun file means no stop nouns.
    pub fn from_dir(dir: &Path) -> Result<Self, SkeletonError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| SkeletonError::Io(format!("{}: {e}", p.display())))
        };
        let pronouns = parse_words(&read(PRONOUNS_FILE)?);
        let categories = parse_categories(&read(CATEGORIES_FILE)?, CATEGORIES_FILE)?;
        let stop_path = dir.join(STOP_NOUNS_FILE);
        let stop_nouns = if stop_path.exists() {
            parse_words(&read(STOP_NOUNS_FILE)?)
        } else {
            BTreeSet::new()
        };
        Self::from_parts(pronouns, categories, stop_nouns)
    }

    pub fn is_pronoun(&self, lower: &str) -> bool {
        self.pronouns.contains(lower)
    }

    pub fn is_stop_noun(&self, lower: &str) -> bool {
        self.stop_nouns.contains(lower)
    }

    pub fn pronouns(&self) -> impl Iterator<Item = &str> {
        self.pronouns.iter().map(String::as_str)
    }

    pub fn known(&self, lemma: &str) -> bool {
        self.categories.contains_key(lemma)
    }

    /// Category of a lemma; unknown lemmas are `Other`.
    pub fn category(&self, lemma: &str) -> Category {
        self.categories.get(lemma).copied().unwrap_or(Category::Other)
    }

    /// Crude plural stripping. Words listed in the category lexicon are their
    /// own lemma.
    pub fn lemma(&self, lower: &str) -> String {
        if self.categories.contains_key(lower) {
            return lower.to_string();
        }
        let candidates = [
            lower.strip_suffix("ies").map(|s| format!("{s}y")),
            ["ches", "shes", "xes", "sses"]
                .iter()
                .find(|suf| lower.ends_with(*suf))
                .map(|_| lower[..lower.len() - 2].to_string()),
            (lower.len() > 3
                && lower.ends_with('s')
                && !lower.ends_with("ss")
                && !lower.ends_with("us")
                && !lower.ends_with("is"))
            .then(|| lower[..lower.len() - 1].to_string()),
        ];
        let stripped: Vec<String> = candidates.into_iter().flatten().collect();
        stripped
            .iter()
            .find(|s| self.categories.contains_key(s.as_str()))
            .or(stripped.first())
            .cloned()
            .unwrap_or_else(|| lower.to_string())
    }

    pub fn is_plural(&self, lower: &str) -> bool {
        IRREGULAR_PLURALS.contains(&lower) || self.lemma(lower) != lower
    }
}

pub fn is_function_word(lower: &str) -> bool {
    FUNCTION_WORDS.contains(&lower)
}

pub fn is_determiner(lower: &str) -> bool {
    DETERMINERS.contains(&lower)
}

pub fn is_possessive(lower: &str) -> bool {
    POSSESSIVES.contains(&lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicons_load() {
        let lex = Lexicons::bundled();
        assert!(lex.is_pronoun("they"));
        assert!(!lex.is_pronoun("groom"));
        assert_eq!(lex.category("bride"), Category::Person);
        assert_eq!(lex.category("park"), Category::Location);
        assert_eq!(lex.category("zzz"), Category::Other);
        assert!(lex.is_stop_noun("time"));
    }

    #[test]
    fn lemmas() {
        let lex = Lexicons::bundled();
        assert_eq!(lex.lemma("guests"), "guest");
        assert_eq!(lex.lemma("parties"), "party");
        assert_eq!(lex.lemma("boxes"), "box");
        assert_eq!(lex.lemma("glass"), "glass");
        assert_eq!(lex.lemma("bus"), "bus");
        assert_eq!(lex.lemma("pictures"), "picture");
        assert_eq!(lex.lemma("is"), "is");
        assert!(lex.is_plural("guests"));
        assert!(lex.is_plural("people"));
        assert!(!lex.is_plural("bride"));
    }

    #[test]
    fn category_file_errors_carry_line_numbers() {
        let err = parse_categories("# header\nok\tperson\nbad line\n", "c.tsv").unwrap_err();
        assert_eq!(
            err,
            SkeletonError::Lexicon {
                file: "c.tsv".into(),
                line: 3,
                message: "expected lemma<TAB>category".into()
            }
        );
        let err = parse_categories("x\tanimal\n", "c.tsv").unwrap_err();
        assert!(err.to_string().contains("animal"));
    }

    #[test]
    fn empty_pronoun_set_is_rejected() {
        let r = Lexicons::from_parts(Vec::<String>::new(), vec![], Vec::<String>::new());
        assert_eq!(r.unwrap_err(), SkeletonError::EmptyPronouns);
    }

    #[test]
    fn loads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(PRONOUNS_FILE), "# c\nIt\nthey\n").unwrap();
        fs::write(dir.path().join(CATEGORIES_FILE), "park\tlocation\n").unwrap();
        let lex = Lexicons::from_dir(dir.path()).unwrap();
        assert!(lex.is_pronoun("it"));
        assert!(!lex.is_pronoun("he"));
        assert_eq!(lex.category("park"), Category::Location);
        assert!(!lex.is_stop_noun("time"));
    }
}
