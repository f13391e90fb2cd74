use super::lexicon::{
    is_determiner, is_function_word, is_possessive, pronoun_info, Lexicons, Number, Person,
};
use super::tokenize::is_punctuation;
use super::{Category, CorefChain, Mention};

/// A mention before linking, with the key nouns are chained by.
#[derive(Debug, Clone)]
struct Candidate {
    mention: Mention,
    key: String,
    plural: bool,
}

fn is_word(lower: &str) -> bool {
    lower.chars().all(char::is_alphabetic) && !lower.is_empty()
}

/// Noun heuristic: an alphabetic open-class word that is either listed in
/// the category lexicon or sits between a determiner/possessive and the end
/// of a phrase.
pub fn is_noun_at(tokens: &[String], i: usize, lex: &Lexicons) -> bool {
    let lower = tokens[i].to_lowercase();
    if !is_word(&lower) || lex.is_pronoun(&lower) || is_function_word(&lower) || lex.is_stop_noun(&lower) {
        return false;
    }
    if lex.known(&lower) || lex.known(&lex.lemma(&lower)) {
        return true;
    }
    let after_det = i > 0 && {
        let prev = tokens[i - 1].to_lowercase();
        is_determiner(&prev) || is_possessive(&prev)
    };
    let phrase_end = match tokens.get(i + 1) {
        None => true,
        Some(next) => is_punctuation(next) || is_function_word(&next.to_lowercase()),
    };
    after_det && phrase_end
}

fn detect(sentence_index: usize, tokens: &[String], lex: &Lexicons) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let lower = tokens[i].to_lowercase();
        if lex.is_pronoun(&lower) {
            out.push(Candidate {
                mention: Mention {
                    sentence_index,
                    token_span: [i, i + 1],
                    text: tokens[i].clone(),
                    is_pronoun: true,
                    category: Category::Other,
                },
                key: lower,
                plural: false,
            });
            i += 1;
            continue;
        }
        if !is_noun_at(tokens, i, lex) {
            i += 1;
            continue;
        }
        let lemma = lex.lemma(&lower);
        // "X and Y" / "X and the Y": one plural mention including a leading determiner.
        let second = if tokens.get(i + 1).map(|t| t.to_lowercase()).as_deref() == Some("and") {
            let mut j = i + 2;
            if tokens.get(j).is_some_and(|t| is_determiner(&t.to_lowercase())) {
                j += 1;
            }
            (j < tokens.len() && is_noun_at(tokens, j, lex)).then_some(j)
        } else {
            None
        };
        let (start, end, key, plural) = match second {
            Some(j) => {
                let start = if i > 0 && is_determiner(&tokens[i - 1].to_lowercase()) {
                    i - 1
                } else {
                    i
                };
                let key = format!("{lemma} and {}", lex.lemma(&tokens[j].to_lowercase()));
                (start, j + 1, key, true)
            }
            None => (i, i + 1, lemma.clone(), lex.is_plural(&lower)),
        };
        out.push(Candidate {
            mention: Mention {
                sentence_index,
                token_span: [start, end],
                text: tokens[start..end].join(" "),
                is_pronoun: false,
                category: lex.category(&lemma),
            },
            key,
            plural,
        });
        i = end;
    }
    out
}

struct Building {
    key: String,
    noun_headed: bool,
    plural: bool,
    category: Category,
    mentions: Vec<Mention>,
}

fn compatible(chain: &Building, number: Number, refers_to: Option<Category>) -> bool {
    let number_ok = match number {
        Number::Any => true,
        Number::Plural => chain.plural,
        Number::Singular => !chain.plural,
    };
    let category_ok = match refers_to {
        None => true,
        Some(Category::Person) => chain.category == Category::Person,
        Some(_) => matches!(chain.category, Category::Object | Category::Other),
    };
    number_ok && category_ok
}

/// Rule-based coreference over tokenized sentences.
///
/// Nouns are chained by lemma. First and second person pronouns chain by
/// form family (I/me/my, we/us/our, you/your). A third person pronoun joins
/// the most recently mentioned compatible noun chain that already has a
/// mention in an earlier sentence; otherwise it is dropped. Chains with a
/// single mention are discarded. Output is ordered by first mention.
pub fn extract_chains(sentences: &[Vec<String>], lex: &Lexicons) -> Vec<CorefChain> {
    let mut chains: Vec<Building> = Vec::new();
    for (s, tokens) in sentences.iter().enumerate() {
        for cand in detect(s, tokens, lex) {
            let mut mention = cand.mention;
            if !mention.is_pronoun {
                match chains.iter_mut().find(|c| c.noun_headed && c.key == cand.key) {
                    Some(c) => c.mentions.push(mention),
                    None => chains.push(Building {
                        key: cand.key,
                        noun_headed: true,
                        plural: cand.plural,
                        category: mention.category,
                        mentions: vec![mention],
                    }),
                }
                continue;
            }
            let info = pronoun_info(&cand.key);
            if info.person != Person::Third {
                let key = info.identity.unwrap_or("you").to_string();
                mention.category = Category::Person;
                match chains.iter_mut().find(|c| !c.noun_headed && c.key == key) {
                    Some(c) => c.mentions.push(mention),
                    None => chains.push(Building {
                        key,
                        noun_headed: false,
                        plural: info.number == Number::Plural,
                        category: Category::Person,
                        mentions: vec![mention],
                    }),
                }
                continue;
            }
            let target = chains
                .iter_mut()
                .filter(|c| {
                    c.noun_headed
                        && c.mentions.iter().any(|m| m.sentence_index < s)
                        && compatible(c, info.number, info.refers_to)
                })
                .max_by_key(|c| {
                    let last = c.mentions.last().expect("chains are never empty");
                    (last.sentence_index, last.token_span[0])
                });
            if let Some(c) = target {
                mention.category = c.category;
                c.mentions.push(mention);
            }
        }
    }
    let mut out: Vec<CorefChain> = chains
        .into_iter()
        .filter(|c| c.mentions.len() >= 2)
        .map(|c| CorefChain { mentions: c.mentions })
        .collect();
    out.sort_by_key(|c| c.first_position());
    out
}

/// Every mention the detector finds, pronouns included, before linking.
pub fn detect_mentions(sentences: &[Vec<String>], lex: &Lexicons) -> Vec<Mention> {
    sentences
        .iter()
        .enumerate()
        .flat_map(|(s, toks)| detect(s, toks, lex).into_iter().map(|c| c.mention))
        .collect()
}
