//! Small generated corpora for tests, gradient checks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Story, StoryStep};
use crate::skeleton::STORY_LEN;

fn features(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn story(id: String, rng: &mut ChaCha8Rng, dim: usize, dii: &[String], sis: &[String]) -> Story {
    Story {
        id,
        steps: (0..STORY_LEN)
            .map(|t| StoryStep::new(features(rng, dim), Some(&dii[t]), &sis[t]))
            .collect(),
        gold_chains: None,
    }
}

const TOY: [([&str; 5], [&str; 5]); 2] = [
    (
        ["a dog on grass", "a dog and a ball", "a happy dog", "a dog lying down", "a dog by a door"],
        ["the dog ran outside .", "it found a ball .", "the dog was happy .", "then it slept .", "the dog went home ."],
    ),
    (
        ["a sandy beach", "kids with a castle", "kids in the sea", "tired kids", "a car on a road"],
        ["we went to the beach .", "the kids built a castle .", "they swam in the sea .", "the kids were tired .", "we drove home ."],
    ),
];

/// Two short stories with recurring entities and random image features.
pub fn toy_corpus(dim: usize, seed: u64) -> Vec<Story> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TOY.iter()
        .enumerate()
        .map(|(i, (dii, sis))| {
            let dii: Vec<String> = dii.iter().map(|s| s.to_string()).collect();
            let sis: Vec<String> = sis.iter().map(|s| s.to_string()).collect();
            story(format!("toy-{i}"), &mut rng, dim, &dii, &sis)
        })
        .collect()
}

pub const PLANTED_NOUNS: [&str; 12] = [
    "dog", "cat", "car", "ball", "tree", "boat", "bike", "cake", "hat", "kite", "drum", "flag",
];
const PLANTED_VERBS: [&str; 5] = ["appeared", "moved", "stopped", "waited", "returned"];

/// Number of distractor nouns placed next to the planted word in each DII.
pub const PLANTED_DISTRACTORS: usize = 4;

/// Stories built around one entity word. Every SIS sentence is
/// "the {entity} {verb} ." so the skeleton covers all five sentences, and
/// every DII is the entity plus distinct distractor nouns in random order.
pub fn planted_corpus(n: usize, dim: usize, seed: u64) -> Vec<Story> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let entity = PLANTED_NOUNS[rng.gen_range(0..PLANTED_NOUNS.len())];
            let others: Vec<&str> = PLANTED_NOUNS.iter().copied().filter(|&w| w != entity).collect();
            let mut dii = Vec::with_capacity(STORY_LEN);
            let mut sis = Vec::with_capacity(STORY_LEN);
            for verb in PLANTED_VERBS {
                let mut words: Vec<&str> = others.choose_multiple(&mut rng, PLANTED_DISTRACTORS).copied().collect();
                words.push(entity);
                words.shuffle(&mut rng);
                dii.push(words.join(" "));
                sis.push(format!("the {entity} {verb} ."));
            }
            story(format!("planted-{i:04}"), &mut rng, dim, &dii, &sis)
        })
        .collect()
}

const RANDOM_WORDS: [&str; 24] = [
    "the", "a", "dog", "dogs", "man", "woman", "park", "car", "cake", "he", "she", "it", "they",
    "their", "we", "ran", "saw", "was", "happy", "and", "with", "to", ".", ",",
];

/// Five random sentences over a small vocabulary rich in nouns and
/// pronouns, for exercising the resolver.
pub fn random_sentences(seed: u64) -> [String; STORY_LEN] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| {
        let len = rng.gen_range(1..=9);
        (0..len)
            .map(|_| RANDOM_WORDS[rng.gen_range(0..RANDOM_WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    })
}
