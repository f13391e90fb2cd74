use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelgen::eval::{avg_distinct_entities, meteor_lite, noun_pronoun_stats, presence_distance, skeleton_distance};
use skelgen::skeleton::Lexicons;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn meteor_worked_examples() {
    let five = toks("we went to the park");
    let expect = 1.0 - 0.5 * (1.0f64 / 5.0).powi(3);
    assert!((meteor_lite(&five, &five).unwrap() - expect).abs() < 1e-9);
    assert!((expect - 0.996).abs() < 1e-12);
    assert_eq!(meteor_lite(&toks("a b c"), &toks("x y z")).unwrap(), 0.0);
    assert!((meteor_lite(&toks("the cat sat"), &toks("the dog sat")).unwrap() - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn presence_distance_is_a_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut v = || -> [u8; 5] { std::array::from_fn(|_| rng.gen_range(0..2)) };
    for _ in 0..10_000 {
        let (a, b, c) = (v(), v(), v());
        let (ab, bc, ac) = (presence_distance(&a, &b), presence_distance(&b, &c), presence_distance(&a, &c));
        assert!(ab >= 0.0);
        assert_eq!(ab == 0.0, a == b);
        assert_eq!(ab, presence_distance(&b, &a));
        assert!(ac <= ab + bc + 1e-12);
    }
    assert_eq!(presence_distance(&[1, 1, 1, 0, 0], &[1, 0, 1, 0, 1]), 2f64.sqrt());
}

#[test]
fn distance_of_generated_story_uses_extracted_skeletons() {
    let lex = Lexicons::bundled();
    let gold = ["the dog ran .", "it sat .", "the dog ate .", "then it slept .", "the dog woke ."];
    let hyp = ["the dog ran .", "we sat .", "we ate .", "we slept .", "the end ."];
    let d = skeleton_distance(&gold, &hyp, &lex);
    assert!(d > 0.0 && d <= 5f64.sqrt());
}

#[test]
fn distinct_entities_of_wedding_story() {
    let lex = Lexicons::bundled();
    let wedding = vec![
        "The cake was amazing for this event!",
        "The bride and groom were so happy.",
        "They kissed with such passion and force.",
        "When their son arrived, he was already sleeping.",
        "After the event, I took pictures of the guests.",
    ];
    assert_eq!(avg_distinct_entities(&[wedding], &lex), 2.0);
    let empty = vec!["ran .", "so fast .", "wow .", "ok .", "bye ."];
    assert_eq!(avg_distinct_entities(&[empty], &lex), 0.0);
}

/// Sentences of ten words with exactly one pronoun and two determiner+noun
/// pairs, in random order.
fn planted_story(rng: &mut ChaCha8Rng) -> Vec<String> {
    const PRONOUNS: [&str; 5] = ["he", "she", "they", "it", "we"];
    const NOUNS: [&str; 6] = ["dog", "park", "cake", "car", "tree", "beach"];
    const DETS: [&str; 3] = ["the", "a", "this"];
    const FILLERS: [&str; 6] = ["ran", "quickly", "happily", "jumped", "slowly", "sang"];
    (0..5)
        .map(|_| {
            let mut units: Vec<String> = vec![PRONOUNS.choose(rng).unwrap().to_string()];
            for _ in 0..2 {
                units.push(format!("{} {}", DETS.choose(rng).unwrap(), NOUNS.choose(rng).unwrap()));
            }
            for _ in 0..5 {
                units.push(FILLERS.choose(rng).unwrap().to_string());
            }
            units.shuffle(rng);
            units.join(" ")
        })
        .collect()
}

#[test]
fn planted_noun_and_pronoun_rates_are_recovered() {
    let lex = Lexicons::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stories: Vec<Vec<String>> = (0..200).map(|_| planted_story(&mut rng)).collect();
    let (noun, pronoun) = noun_pronoun_stats(&stories, &lex);
    assert!((pronoun - 10.0).abs() <= 0.5, "{pronoun}");
    assert!((noun - 20.0).abs() <= 0.5, "{noun}");
}

const WORDS: [&str; 8] = ["the", "dog", "ran", "runs", "a", "park", "walked", "walking"];

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]).prop_map(String::from), 1..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn meteor_is_bounded(h in sentence(), r in sentence()) {
        let s = meteor_lite(&h, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn self_match_is_maximal(x in sentence(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<String> = (0..x.len()).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
        prop_assert!(meteor_lite(&x, &x).unwrap() >= meteor_lite(&y, &x).unwrap());
    }
}
