use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocab, BOS, EOS, PAD, UNK};
use super::Story;
use crate::skeleton::STORY_LEN;

/// A story mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStory {
    pub id: String,
    /// Five feature vectors of equal length.
    pub features: Vec<Vec<f64>>,
    /// Five SIS sentences without BOS/EOS.
    pub sis: Vec<Vec<usize>>,
    /// Five DII sentences, never empty.
    pub dii: Vec<Vec<usize>>,
    /// Skeleton class per sentence in the configured representation.
    pub skeleton: [usize; STORY_LEN],
}

/// Encodes a story whose DII has already been filled. A still-missing DII
/// becomes a single UNK; DII longer than `max_dii_len` is truncated.
pub fn encode_story(story: &Story, vocab: &Vocab, skeleton: [usize; STORY_LEN], max_dii_len: usize) -> EncodedStory {
    let max_dii_len = max_dii_len.max(1);
    EncodedStory {
        id: story.id.clone(),
        features: story.steps.iter().map(|s| s.image_features.clone()).collect(),
        sis: story.steps.iter().map(|s| vocab.encode(&s.sis)).collect(),
        dii: story
            .steps
            .iter()
            .map(|s| match s.dii.as_deref() {
                Some(d) if !d.is_empty() => {
                    let mut ids = vocab.encode(d);
                    ids.truncate(max_dii_len);
                    ids
                }
                _ => vec![UNK],
            })
            .collect(),
        skeleton,
    }
}

/// One sentence position across a batch, padded to the batch-wide length.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceBatch {
    /// `[B][L]`: BOS followed by the sentence, then PAD.
    pub inputs: Vec<Vec<usize>>,
    /// `[B][L]`: the sentence followed by EOS, then PAD.
    pub targets: Vec<Vec<usize>>,
    /// Valid length of each row (sentence length + 1).
    pub lengths: Vec<usize>,
    /// `[B][n]` DII indices padded with PAD.
    pub dii: Vec<Vec<usize>>,
    /// `[B][n]`: true at real DII tokens.
    pub dii_mask: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// Per step, a row-major `[B × D]` buffer.
    pub features: Vec<Vec<f64>>,
    pub feature_dim: usize,
    pub sentences: Vec<SentenceBatch>,
    /// `[B][5]` skeleton classes.
    pub skeleton: Vec<[usize; STORY_LEN]>,
    /// Shared padded decoder length `L`.
    pub max_len: usize,
    /// Shared padded DII length `n`.
    pub max_dii_len: usize,
}

impl Batch {
    pub fn from_stories(stories: &[&EncodedStory]) -> Self {
        let b = stories.len();
        let dim = stories.first().map_or(0, |s| s.features[0].len());
        let max_len = stories
            .iter()
            .flat_map(|s| s.sis.iter().map(|t| t.len() + 1))
            .max()
            .unwrap_or(1);
        let max_dii_len = stories
            .iter()
            .flat_map(|s| s.dii.iter().map(Vec::len))
            .max()
            .unwrap_or(1);
        let features = (0..STORY_LEN)
            .map(|t| stories.iter().flat_map(|s| s.features[t].iter().copied()).collect())
            .collect();
        let sentences = (0..STORY_LEN)
            .map(|t| {
                let mut sb = SentenceBatch {
                    inputs: Vec::with_capacity(b),
                    targets: Vec::with_capacity(b),
                    lengths: Vec::with_capacity(b),
                    dii: Vec::with_capacity(b),
                    dii_mask: Vec::with_capacity(b),
                };
                for s in stories {
                    let words = &s.sis[t];
                    let mut input = vec![BOS];
                    input.extend_from_slice(words);
                    input.resize(max_len, PAD);
                    let mut target = words.clone();
                    target.push(EOS);
                    target.resize(max_len, PAD);
                    sb.inputs.push(input);
                    sb.targets.push(target);
                    sb.lengths.push(words.len() + 1);
                    let d = &s.dii[t];
                    let mut dii = d.clone();
                    dii.resize(max_dii_len, PAD);
                    sb.dii.push(dii);
                    sb.dii_mask.push((0..max_dii_len).map(|i| i < d.len()).collect());
                }
                sb
            })
            .collect();
        Batch {
            ids: stories.iter().map(|s| s.id.clone()).collect(),
            features,
            feature_dim: dim,
            sentences,
            skeleton: stories.iter().map(|s| s.skeleton).collect(),
            max_len,
            max_dii_len,
        }
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }
}

/// Splits stories into batches. With `shuffle = Some((seed, epoch))` the
/// order is a seeded permutation specific to that epoch.
pub fn make_batches(stories: &[EncodedStory], batch_size: usize, shuffle: Option<(u64, u64)>) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..stories.len()).collect();
    if let Some((seed, epoch)) = shuffle {
        let key = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let refs: Vec<&EncodedStory> = chunk.iter().map(|&i| &stories[i]).collect();
            Batch::from_stories(&refs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(id: usize, lens: [usize; 5]) -> EncodedStory {
        EncodedStory {
            id: format!("s{id}"),
            features: vec![vec![id as f64, 1.0]; 5],
            sis: lens.iter().map(|&l| (0..l).map(|i| 4 + i).collect()).collect(),
            dii: lens.iter().map(|&l| (0..l.max(1)).map(|i| 4 + i).collect()).collect(),
            skeleton: [0; 5],
        }
    }

    #[test]
    fn batch_sizes() {
        let stories: Vec<_> = (0..10).map(|i| enc(i, [2; 5])).collect();
        let sizes: Vec<usize> = make_batches(&stories, 4, Some((7, 0))).iter().map(Batch::size).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn shuffle_is_seeded_per_epoch() {
        let stories: Vec<_> = (0..10).map(|i| enc(i, [2; 5])).collect();
        let ids = |seed, epoch| -> Vec<String> {
            make_batches(&stories, 4, Some((seed, epoch)))
                .into_iter()
                .flat_map(|b| b.ids)
                .collect()
        };
        assert_eq!(ids(3, 1), ids(3, 1));
        assert_ne!(ids(3, 1), ids(3, 2));
        let unshuffled: Vec<String> = make_batches(&stories, 4, None).into_iter().flat_map(|b| b.ids).collect();
        assert_eq!(unshuffled, (0..10).map(|i| format!("s{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn padding_layout() {
        let a = enc(0, [1, 3, 2, 2, 2]);
        let b = enc(1, [2, 1, 1, 1, 1]);
        let batch = Batch::from_stories(&[&a, &b]);
        assert_eq!(batch.max_len, 4);
        let s1 = &batch.sentences[1];
        assert_eq!(s1.inputs[0], [BOS, 4, 5, 6]);
        assert_eq!(s1.targets[0], [4, 5, 6, EOS]);
        assert_eq!(s1.inputs[1], [BOS, 4, PAD, PAD]);
        assert_eq!(s1.targets[1], [4, EOS, PAD, PAD]);
        assert_eq!(s1.lengths, [4, 2]);
        assert_eq!(s1.dii_mask[1], [true, false, false]);
        assert_eq!(batch.features[0], [0.0, 1.0, 1.0, 1.0]);
        for s in &batch.sentences {
            for row in s.targets.iter().chain(&s.inputs) {
                assert_eq!(row.len(), batch.max_len);
                let first_pad = row.iter().position(|&t| t == PAD).unwrap_or(row.len());
                assert!(row[first_pad..].iter().all(|&t| t == PAD));
            }
        }
    }
}
