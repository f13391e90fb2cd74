use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ModelError, Result, StoryModel, K_LEN};
use crate::autodiff::{Graph, LstmState};
use crate::corpus::{Batch, SkeletonVocab, Vocab, BOS, EOS, PAD};
use crate::skeleton::STORY_LEN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    /// Maximum tokens per sentence, EOS excluded.
    pub max_len: usize,
    pub mode: DecodeMode,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_len: 30,
            mode: DecodeMode::Greedy,
        }
    }
}

/// Attention of one story, restricted to real DII tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMaps {
    /// `[5][n_t][K]`; each column sums to 1 over the sentence's words.
    pub a_w: Vec<Vec<Vec<f64>>>,
    /// `[5][K]`; each row sums to 1.
    pub a_s: Vec<Vec<f64>>,
    pub dii_tokens: Vec<Vec<String>>,
    /// Skeleton label of each of the K slots.
    pub slot_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedStory {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    #[serde(skip)]
    pub attention: Option<AttentionMaps>,
}

impl GeneratedStory {
    pub fn sentence_texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.join(" ")).collect()
    }
}

fn choose(logits: &[f64], allow_eos: bool, mode: DecodeMode, rng: &mut Option<ChaCha8Rng>) -> Result<usize> {
    let banned = |i: usize| i == PAD || i == BOS || (!allow_eos && i == EOS);
    match mode {
        DecodeMode::Greedy => Ok(logits
            .iter()
            .enumerate()
            .filter(|(i, _)| !banned(*i))
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0),
        DecodeMode::Sample { temperature, .. } => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, &v)| if banned(i) { 0.0 } else { ((v - max) / temperature).exp() })
                .collect();
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| ModelError::Shape(format!("cannot sample from logits: {e}")))?;
            Ok(dist.sample(rng.as_mut().expect("sampling mode has a generator")))
        }
    }
}

impl StoryModel {
    /// Decodes five sentences for every story in `batch`. Teacher inputs in
    /// the batch are ignored; features, DII and skeleton classes are used.
    pub fn generate_batch(
        &self,
        batch: &Batch,
        vocab: &Vocab,
        skeleton_vocab: &SkeletonVocab,
        options: &GenerateOptions,
    ) -> Result<Vec<GeneratedStory>> {
        if let DecodeMode::Sample { temperature, .. } = options.mode {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(ModelError::Config(format!("temperature must be positive, got {temperature}")));
            }
        }
        if vocab.len() != self.dims.vocab {
            return Err(ModelError::Shape(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                self.dims.vocab
            )));
        }
        let store = &self.store;
        let mut g = Graph::new();
        let cond = self.conditioning(&mut g, store, batch)?;
        let b = batch.size();
        let rows = STORY_LEN * b;
        let mut rng = match options.mode {
            DecodeMode::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DecodeMode::Greedy => None,
        };
        let mut state = LstmState::zeros(&mut g, rows, self.config.hidden_dim)?;
        let mut prev = vec![BOS; rows];
        let mut done = vec![false; rows];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); rows];
        let v = self.dims.vocab;
        for tau in 0..options.max_len {
            let x = self.embed.lookup(&mut g, store, &prev)?;
            state = self
                .decoder
                .step_mixed(&mut g, store, &[(self.blocks.word, x)], &cond.projected, &state)?;
            let logits = self.out.forward(&mut g, store, state.h)?;
            let data = g.data(logits).to_vec();
            for r in 0..rows {
                if done[r] {
                    prev[r] = PAD;
                    continue;
                }
                let tok = choose(&data[r * v..(r + 1) * v], tau > 0, options.mode, &mut rng)?;
                if tok == EOS {
                    done[r] = true;
                    prev[r] = PAD;
                } else {
                    out[r].push(tok);
                    prev[r] = tok;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }

        let attention = cond.attention.map(|att| {
            let a_w = g.data(att.a_w).to_vec();
            let a_s = g.data(att.a_s).to_vec();
            (a_w, a_s)
        });
        let n = batch.max_dii_len;
        Ok((0..b)
            .map(|s| {
                let sentences = (0..STORY_LEN).map(|t| vocab.decode(&out[t * b + s])).collect();
                let attention = attention.as_ref().map(|(a_w, a_s)| {
                    let mut maps = AttentionMaps {
                        a_w: Vec::with_capacity(STORY_LEN),
                        a_s: Vec::with_capacity(STORY_LEN),
                        dii_tokens: Vec::with_capacity(STORY_LEN),
                        slot_labels: batch.skeleton[s]
                            .iter()
                            .map(|&c| skeleton_vocab.label(c).to_string())
                            .collect(),
                    };
                    for t in 0..STORY_LEN {
                        let r = t * b + s;
                        let sb = &batch.sentences[t];
                        let valid = sb.dii_mask[s].iter().filter(|&&m| m).count();
                        maps.a_w.push(
                            (0..valid)
                                .map(|i| a_w[(r * n + i) * K_LEN..(r * n + i + 1) * K_LEN].to_vec())
                                .collect(),
                        );
                        maps.a_s.push(a_s[r * K_LEN..(r + 1) * K_LEN].to_vec());
                        maps.dii_tokens.push(vocab.decode(&sb.dii[s][..valid]));
                    }
                    maps
                });
                GeneratedStory {
                    id: batch.ids[s].clone(),
                    sentences,
                    attention,
                }
            })
            .collect())
    }
}
