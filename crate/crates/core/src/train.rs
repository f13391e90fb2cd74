//! Vocabulary preparation and the Adam training loop.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph};
use crate::corpus::{
    build_skeleton_vocab, build_vocab, encode_story, fill_missing_dii, make_batches, skeleton_classes,
    skeleton_num_classes, Batch, CorpusError, DiiPolicy, EncodedStory, SkeletonVocab, Story, Vocab,
};
use crate::models::{ModelBundle, ModelConfig, ModelDims, ModelError, StoryModel, Variant};
use crate::skeleton::{Lexicons, SkeletonRepr};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    8
}
fn default_epochs() -> usize {
    10
}
fn default_min_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Total optimizer steps; when set it replaces `epochs`, and the last
    /// epoch may stop partway.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub max_vocab: Option<usize>,
    #[serde(default)]
    pub dii_policy: DiiPolicy,
    /// Seed of the per-epoch batch shuffle.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            max_steps: None,
            min_count: default_min_count(),
            max_vocab: None,
            dii_policy: DiiPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_steps.unwrap_or(self.epochs) == 0 {
            return Err(TrainError::Config("epochs and max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Representation the model's skeleton classes are expressed in. The
/// glocal model always attends over surface skeletons.
pub fn effective_repr(config: &ModelConfig) -> SkeletonRepr {
    match config.variant {
        Variant::Glocal => SkeletonRepr::Surface,
        _ => config.skeleton_repr,
    }
}

/// Fills DII per policy and maps stories to indices against fixed vocabularies.
pub fn encode_corpus(
    stories: &[Story],
    lex: &Lexicons,
    vocab: &Vocab,
    skeleton_vocab: &SkeletonVocab,
    repr: SkeletonRepr,
    policy: DiiPolicy,
    max_dii_len: usize,
) -> Result<Vec<EncodedStory>, CorpusError> {
    stories
        .iter()
        .map(|s| {
            let filled = fill_missing_dii(s, policy)?;
            let classes = skeleton_classes(&filled, lex, repr, skeleton_vocab);
            Ok(encode_story(&filled, vocab, classes, max_dii_len))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub skeleton_vocab: SkeletonVocab,
    pub encoded: Vec<EncodedStory>,
    pub dims: ModelDims,
}

/// Builds vocabularies from the training stories and encodes them.
pub fn prepare_data(
    stories: &[Story],
    lex: &Lexicons,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<PreparedData, TrainError> {
    let filled = stories
        .iter()
        .map(|s| fill_missing_dii(s, train.dii_policy))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = build_vocab(&filled, train.min_count, train.max_vocab)?;
    let skeleton_vocab = build_skeleton_vocab(&filled, lex, model.skeleton_vocab_k);
    let repr = effective_repr(model);
    let encoded = encode_corpus(&filled, lex, &vocab, &skeleton_vocab, repr, train.dii_policy, model.max_dii_len)?;
    let dims = ModelDims {
        vocab: vocab.len(),
        skeleton_classes: skeleton_num_classes(repr, &skeleton_vocab),
    };
    Ok(PreparedData {
        vocab,
        skeleton_vocab,
        encoded,
        dims,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean training objective over the epoch's batches.
    pub loss: f64,
    pub l1: f64,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// One optimizer step on `batch`; returns the step's losses.
pub fn train_step(model: &mut StoryModel, adam: &mut Adam, batch: &Batch) -> Result<(f64, f64, Option<f64>), TrainError> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, batch)?;
    let loss = g.scalar(out.loss);
    let l1 = g.scalar(out.l1);
    let l2 = out.l2.map(|v| g.scalar(v));
    let grads = g.backward(out.loss).map_err(ModelError::from)?;
    let store = model.params_mut();
    store.clear_grads();
    grads.write_to(&g, store).map_err(ModelError::from)?;
    adam.step(store).map_err(ModelError::from)?;
    Ok((loss, l1, l2))
}

/// Trains a fresh model. With `checkpoint_dir`, writes `epoch-NNN.sklg`
/// after every epoch and `best.sklg` for the lowest epoch loss. The returned
/// model has its parameters rounded to 32-bit precision, matching what a
/// checkpoint stores.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &PreparedData,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    if data.encoded.is_empty() {
        return Err(TrainError::Corpus(CorpusError::Empty));
    }
    let mut model = StoryModel::new(model_config.clone(), data.dims)?;
    let mut adam = Adam::new(AdamConfig {
        lr: train_config.lr,
        ..AdamConfig::default()
    });
    let bundle_of = |model: &StoryModel| {
        let mut m = model.clone();
        m.params_mut().round_to_f32();
        ModelBundle {
            model: m,
            vocab: data.vocab.clone(),
            skeleton_vocab: data.skeleton_vocab.clone(),
        }
    };
    let epochs = match train_config.max_steps {
        Some(steps) => {
            let per_epoch = data.encoded.len().div_ceil(train_config.batch_size);
            steps.div_ceil(per_epoch)
        }
        None => train_config.epochs,
    };
    let mut epoch_logs = Vec::new();
    let mut step_logs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best = f64::INFINITY;
    let mut step = 0;
    'outer: for epoch in 0..epochs {
        let batches = make_batches(&data.encoded, train_config.batch_size, Some((train_config.seed, epoch as u64)));
        let (mut sum, mut sum1, mut sum2, mut count) = (0.0, 0.0, 0.0, 0usize);
        let mut has_l2 = false;
        for batch in &batches {
            if train_config.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let (loss, l1, l2) = train_step(&mut model, &mut adam, batch)?;
            step += 1;
            sum += loss;
            sum1 += l1;
            if let Some(v) = l2 {
                sum2 += v;
                has_l2 = true;
            }
            count += 1;
            step_logs.push(StepLog { step, loss, l1, l2 });
        }
        if count == 0 {
            break 'outer;
        }
        let log = EpochLog {
            epoch: epoch + 1,
            steps: step,
            loss: sum / count as f64,
            l1: sum1 / count as f64,
            l2: has_l2.then(|| sum2 / count as f64),
        };
        if let Some(dir) = checkpoint_dir {
            let bundle = bundle_of(&model);
            let path = dir.join(format!("epoch-{:03}.sklg", epoch + 1));
            bundle.save(&path)?;
            checkpoints.push(path);
            if log.loss < best {
                best = log.loss;
                bundle.save(&dir.join("best.sklg"))?;
            }
        }
        epoch_logs.push(log);
    }
    Ok(TrainOutcome {
        bundle: bundle_of(&model),
        epochs: epoch_logs,
        steps: step_logs,
        checkpoints,
    })
}

/// Fraction of sentence slots whose skeleton class the multitask head
/// predicts correctly.
pub fn skeleton_accuracy(model: &StoryModel, encoded: &[EncodedStory], batch_size: usize) -> Result<f64, TrainError> {
    if model.variant() != Variant::Mtg {
        return Err(TrainError::Config("skeleton accuracy needs the multitask model".into()));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for batch in make_batches(encoded, batch_size, None) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &batch)?;
        let logits = out.skeleton_logits.expect("multitask forward has skeleton logits");
        let c = g.shape(logits)[1];
        let data = g.data(logits);
        let b = batch.size();
        for t in 0..crate::skeleton::STORY_LEN {
            for s in 0..b {
                let r = t * b + s;
                let row = &data[r * c..(r + 1) * c];
                let pred = (0..c).fold(0, |best, i| if row[i] > row[best] { i } else { best });
                correct += usize::from(pred == batch.skeleton[s][t]);
                total += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
