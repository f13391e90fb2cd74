//! The four story generators. All share one word embedding, a Bi-LSTM
//! encoder over the five image vectors and a per-sentence LSTM decoder; the
//! variants differ in what extra conditioning reaches the decoder.
//!
//! Every sentence of every story in a batch is decoded as an independent
//! row. Rows are ordered sentence-major: row `t * B + b` is sentence `t` of
//! story `b`.

mod config;
mod generate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    checkpoint, grad_check, AutodiffError, BiLstm, Embedding, GradCheckConfig, GradCheckReport, Graph, Initializer, Linear, LstmCell, LstmState,
    ParamStore, Tensor, Var,
};
use crate::corpus::{Batch, SkeletonVocab, Vocab, PAD};
use crate::skeleton::STORY_LEN;

pub use config::{ModelConfig, ModelDims, Variant};
pub use generate::{AttentionMaps, DecodeMode, GenerateOptions, GeneratedStory};

/// Number of skeleton slots attended over.
pub const K_LEN: usize = STORY_LEN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone)]
struct GlocalLayers {
    word_lstm: BiLstm,
    word_transform: Linear,
    skeleton_embed: Embedding,
    skeleton_lstm: BiLstm,
    pw_proj: Linear,
    sentence_lstm: BiLstm,
    aw_proj: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Blocks {
    word: usize,
    ctx: usize,
    skeleton: Option<usize>,
    attn_w: Option<usize>,
    attn_p: Option<usize>,
    attn_s: Option<usize>,
}

/// Local features `l_t` and Bi-LSTM context `g_t`, one `[B × ·]` tensor per step.
#[derive(Debug, Clone)]
pub struct GlocalContext {
    pub local: Vec<Var>,
    pub global: Vec<Var>,
    pub batch: usize,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// `[(L · R) × V]`, position-major.
    pub logits: Var,
    /// `[(L · R) × h]` decoder states in the same order.
    pub hidden: Var,
    /// Story loss over every non-PAD target.
    pub loss: Var,
    pub rows: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct MtgOutput {
    pub decode: DecodeOutput,
    /// Skeleton-head logits `[R × C]`.
    pub skeleton_logits: Var,
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// `[R × n × K]`, normalised over the word axis.
    pub a_w: Var,
    /// `[R × K]`, normalised over skeleton slots.
    pub a_s: Var,
    /// `[R × attn]`
    pub p_w: Var,
    /// `[R × 2h]`
    pub h_s: Var,
}

#[derive(Debug, Clone)]
pub struct GlocalOutput {
    pub decode: DecodeOutput,
    pub attention: AttentionVars,
}

/// Variant-independent view of a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: Var,
    pub l1: Var,
    pub l2: Option<Var>,
    pub logits: Var,
    pub skeleton_logits: Option<Var>,
    pub attention: Option<AttentionVars>,
    pub rows: usize,
    pub max_len: usize,
}

/// Per-row decoder conditioning: projected gate contributions plus, for the
/// glocal model, the attention maps they were computed from.
pub(crate) struct Conditioning {
    projected: Vec<Var>,
    attention: Option<AttentionVars>,
}

#[derive(Debug, Clone)]
pub struct StoryModel {
    config: ModelConfig,
    dims: ModelDims,
    store: ParamStore,
    embed: Embedding,
    encoder: BiLstm,
    decoder: LstmCell,
    out: Linear,
    skeleton_embed: Option<Embedding>,
    mtg_head: Option<Linear>,
    glocal: Option<GlocalLayers>,
    blocks: Blocks,
}

/// Stacks `parts` (each `[B × X]`) into `[(len · B) × X]`.
fn stack_rows(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let s = g.stack(parts)?;
    let shape = g.shape(s).to_vec();
    let mut flat = vec![shape[0] * shape[1]];
    flat.extend_from_slice(&shape[2..]);
    Ok(g.reshape(s, &flat)?)
}

/// `A_w = softmax_n(H_w · H_kᵀ)` for `H_w: [R × n × d]`, `H_k: [R × K × d]`.
/// `mask`, when given, is `[R × n × K]` and excludes padded words.
pub fn local_attention(g: &mut Graph, h_w: Var, h_k: Var, mask: Option<&[bool]>) -> Result<Var> {
    let kt = g.transpose(h_k)?;
    let scores = g.bmm(h_w, kt)?;
    Ok(g.masked_softmax(scores, 1, mask)?)
}

/// `A_s = softmax_K(H_s · H_kᵀ)` for `H_s: [R × d]`, `H_k: [R × K × d]`.
pub fn sentence_attention(g: &mut Graph, h_s: Var, h_k: Var) -> Result<Var> {
    let shape = g.shape(h_s).to_vec();
    let q = g.reshape(h_s, &[shape[0], 1, shape[1]])?;
    let kt = g.transpose(h_k)?;
    let scores = g.bmm(q, kt)?;
    let k = g.shape(scores)[2];
    let flat = g.reshape(scores, &[shape[0], k])?;
    Ok(g.softmax(flat, 1)?)
}

impl StoryModel {
    pub fn new(config: ModelConfig, dims: ModelDims) -> Result<Self> {
        config.validate()?;
        if dims.vocab < 5 || dims.skeleton_classes < 2 {
            return Err(ModelError::Config(format!(
                "vocabulary size {} and skeleton classes {} are too small",
                dims.vocab, dims.skeleton_classes
            )));
        }
        let init = Initializer::new(config.seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let (e, h, d, a) = (config.embed_dim, config.hidden_dim, config.image_dim, config.attn_dim);

        let embed = Embedding::new(s, &init, "embed.word", dims.vocab, e)?;
        let encoder = BiLstm::new(s, &init, "encoder", d, h, config.encoder_layers)?;
        let mut blocks: Vec<(&str, usize)> = vec![("word", e), ("ctx", d + 2 * h)];
        let mut layout = Blocks {
            word: 0,
            ctx: 1,
            skeleton: None,
            attn_w: None,
            attn_p: None,
            attn_s: None,
        };
        match config.variant {
            Variant::SkeletonInformed => {
                layout.skeleton = Some(blocks.len());
                blocks.push(("skeleton", e));
            }
            Variant::Glocal => {
                layout.attn_w = Some(blocks.len());
                layout.attn_p = Some(blocks.len() + 1);
                layout.attn_s = Some(blocks.len() + 2);
                blocks.extend([("attn_w", a), ("attn_p", a), ("attn_s", K_LEN)]);
            }
            Variant::Baseline | Variant::Mtg => {}
        }
        let decoder = LstmCell::with_blocks(s, &init, "decoder", &blocks, h)?;
        let out = Linear::new(s, &init, "decoder.out", h, dims.vocab, true)?;

        let skeleton_embed = match config.variant {
            Variant::SkeletonInformed => Some(Embedding::new(s, &init, "skeleton.embed", dims.skeleton_classes, e)?),
            _ => None,
        };
        let mtg_head = match config.variant {
            Variant::Mtg => Some(Linear::new(s, &init, "mtg.head", h, dims.skeleton_classes, true)?),
            _ => None,
        };
        let glocal = match config.variant {
            Variant::Glocal => Some(GlocalLayers {
                word_lstm: BiLstm::new(s, &init, "glocal.word_lstm", e, h, 1)?,
                word_transform: Linear::new(s, &init, "glocal.word_transform", 2 * h, 2 * h, true)?,
                skeleton_embed: Embedding::new(s, &init, "glocal.skeleton_embed", dims.skeleton_classes, e)?,
                skeleton_lstm: BiLstm::new(s, &init, "glocal.skeleton_lstm", e, h, 1)?,
                pw_proj: Linear::new(s, &init, "glocal.pw_proj", K_LEN * 2 * h, a, true)?,
                sentence_lstm: BiLstm::new(s, &init, "glocal.sentence_lstm", 2 * h + a, h, 1)?,
                aw_proj: Linear::new(s, &init, "glocal.aw_proj", config.max_dii_len * K_LEN, a, true)?,
            }),
            _ => None,
        };
        Ok(Self {
            config,
            dims,
            store,
            embed,
            encoder,
            decoder,
            out,
            skeleton_embed,
            mtg_head,
            glocal,
            blocks: layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Names of the decoder weights that read the variant-specific inputs.
    pub fn conditioning_param_names(&self) -> Vec<String> {
        match self.config.variant {
            Variant::SkeletonInformed => vec!["skeleton.embed".into()],
            Variant::Glocal => ["attn_w", "attn_p", "attn_s"]
                .iter()
                .map(|b| format!("decoder.w_{b}"))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.size() == 0 {
            return Err(ModelError::Shape("empty batch".into()));
        }
        if batch.feature_dim != self.config.image_dim {
            return Err(ModelError::Shape(format!(
                "image feature dimension {} does not match the model's image_dim {}",
                batch.feature_dim, self.config.image_dim
            )));
        }
        if batch.sentences.len() != STORY_LEN {
            return Err(ModelError::Shape(format!(
                "batch has {} sentence positions, expected {STORY_LEN}",
                batch.sentences.len()
            )));
        }
        Ok(())
    }

    pub fn encode_glocal(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<GlocalContext> {
        self.check_batch(batch)?;
        let b = batch.size();
        let local = batch
            .features
            .iter()
            .map(|f| g.constant(Tensor::new(vec![b, batch.feature_dim], f.clone())?))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let enc = self.encoder.forward(g, store, &local)?;
        Ok(GlocalContext {
            local,
            global: enc.outputs,
            batch: b,
        })
    }

    fn ctx_projection(&self, g: &mut Graph, store: &ParamStore, ctx: &GlocalContext) -> Result<Var> {
        let l = stack_rows(g, &ctx.local)?;
        let gl = stack_rows(g, &ctx.global)?;
        let c = g.concat(&[l, gl])?;
        Ok(self.decoder.project(g, store, self.blocks.ctx, c)?)
    }

    fn skeleton_rows(&self, skeleton: &[[usize; STORY_LEN]]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(STORY_LEN * skeleton.len());
        for t in 0..STORY_LEN {
            for s in skeleton {
                if s[t] >= self.dims.skeleton_classes {
                    return Err(ModelError::Shape(format!(
                        "skeleton class {} out of range for {} classes",
                        s[t], self.dims.skeleton_classes
                    )));
                }
                idx.push(s[t]);
            }
        }
        Ok(idx)
    }

    fn skeleton_projection(&self, g: &mut Graph, store: &ParamStore, skeleton: &[[usize; STORY_LEN]]) -> Result<Var> {
        let (emb, block) = match (&self.skeleton_embed, self.blocks.skeleton) {
            (Some(e), Some(b)) => (e, b),
            _ => return Err(ModelError::Config("model has no skeleton input".into())),
        };
        let idx = self.skeleton_rows(skeleton)?;
        let e = emb.lookup(g, store, &idx)?;
        Ok(self.decoder.project(g, store, block, e)?)
    }

    /// Teacher-forced decoding of every row with fixed per-row contributions.
    fn decode_with(&self, g: &mut Graph, store: &ParamStore, batch: &Batch, projected: &[Var]) -> Result<DecodeOutput> {
        let b = batch.size();
        let rows = STORY_LEN * b;
        let len = batch.max_len;
        let h = self.config.hidden_dim;
        let mut state = LstmState::zeros(g, rows, h)?;
        let mut hs = Vec::with_capacity(len);
        let mut targets = Vec::with_capacity(len * rows);
        for tau in 0..len {
            let mut idx = Vec::with_capacity(rows);
            for sb in &batch.sentences {
                for r in 0..b {
                    idx.push(sb.inputs[r][tau]);
                    targets.push(sb.targets[r][tau]);
                }
            }
            let x = self.embed.lookup(g, store, &idx)?;
            state = self
                .decoder
                .step_mixed(g, store, &[(self.blocks.word, x)], projected, &state)?;
            hs.push(state.h);
        }
        let hidden = stack_rows(g, &hs)?;
        let logits = self.out.forward(g, store, hidden)?;
        let loss = g.cross_entropy(logits, &targets, Some(PAD))?;
        Ok(DecodeOutput {
            logits,
            hidden,
            loss,
            rows,
            max_len: len,
        })
    }

    /// Decoder conditioned on `[l_t, g_t]` and the previous word.
    pub fn decode_baseline(&self, g: &mut Graph, store: &ParamStore, ctx: &GlocalContext, batch: &Batch) -> Result<DecodeOutput> {
        let c = self.ctx_projection(g, store, ctx)?;
        self.decode_with(g, store, batch, &[c])
    }

    /// Decoder additionally conditioned on the embedded skeleton slot of
    /// each sentence.
    pub fn decode_skeleton_informed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ctx: &GlocalContext,
        skeleton: &[[usize; STORY_LEN]],
        batch: &Batch,
    ) -> Result<DecodeOutput> {
        if skeleton.len() != batch.size() {
            return Err(ModelError::Shape(format!(
                "{} skeletons for a batch of {} stories",
                skeleton.len(),
                batch.size()
            )));
        }
        let c = self.ctx_projection(g, store, ctx)?;
        let k = self.skeleton_projection(g, store, skeleton)?;
        self.decode_with(g, store, batch, &[c, k])
    }

    /// Story loss, skeleton-prediction loss from each sentence's final
    /// decoder state, and `alpha · L1 + (1 − alpha) · L2`.
    pub fn mtg_forward_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ctx: &GlocalContext,
        batch: &Batch,
        alpha: f64,
    ) -> Result<MtgOutput> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ModelError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let head = self
            .mtg_head
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no skeleton head".into()))?;
        let decode = self.decode_baseline(g, store, ctx, batch)?;
        let b = batch.size();
        let rows = decode.rows;
        let mut last = Vec::with_capacity(rows);
        for sb in &batch.sentences {
            for r in 0..b {
                last.push((sb.lengths[r] - 1) * rows + last.len());
            }
        }
        let finals = g.gather(decode.hidden, &last)?;
        let skeleton_logits = head.forward(g, store, finals)?;
        let targets = self.skeleton_rows(&batch.skeleton)?;
        let l2 = g.cross_entropy(skeleton_logits, &targets, None)?;
        let l1 = decode.loss;
        let w1 = g.scale(l1, alpha)?;
        let w2 = g.scale(l2, 1.0 - alpha)?;
        let total = g.add(w1, w2)?;
        Ok(MtgOutput {
            decode,
            skeleton_logits,
            l1,
            l2,
            total,
        })
    }

    /// Sentence-level Bi-LSTM over `[H_w, P_w]` per word, then attention of
    /// its summary state against the skeleton states.
    pub fn global_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h_w: &[Var],
        p_w: Var,
        h_k: Var,
        masks: &[Vec<bool>],
    ) -> Result<(Var, Var)> {
        let gl = self.glocal_layers()?;
        let mut seq = Vec::with_capacity(h_w.len());
        for &hw in h_w {
            seq.push(g.concat(&[hw, p_w])?);
        }
        let out = gl.sentence_lstm.forward_masked(g, store, &seq, Some(masks))?;
        let h_s = g.concat(&[out.last_forward, out.last_backward])?;
        let a_s = sentence_attention(g, h_s, h_k)?;
        Ok((h_s, a_s))
    }

    fn glocal_layers(&self) -> Result<&GlocalLayers> {
        self.glocal
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no attention layers".into()))
    }

    /// Word and sentence attention over DII against the skeleton, and the
    /// decoder contributions derived from them.
    fn glocal_conditioning(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<(AttentionVars, [Var; 3])> {
        let gl = self.glocal_layers()?;
        let b = batch.size();
        let rows = STORY_LEN * b;
        let n = batch.max_dii_len;
        let n_max = self.config.max_dii_len;
        let h2 = 2 * self.config.hidden_dim;
        if n > n_max {
            return Err(ModelError::Shape(format!(
                "DII length {n} exceeds the model's max_dii_len {n_max}"
            )));
        }

        let mut word_masks = Vec::with_capacity(n);
        let mut seq = Vec::with_capacity(n);
        for i in 0..n {
            let mut idx = Vec::with_capacity(rows);
            let mut mask = Vec::with_capacity(rows);
            for sb in &batch.sentences {
                for r in 0..b {
                    idx.push(sb.dii[r][i]);
                    mask.push(sb.dii_mask[r][i]);
                }
            }
            seq.push(self.embed.lookup(g, store, &idx)?);
            word_masks.push(mask);
        }
        let words = gl.word_lstm.forward_masked(g, store, &seq, Some(&word_masks))?;
        let mut h_w = Vec::with_capacity(n);
        for &o in &words.outputs {
            let z = gl.word_transform.forward(g, store, o)?;
            h_w.push(g.tanh(z)?);
        }
        let stacked = g.stack(&h_w)?;
        let h_w_rows = g.permute(stacked, &[1, 0, 2])?;

        let mut slots = Vec::with_capacity(K_LEN);
        for j in 0..K_LEN {
            let idx: Vec<usize> = batch.skeleton.iter().map(|s| s[j]).collect();
            if let Some(&bad) = idx.iter().find(|&&c| c >= self.dims.skeleton_classes) {
                return Err(ModelError::Shape(format!(
                    "skeleton class {bad} out of range for {} classes",
                    self.dims.skeleton_classes
                )));
            }
            slots.push(gl.skeleton_embed.lookup(g, store, &idx)?);
        }
        let sk = gl.skeleton_lstm.forward(g, store, &slots)?;
        let sk_stacked = g.stack(&sk.outputs)?;
        let h_k_story = g.permute(sk_stacked, &[1, 0, 2])?;
        let copies = vec![h_k_story; STORY_LEN];
        let h_k = stack_rows(g, &copies)?;

        let mut mask = Vec::with_capacity(rows * n * K_LEN);
        for sb in &batch.sentences {
            for r in 0..b {
                for i in 0..n {
                    mask.extend(std::iter::repeat_n(sb.dii_mask[r][i], K_LEN));
                }
            }
        }
        let a_w = local_attention(g, h_w_rows, h_k, Some(&mask))?;
        let a_w_t = g.transpose(a_w)?;
        let attended = g.bmm(a_w_t, h_w_rows)?;
        let attended = g.reshape(attended, &[rows, K_LEN * h2])?;
        let p_w = gl.pw_proj.forward(g, store, attended)?;

        let (h_s, a_s) = self.global_attention(g, store, &h_w, p_w, h_k, &word_masks)?;

        let padded = if n < n_max {
            let zeros = g.constant(Tensor::zeros(&[rows, K_LEN, n_max - n])?)?;
            g.concat(&[a_w_t, zeros])?
        } else {
            a_w_t
        };
        let flat = g.reshape(padded, &[rows, K_LEN * n_max])?;
        let aw_feat = gl.aw_proj.forward(g, store, flat)?;

        let block = |b: Option<usize>| b.expect("glocal decoder has attention blocks");
        let pw_c = self.decoder.project(g, store, block(self.blocks.attn_w), aw_feat)?;
        let pp_c = self.decoder.project(g, store, block(self.blocks.attn_p), p_w)?;
        let ps_c = self.decoder.project(g, store, block(self.blocks.attn_s), a_s)?;
        Ok((AttentionVars { a_w, a_s, p_w, h_s }, [pw_c, pp_c, ps_c]))
    }

    /// Decoder conditioned on `[l_t, g_t]` plus the projected flattened word
    /// attention, the attended DII summary `P_w` and the sentence attention.
    pub fn glocal_forward(&self, g: &mut Graph, store: &ParamStore, ctx: &GlocalContext, batch: &Batch) -> Result<GlocalOutput> {
        let c = self.ctx_projection(g, store, ctx)?;
        let (attention, extra) = self.glocal_conditioning(g, store, batch)?;
        let decode = self.decode_with(g, store, batch, &[c, extra[0], extra[1], extra[2]])?;
        Ok(GlocalOutput { decode, attention })
    }

    pub(crate) fn conditioning(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Conditioning> {
        let ctx = self.encode_glocal(g, store, batch)?;
        let c = self.ctx_projection(g, store, &ctx)?;
        Ok(match self.config.variant {
            Variant::Baseline | Variant::Mtg => Conditioning {
                projected: vec![c],
                attention: None,
            },
            Variant::SkeletonInformed => {
                let k = self.skeleton_projection(g, store, &batch.skeleton)?;
                Conditioning {
                    projected: vec![c, k],
                    attention: None,
                }
            }
            Variant::Glocal => {
                let (attention, extra) = self.glocal_conditioning(g, store, batch)?;
                Conditioning {
                    projected: vec![c, extra[0], extra[1], extra[2]],
                    attention: Some(attention),
                }
            }
        })
    }

    /// Training objective of the configured variant.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<ForwardOutput> {
        let ctx = self.encode_glocal(g, store, batch)?;
        let plain = |d: DecodeOutput, attention| ForwardOutput {
            loss: d.loss,
            l1: d.loss,
            l2: None,
            logits: d.logits,
            skeleton_logits: None,
            attention,
            rows: d.rows,
            max_len: d.max_len,
        };
        Ok(match self.config.variant {
            Variant::Baseline => plain(self.decode_baseline(g, store, &ctx, batch)?, None),
            Variant::SkeletonInformed => {
                plain(self.decode_skeleton_informed(g, store, &ctx, &batch.skeleton, batch)?, None)
            }
            Variant::Glocal => {
                let o = self.glocal_forward(g, store, &ctx, batch)?;
                plain(o.decode, Some(o.attention))
            }
            Variant::Mtg => {
                let o = self.mtg_forward_loss(g, store, &ctx, batch, self.config.alpha)?;
                ForwardOutput {
                    loss: o.total,
                    l1: o.l1,
                    l2: Some(o.l2),
                    logits: o.decode.logits,
                    skeleton_logits: Some(o.skeleton_logits),
                    attention: None,
                    rows: o.decode.rows,
                    max_len: o.decode.max_len,
                }
            }
        })
    }

    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<ForwardOutput> {
        self.forward_with(g, &self.store, batch)
    }

    /// Finite-difference check of the training objective on `batch`.
    pub fn grad_check(&self, batch: &Batch, config: &GradCheckConfig) -> Result<GradCheckReport> {
        self.check_batch(batch)?;
        let failure = std::cell::RefCell::new(None);
        let report = grad_check(
            |g, store| match self.forward_with(g, store, batch) {
                Ok(out) => Ok(out.loss),
                Err(ModelError::Autodiff(e)) => Err(e),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    Err(AutodiffError::EmptyInput { op: "model forward" })
                }
            },
            &self.store,
            config,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let report = report?;
        Ok(report)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    model: ModelConfig,
    dims: ModelDims,
    vocab: Vocab,
    skeleton_vocab: SkeletonVocab,
}

/// A model with the vocabularies it was trained against.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: StoryModel,
    pub vocab: Vocab,
    pub skeleton_vocab: SkeletonVocab,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let doc = CheckpointDoc {
            model: self.model.config.clone(),
            dims: self.model.dims,
            vocab: self.vocab.clone(),
            skeleton_vocab: self.skeleton_vocab.clone(),
        };
        let json = serde_json::to_string(&doc).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(checkpoint::encode(&json, &self.model.store)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, store) = checkpoint::decode(bytes)?;
        let doc: CheckpointDoc =
            serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(format!("config document: {e}")))?;
        if doc.dims.vocab != doc.vocab.len() {
            return Err(ModelError::Checkpoint(format!(
                "vocabulary has {} entries but the model expects {}",
                doc.vocab.len(),
                doc.dims.vocab
            )));
        }
        let mut model = StoryModel::new(doc.model, doc.dims)?;
        model
            .store
            .load_values(&store)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(Self {
            model,
            vocab: doc.vocab,
            skeleton_vocab: doc.skeleton_vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
