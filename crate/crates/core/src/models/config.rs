use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::skeleton::SkeletonRepr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    SkeletonInformed,
    Mtg,
    Glocal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::SkeletonInformed,
        Variant::Mtg,
        Variant::Glocal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SkeletonInformed => "skeleton_informed",
            Variant::Mtg => "mtg",
            Variant::Glocal => "glocal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown model variant {s:?}"))
    }
}

fn default_layers() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.5
}
fn default_max_dii_len() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub image_dim: usize,
    pub attn_dim: usize,
    pub skeleton_vocab_k: usize,
    #[serde(default = "default_layers")]
    pub encoder_layers: usize,
    /// Weight of the story loss in the multitask objective.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub skeleton_repr: SkeletonRepr,
    /// DII tokens kept per sentence; also fixes the width of the flattened
    /// word attention fed to the decoder.
    #[serde(default = "default_max_dii_len")]
    pub max_dii_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Embed 32, hidden 64, image 64, attention 32, skeleton vocabulary 20.
    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            embed_dim: 32,
            hidden_dim: 64,
            image_dim: 64,
            attn_dim: 32,
            skeleton_vocab_k: 20,
            encoder_layers: 2,
            alpha: default_alpha(),
            skeleton_repr: SkeletonRepr::Surface,
            max_dii_len: default_max_dii_len(),
            seed,
        }
    }

    /// Embed 256, hidden 1024, image 1024, attention 256, skeleton vocabulary 50.
    pub fn paper(variant: Variant, seed: u64) -> Self {
        Self {
            embed_dim: 256,
            hidden_dim: 1024,
            image_dim: 1024,
            attn_dim: 256,
            skeleton_vocab_k: 50,
            ..Self::desk(variant, seed)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("image_dim", self.image_dim),
            ("attn_dim", self.attn_dim),
            ("skeleton_vocab_k", self.skeleton_vocab_k),
            ("encoder_layers", self.encoder_layers),
            ("max_dii_len", self.max_dii_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.variant == Variant::Glocal && self.skeleton_repr != SkeletonRepr::Surface {
            return Err(ModelError::Config(format!(
                "the glocal model attends over surface skeletons; skeleton_repr {} is not supported",
                self.skeleton_repr
            )));
        }
        Ok(())
    }
}

/// Sizes that come from the data rather than the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub skeleton_classes: usize,
}
