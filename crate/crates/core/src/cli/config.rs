use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::models::ModelConfig;
use crate::train::TrainConfig;

pub const PRESETS: [(&str, &str); 13] = [
    ("paper-baseline", include_str!("../../../../configs/paper-baseline.toml")),
    ("paper-skeleton-informed", include_str!("../../../../configs/paper-skeleton-informed.toml")),
    ("paper-mtg-a05-surface", include_str!("../../../../configs/paper-mtg-a05-surface.toml")),
    ("paper-mtg-a04-surface", include_str!("../../../../configs/paper-mtg-a04-surface.toml")),
    ("paper-mtg-a02-surface", include_str!("../../../../configs/paper-mtg-a02-surface.toml")),
    ("paper-mtg-a05-nominal", include_str!("../../../../configs/paper-mtg-a05-nominal.toml")),
    ("paper-mtg-a05-abstract", include_str!("../../../../configs/paper-mtg-a05-abstract.toml")),
    ("paper-glocal", include_str!("../../../../configs/paper-glocal.toml")),
    ("desk-baseline", include_str!("../../../../configs/desk-baseline.toml")),
    ("desk-skeleton-informed", include_str!("../../../../configs/desk-skeleton-informed.toml")),
    ("desk-mtg", include_str!("../../../../configs/desk-mtg.toml")),
    ("desk-mtg-nominal", include_str!("../../../../configs/desk-mtg-nominal.toml")),
    ("desk-glocal", include_str!("../../../../configs/desk-glocal.toml")),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub eval: Option<PathBuf>,
    /// Directory holding replacement lexicon files.
    #[serde(default)]
    pub lexicons: Option<PathBuf>,
    /// Expected image feature dimension; defaults to the model's.
    #[serde(default)]
    pub feature_dim: Option<usize>,
}

fn default_max_len() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Samples at this temperature instead of decoding greedily.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            max_len: default_max_len(),
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub corpus: CorpusPaths,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))
    }

    /// Loads a config file, or an embedded preset when `spec` names one and
    /// no such file exists.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            return Self::parse(&text, spec);
        }
        match PRESETS.iter().find(|(name, _)| *name == spec) {
            Some((name, text)) => Self::parse(text, name),
            None => Err(CliError::Validation(format!(
                "config {spec:?} is neither a file nor a preset (presets: {})",
                PRESETS.map(|p| p.0).join(", ")
            ))),
        }
    }

    /// Applies the seed everywhere it is consumed and validates the model and
    /// training sections.
    pub fn finalize(mut self, seed_override: Option<u64>) -> Result<Self, CliError> {
        let seed = seed_override
            .or(self.seed)
            .ok_or_else(|| CliError::Validation("seed is mandatory: set `seed` in the config or pass --seed".into()))?;
        self.seed = Some(seed);
        self.model.seed = seed;
        self.train.seed = seed;
        self.model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if self.generate.max_len == 0 {
            return Err(CliError::Validation("generate.max_len must be positive".into()));
        }
        if let Some(t) = self.generate.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::Validation(format!("generate.temperature must be positive, got {t}")));
            }
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn sha256(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, _) in PRESETS {
            let c = RunConfig::load(name).unwrap().finalize(None).unwrap();
            assert_eq!(c.model.seed, c.seed());
            assert_eq!(c.train.lr, 0.001);
            assert_eq!(c.train.batch_size, if name.starts_with("paper") { 64 } else { 8 });
        }
        let c = RunConfig::load("paper-mtg-a05-nominal").unwrap();
        assert_eq!(c.model.variant, Variant::Mtg);
        assert_eq!(c.model.alpha, 0.5);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = "[model]\nvariant = \"baseline\"\nembed_dim = 4\nhidden_dim = 4\nimage_dim = 4\nattn_dim = 4\nskeleton_vocab_k = 4\n";
        let c = RunConfig::parse(text, "t").unwrap();
        assert!(matches!(c.clone().finalize(None), Err(CliError::Validation(_))));
        assert_eq!(c.finalize(Some(9)).unwrap().train.seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_alpha_are_rejected() {
        let base = RunConfig::load("desk-mtg").unwrap();
        let mut bad = base.clone();
        bad.model.alpha = 2.0;
        assert!(bad.finalize(None).is_err());
        assert!(RunConfig::parse("seed = 1\nbogus = 2\n", "t").is_err());
        assert_ne!(base.clone().finalize(Some(1)).unwrap().sha256(), base.finalize(Some(2)).unwrap().sha256());
    }
}
