//! The TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::ShiftConfig;
use crate::error::{Error, Result};
use crate::graph::RelationThresholds;
use crate::model::ModelConfig;
use crate::scene::{Catalog, GenerationConfig};
use crate::train::{FinetuneConfig, PretrainConfig};

/// `[text]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    /// Relation sentences per object paragraph.
    pub max_relations: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { max_relations: 6 }
    }
}

/// `[paths]` table. Relative paths are taken as given, i.e. relative to the
/// working directory of the process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Synthetic corpus written by `generate` and read by training.
    pub corpus: PathBuf,
    /// Corpus turned into the pseudo-real domain for fine-tuning; the
    /// synthetic corpus when absent.
    pub real_corpus: Option<PathBuf>,
    /// Checkpoints, vocabulary and metrics go here.
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            real_corpus: None,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Scenes written by `generate`.
    pub scenes: usize,
    pub generation: GenerationConfig,
    pub relations: RelationThresholds,
    pub text: TextConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub shift: ShiftConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenes: 50,
            generation: GenerationConfig::default(),
            relations: RelationThresholds::default(),
            text: TextConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            shift: ShiftConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses TOML text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse {
                path: path.to_owned(),
                line,
                message: e.message().to_owned(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.shift.validate()
    }

    /// The catalog named by `[generation]`, checked against the model's category count.
    pub fn catalog(&self) -> Result<Catalog> {
        let catalog = self.generation.load_catalog()?;
        if catalog.len() != self.model.categories {
            return Err(Error::Config(format!(
                "catalog has {} categories but model.categories = {}",
                catalog.len(),
                self.model.categories
            )));
        }
        Ok(catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml(), Path::new("x.toml")).unwrap(), c);
        assert_eq!(RunConfig::parse("", Path::new("x.toml")).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = "seed = 3\n\n[pretrain]\nsteps = 10\nstepz = 4\n";
        match RunConfig::parse(text, Path::new("bad.toml")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("stepz"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(RunConfig::parse("[finetune]\nbeta = 1.5\n", Path::new("x.toml")).is_err());
        assert!(RunConfig::parse("[model]\nd_model = 30\nheads = 4\n", Path::new("x.toml")).is_err());
    }
}
