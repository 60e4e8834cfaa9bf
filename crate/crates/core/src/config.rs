//! JSON run configuration shared by the command-line subcommands.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::DEFAULT_CANDIDATE_CAP;
use crate::embeddings::{EmbeddingProvider, EmbeddingStore, DEFAULT_STUB_DIM};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeGraph, RelationId};
use crate::neural::ModelDims;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Stub,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub triples_path: Option<PathBuf>,
    pub names_path: Option<PathBuf>,
    pub type_relation: String,
    pub embedding_mode: EmbeddingMode,
    pub embedding_path: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    #[serde(flatten)]
    pub training: TrainingConfig,
    pub candidate_cap: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            triples_path: None,
            names_path: None,
            type_relation: "is_a".into(),
            embedding_mode: EmbeddingMode::Stub,
            embedding_path: None,
            embedding_dim: DEFAULT_STUB_DIM,
            embedding_seed: 1,
            model_dim: ModelDims::DEFAULT_MODEL_DIM,
            heads: ModelDims::DEFAULT_HEADS,
            ff_dim: ModelDims::DEFAULT_FF_DIM,
            training: TrainingConfig::default(),
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            checkpoint_path: None,
            train_path: None,
            valid_path: None,
            test_path: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.triples_path,
            &mut cfg.names_path,
            &mut cfg.embedding_path,
            &mut cfg.checkpoint_path,
            &mut cfg.train_path,
            &mut cfg.valid_path,
            &mut cfg.test_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn model_dims(&self) -> Result<ModelDims> {
        ModelDims::new(self.embedding_dim, self.model_dim, self.heads, self.ff_dim)
    }

    pub fn load_kb(&self) -> Result<KnowledgeGraph> {
        let triples = self
            .triples_path
            .as_ref()
            .ok_or_else(|| Error::Config("triples_path is not set".into()))?;
        let triples = BufReader::new(File::open(triples)?);
        let relation = RelationId::new(self.type_relation.clone());
        match &self.names_path {
            Some(names) => {
                KnowledgeGraph::load(triples, BufReader::new(File::open(names)?), relation)
            }
            None => KnowledgeGraph::load(triples, std::io::empty(), relation),
        }
    }

    pub fn provider(&self) -> Result<EmbeddingProvider> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        match self.embedding_mode {
            EmbeddingMode::Stub => Ok(EmbeddingProvider::stub(
                self.embedding_dim,
                self.embedding_seed,
            )),
            EmbeddingMode::File => {
                let path = self
                    .embedding_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("embedding_path is not set".into()))?;
                EmbeddingProvider::from_store(self.embedding_dim, EmbeddingStore::load(path)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"triples_path": "kb.tsv", "lr": 0.05, "model_dim": 16}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.triples_path, Some(dir.path().join("kb.tsv")));
        assert_eq!(cfg.training.lr, 0.05);
        assert_eq!(cfg.training.batch_size, 4);
        assert_eq!(cfg.model_dim, 16);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.embedding_mode, EmbeddingMode::Stub);
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let cfg = RunConfig {
            embedding_mode: EmbeddingMode::File,
            ..Default::default()
        };
        assert!(matches!(cfg.load_kb(), Err(Error::Config(_))));
        assert!(matches!(cfg.provider(), Err(Error::Config(_))));
    }
}
