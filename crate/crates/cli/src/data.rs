use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clay_core::index::Database;
use clay_core::storage::{read_embeddings, read_manifest, Manifest};
use clay_core::subspace::{build_euclidean_subspace, build_subspace, merge_conditions, ConditionSubspace, PromptMatrix};

/// A data directory: `images.emb`, `manifest.json`, `prompts/<name>.emb`.
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = read_manifest(&root.join("manifest.json"))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn database(&self) -> Result<Database> {
        let embeddings = read_embeddings(&self.root.join("images.emb"))?;
        if embeddings.len() != self.manifest.items.len() {
            bail!(
                "images.emb has {} rows but the manifest lists {} items",
                embeddings.len(),
                self.manifest.items.len()
            );
        }
        Ok(Database::new(self.manifest.ids(), embeddings, self.manifest.labels())?)
    }

    pub fn prompts(&self, condition: &str) -> Result<PromptMatrix> {
        let path = self.root.join("prompts").join(format!("{condition}.emb"));
        let m = read_embeddings(&path).with_context(|| format!("prompts for condition `{condition}`"))?;
        Ok(PromptMatrix::from_embeddings(condition, &m)?)
    }

    /// Subspace over the merged prompts of `conditions`, plus the prompt count.
    pub fn subspace(&self, conditions: &[String], k: usize, euclidean: bool) -> Result<(ConditionSubspace, usize)> {
        let parts = conditions.iter().map(|c| self.prompts(c)).collect::<Result<Vec<_>>>()?;
        let merged = merge_conditions(&parts)?;
        let s = if euclidean {
            build_euclidean_subspace(&merged, k)?
        } else {
            build_subspace(&merged, k)?
        };
        Ok((s, merged.len()))
    }
}
