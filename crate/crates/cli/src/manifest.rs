//! Audit manifests: one JSON file naming the inputs of an audit.
//!
//! Paths are resolved relative to the manifest's own directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dejavu_core::embedding_store::load_annotations;
use dejavu_core::{assemble, AuditDataset, EmbeddingMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

fn default_split() -> String {
    "A".into()
}

fn default_public_set() -> String {
    "public".into()
}

fn default_k() -> usize {
    dejavu_core::knn::DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    pub reps: usize,
    pub fraction: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            reps: 100,
            fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditManifest {
    #[serde(default = "default_split")]
    pub split: String,
    /// Split captions embedded by the target model.
    pub text_target: PathBuf,
    /// The same captions embedded by the reference model.
    pub text_reference: PathBuf,
    pub public_target: PathBuf,
    pub public_reference: PathBuf,
    /// Ground-truth objects of the split records.
    pub split_annotations: PathBuf,
    pub public_annotations: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Top-m object scoring; the union of neighbor objects when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_public_set")]
    pub public_set: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl AuditManifest {
    pub fn load(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let m: AuditManifest =
            serde_json::from_str(&text).map_err(|e| CliError::input(path, format!("invalid manifest: {e}")))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, text).map_err(|e| CliError::output(path, e))
    }

    /// Every referenced file with its role, resolved against `base`.
    pub fn files(&self, base: &Path) -> Vec<(&'static str, PathBuf)> {
        [
            ("text_target", &self.text_target),
            ("text_reference", &self.text_reference),
            ("public_target", &self.public_target),
            ("public_reference", &self.public_reference),
            ("split_annotations", &self.split_annotations),
            ("public_annotations", &self.public_annotations),
        ]
        .into_iter()
        .map(|(role, p)| (role, base.join(p)))
        .collect()
    }

    pub fn load_dataset(&self, base: &Path) -> CliResult<AuditDataset> {
        let emb = |p: &PathBuf| EmbeddingMatrix::load(base.join(p));
        Ok(assemble(
            self.split.clone(),
            emb(&self.text_target)?,
            emb(&self.text_reference)?,
            load_annotations(base.join(&self.split_annotations))?,
            emb(&self.public_target)?,
            emb(&self.public_reference)?,
            load_annotations(base.join(&self.public_annotations))?,
        )?)
    }

    /// SHA-256 of every input file, embedding payloads included.
    pub fn digests(&self, base: &Path) -> CliResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (role, path) in self.files(base) {
            out.insert(role.to_string(), sha256_file(&path)?);
            if !role.ends_with("annotations") {
                let payload = dejavu_core::embedding_store::payload_path(&path);
                out.insert(format!("{role}_payload"), sha256_file(&payload)?);
            }
        }
        Ok(out)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::input(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
