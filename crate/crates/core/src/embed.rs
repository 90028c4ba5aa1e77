//! Prompt embeddings without a bundled text encoder.
//!
//! Two sources: exact-match lookup in an embedding table (a JSON list of
//! strings next to an `N x C` `.feat` file with the same stem), and a toy
//! embedder that hashes strings to unit vectors for model-free pipelines and
//! tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scene::PromptSet;
use crate::tensor::{load_feat, save_feat};

pub const PROMPT_TEMPLATE_PREFIX: &str = "a ";
pub const PROMPT_TEMPLATE_SUFFIX: &str = " in a scene";
pub const MIN_TOY_DIM: usize = 8;

/// Wraps a class label as `"a {label} in a scene"`; `"other"` is left alone.
pub fn engineer_prompt(label: &str) -> Result<String> {
    if label.is_empty() {
        return Err(Error::EmptyLabel);
    }
    if label == "other" {
        return Ok(label.to_string());
    }
    Ok(format!(
        "{PROMPT_TEMPLATE_PREFIX}{label}{PROMPT_TEMPLATE_SUFFIX}"
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderSpec {
    Table(PathBuf),
    Toy { dim: usize, seed: u64 },
}

/// Parses `toy:<dim>:<seed>` or `table:<path>`.
impl FromStr for EmbedderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidConfig(format!(
                "embedder spec {s:?} is neither toy:<dim>:<seed> nor table:<path>"
            ))
        };
        if let Some(rest) = s.strip_prefix("toy:") {
            let (dim, seed) = rest.split_once(':').ok_or_else(bad)?;
            let dim = dim.parse().map_err(|_| bad())?;
            let seed = seed.parse().map_err(|_| bad())?;
            if dim < MIN_TOY_DIM {
                return Err(Error::InvalidConfig(format!(
                    "toy embedder dim must be >= {MIN_TOY_DIM}, got {dim}"
                )));
            }
            Ok(EmbedderSpec::Toy { dim, seed })
        } else if let Some(path) = s.strip_prefix("table:") {
            if path.is_empty() {
                return Err(bad());
            }
            Ok(EmbedderSpec::Table(PathBuf::from(path)))
        } else {
            Err(bad())
        }
    }
}

impl std::fmt::Display for EmbedderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbedderSpec::Table(p) => write!(f, "table:{}", p.display()),
            EmbedderSpec::Toy { dim, seed } => write!(f, "toy:{dim}:{seed}"),
        }
    }
}

/// Deterministic unit vector for `text`: SHA-256 in counter mode over
/// `(seed, text)`, mapped to `[-1, 1)` and L2-normalized.
pub fn toy_embedding(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut raw = Vec::with_capacity(dim);
    let mut counter = 0u64;
    while raw.len() < dim {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update((text.len() as u64).to_le_bytes());
        h.update(text.as_bytes());
        h.update(counter.to_le_bytes());
        let block = h.finalize();
        for word in block.chunks_exact(4) {
            if raw.len() == dim {
                break;
            }
            let u = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
            raw.push(u as f64 / 2f64.powi(31) - 1.0);
        }
        counter += 1;
    }
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| (v / n) as f32).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TableFile {
    prompts: Vec<String>,
}

/// Loaded embedding table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    set: PromptSet,
}

impl EmbeddingTable {
    /// The `.feat` is expected next to the JSON with the same stem.
    pub fn feat_path(json: &Path) -> PathBuf {
        json.with_extension("feat")
    }

    pub fn load(json: impl AsRef<Path>) -> Result<Self> {
        let json = json.as_ref();
        let text = fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
        let file: TableFile = serde_json::from_str(&text)
            .map_err(|e| Error::malformed("embedding table json", e.to_string()))?;
        let emb = FeatureMatrix::from_tensor(load_feat(Self::feat_path(json))?)?;
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = file.prompts.iter().find(|p| !seen.insert(p.as_str())) {
            return Err(Error::InvalidPromptSet(format!(
                "duplicate table prompt {d:?}"
            )));
        }
        Ok(Self {
            set: PromptSet::new(file.prompts, emb)?,
        })
    }

    pub fn save(set: &PromptSet, json: impl AsRef<Path>) -> Result<()> {
        let json = json.as_ref();
        let text = serde_json::to_string_pretty(&TableFile {
            prompts: set.prompts().to_vec(),
        })
        .expect("table serializes");
        fs::write(json, text).map_err(|e| Error::io(json, e))?;
        save_feat(Self::feat_path(json), &set.embeddings().to_tensor())
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn lookup(&self, texts: &[String]) -> Result<PromptSet> {
        let mut rows = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for t in texts {
            match self.set.prompts().iter().position(|p| p == t) {
                Some(i) => rows.push(self.set.embedding(i)),
                None => missing.push(t.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnknownPrompt(missing));
        }
        PromptSet::new(texts.to_vec(), FeatureMatrix::from_rows(&rows)?)
    }
}

/// A ready-to-use embedder (tables are loaded once).
#[derive(Debug, Clone)]
pub enum Embedder {
    Table(EmbeddingTable),
    Toy { dim: usize, seed: u64 },
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        match spec {
            EmbedderSpec::Table(p) => Ok(Embedder::Table(EmbeddingTable::load(p)?)),
            &EmbedderSpec::Toy { dim, seed } => {
                if dim < MIN_TOY_DIM {
                    return Err(Error::InvalidConfig(format!(
                        "toy embedder dim must be >= {MIN_TOY_DIM}"
                    )));
                }
                Ok(Embedder::Toy { dim, seed })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Table(t) => t.dim(),
            Embedder::Toy { dim, .. } => *dim,
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<PromptSet> {
        if texts.is_empty() {
            return Err(Error::InvalidPromptSet("no texts to embed".into()));
        }
        match self {
            Embedder::Table(t) => t.lookup(texts),
            &Embedder::Toy { dim, seed } => {
                let rows: Vec<Vec<f32>> =
                    texts.iter().map(|t| toy_embedding(t, dim, seed)).collect();
                PromptSet::new(texts.to_vec(), FeatureMatrix::from_rows(&rows)?)
            }
        }
    }

    /// Embeds and checks the result against the feature dimension it will be
    /// compared with.
    pub fn embed_for_dim(&self, texts: &[String], dim: usize) -> Result<PromptSet> {
        if self.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: self.dim(),
            });
        }
        self.embed(texts)
    }
}

/// Embeds `texts` per `spec`.
pub fn embed(spec: &EmbedderSpec, texts: &[String]) -> Result<PromptSet> {
    Embedder::from_spec(spec)?.embed(texts)
}

/// Applies [`engineer_prompt`] to every label.
pub fn engineer_all(labels: &[String]) -> Result<Vec<String>> {
    labels.iter().map(|l| engineer_prompt(l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{cosine, norm};

    #[test]
    fn template() {
        assert_eq!(engineer_prompt("chair").unwrap(), "a chair in a scene");
        assert_eq!(engineer_prompt("other").unwrap(), "other");
        assert_eq!(
            engineer_prompt("yellow egg-shaped vase").unwrap(),
            "a yellow egg-shaped vase in a scene"
        );
        assert!(matches!(engineer_prompt(""), Err(Error::EmptyLabel)));
    }

    #[test]
    fn engineered_prompt_has_one_suffix() {
        let p = engineer_prompt("sofa").unwrap();
        assert_eq!(p.matches(PROMPT_TEMPLATE_SUFFIX).count(), 1);
    }

    #[test]
    fn toy_is_deterministic_and_distinct() {
        let a = toy_embedding("chair", 64, 0);
        assert_eq!(a, toy_embedding("chair", 64, 0));
        let b = toy_embedding("table", 64, 0);
        assert_ne!(a, b);
        assert!(cosine(&a, &b) < 1.0);
        assert_ne!(a, toy_embedding("chair", 64, 1));
        assert!((norm(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn toy_reference_bits() {
        // computed independently with hashlib; 10 dims spans two hash blocks
        let expected: [u32; 10] = [
            0x3dedf088, 0xbe6a5233, 0x3e689e44, 0xbed7356d, 0x3e39bfd0, 0xbe58958a, 0xbed87c9f,
            0x3f25a365, 0x3dae9f13, 0xbe1d0f94,
        ];
        let v = toy_embedding("chair", 10, 7);
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "toy:64:3".parse::<EmbedderSpec>().unwrap(),
            EmbedderSpec::Toy { dim: 64, seed: 3 }
        );
        assert_eq!(
            "table:/tmp/t.json".parse::<EmbedderSpec>().unwrap(),
            EmbedderSpec::Table("/tmp/t.json".into())
        );
        assert!("toy:4:0".parse::<EmbedderSpec>().is_err());
        assert!("clip".parse::<EmbedderSpec>().is_err());
        let s = EmbedderSpec::Toy { dim: 16, seed: 9 };
        assert_eq!(s.to_string().parse::<EmbedderSpec>().unwrap(), s);
    }

    #[test]
    fn table_lookup_and_misses() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("t.json");
        let set = Embedder::Toy { dim: 8, seed: 0 }
            .embed(&["chair".into(), "table".into()])
            .unwrap();
        EmbeddingTable::save(&set, &json).unwrap();
        let emb = Embedder::from_spec(&EmbedderSpec::Table(json)).unwrap();
        let got = emb.embed(&["table".into()]).unwrap();
        assert_eq!(got.embedding(0), set.embedding(1));
        match emb.embed(&["lamp".into(), "chair".into(), "sofa".into()]) {
            Err(Error::UnknownPrompt(m)) => assert_eq!(m, vec!["lamp", "sofa"]),
            other => panic!("expected UnknownPrompt, got {other:?}"),
        }
        assert!(matches!(
            emb.embed_for_dim(&["chair".into()], 16),
            Err(Error::DimMismatch { .. })
        ));
    }
}
