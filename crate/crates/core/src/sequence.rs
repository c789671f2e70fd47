//! Compressed visual token sequences and their on-disk form.
//!
//! A sequence directory mirrors the bundle layout: `manifest.json`,
//! `embeddings.npy` (the M output tokens), a copy of the prompt's
//! `text_embeddings.npy`, and `provenance.json` describing where each output
//! token came from.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::npy::{self, Dtype};
use crate::token_store::{create_dir, write_json, write_matrix, TokenBundle, FORMAT_VERSION, MANIFEST_FILE};

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenOrigin {
    Retained {
        source_index: usize,
    },
    Aggregated {
        members: Vec<usize>,
        /// Mean (row, col) of the members on the patch grid.
        mean_position: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Ascending source index (retained tokens), aggregates by cluster id.
    Original,
    /// Seeded random permutation.
    Random,
    /// Raster order of rounded mean positions, ties by cluster id.
    MeanPosition,
}

impl std::str::FromStr for OrderPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(OrderPolicy::Original),
            "random" => Ok(OrderPolicy::Random),
            "mean_position" | "mean-position" => Ok(OrderPolicy::MeanPosition),
            other => Err(Error::invalid(format!("unknown order policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSequence {
    pub embeddings: Matrix,
    pub provenance: Vec<TokenOrigin>,
    pub order_policy: OrderPolicy,
    pub seed: Option<u64>,
    /// Visual token count of the source bundle.
    pub source_len: usize,
}

impl CompressedSequence {
    /// Builds a sequence of retained tokens, copying their rows verbatim.
    pub fn retained(bundle: &TokenBundle, indices: &[usize], seed: Option<u64>) -> Self {
        Self {
            embeddings: bundle.visual().select_rows(indices),
            provenance: indices
                .iter()
                .map(|&source_index| TokenOrigin::Retained { source_index })
                .collect(),
            order_policy: OrderPolicy::Original,
            seed,
            source_len: bundle.n_visual(),
        }
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    /// Output tokens as a percentage of the source visual tokens.
    pub fn retained_percent(&self) -> f64 {
        100.0 * self.len() as f64 / self.source_len as f64
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        self.provenance
            .iter()
            .filter_map(|o| match o {
                TokenOrigin::Retained { source_index } => Some(*source_index),
                TokenOrigin::Aggregated { .. } => None,
            })
            .collect()
    }

    pub fn aggregated_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|o| matches!(o, TokenOrigin::Aggregated { .. }))
            .count()
    }

    /// Every source index referenced by some output token, in output order.
    pub fn covered_indices(&self) -> Vec<usize> {
        self.provenance
            .iter()
            .flat_map(|o| match o {
                TokenOrigin::Retained { source_index } => vec![*source_index],
                TokenOrigin::Aggregated { members, .. } => members.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub kind: String,
    pub dtype: Dtype,
    pub n_tokens: usize,
    pub n_text: usize,
    pub dim: usize,
    pub source_n_visual: usize,
    pub source_grid_rows: usize,
    pub source_grid_cols: usize,
    pub embeddings: String,
    pub text_embeddings: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub order_policy: OrderPolicy,
    pub seed: Option<u64>,
    pub prng: Option<String>,
    pub tokens: Vec<TokenOrigin>,
}

/// Writes `seq` (and the prompt tokens of `bundle`) to `dir`.
pub fn save_sequence(seq: &CompressedSequence, bundle: &TokenBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let dtype = bundle.dtype();
    let manifest = SequenceManifest {
        version: FORMAT_VERSION,
        kind: "compressed_sequence".into(),
        dtype,
        n_tokens: seq.len(),
        n_text: bundle.n_text(),
        dim: seq.embeddings.cols(),
        source_n_visual: seq.source_len,
        source_grid_rows: bundle.grid().rows,
        source_grid_cols: bundle.grid().cols,
        embeddings: "embeddings.npy".into(),
        text_embeddings: "text_embeddings.npy".into(),
    };
    write_matrix(dir, &manifest.embeddings, &seq.embeddings, dtype)?;
    write_matrix(dir, &manifest.text_embeddings, bundle.text(), dtype)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let provenance = Provenance {
        order_policy: seq.order_policy,
        seed: seq.seed,
        prng: seq.seed.map(|_| crate::rng::ALGORITHM_ID.to_string()),
        tokens: seq.provenance.clone(),
    };
    write_json(&dir.join(PROVENANCE_FILE), &provenance)
}

/// Reads back a directory written by [`save_sequence`].
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<CompressedSequence> {
    let dir = dir.as_ref();
    let read = |file: &str| -> Result<Vec<u8>> {
        let p = dir.join(file);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    };
    let manifest: SequenceManifest =
        serde_json::from_slice(&read(MANIFEST_FILE)?).map_err(|e| Error::Manifest(e.to_string()))?;
    let provenance: Provenance =
        serde_json::from_slice(&read(PROVENANCE_FILE)?).map_err(|e| Error::Manifest(e.to_string()))?;
    let arr = npy::parse(&read(&manifest.embeddings)?, "embeddings")?;
    let embeddings = Matrix::from_vec(manifest.n_tokens, manifest.dim, arr.data)?;
    if provenance.tokens.len() != manifest.n_tokens {
        return Err(Error::shape(
            "provenance.tokens",
            manifest.n_tokens,
            provenance.tokens.len(),
        ));
    }
    Ok(CompressedSequence {
        embeddings,
        provenance: provenance.tokens,
        order_policy: provenance.order_policy,
        seed: provenance.seed,
        source_len: manifest.source_n_visual,
    })
}
