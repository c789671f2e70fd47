//! Cross-modal saliency of visual tokens.
//!
//! For visual token `v` the score is computed from the first-layer (or any
//! chosen layer's) projections:
//!
//! 1. keys `k = v · W_k` and text queries `Q = T · W_q`, both split into heads;
//! 2. per head, logits `a[h][t] = <k_h, Q_h[t]>` (optionally scaled by
//!    `1/sqrt(d_head)`), softmax-normalized across the text tokens;
//! 3. per text token, the maximum over heads;
//! 4. the mean of those maxima over text tokens.
//!
//! Every score lies in `[1/N_t, 1]`. With a single head the score is exactly
//! `1/N_t` for every token, which makes `n_heads == 1` degenerate.

mod heatmap;

pub use heatmap::{export_heatmap, heatmap_csv, heatmap_pgm, HeatmapFormat};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;
use crate::token_store::TokenBundle;

/// Axis the attention logits are normalized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxDim {
    /// Across text tokens, per (visual token, head).
    #[default]
    Text,
    /// Across visual tokens, per (text token, head). Ablation only.
    Visual,
}

impl std::str::FromStr for SoftmaxDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(SoftmaxDim::Text),
            "visual" => Ok(SoftmaxDim::Visual),
            other => Err(Error::invalid(format!("unknown softmax dim '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub layer_index: usize,
    /// Apply `1/sqrt(d_head)` to the logits.
    pub scaled: bool,
    pub softmax_dim: SoftmaxDim,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            layer_index: 0,
            scaled: true,
            softmax_dim: SoftmaxDim::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub scores: Vec<f64>,
    pub layer_index: usize,
    pub softmax_scaled: bool,
    pub softmax_dim: SoftmaxDim,
    /// Prompt identifier copied from the bundle's `prompt_id` meta entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

impl SaliencyMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Scores every visual token of `bundle` using the weights of `layer_index`.
pub fn compute_saliency(bundle: &TokenBundle, layer_index: usize, scaled: bool) -> Result<SaliencyMap> {
    compute_saliency_with(
        bundle,
        &SaliencyConfig {
            layer_index,
            scaled,
            softmax_dim: SoftmaxDim::Text,
        },
    )
}

pub fn compute_saliency_with(bundle: &TokenBundle, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    let layer = bundle.layer(cfg.layer_index)?;
    let queries = bundle.text().matmul(layer.w_q())?;
    let keys = bundle.visual().matmul(layer.w_k())?;
    let n_heads = layer.n_heads();
    let d_head = layer.d_head();
    let scale = if cfg.scaled { 1.0 / (d_head as f64).sqrt() } else { 1.0 };

    let scores = match cfg.softmax_dim {
        SoftmaxDim::Text => (0..keys.rows())
            .into_par_iter()
            .map(|i| text_softmax_score(keys.row(i), &queries, n_heads, d_head, scale))
            .collect(),
        SoftmaxDim::Visual => visual_softmax_scores(&keys, &queries, n_heads, d_head, scale),
    };

    Ok(SaliencyMap {
        scores,
        layer_index: cfg.layer_index,
        softmax_scaled: cfg.scaled,
        softmax_dim: cfg.softmax_dim,
        prompt_id: bundle.meta().get("prompt_id").cloned(),
    })
}

#[inline]
fn head_logit(key: &[f64], query: &[f64], h: usize, d_head: usize, scale: f64) -> f64 {
    let span = h * d_head..(h + 1) * d_head;
    let dot: f64 = key[span.clone()].iter().zip(&query[span]).map(|(a, b)| a * b).sum();
    dot * scale
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn text_softmax_score(key: &[f64], queries: &Matrix, n_heads: usize, d_head: usize, scale: f64) -> f64 {
    let n_text = queries.rows();
    let mut head_max = vec![f64::NEG_INFINITY; n_text];
    let mut row = vec![0.0; n_text];
    for h in 0..n_heads {
        for (t, slot) in row.iter_mut().enumerate() {
            *slot = head_logit(key, queries.row(t), h, d_head, scale);
        }
        softmax_in_place(&mut row);
        for (m, p) in head_max.iter_mut().zip(&row) {
            *m = m.max(*p);
        }
    }
    head_max.iter().sum::<f64>() / n_text as f64
}

fn visual_softmax_scores(keys: &Matrix, queries: &Matrix, n_heads: usize, d_head: usize, scale: f64) -> Vec<f64> {
    let n_vis = keys.rows();
    let n_text = queries.rows();
    // probs[h][t][i]
    let probs: Vec<Vec<Vec<f64>>> = (0..n_heads)
        .map(|h| {
            (0..n_text)
                .map(|t| {
                    let mut col: Vec<f64> = (0..n_vis)
                        .map(|i| head_logit(keys.row(i), queries.row(t), h, d_head, scale))
                        .collect();
                    softmax_in_place(&mut col);
                    col
                })
                .collect()
        })
        .collect();
    (0..n_vis)
        .map(|i| {
            let total: f64 = (0..n_text)
                .map(|t| (0..n_heads).map(|h| probs[h][t][i]).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            total / n_text as f64
        })
        .collect()
}

/// Orders `candidates` by descending score, lower index first on ties.
pub(crate) fn rank_by_score(candidates: &mut [usize], scores: &[f64]) {
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
}

/// Indices of the `retain_count` highest-scoring tokens, in ascending index
/// order.
pub fn basic_saliency_select(map: &SaliencyMap, retain_count: usize) -> Result<Vec<usize>> {
    let n = map.len();
    if retain_count == 0 || retain_count > n {
        return Err(Error::invalid(format!("retain_count {retain_count} outside 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rank_by_score(&mut idx, &map.scores);
    idx.truncate(retain_count);
    idx.sort_unstable();
    Ok(idx)
}

/// Spearman rank correlation of two maps.
pub fn rank_correlation(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    metrics::spearman(&a.scores, &b.scores)
}
