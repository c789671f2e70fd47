//! Token clustering and the cluster-based retention strategies.
//!
//! All strategies start from a [`ClusterModel`] over the visual tokens:
//!
//! * [`variant1_static`] keeps the top `x%` of each cluster by saliency;
//! * [`variant2_dynamic`] keeps a fraction `min(1, λ·w_c)` of cluster `c`,
//!   with `w` the softmax over clusters of mean member saliency;
//! * [`variant3_coarse`] keeps the top `x%` per cluster and averages the
//!   rest of each cluster into one token;
//! * [`cluster_aggregate`] replaces every cluster with its mean embedding.
//!
//! Per-cluster counts use `max(1, round_half_up(·))`.

mod kmeans;

pub use kmeans::{kmeans_pp, l2_normalize_rows, wcss, Basis, ClusterModel, LloydParams, Metric};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::TokenRng;
use crate::saliency::{rank_by_score, softmax_in_place, SaliencyMap};
use crate::sequence::{CompressedSequence, OrderPolicy, TokenOrigin};
use crate::token_store::{Grid, TokenBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub basis: Basis,
    pub metric: Metric,
    pub lloyd: LloydParams,
}

impl ClusterConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            basis: Basis::Embeddings,
            metric: Metric::Euclidean,
            lloyd: LloydParams::default(),
        }
    }
}

/// Clusters the visual tokens of `bundle` on the configured basis.
pub fn cluster_tokens(bundle: &TokenBundle, cfg: &ClusterConfig) -> Result<ClusterModel> {
    let raw = match cfg.basis {
        Basis::Embeddings => bundle.visual(),
        Basis::Keys => bundle
            .visual_keys()
            .ok_or_else(|| Error::invalid("basis=keys but the bundle has no visual_keys"))?,
    };
    let normalized;
    let points = match cfg.metric {
        Metric::Euclidean => raw,
        Metric::Cosine => {
            normalized = l2_normalize_rows(raw);
            &normalized
        }
    };
    let mut model = kmeans_pp(points, cfg.k, cfg.seed, cfg.lloyd)?;
    model.basis = cfg.basis;
    model.metric = cfg.metric;
    Ok(model)
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn check_inputs(bundle: &TokenBundle, model: &ClusterModel, saliency: Option<&SaliencyMap>) -> Result<()> {
    let n = bundle.n_visual();
    if model.labels.len() != n {
        return Err(Error::shape("cluster labels", n, model.labels.len()));
    }
    if let Some(s) = saliency {
        if s.len() != n {
            return Err(Error::shape("saliency scores", n, s.len()));
        }
    }
    Ok(())
}

/// Splits every cluster into its `counts[c]` most salient members and the rest.
fn split_by_saliency(groups: &[Vec<usize>], scores: &[f64], counts: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut kept = Vec::new();
    let mut rest = Vec::with_capacity(groups.len());
    for (members, &count) in groups.iter().zip(counts) {
        let mut ranked = members.clone();
        rank_by_score(&mut ranked, scores);
        let take = count.min(ranked.len());
        kept.extend_from_slice(&ranked[..take]);
        let mut dropped = ranked[take..].to_vec();
        dropped.sort_unstable();
        rest.push(dropped);
    }
    kept.sort_unstable();
    (kept, rest)
}

fn static_counts(groups: &[Vec<usize>], x_percent: f64) -> Vec<usize> {
    groups
        .iter()
        .map(|g| round_half_up(x_percent * g.len() as f64 / 100.0).max(1))
        .collect()
}

fn check_percent(x_percent: f64, allow_full: bool) -> Result<()> {
    let ok = x_percent > 0.0 && (x_percent < 100.0 || (allow_full && x_percent == 100.0));
    if !ok {
        return Err(Error::invalid(format!("x_percent {x_percent} out of range")));
    }
    Ok(())
}

/// Keeps the top `x_percent` of each cluster by saliency.
pub fn variant1_static(
    bundle: &TokenBundle,
    model: &ClusterModel,
    saliency: &SaliencyMap,
    x_percent: f64,
) -> Result<CompressedSequence> {
    check_inputs(bundle, model, Some(saliency))?;
    check_percent(x_percent, true)?;
    let groups = model.members();
    let (kept, _) = split_by_saliency(&groups, &saliency.scores, &static_counts(&groups, x_percent));
    Ok(CompressedSequence::retained(bundle, &kept, Some(model.seed)))
}

/// [`variant1_static`] followed by trimming or padding the pooled selection
/// by global saliency rank until exactly `retain_count` tokens remain.
pub fn variant1_static_exact(
    bundle: &TokenBundle,
    model: &ClusterModel,
    saliency: &SaliencyMap,
    x_percent: f64,
    retain_count: usize,
) -> Result<CompressedSequence> {
    let n = bundle.n_visual();
    if retain_count == 0 || retain_count > n {
        return Err(Error::invalid(format!("retain_count {retain_count} outside 1..={n}")));
    }
    let base = variant1_static(bundle, model, saliency, x_percent)?;
    let mut kept = base.retained_indices();
    let scores = &saliency.scores;
    if kept.len() > retain_count {
        rank_by_score(&mut kept, scores);
        kept.truncate(retain_count);
    } else if kept.len() < retain_count {
        let mut selected = vec![false; n];
        kept.iter().for_each(|&i| selected[i] = true);
        let mut extra: Vec<usize> = (0..n).filter(|&i| !selected[i]).collect();
        rank_by_score(&mut extra, scores);
        kept.extend_from_slice(&extra[..retain_count - kept.len()]);
    }
    kept.sort_unstable();
    Ok(CompressedSequence::retained(bundle, &kept, Some(model.seed)))
}

/// Softmax weights over clusters of their mean member saliency.
pub fn cluster_weights(model: &ClusterModel, saliency: &SaliencyMap) -> Vec<f64> {
    let mut w: Vec<f64> = model
        .members()
        .iter()
        .map(|g| g.iter().map(|&i| saliency.scores[i]).sum::<f64>() / g.len() as f64)
        .collect();
    softmax_in_place(&mut w);
    w
}

/// Keeps fraction `min(1, λ·w_c)` of each cluster `c`.
pub fn variant2_dynamic(
    bundle: &TokenBundle,
    model: &ClusterModel,
    saliency: &SaliencyMap,
    lambda: f64,
) -> Result<CompressedSequence> {
    check_inputs(bundle, model, Some(saliency))?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda {lambda} must be positive")));
    }
    let groups = model.members();
    let counts: Vec<usize> = cluster_weights(model, saliency)
        .iter()
        .zip(&groups)
        .map(|(w, g)| round_half_up((lambda * w).min(1.0) * g.len() as f64).max(1))
        .collect();
    let (kept, _) = split_by_saliency(&groups, &saliency.scores, &counts);
    Ok(CompressedSequence::retained(bundle, &kept, Some(model.seed)))
}

fn mean_rows(m: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols()];
    for &i in members {
        for (a, v) in acc.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn mean_position(grid: Grid, members: &[usize]) -> [f64; 2] {
    let (mut r, mut c) = (0.0, 0.0);
    for &i in members {
        let (row, col) = grid.position(i);
        r += row as f64;
        c += col as f64;
    }
    let n = members.len() as f64;
    [r / n, c / n]
}

fn aggregate(bundle: &TokenBundle, members: &[usize]) -> (Vec<f64>, TokenOrigin) {
    (
        mean_rows(bundle.visual(), members),
        TokenOrigin::Aggregated {
            members: members.to_vec(),
            mean_position: mean_position(bundle.grid(), members),
        },
    )
}

/// Keeps the top `x_percent` of each cluster and averages the remaining
/// members of each cluster into one token.
///
/// Output: retained tokens in index order, then one aggregate per cluster in
/// cluster id order. A cluster with nothing left over contributes no
/// aggregate.
pub fn variant3_coarse(
    bundle: &TokenBundle,
    model: &ClusterModel,
    saliency: &SaliencyMap,
    x_percent: f64,
) -> Result<CompressedSequence> {
    check_inputs(bundle, model, Some(saliency))?;
    check_percent(x_percent, false)?;
    let groups = model.members();
    let (kept, rest) = split_by_saliency(&groups, &saliency.scores, &static_counts(&groups, x_percent));
    let mut seq = CompressedSequence::retained(bundle, &kept, Some(model.seed));
    let mut data = seq.embeddings.into_vec();
    for members in rest.iter().filter(|r| !r.is_empty()) {
        let (emb, origin) = aggregate(bundle, members);
        data.extend_from_slice(&emb);
        seq.provenance.push(origin);
    }
    seq.embeddings = Matrix::from_vec(seq.provenance.len(), bundle.dim(), data)?;
    Ok(seq)
}

/// Replaces each cluster with the mean of its members' embeddings.
///
/// `Random` orders the k aggregates by a permutation drawn from `seed`;
/// `MeanPosition` orders them by the raster position of their rounded mean
/// grid coordinate.
pub fn cluster_aggregate(
    bundle: &TokenBundle,
    model: &ClusterModel,
    seed: u64,
    order: OrderPolicy,
) -> Result<CompressedSequence> {
    check_inputs(bundle, model, None)?;
    let groups = model.members();
    let parts: Vec<(Vec<f64>, TokenOrigin)> = groups.iter().map(|g| aggregate(bundle, g)).collect();

    let ordering: Vec<usize> = match order {
        OrderPolicy::Random => TokenRng::new(seed).permutation(model.k),
        OrderPolicy::MeanPosition => {
            let mut ids: Vec<usize> = (0..model.k).collect();
            let key = |c: usize| match &parts[c].1 {
                TokenOrigin::Aggregated {
                    mean_position: [r, col],
                    ..
                } => (round_half_up(*r), round_half_up(*col), c),
                TokenOrigin::Retained { .. } => unreachable!(),
            };
            ids.sort_by_key(|&c| key(c));
            ids
        }
        OrderPolicy::Original => return Err(Error::invalid("cluster aggregation orders by random or mean_position")),
    };

    let mut data = Vec::with_capacity(model.k * bundle.dim());
    let mut provenance = Vec::with_capacity(model.k);
    for c in ordering {
        data.extend_from_slice(&parts[c].0);
        provenance.push(parts[c].1.clone());
    }
    Ok(CompressedSequence {
        embeddings: Matrix::from_vec(model.k, bundle.dim(), data)?,
        provenance,
        order_policy: order,
        seed: Some(seed),
        source_len: bundle.n_visual(),
    })
}

/// K-means++ on the embeddings followed by [`variant1_static`].
pub fn cluster_saliency(
    bundle: &TokenBundle,
    saliency: &SaliencyMap,
    k: usize,
    x_percent: f64,
    seed: u64,
) -> Result<CompressedSequence> {
    let model = cluster_tokens(bundle, &ClusterConfig::new(k, seed))?;
    variant1_static(bundle, &model, saliency, x_percent)
}
