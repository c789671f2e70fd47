//! K-means++ seeding followed by Lloyd iterations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng::TokenRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Post-projector visual embeddings.
    #[default]
    Embeddings,
    /// Vision-encoder keys stored in the bundle.
    Keys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Squared Euclidean distance on raw vectors.
    #[default]
    Euclidean,
    /// Squared Euclidean after L2-normalizing each row.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydParams {
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Candidates drawn per seeding step; the one that lowers the potential
    /// most is kept. `None` means `2 + floor(ln k)`, `Some(1)` is plain
    /// k-means++.
    #[serde(default)]
    pub seed_trials: Option<usize>,
}

impl Default for LloydParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            seed_trials: None,
        }
    }
}

impl LloydParams {
    pub fn trials(&self, k: usize) -> usize {
        self.seed_trials
            .unwrap_or_else(|| 2 + (k as f64).ln().floor() as usize)
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub centroids: Option<Matrix>,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub basis: Basis,
    pub metric: Metric,
    /// Within-cluster sum of squared distances of `labels` to `centroids`.
    pub objective: f64,
    pub iterations: usize,
    /// WCSS after the seeding assignment and after every Lloyd step.
    pub objective_history: Vec<f64>,
}

impl ClusterModel {
    pub fn centroids(&self) -> &Matrix {
        self.centroids.as_ref().expect("centroids present on a fitted model")
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}

/// Within-cluster sum of squared distances.
pub fn wcss(points: &Matrix, labels: &[usize], centroids: &Matrix) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_distance(points.row(i), centroids.row(c)))
        .sum()
}

/// Rows scaled to unit L2 norm; zero rows stay zero.
pub fn l2_normalize_rows(points: &Matrix) -> Matrix {
    let mut out = points.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Index drawn with probability proportional to `weights` (total > 0).
fn weighted_pick(weights: &[f64], total: f64, rng: &mut TokenRng) -> usize {
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        pick = Some(i);
        if acc > target {
            break;
        }
    }
    pick.expect("positive total implies a positive weight")
}

/// First center uniform, then each next center drawn proportionally to the
/// squared distance to the nearest chosen center. With `trials > 1` several
/// candidates are drawn and the one minimizing the resulting potential wins
/// (first drawn on ties).
fn seed_centers(points: &Matrix, k: usize, trials: usize, rng: &mut TokenRng) -> Vec<usize> {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut is_chosen = vec![false; n];
    let first = rng.below(n);
    chosen.push(first);
    is_chosen[first] = true;

    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        if total > 0.0 {
            let candidates: Vec<usize> = (0..trials).map(|_| weighted_pick(&nearest, total, rng)).collect();
            let updated: Vec<Vec<f64>> = candidates
                .par_iter()
                .map(|&c| {
                    let row = points.row(c);
                    nearest
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| d.min(squared_distance(points.row(i), row)))
                        .collect()
                })
                .collect();
            let mut best = 0;
            let mut best_potential = f64::INFINITY;
            for (j, u) in updated.iter().enumerate() {
                let potential: f64 = u.iter().sum();
                if potential < best_potential {
                    best = j;
                    best_potential = potential;
                }
            }
            let next = candidates[best];
            chosen.push(next);
            is_chosen[next] = true;
            nearest = updated.into_iter().nth(best).unwrap();
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|&i| !is_chosen[i]).collect();
            let next = free[rng.below(free.len())];
            chosen.push(next);
            is_chosen[next] = true;
        }
    }
    chosen
}

/// Nearest centroid per point (ties to the lower id) and its distance.
fn assign(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..centroids.rows() {
                let d = squared_distance(p, centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Moves the point farthest from its centroid into each empty cluster and
/// centers that cluster on it.
fn repair_empty(points: &Matrix, assigned: &mut [(usize, f64)], centroids: &mut Matrix, k: usize) {
    let mut sizes = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for (i, &(c, d)) in assigned.iter().enumerate() {
            if sizes[c] > 1 && far.is_none_or(|f| d > assigned[f].1) {
                far = Some(i);
            }
        }
        let i = far.expect("k <= n leaves a cluster with a spare point");
        sizes[assigned[i].0] -= 1;
        sizes[empty] = 1;
        assigned[i] = (empty, 0.0);
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

fn cluster_means(points: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let n = n as f64;
        sums.row_mut(c).iter_mut().for_each(|s| *s /= n);
    }
    sums
}

/// Clusters the rows of `points` into `k` groups.
///
/// Deterministic for a fixed `seed`. Every returned cluster is non-empty and
/// `centroids` are the exact member means of `labels`.
pub fn kmeans_pp(points: &Matrix, k: usize, seed: u64, params: LloydParams) -> Result<ClusterModel> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if let Some(i) = points.first_non_finite() {
        return Err(Error::NonFinite {
            field: "points".into(),
            index: i,
        });
    }

    let mut rng = TokenRng::new(seed);
    let seeds = seed_centers(points, k, params.trials(k), &mut rng);
    let mut centroids = points.select_rows(&seeds);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut assigned = assign(points, &centroids);
        repair_empty(points, &mut assigned, &mut centroids, k);
        let new_labels: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
        if history.is_empty() {
            history.push(wcss(points, &new_labels, &centroids));
        }
        let new_centroids = cluster_means(points, &new_labels, k);
        let objective = wcss(points, &new_labels, &new_centroids);
        debug_assert!(
            objective <= history.last().unwrap() * (1.0 + 1e-12) + 1e-300,
            "Lloyd objective increased"
        );
        history.push(objective);

        let shift = (0..k)
            .map(|c| squared_distance(centroids.row(c), new_centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        let changed = new_labels != labels;
        labels = new_labels;
        centroids = new_centroids;
        iterations += 1;
        if !changed || shift < params.tol || iterations >= params.max_iters {
            break;
        }
    }

    let mut sizes = vec![0usize; k];
    for &c in &labels {
        sizes[c] += 1;
    }
    Ok(ClusterModel {
        k,
        labels,
        objective: *history.last().unwrap(),
        centroids: Some(centroids),
        sizes,
        seed,
        basis: Basis::Embeddings,
        metric: Metric::Euclidean,
        iterations,
        objective_history: history,
    })
}
