//! Shared fixtures and independent oracles for the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use tokenpress::cost_model::{FfnStyle, HardwareConfig, ModelConfig};
use tokenpress::{save_bundle, Grid, LayerWeights, Matrix, TokenBundle};

/// Proptest settings without on-disk regression files.
pub fn pt_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut StdRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub grid: Grid,
    pub n_text: usize,
    pub dim: usize,
    pub heads: usize,
    pub d_head: usize,
    pub layers: usize,
}

impl Shape {
    /// Small random shape: N_v <= 64, N_t <= 16, H <= 8.
    pub fn random(rng: &mut StdRng) -> Self {
        Self {
            grid: Grid::new(rng.random_range(1..=8), rng.random_range(1..=8)),
            n_text: rng.random_range(1..=16),
            dim: rng.random_range(1..=24),
            heads: rng.random_range(1..=8),
            d_head: rng.random_range(1..=6),
            layers: rng.random_range(1..=3),
        }
    }
}

/// Gaussian embeddings and weights; weights scaled so logits stay O(1).
pub fn random_bundle(rng: &mut StdRng, s: Shape) -> TokenBundle {
    let visual = gaussian(rng, s.grid.len(), s.dim, 1.0);
    let text = gaussian(rng, s.n_text, s.dim, 1.0);
    let w = 1.0 / (s.dim as f64).sqrt();
    let layers = (0..s.layers)
        .map(|_| {
            let wq = gaussian(rng, s.dim, s.heads * s.d_head, w);
            let wk = gaussian(rng, s.dim, s.heads * s.d_head, w);
            LayerWeights::new(wq, wk, s.heads, s.d_head).unwrap()
        })
        .collect();
    TokenBundle::new(visual, text, s.grid, layers, None, BTreeMap::new()).unwrap()
}

/// Saliency by direct triple loop over tokens, heads and head dimensions,
/// without any shared code from the library.
pub fn oracle_saliency(b: &TokenBundle, layer: usize, scaled: bool) -> Vec<f64> {
    let lw = &b.layers()[layer];
    let (h_n, dh) = (lw.n_heads(), lw.d_head());
    let d = b.dim();
    let n_t = b.n_text();
    let proj = |x: &[f64], w: &Matrix, col: usize| -> f64 { (0..d).map(|r| x[r] * w.get(r, col)).sum() };
    let mut out = Vec::with_capacity(b.n_visual());
    for v in 0..b.n_visual() {
        let xv = b.visual().row(v);
        let mut best = vec![0.0f64; n_t];
        for h in 0..h_n {
            let mut logits = vec![0.0f64; n_t];
            for (t, logit) in logits.iter_mut().enumerate() {
                let xt = b.text().row(t);
                let mut dot = 0.0;
                for j in 0..dh {
                    let col = h * dh + j;
                    dot += proj(xv, lw.w_k(), col) * proj(xt, lw.w_q(), col);
                }
                *logit = if scaled { dot / (dh as f64).sqrt() } else { dot };
            }
            let z: f64 = logits.iter().map(|a| a.exp()).sum();
            for t in 0..n_t {
                let p = logits[t].exp() / z;
                if p > best[t] {
                    best[t] = p;
                }
            }
        }
        out.push(best.iter().sum::<f64>() / n_t as f64);
    }
    out
}

/// Power-diagram partition of the grid into `regions` patches of uneven
/// size, mimicking an image with large background areas and small objects.
pub fn scene_regions(rng: &mut StdRng, grid: Grid, regions: usize) -> Vec<usize> {
    let sites: Vec<(f64, f64, f64)> = (0..regions)
        .map(|_| {
            (
                rng.random_range(0.0..grid.rows as f64),
                rng.random_range(0.0..grid.cols as f64),
                rng.random_range(0.0..60.0),
            )
        })
        .collect();
    (0..grid.len())
        .map(|i| {
            let (r, c) = grid.position(i);
            let (r, c) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (0, f64::INFINITY);
            for (s, &(sr, sc, w)) in sites.iter().enumerate() {
                let p = (r - sr).powi(2) + (c - sc).powi(2) - w;
                if p < best.1 {
                    best = (s, p);
                }
            }
            best.0
        })
        .collect()
}

pub const SCENE_DIM: usize = 32;
pub const SCENE_TEXT: usize = 8;

/// 24x24 grid (576 tokens) of region-structured embeddings with key
/// embeddings. `weight_scale` controls how peaked the saliency map is; small
/// values give near-uniform saliency.
pub fn scene_bundle(seed: u64, weight_scale: f64) -> TokenBundle {
    let mut rng = rng(seed);
    let grid = Grid::new(24, 24);
    let labels = scene_regions(&mut rng, grid, 20);
    let centers = gaussian(&mut rng, 20, SCENE_DIM, 4.0);
    let noise = gaussian(&mut rng, grid.len(), SCENE_DIM, 1.0);
    let mut visual = Matrix::zeros(grid.len(), SCENE_DIM);
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..SCENE_DIM {
            visual.row_mut(i)[j] = centers.get(l, j) + noise.get(i, j);
        }
    }
    let text = gaussian(&mut rng, SCENE_TEXT, SCENE_DIM, 1.0);
    let (heads, dh) = (4, 8);
    let w = weight_scale / (SCENE_DIM as f64).sqrt();
    let layers = (0..2)
        .map(|_| {
            let wq = gaussian(&mut rng, SCENE_DIM, heads * dh, w);
            let wk = gaussian(&mut rng, SCENE_DIM, heads * dh, w);
            LayerWeights::new(wq, wk, heads, dh).unwrap()
        })
        .collect();
    let key_proj = gaussian(&mut rng, SCENE_DIM, 16, 0.25);
    let keys = visual.matmul(&key_proj).unwrap();
    let mut meta = BTreeMap::new();
    meta.insert("image_id".to_string(), format!("scene-{seed}"));
    TokenBundle::new(visual, text, grid, layers, Some(keys), meta).unwrap()
}

/// Blobs of `per_blob` points with unit standard deviation whose centers are
/// pairwise `separation` apart (scaled simplex vertices). Returns the points
/// and the true blob of each point.
pub fn simplex_blobs(rng: &mut StdRng, k: usize, per_blob: usize, separation: f64) -> (Matrix, Vec<usize>) {
    let dim = k.max(2);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(k * per_blob * dim);
    let mut truth = Vec::with_capacity(k * per_blob);
    for c in 0..k {
        for _ in 0..per_blob {
            for j in 0..dim {
                let mu = if j == c { offset } else { 0.0 };
                data.push(mu + rng.sample::<f64, _>(StandardNormal));
            }
            truth.push(c);
        }
    }
    (Matrix::from_vec(k * per_blob, dim, data).unwrap(), truth)
}

/// True when both labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Minimum WCSS over every assignment of the rows to `k` labels.
pub fn brute_force_wcss(points: &Matrix, k: usize) -> f64 {
    let n = points.rows();
    let d = points.cols();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            for (s, &x) in sums[l].iter().zip(points.row(i)) {
                total += (x - s / counts[l] as f64).powi(2);
            }
        }
        best = best.min(total);
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

/// Cost figures tallied layer by layer, matrix by matrix, in f64.
#[derive(Debug, Clone, Copy)]
pub struct CostOracle {
    pub flops: f64,
    pub attention_flops: f64,
    pub weight_bytes: f64,
    pub kv_bytes: f64,
    pub act_bytes: f64,
    pub time_s: f64,
}

pub fn cost_oracle(m: &ModelConfig, hw: &HardwareConfig, tokens: u64) -> CostOracle {
    let t = tokens as f64;
    let d = m.hidden_dim as f64;
    let ff = m.ffn_dim as f64;
    let v = m.vocab_size as f64;
    let bpa = m.bytes_per_act as f64;
    let mut flops = 0.0;
    let mut attention = 0.0;
    let mut params = 0.0;
    for _layer in 0..m.n_layers {
        // q, k, v, o: each a T x d by d x d product, 2 FLOPs per MAC
        for _proj in 0..4 {
            flops += 2.0 * t * d * d;
            params += d * d;
        }
        for _head in 0..m.n_heads {
            let dh = m.head_dim as f64;
            let scores = 2.0 * t * t * dh;
            let mix = 2.0 * t * t * dh;
            flops += scores + mix;
            attention += scores + mix;
        }
        let mlp_mats = match m.ffn_style {
            FfnStyle::Gated => 3,
            FfnStyle::Plain => 2,
        };
        for _mat in 0..mlp_mats {
            flops += 2.0 * t * d * ff;
            params += d * ff;
        }
        params += 2.0 * d; // two norms
    }
    flops += 2.0 * t * d * v; // LM head
    params += 2.0 * v * d + d; // embeddings, LM head, final norm
    let weight_bytes = params * m.bytes_per_param as f64;
    let kv_bytes = m.n_layers as f64 * 2.0 * t * d * bpa;
    let act_bytes = m.activation_multiplier as f64 * t * d * bpa + m.n_heads as f64 * t * t * bpa;
    let time_s = (flops / hw.peak_flops).max((weight_bytes + kv_bytes + act_bytes) / hw.mem_bandwidth);
    CostOracle {
        flops,
        attention_flops: attention,
        weight_bytes,
        kv_bytes,
        act_bytes,
        time_s,
    }
}

pub fn h100() -> HardwareConfig {
    HardwareConfig {
        peak_flops: 989e12,
        mem_bandwidth: 3.35e12,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn identity(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.row_mut(i)[i] = 1.0;
    }
    m
}

/// One 2x2 image seen under two prompts. With identity projections and two
/// one-dimensional heads, prompt A makes token 0 the most salient and
/// prompt B token 3.
pub fn two_prompt_bundles(dir: &Path) -> (PathBuf, PathBuf) {
    let visual = Matrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 10.0]]).unwrap();
    let make = |text: Vec<Vec<f64>>, name: &str| {
        let layer = LayerWeights::new(identity(2), identity(2), 2, 1).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("prompt_id".to_string(), name.to_string());
        let b = TokenBundle::new(
            visual.clone(),
            Matrix::from_rows(&text).unwrap(),
            Grid::new(2, 2),
            vec![layer],
            None,
            meta,
        )
        .unwrap()
        .with_dtype(tokenpress::npy::Dtype::Float64);
        save_bundle(&b, dir.join(name)).unwrap()
    };
    (
        make(vec![vec![1.0, 0.0], vec![0.0, 0.0]], "prompt_a"),
        make(vec![vec![0.0, 1.0], vec![0.0, 0.0]], "prompt_b"),
    )
}

/// A bundle whose second layer repeats the first layer's weights.
pub fn duplicated_layer_bundle(seed: u64) -> TokenBundle {
    let mut r = rng(seed);
    let shape = Shape {
        grid: Grid::new(6, 6),
        n_text: 5,
        dim: 12,
        heads: 4,
        d_head: 3,
        layers: 1,
    };
    let b = random_bundle(&mut r, shape);
    let l0 = b.layers()[0].clone();
    TokenBundle::new(
        b.visual().clone(),
        b.text().clone(),
        b.grid(),
        vec![l0.clone(), l0],
        None,
        BTreeMap::new(),
    )
    .unwrap()
    .with_dtype(tokenpress::npy::Dtype::Float64)
}

pub fn llama_like() -> ModelConfig {
    ModelConfig {
        n_layers: 32,
        hidden_dim: 4096,
        n_heads: 32,
        head_dim: 128,
        ffn_dim: 11008,
        ffn_style: FfnStyle::Gated,
        vocab_size: 32000,
        bytes_per_param: 2,
        bytes_per_act: 2,
        activation_multiplier: 12,
    }
}
