mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use tokenpress::saliency::{
    basic_saliency_select, compute_saliency, compute_saliency_with, heatmap_csv, heatmap_pgm, rank_correlation,
    SaliencyConfig, SoftmaxDim,
};
use tokenpress::{Grid, LayerWeights, Matrix, TokenBundle};

fn with_visual(b: &TokenBundle, visual: Matrix) -> TokenBundle {
    TokenBundle::new(
        visual,
        b.text().clone(),
        b.grid(),
        b.layers().to_vec(),
        None,
        BTreeMap::new(),
    )
    .unwrap()
}

fn with_text(b: &TokenBundle, text: Matrix) -> TokenBundle {
    TokenBundle::new(
        b.visual().clone(),
        text,
        b.grid(),
        b.layers().to_vec(),
        None,
        BTreeMap::new(),
    )
    .unwrap()
}

#[test]
fn matches_triple_loop_oracle() {
    let mut r = rng(100);
    for _ in 0..30 {
        let shape = Shape::random(&mut r);
        let b = random_bundle(&mut r, shape);
        for scaled in [true, false] {
            let layer = shape.layers - 1;
            let got = compute_saliency(&b, layer, scaled).unwrap();
            let want = oracle_saliency(&b, layer, scaled);
            for (g, w) in got.scores.iter().zip(&want) {
                assert!(rel_err(*g, *w) <= 1e-9, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn single_head_is_constant() {
    let mut r = rng(1);
    let mut shape = Shape::random(&mut r);
    shape.heads = 1;
    let b = random_bundle(&mut r, shape);
    let s = compute_saliency(&b, 0, true).unwrap();
    let expect = 1.0 / shape.n_text as f64;
    assert!(s.scores.iter().all(|v| (v - expect).abs() <= 1e-12));
}

#[test]
fn identical_text_tokens_give_uniform_scores() {
    let mut r = rng(2);
    let shape = Shape {
        grid: Grid::new(4, 4),
        n_text: 6,
        dim: 8,
        heads: 4,
        d_head: 2,
        layers: 1,
    };
    let b = random_bundle(&mut r, shape);
    let row = b.text().row(0).to_vec();
    let b = with_text(&b, Matrix::from_rows(&vec![row; 6]).unwrap());
    let s = compute_saliency(&b, 0, true).unwrap();
    assert!(s.scores.iter().all(|v| (v - 1.0 / 6.0).abs() <= 1e-12));
}

#[test]
fn unscaled_logits_change_scores() {
    let mut r = rng(3);
    let shape = Shape {
        grid: Grid::new(3, 3),
        n_text: 4,
        dim: 6,
        heads: 3,
        d_head: 4,
        layers: 1,
    };
    let b = random_bundle(&mut r, shape);
    let a = compute_saliency(&b, 0, true).unwrap();
    let u = compute_saliency(&b, 0, false).unwrap();
    assert_ne!(a.scores, u.scores);
    assert!(a.softmax_scaled && !u.softmax_scaled);
}

#[test]
fn visual_axis_ablation_is_a_distribution_per_text_token() {
    let mut r = rng(4);
    let shape = Shape {
        grid: Grid::new(3, 4),
        n_text: 5,
        dim: 6,
        heads: 1,
        d_head: 6,
        layers: 1,
    };
    let b = random_bundle(&mut r, shape);
    let cfg = SaliencyConfig {
        softmax_dim: SoftmaxDim::Visual,
        ..Default::default()
    };
    // one head: each text token's softmax over visual tokens sums to one, so
    // the per-token means sum to one as well
    let s = compute_saliency_with(&b, &cfg).unwrap();
    assert!((s.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn heatmaps_have_grid_shape() {
    let b = random_bundle(
        &mut rng(5),
        Shape {
            grid: Grid::new(3, 5),
            n_text: 3,
            dim: 4,
            heads: 2,
            d_head: 2,
            layers: 1,
        },
    );
    let s = compute_saliency(&b, 0, true).unwrap();
    let pgm = heatmap_pgm(&s, b.grid()).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("5 3"));
    assert_eq!(lines.next(), Some("255"));
    let body: Vec<Vec<u32>> = lines
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(body.len(), 3);
    assert!(body.iter().all(|r| r.len() == 5));
    let flat: Vec<u32> = body.concat();
    assert!(flat.contains(&0) && flat.contains(&255));
    let csv = heatmap_csv(&s, b.grid()).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.concat(), s.scores);
}

#[test]
fn top_k_ties_prefer_lower_index() {
    let mut r = rng(6);
    let mut shape = Shape::random(&mut r);
    shape.heads = 1;
    shape.grid = Grid::new(4, 4);
    let b = random_bundle(&mut r, shape);
    let s = compute_saliency(&b, 0, true).unwrap();
    assert_eq!(basic_saliency_select(&s, 5).unwrap(), vec![0, 1, 2, 3, 4]);
}

#[test]
fn duplicated_layers_correlate_perfectly() {
    let b = duplicated_layer_bundle(9);
    let a = compute_saliency(&b, 0, true).unwrap();
    let c = compute_saliency(&b, 1, true).unwrap();
    assert_eq!(rank_correlation(&a, &c).unwrap(), 1.0);
}

#[test]
fn bad_layer_index_is_rejected() {
    let b = random_bundle(
        &mut rng(7),
        Shape {
            grid: Grid::new(2, 2),
            n_text: 2,
            dim: 3,
            heads: 2,
            d_head: 1,
            layers: 1,
        },
    );
    assert!(compute_saliency(&b, 1, true).is_err());
}

fn bundle_strategy() -> impl Strategy<Value = TokenBundle> {
    any::<u64>().prop_map(|seed| {
        let mut r = rng(seed);
        let shape = Shape::random(&mut r);
        random_bundle(&mut r, shape)
    })
}

proptest! {
    #![proptest_config(pt_config(96))]

    #[test]
    fn scores_lie_between_one_over_n_text_and_one(b in bundle_strategy(), scaled in any::<bool>()) {
        let s = compute_saliency(&b, 0, scaled).unwrap();
        let lo = 1.0 / b.n_text() as f64;
        for &v in &s.scores {
            prop_assert!(v >= lo * (1.0 - 1e-12) && v <= 1.0 + 1e-12, "{v} outside [{lo}, 1]");
        }
    }

    #[test]
    fn permuting_visual_tokens_permutes_scores(b in bundle_strategy(), seed in any::<u64>()) {
        let perm = tokenpress::rng::TokenRng::new(seed).permutation(b.n_visual());
        let shuffled = with_visual(&b, b.visual().select_rows(&perm));
        let base = compute_saliency(&b, 0, true).unwrap();
        let moved = compute_saliency(&shuffled, 0, true).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(moved.scores[i].to_bits(), base.scores[p].to_bits());
        }
    }

    #[test]
    fn text_order_does_not_matter(b in bundle_strategy(), seed in any::<u64>()) {
        let perm = tokenpress::rng::TokenRng::new(seed).permutation(b.n_text());
        let shuffled = with_text(&b, b.text().select_rows(&perm));
        let base = compute_saliency(&b, 0, true).unwrap();
        let moved = compute_saliency(&shuffled, 0, true).unwrap();
        for (x, y) in base.scores.iter().zip(&moved.scores) {
            prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn single_head_layers_are_flat(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut shape = Shape::random(&mut r);
        shape.heads = 1;
        let b = random_bundle(&mut r, shape);
        let s = compute_saliency(&b, 0, true).unwrap();
        let expect = 1.0 / b.n_text() as f64;
        prop_assert!(s.scores.iter().all(|v| (v - expect).abs() <= 1e-12));
    }
}

#[test]
fn layer_weights_reject_bad_width() {
    let w = Matrix::zeros(3, 4);
    assert!(LayerWeights::new(w.clone(), w, 3, 2).is_err());
}
