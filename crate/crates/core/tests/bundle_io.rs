mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use tokenpress::npy::Dtype;
use tokenpress::token_store::read_manifest;
use tokenpress::{load_bundle, save_bundle, Error, Grid, LayerWeights, Matrix, TokenBundle};

fn tiny() -> TokenBundle {
    let visual = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
    let text = Matrix::from_vec(2, 3, vec![0.5, -0.5, 1.5, 2.0, 0.0, -1.0]).unwrap();
    let w = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.0, -0.5, 0.0, 1.0]).unwrap();
    let layer = LayerWeights::new(w.clone(), w, 1, 3).unwrap();
    TokenBundle::new(visual, text, Grid::new(2, 2), vec![layer], None, BTreeMap::new()).unwrap()
}

#[test]
fn tiny_bundle_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let b = tiny();
    save_bundle(&b, dir.path()).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), b);
}

#[test]
fn two_layers_listed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let b = tiny();
    let l = b.layers()[0].clone();
    let b2 = TokenBundle::new(
        b.visual().clone(),
        b.text().clone(),
        b.grid(),
        vec![l.clone(), l],
        None,
        BTreeMap::new(),
    )
    .unwrap();
    save_bundle(&b2, dir.path()).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap().layers.len(), 2);
}

#[test]
fn saving_under_a_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"x").unwrap();
    let err = save_bundle(&tiny(), blocker.join("bundle")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn grid_mismatch_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&tiny(), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["grid_cols"] = 3.into();
    std::fs::write(&path, m.to_string()).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err:?}");
    assert!(err.to_string().contains("grid"));
}

#[test]
fn missing_array_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&tiny(), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("text_embeddings.npy")).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(
        matches!(err, Error::MissingFile { ref field, .. } if field == "text_embeddings"),
        "{err:?}"
    );
}

fn f32_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v.into_iter().map(f64::from).collect()).unwrap())
}

fn bundle_parts() -> impl Strategy<Value = TokenBundle> {
    (
        1usize..5,
        1usize..5,
        1usize..4,
        1usize..5,
        1usize..3,
        1usize..3,
        any::<bool>(),
    )
        .prop_flat_map(|(gr, gc, nt, d, h, dh, keys)| {
            (
                f32_matrix(gr * gc, d),
                f32_matrix(nt, d),
                f32_matrix(d, h * dh),
                f32_matrix(d, h * dh),
                f32_matrix(gr * gc, 2),
            )
                .prop_map(move |(v, t, wq, wk, k)| {
                    let layer = LayerWeights::new(wq, wk, h, dh).unwrap();
                    let mut meta = BTreeMap::new();
                    meta.insert("prompt".to_string(), "a photo".to_string());
                    TokenBundle::new(v, t, Grid::new(gr, gc), vec![layer], keys.then_some(k), meta).unwrap()
                })
        })
}

proptest! {
    #![proptest_config(pt_config(48))]

    #[test]
    fn float32_bundles_round_trip_bit_exactly(b in bundle_parts()) {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        prop_assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn float64_bundles_round_trip_bit_exactly(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = Shape::random(&mut r);
        let b = random_bundle(&mut r, shape).with_dtype(Dtype::Float64);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(back.dtype(), Dtype::Float64);
        prop_assert_eq!(back, b);
    }
}
