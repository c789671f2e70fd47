mod common;

use proptest::prelude::*;

use common::*;
use tokenpress::sampling::{lattice_shape, random_indices, random_sample, spatial_lattice, spatial_sample};
use tokenpress::Grid;

#[test]
fn spatial_576_to_64_is_the_stride_three_lattice() {
    let b = scene_bundle(0, 1.0);
    let seq = spatial_sample(&b, 64).unwrap();
    let idx = seq.retained_indices();
    let want = [1, 4, 7, 10, 13, 16, 19, 22];
    let expected: Vec<usize> = want.iter().flat_map(|r| want.iter().map(move |c| r * 24 + c)).collect();
    assert_eq!(idx, expected);
    assert_eq!(seq, spatial_sample(&b, 64).unwrap());
}

#[test]
fn lattice_shapes_prefer_exact_counts() {
    let g = Grid::new(24, 24);
    assert_eq!(lattice_shape(g, 64), (8, 8));
    assert_eq!(lattice_shape(g, 576), (24, 24));
    assert_eq!(lattice_shape(g, 1), (1, 1));
    let (r, c) = lattice_shape(Grid::new(12, 48), 64);
    assert_eq!(r * c, 64);
    assert!(r <= 12 && c <= 48);
}

#[test]
fn random_inclusion_frequency_is_uniform() {
    let n = 10;
    let mut hits = vec![0usize; n];
    let trials = 10_000u64;
    for seed in 0..trials {
        for i in random_indices(n, 3, seed) {
            hits[i] += 1;
        }
    }
    for h in hits {
        let f = h as f64 / trials as f64;
        assert!((f - 0.3).abs() <= 0.02, "{f}");
    }
}

#[test]
fn random_sample_is_seeded() {
    let b = scene_bundle(1, 1.0);
    let a = random_sample(&b, 64, 5).unwrap();
    assert_eq!(a, random_sample(&b, 64, 5).unwrap());
    assert_ne!(
        a.retained_indices(),
        random_sample(&b, 64, 6).unwrap().retained_indices()
    );
    assert_eq!(a.seed, Some(5));
}

#[test]
fn bad_counts_are_rejected() {
    let b = scene_bundle(1, 1.0);
    assert!(random_sample(&b, 0, 1).is_err());
    assert!(random_sample(&b, 577, 1).is_err());
    assert!(spatial_sample(&b, 0).is_err());
}

proptest! {
    #![proptest_config(pt_config(128))]

    #[test]
    fn random_indices_are_sorted_distinct(n in 1usize..200, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let count = ((n as f64 * frac) as usize).max(1);
        let idx = random_indices(n, count, seed);
        prop_assert_eq!(idx.len(), count);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn lattice_fits_the_grid(rows in 1usize..40, cols in 1usize..40, frac in 0.0f64..1.0) {
        let g = Grid::new(rows, cols);
        let count = ((g.len() as f64 * frac) as usize).max(1);
        let lat = spatial_lattice(g, count);
        prop_assert!(!lat.is_empty());
        prop_assert!(lat.rows.windows(2).all(|w| w[0] < w[1]) && lat.rows.iter().all(|&r| r < rows));
        prop_assert!(lat.cols.windows(2).all(|w| w[0] < w[1]) && lat.cols.iter().all(|&c| c < cols));
        prop_assert_eq!(lattice_shape(g, count), (lat.rows.len(), lat.cols.len()));
        let idx = lat.indices(g);
        prop_assert_eq!(idx.len(), lat.len());
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
