//! Importance-agnostic baselines: uniform random and spatial-lattice
//! sampling of visual tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::TokenRng;
use crate::sequence::CompressedSequence;
use crate::token_store::{Grid, TokenBundle};

fn check_count(bundle: &TokenBundle, retain_count: usize) -> Result<()> {
    let n = bundle.n_visual();
    if retain_count == 0 || retain_count > n {
        return Err(Error::invalid(format!("retain_count {retain_count} outside 1..={n}")));
    }
    Ok(())
}

/// `retain_count` distinct tokens drawn uniformly; depends only on
/// `(N_v, retain_count, seed)`.
pub fn random_indices(n: usize, retain_count: usize, seed: u64) -> Vec<usize> {
    TokenRng::new(seed).sample_indices(n, retain_count)
}

pub fn random_sample(bundle: &TokenBundle, retain_count: usize, seed: u64) -> Result<CompressedSequence> {
    check_count(bundle, retain_count)?;
    let idx = random_indices(bundle.n_visual(), retain_count, seed);
    Ok(CompressedSequence::retained(bundle, &idx, Some(seed)))
}

/// Rows and columns of a centered uniform lattice on the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token indices in raster order.
    pub fn indices(&self, grid: Grid) -> Vec<usize> {
        self.rows
            .iter()
            .flat_map(|&r| self.cols.iter().map(move |&c| r * grid.cols + c))
            .collect()
    }
}

/// `n` positions spread over `0..extent`: `floor((i + 0.5) * extent / n)`.
fn centered_positions(extent: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| ((2 * i + 1) * extent) / (2 * n)).collect()
}

/// Chooses the lattice shape `(r, c)` for `retain_count`.
///
/// Starts from `r = round(sqrt(count·rows/cols))`, `c = round(count/r)`. If
/// that does not hit the count exactly (or does not fit the grid), every
/// shape that fits is scored by `|r·c − count|`, then by how far its aspect
/// ratio is from the grid's, then larger `r` wins.
pub fn lattice_shape(grid: Grid, retain_count: usize) -> (usize, usize) {
    let target = retain_count as f64;
    let r0 = ((target * grid.rows as f64 / grid.cols as f64).sqrt().round() as usize).clamp(1, grid.rows);
    let c0 = ((target / r0 as f64).round() as usize).clamp(1, grid.cols);
    if r0 * c0 == retain_count {
        return (r0, c0);
    }
    let grid_aspect = (grid.rows as f64 / grid.cols as f64).ln();
    let mut best: Option<(usize, f64, usize, usize)> = None;
    for r in 1..=grid.rows {
        for c in 1..=grid.cols {
            let miss = (r * c).abs_diff(retain_count);
            let skew = ((r as f64 / c as f64).ln() - grid_aspect).abs();
            let better = match best {
                None => true,
                Some((bm, bs, br, _)) => miss < bm || (miss == bm && (skew < bs || (skew == bs && r > br))),
            };
            if better {
                best = Some((miss, skew, r, c));
            }
        }
    }
    let (_, _, r, c) = best.expect("grid has at least one cell");
    (r, c)
}

pub fn spatial_lattice(grid: Grid, retain_count: usize) -> Lattice {
    let (r, c) = lattice_shape(grid, retain_count);
    Lattice {
        rows: centered_positions(grid.rows, r),
        cols: centered_positions(grid.cols, c),
    }
}

/// Uniform-stride lattice selection; the output count is `r·c`, which may
/// differ from `retain_count` when no lattice hits it exactly.
pub fn spatial_sample(bundle: &TokenBundle, retain_count: usize) -> Result<CompressedSequence> {
    check_count(bundle, retain_count)?;
    let lattice = spatial_lattice(bundle.grid(), retain_count);
    let idx = lattice.indices(bundle.grid());
    Ok(CompressedSequence::retained(bundle, &idx, None))
}
