use std::path::Path;

use crate::error::{Error, Result};
use crate::token_store::{write_file, Grid};

use super::SaliencyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    /// ASCII PGM (P2), min-max scaled to 0..=255.
    Pgm,
    /// Raw scores, one grid row per line.
    Csv,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(HeatmapFormat::Pgm),
            "csv" => Ok(HeatmapFormat::Csv),
            other => Err(Error::invalid(format!("unknown heatmap format '{other}'"))),
        }
    }
}

fn check_grid(map: &SaliencyMap, grid: Grid) -> Result<()> {
    if map.len() != grid.len() {
        return Err(Error::shape(
            "heatmap grid",
            format!("{} scores", grid.len()),
            format!("{} scores", map.len()),
        ));
    }
    Ok(())
}

/// Pixel values after min-max scaling; all-equal input maps to 128.
pub(crate) fn gray_levels(scores: &[f64]) -> Vec<u8> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![128; scores.len()];
    }
    scores
        .iter()
        .map(|s| {
            let v = (s - lo) / (hi - lo) * 255.0;
            // round half up
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect()
}

pub fn heatmap_pgm(map: &SaliencyMap, grid: Grid) -> Result<String> {
    check_grid(map, grid)?;
    let px = gray_levels(&map.scores);
    let mut out = format!("P2\n{} {}\n255\n", grid.cols, grid.rows);
    for row in px.chunks(grid.cols) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn heatmap_csv(map: &SaliencyMap, grid: Grid) -> Result<String> {
    check_grid(map, grid)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in map.scores.chunks(grid.cols) {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_heatmap(map: &SaliencyMap, grid: Grid, path: impl AsRef<Path>, format: HeatmapFormat) -> Result<()> {
    let text = match format {
        HeatmapFormat::Pgm => heatmap_pgm(map, grid)?,
        HeatmapFormat::Csv => heatmap_csv(map, grid)?,
    };
    write_file(path.as_ref(), text.as_bytes())
}
