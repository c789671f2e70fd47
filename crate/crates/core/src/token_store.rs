//! On-disk token bundles and their in-memory form.
//!
//! A bundle is a directory holding `manifest.json` plus one `.npy` file per
//! array. Values are widened to `f64` on load; the stored dtype is kept so a
//! save writes the same representation back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::npy::{self, Dtype};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// Patch grid of the visual tokens. Token `i` sits at
/// `(i / cols, i % cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

/// Query/key projections of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    w_q: Matrix,
    w_k: Matrix,
    n_heads: usize,
    d_head: usize,
}

impl LayerWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, n_heads: usize, d_head: usize) -> Result<Self> {
        let lw = Self {
            w_q,
            w_k,
            n_heads,
            d_head,
        };
        lw.check(None, "layer")?;
        Ok(lw)
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn width(&self) -> usize {
        self.n_heads * self.d_head
    }

    fn check(&self, dim: Option<usize>, field: &str) -> Result<()> {
        if self.n_heads == 0 {
            return Err(Error::shape(format!("{field}.n_heads"), ">= 1", 0));
        }
        if self.d_head == 0 {
            return Err(Error::shape(format!("{field}.d_head"), ">= 1", 0));
        }
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k)] {
            if m.cols() != self.width() {
                return Err(Error::shape(
                    format!("{field}.{name}"),
                    format!("{} columns (n_heads*d_head)", self.width()),
                    format!("{} columns", m.cols()),
                ));
            }
            if let Some(d) = dim {
                if m.rows() != d {
                    return Err(Error::shape(
                        format!("{field}.{name}"),
                        format!("{d} rows (dim)"),
                        format!("{} rows", m.rows()),
                    ));
                }
            }
            if let Some(i) = m.first_non_finite() {
                return Err(Error::NonFinite {
                    field: format!("{field}.{name}"),
                    index: i,
                });
            }
        }
        Ok(())
    }
}

/// Visual and text token embeddings for one (image, prompt) pair, with the
/// attention projections needed to score them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBundle {
    visual: Matrix,
    text: Matrix,
    grid: Grid,
    layers: Vec<LayerWeights>,
    visual_keys: Option<Matrix>,
    meta: BTreeMap<String, String>,
    dtype: Dtype,
}

impl TokenBundle {
    pub fn new(
        visual: Matrix,
        text: Matrix,
        grid: Grid,
        layers: Vec<LayerWeights>,
        visual_keys: Option<Matrix>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let b = Self {
            visual,
            text,
            grid,
            layers,
            visual_keys,
            meta,
            dtype: Dtype::Float32,
        };
        b.validate()?;
        Ok(b)
    }

    /// Storage dtype used by [`save_bundle`].
    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&LayerWeights> {
        self.layers.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "layer index {index} out of range (bundle has {} layers)",
                self.layers.len()
            ))
        })
    }

    pub fn visual_keys(&self) -> Option<&Matrix> {
        self.visual_keys.as_ref()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn n_visual(&self) -> usize {
        self.visual.rows()
    }

    pub fn n_text(&self) -> usize {
        self.text.rows()
    }

    pub fn dim(&self) -> usize {
        self.visual.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_v, d) = self.visual.shape();
        if n_v == 0 {
            return Err(Error::shape("visual_embeddings", ">= 1 rows", 0));
        }
        if d == 0 {
            return Err(Error::shape("dim", ">= 1", 0));
        }
        if self.text.rows() == 0 {
            return Err(Error::shape("text_embeddings", ">= 1 rows", 0));
        }
        if self.text.cols() != d {
            return Err(Error::shape(
                "text_embeddings",
                format!("{d} columns"),
                format!("{} columns", self.text.cols()),
            ));
        }
        if self.grid.len() != n_v {
            return Err(Error::shape(
                "grid_rows*grid_cols",
                n_v,
                format!("{}x{} = {}", self.grid.rows, self.grid.cols, self.grid.len()),
            ));
        }
        if self.layers.is_empty() {
            return Err(Error::shape("layers", ">= 1 entries", 0));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check(Some(d), &format!("layers[{i}]"))?;
        }
        if let Some(keys) = &self.visual_keys {
            if keys.rows() != n_v || keys.cols() == 0 {
                return Err(Error::shape(
                    "visual_keys",
                    format!("{n_v} rows, >= 1 columns"),
                    format!("{}x{}", keys.rows(), keys.cols()),
                ));
            }
        }
        for (field, m) in [("visual_embeddings", &self.visual), ("text_embeddings", &self.text)]
            .into_iter()
            .chain(self.visual_keys.as_ref().map(|k| ("visual_keys", k)))
        {
            if let Some(i) = m.first_non_finite() {
                return Err(Error::NonFinite {
                    field: field.into(),
                    index: i,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEntry {
    pub w_q: String,
    pub w_k: String,
    pub n_heads: usize,
    pub d_head: usize,
}

/// `manifest.json` contents. Array file names are relative to the bundle
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
    pub n_visual: usize,
    pub n_text: usize,
    pub dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    #[serde(default = "default_visual_file")]
    pub visual_embeddings: String,
    #[serde(default = "default_text_file")]
    pub text_embeddings: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_keys: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn default_dtype() -> Dtype {
    Dtype::Float32
}

fn default_visual_file() -> String {
    "visual_embeddings.npy".into()
}

fn default_text_file() -> String {
    "text_embeddings.npy".into()
}

fn read_matrix(dir: &Path, file: &str, field: &str, dtype: Dtype) -> Result<Matrix> {
    let path = dir.join(file);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            field: field.into(),
            path: path.clone(),
        },
        _ => Error::io(&path, e),
    })?;
    let arr = npy::parse(&bytes, field)?;
    if arr.dtype != dtype {
        return Err(Error::DtypeMismatch {
            field: field.into(),
            manifest: dtype.to_string(),
            array: arr.dtype.to_string(),
        });
    }
    let (rows, cols) = match arr.shape[..] {
        [r, c] => (r, c),
        _ => {
            return Err(Error::shape(field, "2-D array", format!("shape {:?}", arr.shape)));
        }
    };
    let m = Matrix::from_vec(rows, cols, arr.data)?;
    if let Some(i) = m.first_non_finite() {
        return Err(Error::NonFinite {
            field: field.into(),
            index: i,
        });
    }
    Ok(m)
}

fn expect_shape(field: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::shape(
            field,
            format!("{rows}x{cols} (manifest)"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            field: "manifest".into(),
            path: path.clone(),
        },
        _ => Error::io(&path, e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads and fully validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TokenBundle> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    if m.grid_rows * m.grid_cols != m.n_visual {
        return Err(Error::shape(
            "grid_rows*grid_cols",
            m.n_visual,
            format!("{}x{} = {}", m.grid_rows, m.grid_cols, m.grid_rows * m.grid_cols),
        ));
    }

    let visual = read_matrix(dir, &m.visual_embeddings, "visual_embeddings", m.dtype)?;
    expect_shape("visual_embeddings", &visual, m.n_visual, m.dim)?;
    let text = read_matrix(dir, &m.text_embeddings, "text_embeddings", m.dtype)?;
    expect_shape("text_embeddings", &text, m.n_text, m.dim)?;

    let mut layers = Vec::with_capacity(m.layers.len());
    for (i, entry) in m.layers.iter().enumerate() {
        let width = entry.n_heads * entry.d_head;
        let wq_field = format!("layers[{i}].w_q");
        let wk_field = format!("layers[{i}].w_k");
        let w_q = read_matrix(dir, &entry.w_q, &wq_field, m.dtype)?;
        expect_shape(&wq_field, &w_q, m.dim, width)?;
        let w_k = read_matrix(dir, &entry.w_k, &wk_field, m.dtype)?;
        expect_shape(&wk_field, &w_k, m.dim, width)?;
        layers.push(LayerWeights {
            w_q,
            w_k,
            n_heads: entry.n_heads,
            d_head: entry.d_head,
        });
    }

    let visual_keys = match &m.visual_keys {
        Some(file) => Some(read_matrix(dir, file, "visual_keys", m.dtype)?),
        None => None,
    };

    let bundle = TokenBundle {
        visual,
        text,
        grid: Grid::new(m.grid_rows, m.grid_cols),
        layers,
        visual_keys,
        meta: m.meta,
        dtype: m.dtype,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_matrix(dir: &Path, file: &str, m: &Matrix, dtype: Dtype) -> Result<()> {
    write_file(
        &dir.join(file),
        &npy::encode(&[m.rows(), m.cols()], m.as_slice(), dtype),
    )
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Writes `bundle` into directory `dir`, creating it if needed.
pub fn save_bundle(bundle: &TokenBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    bundle.validate()?;
    create_dir(dir)?;
    let dtype = bundle.dtype;

    write_matrix(dir, &default_visual_file(), &bundle.visual, dtype)?;
    write_matrix(dir, &default_text_file(), &bundle.text, dtype)?;
    let mut layers = Vec::with_capacity(bundle.layers.len());
    for (i, layer) in bundle.layers.iter().enumerate() {
        let entry = LayerEntry {
            w_q: format!("layer{i}_w_q.npy"),
            w_k: format!("layer{i}_w_k.npy"),
            n_heads: layer.n_heads,
            d_head: layer.d_head,
        };
        write_matrix(dir, &entry.w_q, &layer.w_q, dtype)?;
        write_matrix(dir, &entry.w_k, &layer.w_k, dtype)?;
        layers.push(entry);
    }
    let visual_keys = match &bundle.visual_keys {
        Some(k) => {
            let file = "visual_keys.npy".to_string();
            write_matrix(dir, &file, k, dtype)?;
            Some(file)
        }
        None => None,
    };

    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype,
        n_visual: bundle.n_visual(),
        n_text: bundle.n_text(),
        dim: bundle.dim(),
        grid_rows: bundle.grid.rows,
        grid_cols: bundle.grid.cols,
        visual_embeddings: default_visual_file(),
        text_embeddings: default_text_file(),
        layers,
        visual_keys,
        meta: bundle.meta.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(dir.to_path_buf())
}
