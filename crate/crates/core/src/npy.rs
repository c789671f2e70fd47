//! Reading and writing the NumPy `.npy` format.
//!
//! Only little-endian `float32`/`float64` arrays in C order are supported.
//! Files are written as version 1.0 with the header padded so the data
//! starts on a 64-byte boundary.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::Float32 => "<f4",
            Dtype::Float64 => "<f8",
        }
    }

    fn from_descr(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(Dtype::Float32),
            "<f8" => Some(Dtype::Float64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::Float32 => "float32",
            Dtype::Float64 => "float64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn npy_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Npy {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Reads one array. `field` is only used to label errors.
pub fn read<R: Read>(reader: &mut R, field: &str) -> Result<NpyArray> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| npy_err(field, e.to_string()))?;
    parse(&bytes, field)
}

pub fn parse(bytes: &[u8], field: &str) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(npy_err(field, "missing NUMPY magic"));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(npy_err(field, "truncated header"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(npy_err(field, format!("unsupported format version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(npy_err(field, "truncated header"));
    }
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| npy_err(field, "header is not valid text"))?;
    let (descr, fortran, shape) = parse_header(header).map_err(|r| npy_err(field, r))?;
    if fortran {
        return Err(npy_err(field, "Fortran order not supported"));
    }
    let dtype =
        Dtype::from_descr(&descr).ok_or_else(|| npy_err(field, format!("unsupported dtype descriptor '{descr}'")))?;

    let count: usize = shape.iter().product();
    let body = &bytes[data_start..];
    if body.len() != count * dtype.width() {
        return Err(npy_err(
            field,
            format!(
                "shape {:?} needs {} bytes of data, found {}",
                shape,
                count * dtype.width(),
                body.len()
            ),
        ));
    }
    let data = match dtype {
        Dtype::Float32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::Float64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(NpyArray { dtype, shape, data })
}

/// Parses the Python dict literal in the header.
fn parse_header(header: &str) -> std::result::Result<(String, bool, Vec<usize>), String> {
    let h = header.trim();
    let h = h
        .strip_prefix('{')
        .and_then(|s| s.trim_end().strip_suffix('}'))
        .ok_or("header is not a dict literal")?;

    let descr = dict_value(h, "descr").ok_or("missing 'descr'")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"').to_string();

    let fortran = match dict_value(h, "fortran_order").map(str::trim) {
        Some("False") => false,
        Some("True") => true,
        _ => return Err("missing or malformed 'fortran_order'".into()),
    };

    let shape_src = dict_value(h, "shape").ok_or("missing 'shape'")?;
    let inner = shape_src
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or("malformed 'shape'")?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad shape entry '{s}'")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((descr, fortran, shape))
}

/// Returns the raw text of the value for `key`, up to the next top-level comma.
fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let pos = dict
        .find(&format!("'{key}'"))
        .or_else(|| dict.find(&format!("\"{key}\"")))?;
    let rest = &dict[pos + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':')?;
    let mut depth = 0usize;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => return Some(&rest[..i]),
            _ => {}
        }
    }
    Some(rest)
}

pub fn encode(shape: &[usize], data: &[f64], dtype: Dtype) -> Vec<u8> {
    let shape_str = match shape {
        [n] => format!("({n},)"),
        dims => format!("({})", dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + data.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match dtype {
        Dtype::Float32 => {
            for v in data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Dtype::Float64 => {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn write<W: Write>(writer: &mut W, shape: &[usize], data: &[f64], dtype: Dtype) -> std::io::Result<()> {
    writer.write_all(&encode(shape, data, dtype))
}
