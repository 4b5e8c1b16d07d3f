//! Real-data matrix loaders: IDX (MNIST) and numeric CSV.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Preprocessing {
    pub scaled_by_256: bool,
    pub centered: bool,
}

#[derive(Clone, Debug)]
pub struct DatasetMatrix {
    pub x: Array2<f64>,
    pub path: PathBuf,
    pub format: SourceFormat,
    pub preprocessing: Preprocessing,
}

impl DatasetMatrix {
    /// Keeps the first `n` rows.
    pub fn truncate_rows(mut self, n: usize) -> Self {
        if n < self.x.nrows() {
            self.x = self.x.slice(ndarray::s![..n, ..]).to_owned();
        }
        self
    }

    pub fn centered(mut self) -> Self {
        self.x = crate::data_model::center(&self.x.view());
        self.preprocessing.centered = true;
        self
    }
}

/// Decodes an IDX byte buffer. Images (`0x803`) become one flattened row per
/// image; labels (`0x801`) a single column. Bytes are divided by 256.
pub fn decode_idx(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile { expected: 4, found: bytes.len() });
    }
    let magic = BigEndian::read_u32(&bytes[..4]);
    let rank = match magic {
        IDX_IMAGES => 3,
        IDX_LABELS => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::TruncatedFile { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = (0..rank).map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize).collect();
    let n = dims[0];
    let width: usize = dims[1..].iter().product::<usize>().max(1);
    let payload = &bytes[header..];
    let expected = n * width;
    if payload.len() < expected {
        return Err(Error::TruncatedFile { expected, found: payload.len() });
    }
    Ok(Array2::from_shape_fn((n, width), |(i, j)| payload[i * width + j] as f64 / 256.0))
}

/// Inverse of [`decode_idx`] for values produced by it.
pub fn encode_idx(x: &Array2<f64>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != x.ncols() {
        return Err(Error::ShapeMismatch(format!("{rows}x{cols} images do not flatten to {} columns", x.ncols())));
    }
    let mut out = Vec::with_capacity(16 + x.len());
    let mut word = [0u8; 4];
    for v in [IDX_IMAGES, x.nrows() as u32, rows as u32, cols as u32] {
        BigEndian::write_u32(&mut word, v);
        out.extend_from_slice(&word);
    }
    for &v in x.iter() {
        let b = (v * 256.0).round();
        if !(0.0..=255.0).contains(&b) {
            return Err(Error::InvalidParameter(format!("value {v} is not a scaled pixel byte")));
        }
        out.push(b as u8);
    }
    Ok(out)
}

pub fn load_idx(path: &Path) -> Result<DatasetMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(DatasetMatrix {
        x: decode_idx(&bytes)?,
        path: path.to_path_buf(),
        format: SourceFormat::Idx,
        preprocessing: Preprocessing { scaled_by_256: true, centered: false },
    })
}

/// Parses a rectangular numeric CSV, optionally skipping one header row.
pub fn parse_matrix_csv<R: Read>(reader: R, has_header: bool) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseFailure { row, msg: e.to_string() })?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::RaggedRows { row, expected: w, found: rec.len() });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::ParseFailure { row, msg: format!("`{field}` is not a number") })?;
            if !v.is_finite() {
                return Err(Error::ParseFailure { row, msg: format!("non-finite value `{field}`") });
            }
            data.push(v);
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    if rows == 0 || width == 0 {
        return Err(Error::ParseFailure { row: 0, msg: "no data rows".into() });
    }
    Ok(Array2::from_shape_vec((rows, width), data).expect("row-major buffer matches shape"))
}

pub fn load_matrix_csv(path: &Path, has_header: bool) -> Result<DatasetMatrix> {
    let file = fs::File::open(path)?;
    Ok(DatasetMatrix {
        x: parse_matrix_csv(file, has_header)?,
        path: path.to_path_buf(),
        format: SourceFormat::Csv,
        preprocessing: Preprocessing::default(),
    })
}
