use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RGF1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    ItemText,
    ItemVisual,
    UserText,
}

/// Dense row-major per-entity features, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    kind: EntityKind,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, kind: EntityKind) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            rows,
            cols,
            data,
            kind,
        })
    }

    pub fn from_array(a: &Array2<f64>, kind: EntityKind) -> Result<Self> {
        let (rows, cols) = a.dim();
        Self::new(rows, cols, a.iter().map(|&v| v as f32).collect(), kind)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| {
            self.data[i * self.cols + j] as f64
        })
    }

    /// Rows gathered by `index`; used to re-index features after filtering.
    pub fn select_rows(&self, index: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            if i >= self.rows {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} of a {}-row feature matrix",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(index.len(), self.cols, data, self.kind)
    }
}

/// The three modality inputs of the model.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub item_text: FeatureMatrix,
    pub item_visual: FeatureMatrix,
    pub user_text: FeatureMatrix,
}

impl FeatureSet {
    pub fn validate(&self, n_users: usize, n_items: usize) -> Result<()> {
        for (m, rows) in [
            (&self.item_text, n_items),
            (&self.item_visual, n_items),
            (&self.user_text, n_users),
        ] {
            if m.rows() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "{:?} features have {} rows, dataset has {rows} entities",
                    m.kind(),
                    m.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Encodes `RGF1 | rows u32 LE | cols u32 LE | rows*cols f32 LE`.
pub fn write_rgf(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), rows * cols);
    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_rgf(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::SizeMismatch {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows * cols * 4;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok((rows, cols, data))
}

pub fn load_feature_matrix(path: impl AsRef<Path>, kind: EntityKind) -> Result<FeatureMatrix> {
    let (rows, cols, data) = read_rgf(path)?;
    FeatureMatrix::new(rows, cols, data, kind)
}

pub fn save_feature_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_rgf(path, m.rows, m.cols, &m.data)
}
