//! Spatial feature grids and their binary file format.
//!
//! A feature file is a sequence of records, each:
//!
//! ```text
//! u32 LE   byte length n of the image id
//! n bytes  image id, UTF-8
//! u32 LE   grid side L
//! u32 LE   feature dim D
//! L*L*D    f32 LE, row-major: i outer, j inner, feature innermost
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    side: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(side: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if side == 0 || dim == 0 {
            return Err(Error::contract("feature grid needs L >= 1 and D >= 1"));
        }
        if values.len() != side * side * dim {
            return Err(Error::contract(format!(
                "feature grid {side}x{side}x{dim} needs {} values, got {}",
                side * side * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature grid".into()));
        }
        Ok(FeatureGrid { side, dim, values })
    }

    pub fn zeros(side: usize, dim: usize) -> Self {
        FeatureGrid {
            side,
            dim,
            values: vec![0.0; side * side * dim],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of locations, L².
    pub fn locations(&self) -> usize {
        self.side * self.side
    }

    /// Flat `[L², D]` row-major view.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        self.location(i * self.side + j)
    }

    pub fn location(&self, k: usize) -> &[f32] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let k = i * self.side + j;
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        for k in 0..self.locations() {
            for (a, v) in acc.iter_mut().zip(self.location(k)) {
                *a += *v as f64;
            }
        }
        let n = self.locations() as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

pub fn write_feature_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = (&'a str, &'a FeatureGrid)>,
) -> std::io::Result<()> {
    for (id, grid) in records {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(grid.side as u32).to_le_bytes())?;
        w.write_all(&(grid.dim as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(grid.values.len() * 4);
        for v in &grid.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn read_feature_records<R: Read>(mut r: R) -> Result<Vec<(String, FeatureGrid)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::data(format!("reading feature records: {e}")))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::data(format!("truncated feature record at byte {pos}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = Vec::new();
    loop {
        let header = match take(4) {
            Ok(h) => u32::from_le_bytes(h.try_into().unwrap()) as usize,
            Err(_) => break,
        };
        let id = std::str::from_utf8(take(header)?)
            .map_err(|_| Error::data("image id is not UTF-8"))?
            .to_owned();
        let side = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = side * side * dim;
        let values = take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((id, FeatureGrid::new(side, dim, values)?));
    }
    Ok(out)
}

pub fn write_feature_file<'a>(
    path: &Path,
    records: impl IntoIterator<Item = (&'a str, &'a FeatureGrid)>,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_records(std::io::BufWriter::new(f), records).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Vec<(String, FeatureGrid)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_records(std::io::BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
}
