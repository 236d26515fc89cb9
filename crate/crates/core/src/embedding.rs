use crate::error::{Error, Result};
use crate::geometry::{norm, UnitVector, ZERO_NORM};

/// Row-major `count x dim` matrix of unit-norm `f32` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Normalizes every row (in `f64`) and stores it as `f32`.
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            push_normalized(&mut data, row.iter().copied())?;
        }
        Ok(Self { dim, data })
    }

    /// Same as [`EmbeddingMatrix::from_rows`] for a flat row-major `f32` buffer.
    pub fn from_flat_f32(dim: usize, flat: &[f32]) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if flat.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: flat.len() % dim,
            });
        }
        let mut data = Vec::with_capacity(flat.len());
        for row in flat.chunks_exact(dim) {
            push_normalized(&mut data, row.iter().map(|&x| f64::from(x)))?;
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn from_normalized_unchecked(dim: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Row `i` widened to `f64` and renormalized.
    pub fn unit_row(&self, i: usize) -> UnitVector {
        UnitVector::from_f32(self.row(i)).expect("stored rows are unit norm")
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

fn push_normalized(data: &mut Vec<f32>, row: impl Iterator<Item = f64> + Clone) -> Result<()> {
    let wide: Vec<f64> = row.collect();
    let n = norm(&wide);
    if !(n > ZERO_NORM) {
        return Err(Error::ZeroVector { norm: n });
    }
    data.extend(wide.iter().map(|x| (x / n) as f32));
    Ok(())
}
