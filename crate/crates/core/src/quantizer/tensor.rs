use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    RowMajor,
    ColMajor,
}

/// Dense real-valued matrix. Weights are stored `[N, K]` and activations
/// `[M, K]`, so both operands contract along their column axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    layout: Layout,
}

impl FloatTensor {
    pub fn new(data: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        Self::with_layout(data, rows, cols, Layout::RowMajor)
    }

    pub fn with_layout(data: Vec<f32>, rows: usize, cols: usize, layout: Layout) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| Error::Shape(format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value {} at flat index {pos}", data[pos])));
        }
        Ok(Self { data, rows, cols, layout })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { data: vec![0.0; rows * cols], rows, cols, layout: Layout::RowMajor }
    }

    /// Builds a row-major tensor from `f(row, col)`. Panics if `f` yields a
    /// non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                assert!(v.is_finite(), "non-finite value at ({r}, {c})");
                data.push(v);
            }
        }
        Self { data, rows, cols, layout: Layout::RowMajor }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Raw storage in the tensor's own layout.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        match self.layout {
            Layout::RowMajor => self.data[row * self.cols + col],
            Layout::ColMajor => self.data[col * self.rows + row],
        }
    }

    pub fn to_row_major(&self) -> FloatTensor {
        match self.layout {
            Layout::RowMajor => self.clone(),
            Layout::ColMajor => FloatTensor::from_fn(self.rows, self.cols, |r, c| self.get(r, c)),
        }
    }

    pub fn row(&self, row: usize) -> Vec<f32> {
        (0..self.cols).map(|c| self.get(row, c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(matches!(FloatTensor::new(vec![0.0; 5], 2, 3), Err(Error::Shape(_))));
        assert!(matches!(FloatTensor::new(vec![0.0, f32::NAN], 1, 2), Err(Error::InvalidInput(_))));
        assert!(matches!(FloatTensor::new(vec![f32::INFINITY], 1, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn col_major_reads_transpose_storage() {
        let t = FloatTensor::with_layout(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3, Layout::ColMajor).unwrap();
        assert_eq!(t.get(0, 1), 3.0);
        assert_eq!(t.get(1, 2), 6.0);
        let r = t.to_row_major();
        assert_eq!(r.data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }
}
