//! Dense row-major containers shared by every module.

use crate::error::{Error, Result};

/// Dense row-major `f32` matrix: rows are tokens, columns are model dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Borrowed row-major matrix. Cheap to copy; produced by [`EmbeddingMatrix::view`]
/// and by slicing rank-3 [`Tensor`]s without copying.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f32],
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("data has {} elements", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!("row {i} width"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Rounds `f64` rows to the canonical `f32` storage.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let converted: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| x as f32).collect())
            .collect();
        Self::from_rows(&converted)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.view().rows()
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView {
            rows: self.rows,
            cols: self.cols,
            data: &self.data,
        }
    }

    /// Stacks matrices of equal width vertically.
    pub fn vstack(parts: &[MatrixView<'_>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dim("vstack width", cols, p.cols));
            }
            data.extend_from_slice(p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }
}

impl<'a> MatrixView<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f32]) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("data has {} elements", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &'a [f32]> + 'a {
        let cols = self.cols.max(1);
        let n = self.rows;
        self.data.chunks_exact(cols).take(n)
    }

    pub fn to_owned(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.to_vec(),
        }
    }
}

impl<'a> From<&'a EmbeddingMatrix> for MatrixView<'a> {
    fn from(m: &'a EmbeddingMatrix) -> Self {
        m.view()
    }
}

/// Canonical in-memory tensor of rank 1, 2 or 3 with `f32` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data has {} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size of the trailing (embedding) axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Rank-2 tensor as a matrix view; rank-1 is treated as a single row.
    pub fn as_matrix(&self) -> Result<MatrixView<'_>> {
        match self.shape.as_slice() {
            [n] => MatrixView::new(1, *n, &self.data),
            [r, c] => MatrixView::new(*r, *c, &self.data),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected rank 1 or 2".into(),
            }),
        }
    }

    /// Zero-copy slice `i` along the leading axis of a rank-3 tensor.
    pub fn outer(&self, i: usize) -> Result<MatrixView<'_>> {
        match self.shape.as_slice() {
            [n, r, c] if i < *n => {
                let stride = r * c;
                MatrixView::new(*r, *c, &self.data[i * stride..(i + 1) * stride])
            }
            [n, _, _] => Err(Error::InvalidArgument(format!(
                "outer index {i} out of range for leading axis {n}"
            ))),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected rank 3".into(),
            }),
        }
    }
}

impl From<EmbeddingMatrix> for Tensor {
    fn from(m: EmbeddingMatrix) -> Self {
        Tensor {
            shape: vec![m.rows, m.cols],
            data: m.data,
        }
    }
}

impl TryFrom<Tensor> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        match t.shape.as_slice() {
            [n] => EmbeddingMatrix::new(1, *n, t.data),
            [r, c] => EmbeddingMatrix::new(*r, *c, t.data),
            _ => Err(Error::InvalidShape {
                shape: t.shape,
                reason: "expected rank 1 or 2".into(),
            }),
        }
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be 1, 2 or 3".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be positive".into(),
        });
    }
    Ok(())
}

pub(crate) fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank3_outer_is_a_view_into_the_block() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(|x| x as f32).collect()).unwrap();
        let second = t.outer(1).unwrap();
        assert_eq!(second.row(0), &[6.0, 7.0, 8.0]);
        assert_eq!(second.row(1), &[9.0, 10.0, 11.0]);
        assert!(t.outer(2).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }
}
