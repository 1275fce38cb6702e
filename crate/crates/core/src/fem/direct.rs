//! Sparse LU back-end (faer) for the nonsymmetric mechanics Jacobians.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// LU factorization of a CSR matrix. The CSR arrays are read as the CSC
/// arrays of the transpose, so solves go through the transposed factor.
pub struct SparseLu {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
    numeric: Option<Lu<usize, f64>>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu")
            .field("n", &self.n)
            .field("factored", &self.numeric.is_some())
            .finish()
    }
}

impl SparseLu {
    pub fn analyze(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, a.row_ptr(), None, a.col_idx());
        let symbolic = SymbolicLu::try_new(sym).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self {
            n,
            row_ptr: a.row_ptr().to_vec(),
            col_idx: a.col_idx().to_vec(),
            symbolic,
            numeric: None,
        })
    }

    /// Numeric factorization; the pattern must match the analyzed one.
    pub fn factor(&mut self, a: &CsrMatrix) -> Result<()> {
        if a.row_ptr() != self.row_ptr.as_slice() || a.col_idx() != self.col_idx.as_slice() {
            *self = Self::analyze(a)?;
        }
        let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.row_ptr, None, &self.col_idx);
        let mat = SparseColMatRef::new(sym, a.values());
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        self.numeric = Some(lu);
        Ok(())
    }

    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut s = Self::analyze(a)?;
        s.factor(a)?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut cols = self.solve_many(&[b.to_vec()])?;
        Ok(cols.pop().expect("one column"))
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let lu = self
            .numeric
            .as_ref()
            .ok_or_else(|| Error::Factorization("solve before numeric factorization".into()))?;
        for b in rhs {
            if b.len() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    got: b.len(),
                });
            }
        }
        let mut m = Mat::<f64>::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        lu.solve_transpose_in_place(m.as_mut());
        let out: Vec<Vec<f64>> = (0..rhs.len())
            .map(|j| (0..self.n).map(|i| m[(i, j)]).collect())
            .collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("singular matrix (non-finite solution)".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, -2.0), (1, 1, 3.0), (1, 2, 1.0), (2, 2, 5.0), (2, 0, 1.0)],
        );
        let x = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let lu = SparseLu::new(&a).unwrap();
        let y = lu.solve(&b).unwrap();
        for (u, v) in y.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }
}
