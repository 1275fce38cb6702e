use std::collections::BTreeSet;

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero-valued matrix from per-row column sets.
    pub fn from_pattern(ncols: usize, rows: &[BTreeSet<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r.iter().copied());
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Sums duplicate entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![BTreeSet::new(); nrows];
        for &(i, j, _) in triplets {
            rows[i].insert(j);
        }
        let mut m = Self::from_pattern(ncols, &rows);
        for &(i, j, v) in triplets {
            m.add(i, j, v);
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Storage position of entry (i, j), if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds to an existing entry. Panics if (i, j) is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`, both sharing the same pattern.
    pub fn axpy(&mut self, s: f64, other: &CsrMatrix) {
        assert_eq!(self.col_idx, other.col_idx, "patterns differ");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        use rayon::prelude::*;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        });
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[k])] += self.values[k];
            }
        }
        d
    }

    /// Symmetric Dirichlet elimination. Constrained rows and columns are
    /// zeroed, a unit diagonal is placed on constrained rows and the known
    /// column contributions are moved to the right-hand side.
    pub fn apply_dirichlet(&mut self, constrained: &[Option<f64>], rhs: &mut [f64]) {
        for i in 0..self.nrows {
            let row_fixed = constrained[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                match (row_fixed, constrained[j]) {
                    (Some(_), _) => self.values[k] = if i == j { 1.0 } else { 0.0 },
                    (None, Some(g)) => {
                        rhs[i] -= self.values[k] * g;
                        self.values[k] = 0.0;
                    }
                    (None, None) => {}
                }
            }
            if let Some(g) = row_fixed {
                rhs[i] = g;
            }
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let a = self.values[k];
                let b = self.get(j, i);
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }
}

/// Element-to-storage map for fast scatter of dense element matrices.
#[derive(Debug, Clone)]
pub struct ScatterMap {
    /// For element e, `positions[e][a * ndof + b]` is the storage index of
    /// the (a, b) entry of the element matrix.
    pub positions: Vec<Vec<usize>>,
    pub dofs: Vec<Vec<usize>>,
}

impl ScatterMap {
    pub fn scatter(&self, m: &mut CsrMatrix, element: usize, local: &[f64]) {
        let vals = m.values_mut();
        for (p, v) in self.positions[element].iter().zip(local) {
            vals[*p] += v;
        }
    }
}

/// Builds the matrix pattern for element dof lists and the matching
/// scatter map.
pub fn pattern_from_elements(n: usize, element_dofs: Vec<Vec<usize>>) -> (CsrMatrix, ScatterMap) {
    let mut rows = vec![BTreeSet::new(); n];
    for dofs in &element_dofs {
        for &i in dofs {
            rows[i].extend(dofs.iter().copied());
        }
    }
    let m = CsrMatrix::from_pattern(n, &rows);
    let positions = element_dofs
        .iter()
        .map(|dofs| {
            let mut p = Vec::with_capacity(dofs.len() * dofs.len());
            for &i in dofs {
                for &j in dofs {
                    p.push(m.position(i, j).expect("pattern built from these dofs"));
                }
            }
            p
        })
        .collect();
    (
        m,
        ScatterMap {
            positions,
            dofs: element_dofs,
        },
    )
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn dirichlet_elimination_keeps_symmetry() {
        let mut m = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        );
        let mut rhs = vec![0.0; 3];
        m.apply_dirichlet(&[Some(1.0), None, Some(3.0)], &mut rhs);
        assert!(m.is_symmetric(0.0));
        assert_eq!(rhs, vec![1.0, 4.0, 3.0]);
        assert_eq!(m.get(1, 1), 2.0);
        assert_eq!(m.get(0, 0), 1.0);
    }
}
