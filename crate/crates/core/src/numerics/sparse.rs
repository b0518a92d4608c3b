use crate::error::{Error, Result};
use crate::numerics::Dense;
use crate::scalar::Scalar;

/// Compressed-sparse-row matrix. Entries are kept in canonical `(row, col)`
/// order with no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Sparse<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Sparse<T> {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![T::one(); n] }
    }

    /// Builds from unordered triplets. Out-of-range indices and duplicate
    /// coordinates are rejected.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, T)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::shape("Sparse::from_triplets", format!("entry ({r},{c}) outside {rows}x{cols}")));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::contract(format!("duplicate sparse entry ({},{})", w[0].0, w[0].1)));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.into_iter().map(|e| e.2).collect();
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    /// Unit-weight symmetric adjacency from undirected edges. Each pair must
    /// be distinct and off-diagonal.
    pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a == b {
                return Err(Error::contract(format!("self-loop on node {a}")));
            }
            entries.push((a, b, T::one()));
            entries.push((b, a, T::one()));
        }
        Self::from_triplets(n, n, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(T::zero(), |p| vals[p])
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    pub fn to_dense(&self) -> Dense<T> {
        let mut out = Dense::zeros(self.rows, self.cols);
        for (i, j, v) in self.entries() {
            out[(i, j)] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let entries = self.entries().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.cols, self.rows, entries).expect("transpose of a canonical matrix is canonical")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.entries().all(|(i, j, v)| self.get(j, i) == v && self.row(j).0.binary_search(&i).is_ok())
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.rows.min(self.cols)).all(|i| self.row(i).0.binary_search(&i).is_err())
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Dense<T>) -> Result<Dense<T>> {
        if self.cols != x.rows() {
            return Err(Error::shape("spmm", format!("{}x{} sparse · {}x{} dense", self.rows, self.cols, x.rows(), x.cols())));
        }
        let d = x.cols();
        let mut out = Dense::zeros(self.rows, d);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &v) in out_row.iter_mut().zip(x.row(j)) {
                    *o += a * v;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, the adjoint of [`Sparse::spmm`].
    pub fn spmm_t(&self, g: &Dense<T>) -> Result<Dense<T>> {
        if self.rows != g.rows() {
            return Err(Error::shape("spmm_t", format!("({}x{})ᵀ sparse · {}x{} dense", self.rows, self.cols, g.rows(), g.cols())));
        }
        let d = g.cols();
        let mut out = Dense::zeros(self.cols, d);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &v) in out.row_mut(j).iter_mut().zip(g.row(i)) {
                    *o += a * v;
                }
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Sparse<U> {
        Sparse {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
