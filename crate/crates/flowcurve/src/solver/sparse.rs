//! Minimal compressed-sparse-row matrix used by the problem builders and
//! the interior-point solver.

/// Sparse matrix in CSR layout. Rows may be empty; entries within a row
/// are stored in increasing column order with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are
    /// summed; explicit zeros are kept (pattern stability matters more
    /// than storage here).
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> SparseMatrix {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut row_counts = vec![0usize; nrows];
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            row_ptr[r + 1] = row_ptr[r] + row_counts[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
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

    /// Entries of one row as parallel (columns, values) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (usize, &[usize], &[f64])> {
        (0..self.nrows).map(move |r| {
            let (c, v) = self.row(r);
            (r, c, v)
        })
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    /// y += A' x
    pub fn mul_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
    }

    pub fn value_at(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Symmetry check against the stored entries: every (r, c, v) must be
    /// matched by (c, r, v') with |v - v'| within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for (r, cols, vals) in self.iter_rows() {
            for (&c, &v) in cols.iter().zip(vals) {
                if (v - self.value_at(c, r)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Scales row r by s[r] and column c by d[c], in place.
    pub fn scale(&mut self, row_scale: &[f64], col_scale: &[f64]) {
        assert_eq!(row_scale.len(), self.nrows);
        assert_eq!(col_scale.len(), self.ncols);
        for r in 0..self.nrows {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            for i in lo..hi {
                self.values[i] *= row_scale[r] * col_scale[self.col_idx[i]];
            }
        }
    }
}

/// Convenience builder collecting triplets row by row.
#[derive(Debug, Default, Clone)]
pub struct TripletBuilder {
    triplets: Vec<(usize, usize, f64)>,
    nrows: usize,
}

impl TripletBuilder {
    pub fn new() -> Self {
        TripletBuilder::default()
    }

    /// Appends a row given its (column, value) entries and returns the row index.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> usize {
        let r = self.nrows;
        for &(c, v) in entries {
            self.triplets.push((r, c, v));
        }
        self.nrows += 1;
        r
    }

    pub fn push_entry(&mut self, row: usize, col: usize, value: f64) {
        self.nrows = self.nrows.max(row + 1);
        self.triplets.push((row, col, value));
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn build(&self, nrows: usize, ncols: usize) -> SparseMatrix {
        assert!(self.nrows <= nrows);
        SparseMatrix::from_triplets(nrows, ncols, &self.triplets)
    }
}
