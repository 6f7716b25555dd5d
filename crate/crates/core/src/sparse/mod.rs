//! Minimal sparse symmetric toolkit: CSR storage, triplet assembly, and an
//! LDL^T factorization with fill-reducing orderings for grid graphs.
//!
//! Everything here is deterministic: assembly sums duplicates in sorted
//! order, orderings depend only on node coordinates, and the factorization
//! is sequential. The factorization exposes the inertia of the factored
//! matrix (signs of D), which the eigensolvers use for Sylvester-style
//! eigenvalue counts.

pub mod ldlt;
pub mod ordering;

pub use ldlt::{LdltNumeric, LdltSymbolic};
pub use ordering::{nd_order, nd_order_torus};

/// Compressed sparse row matrix with f64 values and u32 column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// x^T A y
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row_acc += v * y[*c as usize];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c as usize == i {
                    d[i] = *v;
                }
            }
        }
        d
    }

    /// alpha * A + beta * B with the union sparsity pattern.
    ///
    /// The pattern of the result depends only on the patterns of A and B, so
    /// repeated combinations of the same pair (e.g. K - sigma * M for varying
    /// sigma) share a pattern and can reuse one symbolic factorization.
    pub fn linear_combination(alpha: f64, a: &CsrMatrix, beta: f64, b: &CsrMatrix) -> CsrMatrix {
        assert_eq!(a.n, b.n);
        let n = a.n;
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(a.nnz().max(b.nnz()));
        let mut values = Vec::with_capacity(a.nnz().max(b.nnz()));
        indptr.push(0);
        for i in 0..n {
            let (ac, av) = a.row(i);
            let (bc, bv) = b.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                let ca = if p < ac.len() { ac[p] } else { u32::MAX };
                let cb = if q < bc.len() { bc[q] } else { u32::MAX };
                if ca == cb {
                    indices.push(ca);
                    values.push(alpha * av[p] + beta * bv[q]);
                    p += 1;
                    q += 1;
                } else if ca < cb {
                    indices.push(ca);
                    values.push(alpha * av[p]);
                    p += 1;
                } else {
                    indices.push(cb);
                    values.push(beta * bv[q]);
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }

    /// Maximum absolute diagonal entry (scale reference for pivot checks).
    pub fn max_abs_diag(&self) -> f64 {
        self.diag().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Dense copy; intended for small systems (direct dense eigensolves and
    /// test oracles), not for production-size grids.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                d[(i, *c as usize)] += *v;
            }
        }
        d
    }
}

/// Accumulates (row, col, value) triplets and compresses them to CSR,
/// summing duplicates. Compression sorts by (row, col), so the result is
/// independent of insertion order.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.rows.push(i as u32);
        self.cols.push(j as u32);
        self.vals.push(v);
    }

    pub fn build(self) -> CsrMatrix {
        let mut order: Vec<u32> = (0..self.rows.len() as u32).collect();
        order.sort_unstable_by_key(|&t| (self.rows[t as usize], self.cols[t as usize]));
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(order.len());
        let mut values = Vec::with_capacity(order.len());
        let mut last: Option<(u32, u32)> = None;
        for t in order {
            let (r, c, v) = (
                self.rows[t as usize],
                self.cols[t as usize],
                self.vals[t as usize],
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n: self.n,
            indptr,
            indices,
            values,
        }
    }
}
