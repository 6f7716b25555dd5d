//! Sparse LDL^T factorization (1x1 pivots, no dynamic pivoting) in the
//! up-looking form: symbolic analysis builds the elimination tree and column
//! counts once per sparsity pattern; numeric factorization can then be
//! repeated cheaply for matrices sharing that pattern, e.g. K - sigma * M
//! over a sweep of shifts.
//!
//! The sign pattern of D gives the matrix inertia exactly (Sylvester's law),
//! which drives all eigenvalue counting in this crate. A pivot smaller than
//! `PIVOT_REL_FLOOR` times the diagonal scale aborts with a singular-shift
//! error; callers respond by perturbing the shift.

use super::CsrMatrix;
use crate::error::{Error, Result};

const PIVOT_REL_FLOOR: f64 = 1e-14;

/// Pattern-level data: permutation, permuted upper-triangular structure,
/// elimination tree, and L column pointers.
pub struct LdltSymbolic {
    n: usize,
    perm: Vec<u32>,
    /// Permuted upper-triangular pattern in CSC (column k holds rows <= k).
    up_ptr: Vec<usize>,
    up_row: Vec<u32>,
    /// Source position in the original CSR values for each upper entry.
    up_src: Vec<u32>,
    parent: Vec<i64>,
    lp: Vec<usize>,
    nnz_pattern: usize,
}

impl LdltSymbolic {
    /// Analyze a structurally symmetric CSR matrix under the given
    /// elimination order (`perm[k]` = original index eliminated k-th).
    pub fn analyze(a: &CsrMatrix, perm: Vec<u32>) -> Self {
        let n = a.n;
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let mut iperm = vec![0u32; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p as usize] = k as u32;
        }

        // Permuted upper triangle as column-sorted triplets via counting sort.
        let mut col_count = vec![0usize; n + 1];
        for i in 0..n {
            let (cols, _) = a.row(i);
            let ii = iperm[i];
            for &c in cols {
                let jj = iperm[c as usize];
                if ii <= jj {
                    col_count[jj as usize + 1] += 1;
                }
            }
        }
        for k in 0..n {
            col_count[k + 1] += col_count[k];
        }
        let nnz_up = col_count[n];
        let up_ptr = col_count;
        let mut up_row = vec![0u32; nnz_up];
        let mut up_src = vec![0u32; nnz_up];
        let mut cursor = up_ptr.clone();
        let mut pos = 0u32;
        for i in 0..n {
            let (cols, _) = a.row(i);
            let ii = iperm[i];
            for &c in cols {
                let jj = iperm[c as usize];
                if ii <= jj {
                    let dst = cursor[jj as usize];
                    up_row[dst] = ii;
                    up_src[dst] = pos;
                    cursor[jj as usize] += 1;
                }
                pos += 1;
            }
        }

        // Elimination tree and column counts of L.
        let mut parent = vec![-1i64; n];
        let mut flag = vec![u32::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k as u32;
            for p in up_ptr[k]..up_ptr[k + 1] {
                let mut i = up_row[p] as usize;
                while flag[i] != k as u32 {
                    if parent[i] == -1 {
                        parent[i] = k as i64;
                    }
                    lnz[i] += 1;
                    flag[i] = k as u32;
                    i = parent[i] as usize;
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }

        LdltSymbolic {
            n,
            perm,
            up_ptr,
            up_row,
            up_src,
            parent,
            lp,
            nnz_pattern: a.nnz(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in the L factor (excluding the unit diagonal).
    pub fn l_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization of a matrix sharing the analyzed pattern.
    pub fn factorize(&self, a: &CsrMatrix) -> Result<LdltNumeric> {
        assert_eq!(a.n, self.n, "dimension mismatch");
        assert_eq!(
            a.nnz(),
            self.nnz_pattern,
            "matrix pattern differs from the analyzed one"
        );
        let n = self.n;
        let scale = a.max_abs_diag().max(f64::MIN_POSITIVE);
        let floor = PIVOT_REL_FLOOR * scale;

        let mut li = vec![0u32; self.lp[n]];
        let mut lx = vec![0.0f64; self.lp[n]];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0u32; n];
        let mut walk = vec![0u32; n];
        let mut flag = vec![u32::MAX; n];
        let mut lnz_cur = vec![0usize; n];
        let mut neg = 0usize;

        for k in 0..n {
            let mut top = n;
            flag[k] = k as u32;
            for p in self.up_ptr[k]..self.up_ptr[k + 1] {
                let entry = self.up_row[p] as usize;
                y[entry] += a.values[self.up_src[p] as usize];
                let mut i = entry;
                let mut len = 0usize;
                while flag[i] != k as u32 {
                    walk[len] = i as u32;
                    len += 1;
                    flag[i] = k as u32;
                    i = self.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = walk[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t] as usize;
                let yi = y[i];
                y[i] = 0.0;
                let s = self.lp[i];
                let e = s + lnz_cur[i];
                for q in s..e {
                    y[li[q] as usize] -= lx[q] * yi;
                }
                let lki = yi / d[i];
                dk -= lki * yi;
                li[e] = k as u32;
                lx[e] = lki;
                lnz_cur[i] += 1;
            }
            if dk.abs() <= floor {
                return Err(Error::SingularShift(format!(
                    "zero pivot at elimination step {k} (|d| = {:.3e}, scale {:.3e}); \
                     perturb the shift",
                    dk.abs(),
                    scale
                )));
            }
            if dk < 0.0 {
                neg += 1;
            }
            d[k] = dk;
        }

        Ok(LdltNumeric {
            li,
            lx,
            d,
            neg,
            perm: self.perm.clone(),
            lp: self.lp.clone(),
        })
    }
}

/// Numeric LDL^T factor: P A P^T = L D L^T with unit lower-triangular L.
#[derive(Debug)]
pub struct LdltNumeric {
    lp: Vec<usize>,
    li: Vec<u32>,
    lx: Vec<f64>,
    d: Vec<f64>,
    neg: usize,
    perm: Vec<u32>,
}

impl LdltNumeric {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Number of negative pivots = number of eigenvalues below zero.
    pub fn inertia_neg(&self) -> usize {
        self.neg
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0f64; n];
        for k in 0..n {
            x[k] = b[self.perm[k] as usize];
        }
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p] as usize] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                acc -= self.lx[p] * x[self.li[p] as usize];
            }
            x[j] = acc;
        }
        for k in 0..n {
            b[self.perm[k] as usize] = x[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Convenience: analyze + factorize in one call.
pub fn factor(a: &CsrMatrix, perm: Vec<u32>) -> Result<LdltNumeric> {
    LdltSymbolic::analyze(a, perm).factorize(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;
    use crate::util::seeded_rng;
    use rand::Rng;

    /// Random sparse symmetric matrix with a dominant-ish diagonal shifted
    /// by `shift` (negative shifts make it indefinite).
    fn random_sym(n: usize, shift: f64, tag: u64) -> CsrMatrix {
        let mut rng = seeded_rng(tag);
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.push(i, i, 4.0 + rng.gen_range(0.0..1.0) + shift);
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = rng.gen_range(-1.0..1.0);
                    t.push(i, j, v);
                    t.push(j, i, v);
                }
            }
        }
        t.build()
    }

    #[test]
    fn solves_match_dense() {
        for (shift, tag) in [(0.0, 1u64), (-4.5, 2)] {
            let a = random_sym(60, shift, tag);
            let perm: Vec<u32> = (0..60).collect();
            let f = factor(&a, perm).unwrap();
            let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = f.solve(&b);
            let dense = a.to_dense();
            let xd = dense
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_vec(b.clone()))
                .unwrap();
            for i in 0..60 {
                assert!((x[i] - xd[i]).abs() < 1e-8, "i={i}: {} vs {}", x[i], xd[i]);
            }
        }
    }

    #[test]
    fn inertia_matches_dense_eigen_signs() {
        let a = random_sym(40, -4.5, 7);
        let f = factor(&a, (0..40).collect()).unwrap();
        let eig = a.to_dense().symmetric_eigen();
        let neg_dense = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
        assert_eq!(f.inertia_neg(), neg_dense);
    }

    #[test]
    fn nd_ordering_gives_same_solution() {
        // 2D Laplacian on a 12x12 interior grid; compare natural vs ND order.
        let nx = 12usize;
        let n = nx * nx;
        let mut t = TripletBuilder::new(n);
        let mut coords = Vec::new();
        for y in 0..nx {
            for x in 0..nx {
                let i = y * nx + x;
                coords.push((x as u32, y as u32));
                t.push(i, i, 4.0);
                if x > 0 {
                    t.push(i, i - 1, -1.0);
                }
                if x + 1 < nx {
                    t.push(i, i + 1, -1.0);
                }
                if y > 0 {
                    t.push(i, i - nx, -1.0);
                }
                if y + 1 < nx {
                    t.push(i, i + nx, -1.0);
                }
            }
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let x_nat = factor(&a, (0..n as u32).collect()).unwrap().solve(&b);
        let perm = crate::sparse::ordering::nd_order(&coords);
        let f_nd = factor(&a, perm).unwrap();
        let x_nd = f_nd.solve(&b);
        for i in 0..n {
            assert!((x_nat[i] - x_nd[i]).abs() < 1e-10);
        }
        assert_eq!(f_nd.inertia_neg(), 0);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut t = TripletBuilder::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 1.0);
        t.push(1, 0, 1.0);
        t.push(1, 1, 1.0);
        let a = t.build();
        match factor(&a, vec![0, 1]) {
            Err(Error::SingularShift(_)) => {}
            other => panic!("expected singular shift error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_numeric_factorizations_reuse_symbolic() {
        let a = random_sym(50, 0.0, 9);
        let eye = {
            let mut t = TripletBuilder::new(50);
            for i in 0..50 {
                t.push(i, i, 1.0);
            }
            t.build()
        };
        let shifted = CsrMatrix::linear_combination(1.0, &a, -2.0, &eye);
        let sym = LdltSymbolic::analyze(&shifted, (0..50).collect());
        for sigma in [0.5, 2.0, 7.0] {
            let m = CsrMatrix::linear_combination(1.0, &a, -sigma, &eye);
            let f = sym.factorize(&m).unwrap();
            let eig = m.to_dense().symmetric_eigen();
            let neg = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
            assert_eq!(f.inertia_neg(), neg, "sigma = {sigma}");
        }
    }
}
