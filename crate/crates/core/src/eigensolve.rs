//! Sparse symmetric generalized eigensolvers for pencils (K, M).
//!
//! The workhorse is Lanczos with full reorthogonalization applied to the
//! shift-inverted operator (K - sigma M)^{-1} M, which is self-adjoint in the
//! M-inner product. Factorizations expose their inertia, so eigenvalue counts
//! in intervals are exact (Sylvester), and interval extraction can certify it
//! found everything. All randomness is seeded; repeated runs are bitwise
//! reproducible.

use std::collections::HashMap;
use std::ops::Range;

use crate::assembly::AssembledPencil;
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LdltNumeric, LdltSymbolic};
use crate::util::seeded_vector;

/// Iteration controls. `tol` bounds the explicit residual
/// `||K u - lambda M u|| / ||u||_M` of every returned pair.
#[derive(Clone, Copy, Debug)]
pub struct EigOpts {
    pub tol: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EigOpts {
    fn default() -> Self {
        EigOpts {
            tol: 1e-9,
            max_steps: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveDiag {
    pub steps: usize,
    pub restarts: usize,
    pub factorizations: usize,
}

/// Eigenpairs sorted ascending by value; vectors are M-normalized and
/// pairwise M-orthogonal.
#[derive(Debug)]
pub struct EigenSet {
    pub pairs: Vec<EigenPair>,
    pub shift: Option<f64>,
    /// Eigenvalue count strictly below the shift, from the factorization.
    pub below_shift: Option<usize>,
    pub diag: SolveDiag,
}

impl EigenSet {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    /// Groups consecutive eigenvalues closer than `tol` into clusters;
    /// returns index ranges into `pairs`.
    pub fn clusters(&self, tol: f64) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.pairs.len() {
            if i == self.pairs.len() || self.pairs[i].value - self.pairs[i - 1].value > tol {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

/// Anything that exposes a (K, M, elimination order) triple. Lets the
/// solvers run on assembled grids and on hand-built block pencils alike.
pub trait PencilView {
    fn parts(&self) -> (&CsrMatrix, &CsrMatrix, &[u32]);
}

impl PencilView for AssembledPencil {
    fn parts(&self) -> (&CsrMatrix, &CsrMatrix, &[u32]) {
        (&self.k, &self.m, &self.nd_perm)
    }
}

/// Borrowed pencil for custom operators; `perm` is the elimination order
/// used by the factorization.
pub struct PencilRef<'a> {
    pub k: &'a CsrMatrix,
    pub m: &'a CsrMatrix,
    pub perm: &'a [u32],
}

impl PencilView for PencilRef<'_> {
    fn parts(&self) -> (&CsrMatrix, &CsrMatrix, &[u32]) {
        (self.k, self.m, self.perm)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Keep the Lanczos basis under ~1.6 GB regardless of requested step count.
const MAX_BASIS_BYTES: usize = 1_600_000_000;
const MAX_RESTARTS: usize = 8;

/// Shared factorization context for one pencil: the symbolic analysis is
/// done once on the union pattern of K and M and reused for every shift.
struct Engine<'a> {
    k: &'a CsrMatrix,
    m: &'a CsrMatrix,
    sym: LdltSymbolic,
    diag: SolveDiag,
}

impl<'a> Engine<'a> {
    fn new(p: &'a impl PencilView) -> Engine<'a> {
        let (k, m, perm) = p.parts();
        assert_eq!(k.n, m.n, "pencil matrices must agree in size");
        let pattern = CsrMatrix::linear_combination(1.0, k, -1.0, m);
        let sym = LdltSymbolic::analyze(&pattern, perm.to_vec());
        Engine {
            k,
            m,
            sym,
            diag: SolveDiag::default(),
        }
    }

    fn factor(&mut self, sigma: f64) -> Result<LdltNumeric> {
        let shifted = CsrMatrix::linear_combination(1.0, self.k, -sigma, self.m);
        self.diag.factorizations += 1;
        self.sym.factorize(&shifted)
    }

    /// M-normalized Rayleigh quotient and explicit residual of `u`.
    fn eval(&self, u: &[f64], ku: &mut Vec<f64>, mu: &mut Vec<f64>) -> (f64, f64) {
        self.k.matvec(u, ku);
        self.m.matvec(u, mu);
        let lambda = dot(u, ku);
        let mut r2 = 0.0;
        for i in 0..u.len() {
            let d = ku[i] - lambda * mu[i];
            r2 += d * d;
        }
        (lambda, r2.sqrt())
    }

    /// Two M-orthogonalization passes of `w` against `vs` using a scratch
    /// M*w product; returns the final M-norm squared.
    fn orthogonalize(&self, w: &mut [f64], vs: &[Vec<f64>], extra: &[EigenPair]) -> Result<f64> {
        let mut mw = vec![0.0; w.len()];
        for _ in 0..2 {
            self.m.matvec(w, &mut mw);
            for v in vs {
                let c = dot(&mw, v);
                axpy(-c, v, w);
            }
            for p in extra {
                let c = dot(&mw, &p.vector);
                axpy(-c, &p.vector, w);
            }
        }
        self.m.matvec(w, &mut mw);
        let n2 = dot(w, &mw);
        if n2 < -1e-12 {
            return Err(Error::invalid(
                "mass matrix is not positive definite (negative M-norm)",
            ));
        }
        Ok(n2.max(0.0))
    }

    /// Inverse-iteration polish: refines `u` with the factored shift, then
    /// re-evaluates the Rayleigh quotient and residual. Keeps the best seen.
    /// Iterates until `tol` is met or the residual stops improving; a shift
    /// far from its target contracts slowly, so two steps are not enough.
    fn polish(
        &self,
        num: &LdltNumeric,
        accepted: &[EigenPair],
        mut u: Vec<f64>,
        tol: f64,
    ) -> Option<EigenPair> {
        let n = u.len();
        let (mut ku, mut mu) = (vec![0.0; n], vec![0.0; n]);
        let n2 = self.orthogonalize(&mut u, &[], accepted).ok()?;
        if n2.sqrt() < 1e-10 {
            return None;
        }
        let inv = 1.0 / n2.sqrt();
        u.iter_mut().for_each(|x| *x *= inv);
        let (lam, res) = self.eval(&u, &mut ku, &mut mu);
        let mut best = EigenPair {
            value: lam,
            vector: u,
            residual: res,
        };
        for _ in 0..8 {
            if best.residual <= tol {
                break;
            }
            let mut s = vec![0.0; n];
            self.m.matvec(&best.vector, &mut s);
            num.solve_in_place(&mut s);
            let n2 = match self.orthogonalize(&mut s, &[], accepted) {
                Ok(v) => v,
                Err(_) => return Some(best),
            };
            if n2.sqrt() < 1e-300 {
                break;
            }
            let inv = 1.0 / n2.sqrt();
            s.iter_mut().for_each(|x| *x *= inv);
            let (lam, res) = self.eval(&s, &mut ku, &mut mu);
            if res < best.residual {
                best = EigenPair {
                    value: lam,
                    vector: s,
                    residual: res,
                };
            } else {
                break;
            }
        }
        Some(best)
    }

    /// One Lanczos run on (K - sigma M)^{-1} M, deflated against `accepted`.
    /// Appends newly converged pairs; returns how many were added.
    fn lanczos_run(
        &mut self,
        num: &LdltNumeric,
        need: usize,
        opts: &EigOpts,
        run_tag: u64,
        accepted: &mut Vec<EigenPair>,
        best_residual: &mut f64,
    ) -> Result<usize> {
        let n = self.k.n;
        let step_cap = opts
            .max_steps
            .min((MAX_BASIS_BYTES / (8 * n)).max(16))
            .min(n);
        let mut v = seeded_vector(n, opts.seed ^ run_tag);
        let n2 = self.orthogonalize(&mut v, &[], accepted)?;
        if n2.sqrt() < 1e-8 {
            return Ok(0); // deflation space already spans the start vector
        }
        let inv = 1.0 / n2.sqrt();
        v.iter_mut().for_each(|x| *x *= inv);

        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut v_prev = vec![0.0; n];
        let mut beta_prev = 0.0;
        let mut mv = vec![0.0; n];
        let mut next_check = 8usize.min(step_cap);
        let mut exhausted = false;

        loop {
            basis.push(v.clone());
            self.diag.steps += 1;
            self.m.matvec(&v, &mut mv);
            let mut w = mv.clone();
            num.solve_in_place(&mut w);
            let alpha = dot(&w, &mv);
            axpy(-beta_prev, &v_prev, &mut w);
            axpy(-alpha, &v, &mut w);
            alphas.push(alpha);
            let n2 = self.orthogonalize(&mut w, &basis, accepted)?;
            let beta = n2.sqrt();
            let j = basis.len();

            // Breakdown means the Krylov space is invariant: everything in
            // the tridiagonal is converged; extract and let a restart probe
            // fresh directions.
            let scale = alphas.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            if beta <= 1e-13 * scale.max(1e-300) {
                exhausted = true;
            }

            if j >= next_check || exhausted || j == step_cap {
                next_check = (next_check + (next_check / 2).max(4)).min(step_cap);
                let (theta, ritz) = tridiag_eig(&alphas, &betas);
                let mut order: Vec<usize> = (0..j).collect();
                order.sort_by(|&a, &b| {
                    theta[b]
                        .abs()
                        .partial_cmp(&theta[a].abs())
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let cand: Vec<usize> = order.into_iter().take(need + 2).collect();
                let converged = |i: &usize| {
                    let bound = beta * ritz[(j - 1, *i)].abs();
                    bound <= 1e-8 * theta[*i].abs() || bound <= 1e-13
                };
                let ready = cand.iter().take(need).all(converged);
                if ready || exhausted || j == step_cap {
                    let mut added = 0;
                    for &i in &cand {
                        if added >= need {
                            break;
                        }
                        if !converged(&i) {
                            continue;
                        }
                        let mut u = vec![0.0; n];
                        for (col, vb) in basis.iter().enumerate() {
                            axpy(ritz[(col, i)], vb, &mut u);
                        }
                        if let Some(pair) = self.polish(num, accepted, u, opts.tol) {
                            *best_residual = best_residual.min(pair.residual);
                            if pair.residual <= opts.tol {
                                accepted.push(pair);
                                added += 1;
                            }
                        }
                    }
                    return Ok(added);
                }
            }

            let inv = 1.0 / beta;
            v_prev = std::mem::replace(&mut v, w);
            v.iter_mut().for_each(|x| *x *= inv);
            beta_prev = beta;
            betas.push(beta);
        }
    }

    /// Collects `k` converged eigenpairs near `sigma`, restarting with fresh
    /// deflated start vectors until done or stagnant.
    fn nearest(&mut self, sigma: f64, k: usize, opts: &EigOpts) -> Result<(Vec<EigenPair>, usize)> {
        let num = self.factor(sigma).map_err(|e| match e {
            Error::SingularShift(msg) => Error::SingularShift(format!(
                "shift {sigma} is numerically an eigenvalue ({msg}); perturb the shift"
            )),
            other => other,
        })?;
        let below = num.inertia_neg();
        let mut accepted: Vec<EigenPair> = Vec::new();
        let mut best_residual = f64::INFINITY;
        let mut stagnant = 0;
        for restart in 0..MAX_RESTARTS {
            if accepted.len() >= k {
                break;
            }
            if restart > 0 {
                self.diag.restarts += 1;
            }
            let need = k - accepted.len();
            let added = self.lanczos_run(
                &num,
                need,
                opts,
                0x9e37_79b9 ^ ((restart as u64) << 32),
                &mut accepted,
                &mut best_residual,
            )?;
            stagnant = if added == 0 { stagnant + 1 } else { 0 };
            if stagnant >= 2 {
                break;
            }
        }
        if accepted.len() < k {
            return Err(Error::NoConvergence {
                context: format!(
                    "found {} of {} eigenpairs near shift {sigma}",
                    accepted.len(),
                    k
                ),
                best_residual: if best_residual.is_finite() {
                    best_residual
                } else {
                    f64::NAN
                },
            });
        }
        Ok((accepted, below))
    }
}

/// Dense eigendecomposition of the tridiagonal (alphas on the diagonal,
/// betas below): returns eigenvalues and the orthonormal eigenvector matrix.
fn tridiag_eig(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let j = alphas.len();
    let mut t = nalgebra::DMatrix::zeros(j, j);
    for i in 0..j {
        t[(i, i)] = alphas[i];
        if i + 1 < j {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let se = nalgebra::SymmetricEigen::new(t);
    (se.eigenvalues.iter().copied().collect(), se.eigenvectors)
}

fn finish(mut pairs: Vec<EigenPair>, shift: Option<f64>, below: Option<usize>, diag: SolveDiag) -> EigenSet {
    pairs.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    EigenSet {
        pairs,
        shift,
        below_shift: below,
        diag,
    }
}

/// The `k` algebraically smallest eigenvalues of the pencil. Requires M
/// positive definite and a spectrum bounded below (stiffness-like K).
pub fn smallest_eigs(p: &impl PencilView, k: usize, opts: &EigOpts) -> Result<EigenSet> {
    let (km, mm, _) = p.parts();
    if k == 0 || k >= km.n {
        return Err(Error::invalid(format!(
            "need 1 <= k < dof, got k = {k} with {} dofs",
            km.n
        )));
    }
    let mut engine = Engine::new(p);
    // Probe downward until the factorization reports nothing below the
    // shift; the inverted spectrum is then positive with the smallest
    // eigenvalues mapped to its largest points.
    let scale = (km.max_abs_diag() / mm.max_abs_diag().max(1e-300)).max(1e-6);
    let mut sigma = -1e-3 * scale;
    let mut placed = None;
    for _ in 0..8 {
        match engine.factor(sigma) {
            Ok(num) => {
                if num.inertia_neg() == 0 {
                    placed = Some(sigma);
                    break;
                }
                sigma *= 16.0;
            }
            Err(Error::SingularShift(_)) => sigma *= 1.7,
            Err(e) => return Err(e),
        }
    }
    let sigma = placed.ok_or_else(|| {
        Error::invalid("could not bracket the spectrum from below; is K bounded below?")
    })?;
    // The bracket shift scales like the largest diagonal ratio, which on fine
    // grids sits orders of magnitude below the ground state and flattens the
    // inverted spectrum. Locate the cluster with a relaxed tolerance, then
    // refactor just underneath it for the sharp pass.
    let rough = EigOpts {
        tol: opts.tol.max(1e-6),
        ..*opts
    };
    let (mut pairs, _) = engine.nearest(sigma, k, &rough)?;
    pairs.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    pairs.truncate(k);
    if pairs.iter().any(|p| p.residual > opts.tol) {
        let lo = pairs[0].value;
        let span = (pairs[pairs.len() - 1].value - lo)
            .max(lo.abs() * 1e-3)
            .max(1e-6 * scale);
        let (mut sharp, _) = engine.nearest(lo - 0.02 * span, k, opts)?;
        sharp.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
        sharp.truncate(k);
        pairs = sharp;
    }
    let diag = engine.diag;
    Ok(finish(pairs, None, None, diag))
}

/// The `k` eigenvalues nearest `sigma`, plus the exact count below it.
pub fn shift_invert_eigs(
    p: &impl PencilView,
    sigma: f64,
    k: usize,
    opts: &EigOpts,
) -> Result<EigenSet> {
    let (km, _, _) = p.parts();
    if k == 0 || k >= km.n {
        return Err(Error::invalid(format!(
            "need 1 <= k < dof, got k = {k} with {} dofs",
            km.n
        )));
    }
    let mut engine = Engine::new(p);
    let (mut pairs, below) = engine.nearest(sigma, k, opts)?;
    pairs.sort_by(|a, b| {
        let da = (a.value - sigma).abs();
        let db = (b.value - sigma).abs();
        da.partial_cmp(&db).unwrap()
    });
    pairs.truncate(k);
    let diag = engine.diag;
    Ok(finish(pairs, Some(sigma), Some(below), diag))
}

/// Number of eigenvalues strictly below `sigma`, from factorization inertia.
/// Fails with `SingularShift` when `sigma` is numerically an eigenvalue.
pub fn inertia_below(p: &impl PencilView, sigma: f64) -> Result<usize> {
    Engine::new(p).factor(sigma).map(|n| n.inertia_neg())
}

/// Exact eigenvalue count in (lo, hi) by inertia difference (Sylvester's
/// law); requires M positive definite and non-eigenvalue endpoints.
pub fn count_in_interval(p: &impl PencilView, lo: f64, hi: f64) -> Result<usize> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty interval ({lo}, {hi})")));
    }
    let mut engine = Engine::new(p);
    let at = |engine: &mut Engine, x: f64| -> Result<usize> {
        engine.factor(x).map(|n| n.inertia_neg()).map_err(|e| match e {
            Error::SingularShift(msg) => Error::SingularShift(format!(
                "interval endpoint {x} is numerically an eigenvalue ({msg}); nudge the endpoint"
            )),
            other => other,
        })
    };
    let below_lo = at(&mut engine, lo)?;
    let below_hi = at(&mut engine, hi)?;
    Ok(below_hi.saturating_sub(below_lo))
}

const SLICE_LEAF: usize = 10;

/// Every eigenpair in (lo, hi), certified complete against inertia counts.
/// Splits the interval recursively until each leaf holds at most a handful
/// of eigenvalues, then extracts them by shift-invert at the leaf midpoint.
pub fn eigs_in_interval(p: &impl PencilView, lo: f64, hi: f64, opts: &EigOpts) -> Result<EigenSet> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty interval ({lo}, {hi})")));
    }
    let mut engine = Engine::new(p);
    let mut negs: HashMap<u64, usize> = HashMap::new();
    let width = hi - lo;

    fn neg_at(
        engine: &mut Engine,
        negs: &mut HashMap<u64, usize>,
        x: f64,
        jiggle: f64,
    ) -> Result<(f64, usize)> {
        if let Some(&c) = negs.get(&x.to_bits()) {
            return Ok((x, c));
        }
        let mut probe = x;
        let mut last_err = None;
        for attempt in 0..4 {
            match engine.factor(probe) {
                Ok(num) => {
                    let c = num.inertia_neg();
                    negs.insert(probe.to_bits(), c);
                    return Ok((probe, c));
                }
                Err(Error::SingularShift(msg)) => {
                    last_err = Some(msg);
                    probe = x + jiggle * ((attempt + 1) as f64);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::SingularShift(format!(
            "could not factor near {x} even after perturbation ({})",
            last_err.unwrap_or_default()
        )))
    }

    // Endpoints are caller-chosen: no jiggling, fail loudly instead of
    // silently changing the requested interval.
    let (_, c_lo) = neg_at(&mut engine, &mut negs, lo, 0.0)?;
    let (_, c_hi) = neg_at(&mut engine, &mut negs, hi, 0.0)?;
    let total = c_hi.saturating_sub(c_lo);
    let mut pairs: Vec<EigenPair> = Vec::new();
    if total == 0 {
        let diag = engine.diag;
        return Ok(finish(pairs, None, Some(c_lo), diag));
    }

    let mut stack = vec![(lo, hi, c_lo, c_hi)];
    while let Some((a, b, ca, cb)) = stack.pop() {
        let count = cb - ca;
        if count == 0 {
            continue;
        }
        if count <= SLICE_LEAF {
            let mid = 0.5 * (a + b);
            // A jiggled shift is fine here: the midpoint is internal.
            let (sigma, _) = neg_at(&mut engine, &mut negs, mid, 1e-3 * width)?;
            let (got, _) = engine.nearest(sigma, count, opts)?;
            let inside: Vec<EigenPair> = got
                .into_iter()
                .filter(|p| p.value > a && p.value < b)
                .collect();
            if inside.len() == count {
                pairs.extend(inside);
                continue;
            }
            if b - a <= 1e-9 * width.max(1.0) {
                return Err(Error::NoConvergence {
                    context: format!(
                        "slice ({a}, {b}) expected {count} eigenvalues, extracted {}",
                        inside.len()
                    ),
                    best_residual: f64::NAN,
                });
            }
            // Fall through to a split: the cluster straddles the midpoint
            // too tightly for a single extraction.
        }
        let mid = 0.5 * (a + b);
        let (mid, cm) = neg_at(&mut engine, &mut negs, mid, 1e-3 * width)?;
        if mid <= a || mid >= b {
            return Err(Error::RootSearch(format!(
                "slice ({a}, {b}) could not be split at a non-singular point"
            )));
        }
        stack.push((a, mid, ca, cm));
        stack.push((mid, b, cm, cb));
    }

    let diag = engine.diag;
    Ok(finish(pairs, None, Some(c_lo), diag))
}

/// Dense full eigendecomposition for small pencils (test oracle and tiny
/// complete-spectrum solves); M must be positive definite.
pub fn dense_full(p: &impl PencilView) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (km, mm, _) = p.parts();
    let n = km.n;
    if n > 400 {
        return Err(Error::invalid(format!(
            "dense solver capped at 400 dofs, got {n}"
        )));
    }
    let kd = km.to_dense();
    let md = mm.to_dense();
    let chol = nalgebra::Cholesky::new(md).ok_or_else(|| {
        Error::invalid("mass matrix is not positive definite (Cholesky failed)")
    })?;
    let l = chol.l();
    // B = L^{-1} K L^{-T}, symmetric by construction up to round-off.
    let b1 = l.solve_lower_triangular(&kd).unwrap();
    let b2 = l.solve_lower_triangular(&b1.transpose()).unwrap();
    let b = 0.5 * (&b2 + b2.transpose());
    let se = nalgebra::SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let lt = l.transpose();
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &i in &order {
        values.push(se.eigenvalues[i]);
        let y = se.eigenvectors.column(i).into_owned();
        let u = lt.solve_upper_triangular(&y).unwrap();
        let mut v: Vec<f64> = u.iter().copied().collect();
        let mut mv = vec![0.0; n];
        mm.matvec(&v, &mut mv);
        let nm = dot(&v, &mv).max(0.0).sqrt();
        if nm > 0.0 {
            v.iter_mut().for_each(|x| *x /= nm);
        }
        vectors.push(v);
    }
    Ok((values, vectors))
}
