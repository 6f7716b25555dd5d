//! Spectral data of the stiff-inclusion cell problem: the Dirichlet spectrum
//! on the inclusion, the dispersion function β(λ) it induces, the band gaps
//! where β is negative, and the homogenized stiffness of the perforated
//! matrix phase.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_masked, assemble_tensor, AssembledPencil, BoundaryCondition, Coeff2, Grid, SGN_X,
    SGN_Y,
};
use crate::eigensolve::{count_in_interval, dense_full, eigs_in_interval, EigOpts};
use crate::geometry::CellGeometry;
use crate::sparse::{ldlt, CsrMatrix};
use crate::{Error, Result};

/// Default number of cell modes kept in a truncated table.
pub const DEFAULT_MODES: usize = 40;
/// β may not be evaluated closer to a coupled pole than this, relative to the pole.
pub const POLE_REL_TOL: f64 = 1e-6;
/// Squared means below this are treated as exactly zero: the mode couples to
/// nothing and contributes a degenerate point band instead of a pole.
pub const ZERO_MEAN_THRESHOLD: f64 = 1e-10;

/// Relative width used to merge numerically split degenerate eigenvalues.
const CLUSTER_REL_TOL: f64 = 1e-7;
/// Largest pencil routed to the dense eigensolver.
const DENSE_DOF_CAP: usize = 400;

/// One cell eigenvalue after clustering, with the squared mean of its
/// eigenspace. Degenerate values carry the summed mean-square of the cluster,
/// which is what the β series needs and is invariant under basis rotation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CellMode {
    pub lambda: f64,
    pub mean_sq: f64,
    pub multiplicity: u32,
}

/// The spectral data entering β(λ) = λ(1 + λ Σ_j ⟨φ_j⟩²/(λ_j − λ)).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaTable {
    /// Clustered modes, `lambda` strictly increasing.
    pub modes: Vec<CellMode>,
    /// Modes counted with multiplicity.
    pub j_modes: usize,
    pub a0: f64,
    /// Cell grid spacing the table was computed on.
    pub h: f64,
    /// Inclusion area; bounds the total mean-square mass of the spectrum.
    pub q0_area: f64,
    /// Dofs of the discrete Dirichlet problem behind the table.
    pub dof_count: usize,
    /// True when every discrete mode is present. A complete table has no
    /// truncation tail and its β is exact for the discretization, which is
    /// what an ε-sweep at matched micro resolution converges to.
    pub complete: bool,
}

impl BetaTable {
    pub fn mass_sum(&self) -> f64 {
        self.modes.iter().map(|m| m.mean_sq).sum()
    }

    /// Upper bound for the mean-square mass missing from a truncated table.
    pub fn tail_mass(&self) -> f64 {
        if self.complete {
            0.0
        } else {
            (self.q0_area - self.mass_sum()).max(0.0)
        }
    }

    pub fn lambda_last(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.lambda)
    }

    /// Poles of β: modes whose eigenspace has a nonzero mean.
    pub fn significant_poles(&self) -> impl Iterator<Item = &CellMode> {
        self.modes
            .iter()
            .filter(|m| m.mean_sq >= ZERO_MEAN_THRESHOLD)
    }
}

/// β value with a bound on the truncation error of the mode series.
#[derive(Clone, Copy, Debug)]
pub struct BetaEval {
    pub value: f64,
    /// Zero for complete tables; otherwise λ²·(missing mass)/(λ_J − λ).
    pub tail_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapKind {
    /// Opens at a coupled pole and closes where β crosses zero.
    PoleToZero,
    /// Kept for completeness; β ≥ 0 below the first pole, so never emitted.
    BelowFirstBand,
}

/// A maximal interval with β < 0 away from poles.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapInterval {
    pub lo: f64,
    pub hi: f64,
    /// The pole the gap opens at (equals `lo` for `PoleToZero`).
    pub left_pole: f64,
    pub kind: GapKind,
}

impl GapInterval {
    pub fn contains(&self, lambda: f64) -> bool {
        self.lo < lambda && lambda < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Gaps plus the zero-mean eigenvalues that sit inside them: those stay in
/// the spectrum as isolated points even though β is negative around them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapScan {
    pub gaps: Vec<GapInterval>,
    pub degenerate_points: Vec<f64>,
}

fn grid_n(h: f64) -> Result<u32> {
    if !(h.is_finite() && h > 0.0 && h < 1.0) {
        return Err(Error::invalid(format!("cell spacing must be in (0,1), got {h}")));
    }
    let n = (1.0 / h).round();
    if n < 2.0 || (n * h - 1.0).abs() > 1e-9 * n {
        return Err(Error::invalid(format!(
            "cell spacing must divide the unit cell evenly, got h = {h}"
        )));
    }
    Ok(n as u32)
}

fn disk_radius(cell: &CellGeometry) -> f64 {
    (cell.inclusion_area() / std::f64::consts::PI).sqrt()
}

/// Pencil of −a₀Δ with Dirichlet conditions on the inclusion interior. A node
/// carries a dof iff all four incident element centroids are inside the
/// inclusion; everything else is clamped. This matches the centroid sampling
/// of the coefficient field, so at micro resolution m it is exactly the cell
/// problem a fine-scale grid with m elements per cell degenerates to.
fn q0_pencil(cell: &CellGeometry, a0: f64, n: u32) -> Result<AssembledPencil> {
    cell.validate()?;
    if !(a0.is_finite() && a0 > 0.0) {
        return Err(Error::invalid(format!("inclusion coefficient must be positive, got {a0}")));
    }
    let grid = Grid::unit_cell(n, BoundaryCondition::Dirichlet)?;
    let h = grid.h();
    let inc = *cell;
    let keep = move |x: f64, y: f64| {
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                if !inc.contains_local(x + sx * h, y + sy * h) {
                    return false;
                }
            }
        }
        true
    };
    let p = assemble_masked(&grid, &|_, _| a0, &|_, _| 1.0, &keep)?;
    if p.dof() == 0 {
        return Err(Error::invalid(format!(
            "inclusion traps no interior nodes at {n} elements per cell"
        )));
    }
    Ok(p)
}

/// ∫φ for a dof vector: row sums of the consistent mass against the constant
/// one on the whole cell, i.e. h²/4 per incident element.
fn mean_weights(p: &AssembledPencil) -> Vec<f64> {
    let h = p.grid.h();
    let w = 0.25 * h * h;
    let mut g = vec![0.0; p.dof()];
    p.for_each_element(|_, _, _, ids| {
        for &d in ids {
            if d >= 0 {
                g[d as usize] += w;
            }
        }
    });
    g
}

fn signed_mean(g: &[f64], u: &[f64]) -> f64 {
    // Sign convention: first component that is not numerical noise is positive.
    let scale = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let flip = match u.iter().find(|v| v.abs() > 1e-12 * scale) {
        Some(v) if *v < 0.0 => -1.0,
        _ => 1.0,
    };
    flip * g.iter().zip(u).map(|(gi, ui)| gi * ui).sum::<f64>()
}

struct RawMode {
    lambda: f64,
    mean: f64,
}

/// The lowest `want` eigenpairs (all of them when `want` is `None`), dense
/// for small pencils, spectrum slicing otherwise. `hi_seed` is an a-priori
/// guess for the upper edge enclosing `want` eigenvalues.
fn cell_modes(
    p: &AssembledPencil,
    want: Option<usize>,
    hi_seed: f64,
    opts: &EigOpts,
) -> Result<Vec<RawMode>> {
    let g = mean_weights(p);
    let dofs = p.dof();
    let want = want.unwrap_or(dofs).min(dofs);
    let mut raw = Vec::new();
    if dofs <= DENSE_DOF_CAP {
        let (vals, vecs) = dense_full(p)?;
        for (v, u) in vals.iter().zip(&vecs) {
            raw.push(RawMode {
                lambda: *v,
                mean: signed_mean(&g, u),
            });
        }
    } else {
        // Place an upper edge that holds at least `want` eigenvalues but not
        // wastefully many: grow by doubling, then bisect the overshoot down.
        // Counts cost two factorizations each and keep the slicing honest.
        let mut lo_edge = 0.0;
        let mut hi = hi_seed.max(1e-6);
        let mut count = count_with_nudge(p, &mut hi)?;
        while count < want {
            lo_edge = hi;
            hi *= 2.0;
            count = count_with_nudge(p, &mut hi)?;
        }
        let cap = (3 * want + 10).min(dofs);
        for _ in 0..40 {
            if count <= cap {
                break;
            }
            let mut mid = 0.5 * (lo_edge + hi);
            let c = count_with_nudge(p, &mut mid)?;
            if c >= want {
                hi = mid;
                count = c;
            } else {
                lo_edge = mid;
            }
        }
        let set = eigs_in_interval(p, 0.0, hi, opts)?;
        for pair in &set.pairs {
            raw.push(RawMode {
                lambda: pair.value,
                mean: signed_mean(&g, &pair.vector),
            });
        }
    }
    raw.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    if raw.len() < want {
        return Err(Error::NoConvergence {
            context: format!("cell spectrum: found {} of {want} modes", raw.len()),
            best_residual: f64::NAN,
        });
    }
    Ok(raw)
}

fn count_with_nudge(p: &AssembledPencil, hi: &mut f64) -> Result<usize> {
    for _ in 0..5 {
        match count_in_interval(p, 0.0, *hi) {
            Ok(c) => return Ok(c),
            Err(Error::SingularShift(_)) => *hi *= 1.0 + 1e-4,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularShift(format!(
        "could not place a spectrum count boundary near {hi}"
    )))
}

fn cluster(raw: &[RawMode]) -> Vec<CellMode> {
    let mut out: Vec<CellMode> = Vec::new();
    for r in raw {
        if let Some(last) = out.last_mut() {
            if r.lambda - last.lambda <= CLUSTER_REL_TOL * r.lambda.max(1.0) {
                let k = last.multiplicity as f64;
                last.lambda = (last.lambda * k + r.lambda) / (k + 1.0);
                last.mean_sq += r.mean * r.mean;
                last.multiplicity += 1;
                continue;
            }
        }
        out.push(CellMode {
            lambda: r.lambda,
            mean_sq: r.mean * r.mean,
            multiplicity: 1,
        });
    }
    out
}

fn build_table(cell: &CellGeometry, a0: f64, n: u32, want: Option<usize>) -> Result<BetaTable> {
    let p = q0_pencil(cell, a0, n)?;
    let dofs = p.dof();
    // Weyl count for the Dirichlet inclusion: N(λ) ≈ |Q₀| λ / (4π a₀).
    let weyl = 4.0 * std::f64::consts::PI * a0 / cell.inclusion_area();
    let hi_seed = weyl * (want.unwrap_or(dofs).min(dofs) as f64 + 2.0) * 1.3;
    let raw = cell_modes(&p, want, hi_seed, &EigOpts::default())?;
    let clusters = cluster(&raw);
    let target = want.unwrap_or(dofs).min(dofs);
    // Truncate on a cluster boundary so degenerate values are never split.
    let mut modes = Vec::new();
    let mut taken = 0usize;
    for c in clusters {
        if taken >= target {
            break;
        }
        taken += c.multiplicity as usize;
        modes.push(c);
    }
    Ok(BetaTable {
        modes,
        j_modes: taken,
        a0,
        h: 1.0 / n as f64,
        q0_area: cell.inclusion_area(),
        dof_count: dofs,
        complete: taken == dofs,
    })
}

/// The lowest `j` Dirichlet eigenpairs of −a₀Δ on the inclusion, with mode
/// means, clustered into a β table. Requires the grid to resolve the
/// inclusion with at least 16 elements across its diameter.
pub fn dirichlet_cell_eigs(cell: &CellGeometry, a0: f64, h: f64, j: usize) -> Result<BetaTable> {
    if j == 0 {
        return Err(Error::invalid("need at least one cell mode"));
    }
    let n = grid_n(h)?;
    let across = 2.0 * disk_radius(cell) * n as f64;
    if across < 16.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "inclusion under-resolved: {across:.1} elements across the diameter, need 16"
        )));
    }
    build_table(cell, a0, n, Some(j))
}

/// The complete spectrum of the cell problem at micro resolution `m` (m×m
/// elements per cell). No resolution floor: this is reference data for grids
/// that sample the inclusion exactly this coarsely, not an approximation of
/// the continuum cell problem.
pub fn discrete_cell_table(cell: &CellGeometry, a0: f64, m: u32) -> Result<BetaTable> {
    if m < 2 {
        return Err(Error::invalid("need at least 2 elements per cell"));
    }
    build_table(cell, a0, m, None)
}

/// β(λ) from the mode series, with a truncation-error bound.
pub fn beta_series(table: &BetaTable, lambda: f64) -> Result<BetaEval> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("β is evaluated for λ ≥ 0, got {lambda}")));
    }
    if table.modes.is_empty() {
        return Err(Error::invalid("empty β table"));
    }
    if !table.complete && lambda >= table.lambda_last() {
        return Err(Error::invalid(format!(
            "λ = {lambda} is beyond the truncation-valid window (last mode {})",
            table.lambda_last()
        )));
    }
    let mut s = 0.0;
    for m in &table.modes {
        if m.mean_sq < ZERO_MEAN_THRESHOLD {
            continue;
        }
        if (lambda - m.lambda).abs() <= POLE_REL_TOL * m.lambda {
            return Err(Error::invalid(format!(
                "λ = {lambda} is within the pole tolerance of the cell eigenvalue {}",
                m.lambda
            )));
        }
        s += m.mean_sq / (m.lambda - lambda);
    }
    let value = lambda * (1.0 + lambda * s);
    let tail_bound = if table.complete {
        0.0
    } else {
        lambda * lambda * table.tail_mass() / (table.lambda_last() - lambda)
    };
    Ok(BetaEval { value, tail_bound })
}

/// Nodal response of the inclusion problem (−a₀Δ − λ) b = 1 on the full node
/// lattice of the cell grid, zero on clamped nodes. Carries the integrals the
/// two-scale construction needs, so callers never touch the dof packing.
#[derive(Clone, Debug)]
pub struct CellField {
    /// Elements per cell side; the lattice is (n+1) × (n+1), row-major in y.
    pub n: u32,
    pub values: Vec<f64>,
    /// ∫_{Q₀} b
    pub mean: f64,
    /// ∫_{Q₀} b²
    pub norm_sq: f64,
}

impl CellField {
    /// Bilinear value at cell-local coordinates, wrapped into [0,1)².
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.n as f64;
        let sx = (x.rem_euclid(1.0)) * n;
        let sy = (y.rem_euclid(1.0)) * n;
        let ix = (sx.floor() as u32).min(self.n - 1);
        let iy = (sy.floor() as u32).min(self.n - 1);
        let fx = sx - ix as f64;
        let fy = sy - iy as f64;
        let w = self.n as usize + 1;
        let at = |jx: u32, jy: u32| self.values[jy as usize * w + jx as usize];
        (1.0 - fy) * ((1.0 - fx) * at(ix, iy) + fx * at(ix + 1, iy))
            + fy * ((1.0 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1))
    }
}

/// Solves (−a₀Δ − λ) b = 1 on the clamped inclusion interior.
pub fn cell_b_field(cell: &CellGeometry, a0: f64, lambda: f64, h: f64) -> Result<CellField> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("β is evaluated for λ ≥ 0, got {lambda}")));
    }
    let n = grid_n(h)?;
    let p = q0_pencil(cell, a0, n)?;
    let g = mean_weights(&p);
    let shifted = CsrMatrix::linear_combination(1.0, &p.k, -lambda, &p.m);
    let num = ldlt::factor(&shifted, p.nd_perm.clone()).map_err(|e| match e {
        Error::SingularShift(_) => Error::SingularShift(format!(
            "λ = {lambda} sits on a cell eigenvalue; move it or refine the grid"
        )),
        other => other,
    })?;
    let b = num.solve(&g);
    let mean: f64 = g.iter().zip(&b).map(|(gi, bi)| gi * bi).sum();
    let norm_sq = p.m.quadratic(&b, &b);
    let w = n as usize + 1;
    let mut values = vec![0.0; w * w];
    for (t, &(ix, iy)) in p.node_coord.iter().enumerate() {
        values[iy as usize * w + ix as usize] = b[t];
    }
    Ok(CellField {
        n,
        values,
        mean,
        norm_sq,
    })
}

/// β(λ) by solving the cell problem (−a₀Δ − λ) b = 1 directly and returning
/// λ(1 + λ⟨b⟩). Independent of the mode series; the two must agree within the
/// series' tail bound.
pub fn beta_direct(cell: &CellGeometry, a0: f64, lambda: f64, h: f64) -> Result<f64> {
    let field = cell_b_field(cell, a0, lambda, h)?;
    Ok(lambda * (1.0 + lambda * field.mean))
}

/// dβ/dλ of the mode series, for bounding how fast the frozen-operator
/// eigenvalues move. Strictly positive wherever β is defined.
pub fn beta_slope(table: &BetaTable, lambda: f64) -> Result<f64> {
    beta_series(table, lambda)?;
    let mut s = 0.0;
    for m in &table.modes {
        if m.mean_sq < ZERO_MEAN_THRESHOLD {
            continue;
        }
        let d = m.lambda - lambda;
        s += m.mean_sq * lambda * (2.0 * m.lambda - lambda) / (d * d);
    }
    Ok(1.0 + s)
}

fn bisect_zero(table: &BetaTable, mut lo: f64, mut hi: f64) -> Result<f64> {
    // β(lo) < 0 ≤ β(hi); shrink to relative width 1e−10.
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if beta_series(table, mid)?.value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scan (0, lambda_max] for the intervals where β < 0. Each gap opens at a
/// coupled pole and closes at the bisected zero of β. Zero-mean eigenvalues
/// lying inside a gap are reported separately as degenerate point bands.
pub fn find_gaps(table: &BetaTable, lambda_max: f64) -> Result<GapScan> {
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(Error::invalid(format!("scan window must be positive, got {lambda_max}")));
    }
    if !table.complete && lambda_max >= table.lambda_last() {
        return Err(Error::invalid(format!(
            "scan window {lambda_max} exceeds the truncation-valid region (last mode {})",
            table.lambda_last()
        )));
    }
    let poles: Vec<CellMode> = table.significant_poles().copied().collect();
    let mut gaps = Vec::new();
    for (i, pm) in poles.iter().enumerate() {
        let pole = pm.lambda;
        if pole >= lambda_max {
            break;
        }
        let lo = pole * (1.0 + 2.0 * POLE_REL_TOL);
        let hi_cap = match poles.get(i + 1) {
            Some(q) => (q.lambda * (1.0 - 2.0 * POLE_REL_TOL)).min(lambda_max),
            None => lambda_max,
        };
        if lo >= hi_cap {
            return Err(Error::RootSearch(format!(
                "no room to bracket the gap above the pole at λ = {pole}"
            )));
        }
        if beta_series(table, lo)?.value >= 0.0 {
            return Err(Error::RootSearch(format!(
                "β is not negative just above the pole at λ = {pole}; \
                 the gap is narrower than the pole tolerance"
            )));
        }
        if beta_series(table, hi_cap)?.value < 0.0 {
            if hi_cap >= lambda_max {
                // The trailing gap runs past the scan window; it is not
                // resolved, so it is not reported.
                break;
            }
            return Err(Error::RootSearch(format!(
                "β stays negative across ({pole}, {hi_cap}); band between poles unresolved"
            )));
        }
        let z = bisect_zero(table, lo, hi_cap)?;
        gaps.push(GapInterval {
            lo: pole,
            hi: z,
            left_pole: pole,
            kind: GapKind::PoleToZero,
        });
    }
    let mut degenerate_points = Vec::new();
    for m in &table.modes {
        if m.mean_sq >= ZERO_MEAN_THRESHOLD || m.lambda > lambda_max {
            continue;
        }
        if let Ok(eval) = beta_series(table, m.lambda) {
            if eval.value < 0.0 {
                degenerate_points.push(m.lambda);
            }
        }
    }
    Ok(GapScan {
        gaps,
        degenerate_points,
    })
}

/// The homogenized stiffness of the matrix phase with corrector fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    pub a: [[f64; 2]; 2],
    /// Periodic correctors for ξ = e₁, e₂, on the active dofs of the
    /// perforated cell pencil, mean removed.
    pub correctors: [Vec<f64>; 2],
    pub h: f64,
    /// Area carried by the live (matrix-phase) elements at this resolution.
    pub q1_area: f64,
}

impl HomogenizedMatrix {
    /// Eigenvalues of the 2×2 matrix, ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let t = 0.5 * (self.a[0][0] + self.a[1][1]);
        let d = (0.25 * (self.a[0][0] - self.a[1][1]).powi(2) + self.a[0][1].powi(2)).sqrt();
        (t - d, t + d)
    }
}

/// Zero the row and column of `dof`, keeping its diagonal, to pin the
/// constant nullspace of a consistent singular system.
fn pin_dof(k: &mut CsrMatrix, dof: usize) {
    let mut diag = 0.0;
    for i in 0..k.n {
        for idx in k.indptr[i]..k.indptr[i + 1] {
            let j = k.indices[idx] as usize;
            if i == dof && j == dof {
                diag = k.values[idx];
            }
            if i == dof || j == dof {
                k.values[idx] = 0.0;
            }
        }
    }
    debug_assert!(diag > 0.0, "pinned dof has no positive diagonal");
    for idx in k.indptr[dof]..k.indptr[dof + 1] {
        if k.indices[idx] as usize == dof {
            k.values[idx] = diag;
        }
    }
}

/// Homogenized matrix of the perforated cell: assemble with coefficient a₁
/// outside the inclusion and zero inside, solve the two periodic corrector
/// problems K w = −(a₁ ξ load), and evaluate the quadratic form
/// A_ij = ∫ a₁(ξ_i + ∇w^i)·(ξ_j + ∇w^j) over the live elements.
pub fn compute_ahom(cell: &CellGeometry, a1: f64, h: f64) -> Result<HomogenizedMatrix> {
    cell.validate()?;
    if !(a1.is_finite() && a1 > 0.0) {
        return Err(Error::invalid(format!("matrix coefficient must be positive, got {a1}")));
    }
    let n = grid_n(h)?;
    let grid = Grid::unit_cell(n, BoundaryCondition::Periodic)?;
    let hh = grid.h();
    let inc = *cell;
    let coeff = move |x: f64, y: f64| {
        if inc.contains_local(x, y) {
            Coeff2::iso(0.0)
        } else {
            Coeff2::iso(a1)
        }
    };
    let p = assemble_tensor(&grid, &coeff, &|_, _| 0.0, true)?;
    let dofs = p.dof();
    let mut load = [vec![0.0; dofs], vec![0.0; dofs]];
    let mut live = 0u64;
    p.for_each_element(|_, _, (cx, cy), ids| {
        if inc.contains_local(cx, cy) {
            return;
        }
        live += 1;
        for (l, &d) in ids.iter().enumerate() {
            if d >= 0 {
                load[0][d as usize] += a1 * 0.5 * hh * SGN_X[l];
                load[1][d as usize] += a1 * 0.5 * hh * SGN_Y[l];
            }
        }
    });
    let mut k = p.k.clone();
    pin_dof(&mut k, 0);
    let num = ldlt::factor(&k, p.nd_perm.clone()).map_err(|e| match e {
        Error::SingularShift(_) => Error::SingularShift(
            "corrector system is singular beyond the constant nullspace; \
             the matrix phase disconnects at this resolution"
                .into(),
        ),
        other => other,
    })?;
    let solve_one = |l: &[f64]| -> Vec<f64> {
        let mut rhs: Vec<f64> = l.iter().map(|v| -v).collect();
        rhs[0] = 0.0;
        let mut w = num.solve(&rhs);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        for v in &mut w {
            *v -= mean;
        }
        w
    };
    let w = [solve_one(&load[0]), solve_one(&load[1])];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let q1_area = live as f64 * hh * hh;
    let cross = 0.5 * (dot(&load[0], &w[1]) + dot(&load[1], &w[0]));
    let a = [
        [a1 * q1_area + dot(&load[0], &w[0]), cross],
        [cross, a1 * q1_area + dot(&load[1], &w[1])],
    ];
    Ok(HomogenizedMatrix {
        a,
        correctors: w,
        h: hh,
        q1_area,
    })
}
