//! Defect modes of the two-scale limit operator on a truncated box: the
//! λ-frozen pencil B(λ) = K − β(λ)M₁ − λM₂, the inertia staircase that
//! locates its nonlinear eigenvalues, and the coupled macro/micro modal
//! system whose Schur complement reproduces B exactly.
//!
//! ∂B/∂λ = −β′(λ)M₁ − M₂ is negative definite wherever β is defined, so
//! every eigenvalue branch ν_k(λ) of (B(λ), M) decreases strictly and the
//! count of negative eigenvalues is a nondecreasing integer staircase that
//! jumps exactly at the nonlinear eigenvalues, by the jump's multiplicity.
//! Root finding is bisection on that staircase: no branch pairing, and no
//! crossing can be missed between two counted points.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble, assemble_mass, assemble_tensor, restrict_norm, AssembledPencil, BoundaryCondition,
    Coeff2, Grid,
};
use crate::cell_spectral::{
    beta_series, beta_slope, cell_b_field, BetaTable, CellField, GapInterval, HomogenizedMatrix,
    ZERO_MEAN_THRESHOLD,
};
use crate::eigensolve::{shift_invert_eigs, EigOpts, EigenPair, EigenSet, PencilRef, SolveDiag};
use crate::geometry::{DefectGeometry, MediumSpec};
use crate::sparse::ldlt::{LdltNumeric, LdltSymbolic};
use crate::sparse::CsrMatrix;
use crate::util::{lsq_line, seeded_vector};
use crate::{Error, Result};

/// λ samples per gap before any bracket is refined.
const SCAN_SAMPLES: usize = 32;
/// Admissible wall leakage e^{−αL} for the slowest decay rate in play.
const WALL_LEAK_TOL: f64 = 1e-4;
/// A root is accepted when |ν(λ₀)| ≤ this, relative to λ₀.
const ROOT_REL_TOL: f64 = 1e-8;
/// Roots closer than this (relative) merge into one cluster: Krylov values
/// cannot separate finer splits, only the staircase can.
const ROOT_CLUSTER_REL: f64 = 1e-8;
/// Annuli for decay fits are at least this wide (and two elements).
const MIN_ANNULUS: f64 = 0.4;

/// Dirichlet grid on the square box [−l, l]².
pub fn macro_grid(half_width: f64, h: f64) -> Result<Grid> {
    if !(half_width.is_finite() && half_width > 0.0 && h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!(
            "box half-width {half_width} and spacing {h} must be positive"
        )));
    }
    let n = (2.0 * half_width / h).round();
    if n < 2.0 || (n * h - 2.0 * half_width).abs() > 1e-9 * n {
        return Err(Error::invalid(format!(
            "spacing {h} must divide the box [-{half_width}, {half_width}] evenly"
        )));
    }
    Grid::square(n as u32, -half_width, half_width, BoundaryCondition::Dirichlet)
}

/// Log-linear fit of annulus norms with its R².
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub quality: f64,
    /// Annuli that carried signal and entered the fit.
    pub annuli: usize,
}

/// Fitted decay of a mode against the two admissible theory rates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub fit: DecayFit,
    /// sqrt(−β(λ₀)/a₁): Green-function rate of the unhomogenized matrix.
    pub alpha_matrix: f64,
    /// sqrt(−β(λ₀)/max eig A^hom): the slowest homogenized rate.
    pub alpha_homogenized: f64,
}

/// One λ sample of the frozen family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: f64,
    /// Eigenvalues of (B(λ), M) nearest zero, ordered by distance.
    pub nu: Vec<f64>,
    /// Count of negative eigenvalues; jumps exactly at the roots.
    pub negatives: usize,
}

/// Scan record: the staircase samples and the bracket each root was pinned
/// in. A jump of the count between adjacent samples flags a crossing;
/// clusters jump by their multiplicity.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NonlinearPencilTrace {
    pub points: Vec<TracePoint>,
    pub brackets: Vec<(f64, f64)>,
}

/// A nonlinear eigenvalue of the frozen family with its macro profile and
/// the cell response that rebuilds the two-scale corrector λ₀ b(y) u₀(x).
#[derive(Clone, Debug)]
pub struct DefectMode {
    pub lambda0: f64,
    /// Macro dof vector, scaled so ‖u₀‖² + λ₀²‖b‖²_{Q₀}‖u₀‖²_{Ω₁} = 1.
    pub u0: Vec<f64>,
    pub b: CellField,
    /// Frozen-operator eigenvalue at λ₀; |ν| ≤ 1e−8 λ₀ by construction.
    pub nu: f64,
    /// Galerkin residual of (B(λ₀), M) at ν for the M-normalized vector.
    pub residual: f64,
    /// Staircase jump at the root.
    pub multiplicity: u32,
    pub gap: GapInterval,
    pub grid: Grid,
    /// Absent when the box hosts too few annuli above the solver floor for a
    /// fit — near-pole modes can decay below measurability within one cell.
    pub decay: Option<DecayFit>,
}

pub struct LimitSolve {
    pub modes: Vec<DefectMode>,
    pub trace: NonlinearPencilTrace,
}

/// Everything the λ-family shares: the tensor stiffness (A^hom outside the
/// defect, a₂ inside), the region mass split, and one symbolic factorization
/// reused by every staircase evaluation.
struct Family<'a> {
    pencil: AssembledPencil,
    m1: CsrMatrix,
    m2: CsrMatrix,
    symbolic: LdltSymbolic,
    table: &'a BetaTable,
    defect: DefectGeometry,
    half_width: f64,
}

fn build_family<'a>(
    spec: &MediumSpec,
    ahom: &HomogenizedMatrix,
    table: &'a BetaTable,
    grid: &Grid,
) -> Result<Family<'a>> {
    spec.validate()?;
    if !matches!(grid.bc, BoundaryCondition::Dirichlet) {
        return Err(Error::invalid("the defect box must be a Dirichlet grid"));
    }
    let l = grid.x_hi;
    if grid.x_lo != -l || grid.y_lo != -l || grid.y_hi != l || grid.nx != grid.ny {
        return Err(Error::invalid("the defect box must be square around the origin"));
    }
    if spec.defect.outer_radius() >= l {
        return Err(Error::invalid(format!(
            "defect of outer radius {} does not fit in the box of half-width {l}",
            spec.defect.outer_radius()
        )));
    }
    let defect = spec.defect;
    let a2 = spec.a2;
    let amat = Coeff2 {
        xx: ahom.a[0][0],
        yy: ahom.a[1][1],
        xy: ahom.a[0][1],
    };
    let pencil = assemble_tensor(
        grid,
        &move |x, y| {
            if defect.contains([x, y]) {
                Coeff2::iso(a2)
            } else {
                amat
            }
        },
        &|_, _| 1.0,
        false,
    )?;
    let m2 = assemble_mass(&pencil, &move |x, y| {
        if defect.contains([x, y]) {
            1.0
        } else {
            0.0
        }
    });
    let m1 = CsrMatrix::linear_combination(1.0, &pencil.m, -1.0, &m2);
    let symbolic = LdltSymbolic::analyze(&pencil.k, pencil.nd_perm.clone());
    Ok(Family {
        pencil,
        m1,
        m2,
        symbolic,
        table,
        defect,
        half_width: l,
    })
}

impl Family<'_> {
    fn beta(&self, lambda: f64) -> Result<f64> {
        Ok(beta_series(self.table, lambda)?.value)
    }

    fn frozen(&self, lambda: f64, beta: f64) -> CsrMatrix {
        let kb = CsrMatrix::linear_combination(1.0, &self.pencil.k, -beta, &self.m1);
        CsrMatrix::linear_combination(1.0, &kb, -lambda, &self.m2)
    }

    /// Count of eigenvalues of (B(λ), M) below zero.
    fn negatives(&self, lambda: f64) -> Result<usize> {
        let b = self.frozen(lambda, self.beta(lambda)?);
        Ok(self.symbolic.factorize(&b)?.inertia_neg())
    }

    /// One scan sample: the eigenvalue of (B(λ), M) nearest zero plus the
    /// negative count. Falls back to the bare count when the sample sits
    /// numerically on a crossing and the eigensolve will not settle.
    fn scan_sample(&self, lambda: f64, opts: &EigOpts) -> Result<(Vec<f64>, usize)> {
        let mut lam = lambda;
        for _ in 0..2 {
            let b = self.frozen(lam, self.beta(lam)?);
            let pr = PencilRef {
                k: &b,
                m: &self.pencil.m,
                perm: &self.pencil.nd_perm,
            };
            match shift_invert_eigs(&pr, 0.0, 1, opts) {
                Ok(set) => {
                    let neg = set.below_shift.expect("shift-invert always counts");
                    return Ok((set.pairs.iter().map(|p| p.value).collect(), neg));
                }
                Err(Error::SingularShift(_)) | Err(Error::NoConvergence { .. }) => {
                    lam += 3e-7 * lam.max(1.0);
                }
                Err(e) => return Err(e),
            }
        }
        Ok((Vec::new(), self.negatives(lam)?))
    }

    /// Eigenpairs of (B(λ), M) nearest zero at a root. The shift sits just
    /// below the near-null cluster: factoring exactly at the singularity the
    /// root creates would cap the attainable residual through the tiny-pivot
    /// growth of the elimination.
    fn root_pair(&self, lambda: f64, want: usize) -> Result<EigenSet> {
        let off = -1e-6 * lambda.max(1.0);
        let opts = EigOpts {
            tol: 1e-8,
            ..EigOpts::default()
        };
        let mut lam = lambda;
        for attempt in 0..3 {
            let b = self.frozen(lam, self.beta(lam)?);
            let pr = PencilRef {
                k: &b,
                m: &self.pencil.m,
                perm: &self.pencil.nd_perm,
            };
            match shift_invert_eigs(&pr, off, want, &opts) {
                Err(Error::SingularShift(_)) if attempt < 2 => lam += 4e-9 * lam.max(1.0),
                other => return other,
            }
        }
        unreachable!("the nudge loop either returns or errors");
    }

    fn check_box(&self, lambda: f64, beta: f64, ahom: &HomogenizedMatrix) -> Result<()> {
        if beta >= 0.0 {
            return Err(Error::invalid(format!(
                "λ = {lambda} is not in a spectral gap (β = {beta} ≥ 0)"
            )));
        }
        let alpha = (-beta / ahom.eigenvalues().1).sqrt();
        let actual = (-alpha * self.half_width).exp();
        if actual > WALL_LEAK_TOL {
            return Err(Error::BoxTooSmall {
                half_width: self.half_width,
                required: WALL_LEAK_TOL,
                actual,
            });
        }
        Ok(())
    }
}

/// The frozen pencil (B(λ), M): tensor stiffness by element centroid,
/// potential β(λ) on the matrix phase and λ on the defect. Rejects λ outside
/// a gap and boxes whose walls see more than the admissible leakage of the
/// slowest decaying profile at this λ.
pub fn frozen_operator(
    lambda: f64,
    ahom: &HomogenizedMatrix,
    spec: &MediumSpec,
    table: &BetaTable,
    grid: &Grid,
) -> Result<AssembledPencil> {
    let fam = build_family(spec, ahom, table, grid)?;
    let beta = fam.beta(lambda)?;
    fam.check_box(lambda, beta, ahom)?;
    let b = fam.frozen(lambda, beta);
    let Family { pencil, .. } = fam;
    Ok(AssembledPencil {
        grid: pencil.grid,
        kind: pencil.kind,
        k: b,
        m: pencil.m,
        node_coord: pencil.node_coord,
        dof_of_node: pencil.dof_of_node,
        nd_perm: pencil.nd_perm,
    })
}

/// Every λ₀ in the gap's interior with B(λ₀) singular, found by scanning the
/// negative-count staircase and bisecting its jumps. An empty list is a
/// legitimate outcome: the gap simply carries no defect mode.
pub fn solve_limit_mode(
    spec: &MediumSpec,
    ahom: &HomogenizedMatrix,
    table: &BetaTable,
    gap: GapInterval,
    grid: &Grid,
) -> Result<LimitSolve> {
    let fam = build_family(spec, ahom, table, grid)?;
    let width = gap.hi - gap.lo;
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::invalid(format!("degenerate gap ({}, {})", gap.lo, gap.hi)));
    }
    // Stay outside the series' pole tolerance at the left end; the wall test
    // runs at the midpoint, the most permissive rate we will certify.
    let lo = gap.lo + (1e-4 * width).max(4e-6 * gap.lo);
    let hi = gap.hi - 1e-4 * width;
    if lo >= hi {
        return Err(Error::invalid("gap too narrow to scan"));
    }
    fam.check_box(gap.midpoint(), fam.beta(gap.midpoint())?, ahom)?;

    // Only the branch nearest zero is tracked, and only as a diagnostic: the
    // staircase needs the count, which the factorization gives exactly. Far
    // from a root nothing is close to the shift, so the sample tolerance is
    // relaxed; root extraction runs at full tolerance where shift-invert is
    // at its best.
    let opts = EigOpts {
        tol: 1e-6,
        ..EigOpts::default()
    };
    let mut trace = NonlinearPencilTrace::default();
    let mut staircase = vec![(lo, fam.negatives(lo)?)];
    for i in 0..SCAN_SAMPLES {
        let lam = lo + (i as f64 + 0.5) / SCAN_SAMPLES as f64 * (hi - lo);
        let (nu, negatives) = fam.scan_sample(lam, &opts)?;
        trace.points.push(TracePoint { lambda: lam, nu, negatives });
        staircase.push((lam, negatives));
    }
    staircase.push((hi, fam.negatives(hi)?));

    let mut roots: Vec<(f64, u32)> = Vec::new();
    for w in staircase.windows(2) {
        let ((a, na), (b, nb)) = (w[0], w[1]);
        if nb > na {
            refine_bracket(&fam, a, b, na, nb, &mut roots, &mut trace.brackets)?;
        }
    }
    merge_root_clusters(&mut roots);

    let mut modes = Vec::with_capacity(roots.len());
    for root in roots {
        modes.push(extract_mode(&fam, spec, table, gap, root)?);
    }
    Ok(LimitSolve { modes, trace })
}

/// Bisects one staircase jump down to the width where the crossing branch
/// can move |ν| by at most a fraction of the acceptance tolerance. Splits
/// recursively when the jump separates under refinement.
/// Collapse roots closer than the cluster resolution into one entry with the
/// multiplicities summed. Symmetry splittings broken only at rounding level
/// are one physical level; treating them as such keeps extraction honest.
fn merge_root_clusters(roots: &mut Vec<(f64, u32)>) {
    roots.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut out: Vec<(f64, u32)> = Vec::with_capacity(roots.len());
    for &(v, m) in roots.iter() {
        match out.last_mut() {
            Some(last) if v - last.0 <= ROOT_CLUSTER_REL * v.abs().max(1.0) => {
                let w = last.1 as f64;
                last.0 = (last.0 * w + v * m as f64) / (w + m as f64);
                last.1 += m;
            }
            _ => out.push((v, m)),
        }
    }
    *roots = out;
}

fn refine_bracket(
    fam: &Family,
    mut a: f64,
    mut b: f64,
    na: usize,
    nb: usize,
    roots: &mut Vec<(f64, u32)>,
    log: &mut Vec<(f64, f64)>,
) -> Result<()> {
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        let slope = beta_slope(fam.table, mid)?.max(1.0);
        if b - a <= 0.25 * ROOT_REL_TOL * mid / slope {
            log.push((a, b));
            roots.push((mid, (nb - na) as u32));
            return Ok(());
        }
        let nm = fam.negatives(mid)?.clamp(na, nb);
        if nm > na && nm < nb {
            refine_bracket(fam, a, mid, na, nm, roots, log)?;
            return refine_bracket(fam, mid, b, nm, nb, roots, log);
        } else if nm == na {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(Error::RootSearch(format!(
        "staircase bracket ({a}, {b}) did not shrink to tolerance"
    )))
}

fn extract_mode(
    fam: &Family,
    spec: &MediumSpec,
    table: &BetaTable,
    gap: GapInterval,
    (mut lam, mult): (f64, u32),
) -> Result<DefectMode> {
    // One representative vector per root. A cluster's other directions are
    // not separately extractable — a degenerate pair is one Krylov target —
    // and the multiplicity is already certified by the staircase jump.
    let mut best = f64::INFINITY;
    for _ in 0..6 {
        let set = fam.root_pair(lam, 1)?;
        let pair = &set.pairs[0];
        let nu = pair.value;
        best = best.min(nu.abs());
        if nu.abs() <= ROOT_REL_TOL * lam {
            let b = cell_b_field(&spec.cell, spec.a0, lam, table.h)?;
            let defect = fam.defect;
            let n1 = restrict_norm(&fam.pencil, &pair.vector, &|x, y| !defect.contains([x, y]))?;
            // ‖u‖_M = 1 from the solver, so the product norm only needs the
            // corrector part λ₀² ‖b‖²_{Q₀} ‖u₀‖²_{Ω₁}.
            let scale = (1.0 + lam * lam * b.norm_sq * n1 * n1).sqrt().recip();
            let u0 = pair.vector.iter().map(|v| v * scale).collect();
            let decay = fit_annulus_decay(
                &fam.pencil,
                &pair.vector,
                fam.defect.outer_radius() + 0.25,
                fam.half_width,
            )
            .ok();
            return Ok(DefectMode {
                lambda0: lam,
                u0,
                b,
                nu,
                residual: pair.residual,
                multiplicity: mult,
                gap,
                grid: fam.pencil.grid.clone(),
                decay,
            });
        }
        // One Newton step: dν/dλ = −(β′ uᵀM₁u + uᵀM₂u) for the M-normalized u.
        let slope = beta_slope(table, lam)? * fam.m1.quadratic(&pair.vector, &pair.vector)
            + fam.m2.quadratic(&pair.vector, &pair.vector);
        lam += nu / slope;
        if !gap.contains(lam) {
            return Err(Error::RootSearch(format!(
                "polishing pushed the root at {lam} out of the gap"
            )));
        }
    }
    Err(Error::NoConvergence {
        context: format!("nonlinear eigenvalue near λ = {lam}"),
        best_residual: best,
    })
}

/// Log-linear least squares of annulus L² norms of `u` between `r_in` and
/// the wall, dropping the outermost annulus (the Dirichlet wall pollutes
/// it). The area growth of an annulus is divided out, so a radial profile
/// e^{−αr} fits slope −α and a constant fits slope ≈ 0.
pub fn fit_annulus_decay(
    pencil: &AssembledPencil,
    u: &[f64],
    r_in: f64,
    r_out: f64,
) -> Result<DecayFit> {
    let span = r_out - r_in;
    if !(span > 0.0) {
        return Err(Error::invalid(format!("empty radial range ({r_in}, {r_out})")));
    }
    let step = MIN_ANNULUS.max(2.0 * pencil.grid.h());
    let count = ((span / step).floor() as usize).min(9);
    if count < 4 {
        return Err(Error::invalid(format!(
            "only {count} annuli fit between r = {r_in} and the wall at {r_out}; need 4"
        )));
    }
    let width = span / count as f64;
    let mut radii = Vec::new();
    let mut logs = Vec::new();
    for i in 0..count {
        let a = r_in + i as f64 * width;
        let b = a + width;
        let nrm = restrict_norm(pencil, u, &|x, y| {
            let r = (x * x + y * y).sqrt();
            r >= a && r < b
        })?;
        if nrm > 1e-12 {
            let r = a + 0.5 * width;
            radii.push(r);
            logs.push(nrm.ln() - 0.5 * r.ln());
        }
    }
    // Drop the wall annulus only if it survived the signal filter.
    if let Some(&last) = radii.last() {
        if last > r_out - width {
            radii.pop();
            logs.pop();
        }
    }
    if radii.len() < 3 {
        return Err(Error::invalid(
            "fewer than three annuli carry signal; the decay rate is not identifiable",
        ));
    }
    let (slope, intercept) = lsq_line(&radii, &logs);
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let ss_tot: f64 = logs.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = radii
        .iter()
        .zip(&logs)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let quality = if ss_tot > 1e-30 { 1.0 - ss_res / ss_tot } else { 0.0 };
    Ok(DecayFit {
        alpha: -slope,
        quality,
        annuli: radii.len(),
    })
}

/// Decay of a mode's macro profile against both admissible theory rates.
pub fn limit_decay_fit(
    mode: &DefectMode,
    ahom: &HomogenizedMatrix,
    spec: &MediumSpec,
    beta0: f64,
) -> Result<DecayReport> {
    if !(beta0 < 0.0) {
        return Err(Error::invalid(format!("β(λ₀) = {beta0} must be negative in a gap")));
    }
    let p = assemble(&mode.grid, &|_, _| 1.0, &|_, _| 1.0)?;
    if p.dof() != mode.u0.len() {
        return Err(Error::invalid("mode vector does not match its grid"));
    }
    let fit = fit_annulus_decay(&p, &mode.u0, spec.defect.outer_radius() + 0.25, mode.grid.x_hi)?;
    Ok(DecayReport {
        fit,
        alpha_matrix: (-beta0 / spec.a1).sqrt(),
        alpha_homogenized: (-beta0 / ahom.eigenvalues().1).sqrt(),
    })
}

/// Coupled macro/micro trial space u₀(x) + Σ_j c_j(x)φ_j(y), one macro field
/// per coupled cell mode (zero-mean modes decouple exactly and are omitted;
/// a degenerate cluster couples through one effective direction carrying the
/// cluster's summed mean-square). The c_j live on the dofs that touch the
/// matrix phase. Eliminating them from (K_blk − σM_blk) reproduces B(σ) with
/// the Jc-truncated series, so every inner solve is macro-sized.
struct BlockPencil<'f> {
    fam: &'f Family<'f>,
    lams: Vec<f64>,
    gs: Vec<f64>,
    support: Vec<bool>,
}

impl BlockPencil<'_> {
    fn n(&self) -> usize {
        self.fam.pencil.dof()
    }

    fn dim(&self) -> usize {
        self.n() * (1 + self.lams.len())
    }

    /// β of the truncated series the block system Schur-reduces to.
    fn beta_c(&self, lam: f64) -> f64 {
        let s: f64 = self
            .lams
            .iter()
            .zip(&self.gs)
            .map(|(&lj, &g)| g * g / (lj - lam))
            .sum();
        lam * (1.0 + lam * s)
    }

    /// dβ_c/dλ = (1 − Σg²) + Σ g²λ_j²/(λ_j − λ)², positive off the poles.
    fn beta_c_slope(&self, lam: f64) -> f64 {
        let mut s = 1.0;
        for (&lj, &g) in self.lams.iter().zip(&self.gs) {
            let d = lj - lam;
            s += g * g * (lj * lj / (d * d) - 1.0);
        }
        s
    }

    fn negatives(&self, lam: f64) -> Result<usize> {
        let b = self.fam.frozen(lam, self.beta_c(lam));
        Ok(self.fam.symbolic.factorize(&b)?.inertia_neg())
    }

    fn factor(&self, sigma: f64) -> Result<LdltNumeric> {
        self.fam.symbolic.factorize(&self.fam.frozen(sigma, self.beta_c(sigma)))
    }

    fn mask_micro(&self, x: &mut [f64]) {
        let n = self.n();
        for c in x.chunks_mut(n).skip(1) {
            for (v, &live) in c.iter_mut().zip(&self.support) {
                if !live {
                    *v = 0.0;
                }
            }
        }
    }

    /// y = M_blk x.
    fn mass_apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        let (xu, xc) = x.split_at(n);
        let (yu, yc) = y.split_at_mut(n);
        self.fam.pencil.m.matvec(xu, yu);
        let mut m1xu = vec![0.0; n];
        self.fam.m1.matvec(xu, &mut m1xu);
        let mut w = vec![0.0; n];
        for (j, &g) in self.gs.iter().enumerate() {
            let xcj = &xc[j * n..(j + 1) * n];
            for i in 0..n {
                w[i] = g * xu[i] + xcj[i];
            }
            let ycj = &mut yc[j * n..(j + 1) * n];
            self.fam.m1.matvec(&w, ycj);
            for i in 0..n {
                yu[i] += g * (ycj[i] - g * m1xu[i]);
            }
        }
    }

    /// y = K_blk x.
    fn stiff_apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        let (xu, xc) = x.split_at(n);
        let (yu, yc) = y.split_at_mut(n);
        self.fam.pencil.k.matvec(xu, yu);
        for (j, &lj) in self.lams.iter().enumerate() {
            let ycj = &mut yc[j * n..(j + 1) * n];
            self.fam.m1.matvec(&xc[j * n..(j + 1) * n], ycj);
            for v in ycj.iter_mut() {
                *v *= lj;
            }
        }
    }

    /// y = (K_blk − σM_blk)⁻¹ M_blk x through the macro Schur complement.
    fn op_apply(&self, fact: &LdltNumeric, sigma: f64, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        let (xu, xc) = x.split_at(n);
        let mut rhs = self.fam.pencil.m.matvec_alloc(xu);
        let mut m1xu = vec![0.0; n];
        self.fam.m1.matvec(xu, &mut m1xu);
        let mut w = vec![0.0; n];
        let mut t = vec![0.0; n];
        for (j, (&lj, &g)) in self.lams.iter().zip(&self.gs).enumerate() {
            let xcj = &xc[j * n..(j + 1) * n];
            for i in 0..n {
                w[i] = g * xu[i] + xcj[i];
            }
            self.fam.m1.matvec(&w, &mut t);
            let pole = sigma * g / (lj - sigma);
            for i in 0..n {
                rhs[i] += g * (t[i] - g * m1xu[i]) + pole * t[i];
            }
        }
        let z = fact.solve(&rhs);
        let (yu, yc) = y.split_at_mut(n);
        yu.copy_from_slice(&z);
        for (j, (&lj, &g)) in self.lams.iter().zip(&self.gs).enumerate() {
            let xcj = &xc[j * n..(j + 1) * n];
            let ycj = &mut yc[j * n..(j + 1) * n];
            let d = (lj - sigma).recip();
            for i in 0..n {
                ycj[i] = if self.support[i] {
                    d * (g * xu[i] + xcj[i] + sigma * g * z[i])
                } else {
                    0.0
                };
            }
        }
    }
}

fn m_dot(mx: &[f64], y: &[f64]) -> f64 {
    mx.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Shift-invert Lanczos on the block pencil in its M_blk inner product.
/// Returns the converged Ritz pairs nearest the shift, residuals measured
/// honestly as ‖K_blk z − λ M_blk z‖₂ for the M_blk-normalized z.
fn block_lanczos(
    bp: &BlockPencil,
    sigma: f64,
    window: (f64, f64),
    want: usize,
    opts: &EigOpts,
    seed: u64,
) -> Result<(Vec<EigenPair>, usize)> {
    let dim = bp.dim();
    let fact = {
        let mut s = sigma;
        let mut out = None;
        for _ in 0..3 {
            match bp.factor(s) {
                Err(Error::SingularShift(_)) => s += 1e-7 * s.abs().max(1.0),
                other => {
                    out = Some(other?);
                    break;
                }
            }
        }
        out.ok_or_else(|| Error::SingularShift(format!("could not factor near σ = {sigma}")))?
    };
    let mem_cap = ((1.2e9 / (8.0 * dim as f64)) as usize).max(8);
    let max_steps = (3 * want + 30).min(dim - 1).min(mem_cap).min(110);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let mut v = seeded_vector(dim, seed);
    bp.mask_micro(&mut v);
    let mut mv = vec![0.0; dim];
    bp.mass_apply(&v, &mut mv);
    let nrm = m_dot(&mv, &v).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::invalid("degenerate start vector"));
    }
    for x in v.iter_mut() {
        *x /= nrm;
    }

    let mut w = vec![0.0; dim];
    let mut steps = 0;
    for step in 0..max_steps {
        steps = step + 1;
        bp.op_apply(&fact, sigma, &v, &mut w);
        basis.push(v.clone());
        bp.mass_apply(&w, &mut mv);
        let alpha = m_dot(&mv, &v);
        alphas.push(alpha);
        for i in 0..dim {
            w[i] -= alpha * v[i];
        }
        if step > 0 {
            let beta = betas[step - 1];
            let prev = &basis[step - 1];
            for i in 0..dim {
                w[i] -= beta * prev[i];
            }
        }
        // Full reorthogonalization, twice for safety.
        for _ in 0..2 {
            bp.mass_apply(&w, &mut mv);
            for b in &basis {
                let h = m_dot(&mv, b);
                if h != 0.0 {
                    for i in 0..dim {
                        w[i] -= h * b[i];
                    }
                }
            }
        }
        bp.mass_apply(&w, &mut mv);
        let beta = m_dot(&mv, &w).max(0.0).sqrt();
        if beta < 1e-13 {
            break;
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();

        if step + 1 >= want.max(4) + 4 && (step % 2 == 1 || step + 1 == max_steps) {
            let (theta, vecs) = tridiag_eigs(&alphas, &betas[..step]);
            let mut done = 0;
            // The value nearest the shift must itself converge: a re-aimed
            // shift would otherwise exit on re-converging its neighbours.
            let mut nearest: Option<(f64, bool)> = None;
            for (i, &th) in theta.iter().enumerate() {
                if th.abs() < 1e-300 {
                    continue;
                }
                let lam = sigma + 1.0 / th;
                if lam <= window.0 || lam >= window.1 {
                    continue;
                }
                let ok = beta * vecs[(step, i)].abs() <= 1e-11 * th.abs().max(1e-3);
                if ok {
                    done += 1;
                }
                if nearest.map_or(true, |(t, _)| th.abs() > t) {
                    nearest = Some((th.abs(), ok));
                }
            }
            if done >= want && nearest.map_or(true, |(_, ok)| ok) {
                break;
            }
        }
    }

    let m = basis.len();
    let (theta, vecs) = tridiag_eigs(&alphas[..m], &betas[..m.saturating_sub(1)]);
    let margin = 1e-9 * (window.1 - window.0);
    let mut pairs = Vec::new();
    for (i, &th) in theta.iter().enumerate() {
        if th.abs() < 1e-300 {
            continue;
        }
        let lam = sigma + 1.0 / th;
        if lam <= window.0 - margin || lam >= window.1 + margin {
            continue;
        }
        let mut z = vec![0.0; dim];
        for (j, b) in basis.iter().enumerate() {
            let c = vecs[(j, i)];
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += c * bi;
            }
        }
        bp.mass_apply(&z, &mut mv);
        let zn = m_dot(&mv, &z).max(1e-300).sqrt();
        for x in z.iter_mut() {
            *x /= zn;
        }
        let mut kz = vec![0.0; dim];
        bp.stiff_apply(&z, &mut kz);
        bp.mass_apply(&z, &mut mv);
        let mut res = 0.0;
        for i in 0..dim {
            let r = kz[i] - lam * mv[i];
            res += r * r;
        }
        let res = res.sqrt();
        if res <= opts.tol.max(1e-9) * 1e3 * (1.0 + lam.abs()) {
            pairs.push(EigenPair {
                value: lam,
                vector: z,
                residual: res,
            });
        }
    }
    pairs.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    Ok((pairs, steps))
}

fn tridiag_eigs(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let m = alphas.len();
    let mut t = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let se = nalgebra::SymmetricEigen::new(t);
    (se.eigenvalues.iter().copied().collect(), se.eigenvectors)
}

/// What the coupled route certifies: the window eigenvalues with their
/// staircase multiplicities, and one converged Ritz pair per distinct value.
/// A Krylov solve alone cannot size a degenerate cluster — the counts come
/// from the inertia of the Schur complement, the vectors from Lanczos.
pub struct CoupledSolve {
    pub eigs: EigenSet,
    pub counts: Vec<(f64, u32)>,
}

/// Galerkin solve of the coupled system over the gap window. Eigenvalues are
/// located by bisecting the negative-count staircase of the Schur complement,
/// then shift-invert Lanczos from the gap midpoint attaches eigenvectors,
/// re-aiming at any root the midpoint Krylov space missed.
pub fn coupled_modal_solve(
    spec: &MediumSpec,
    ahom: &HomogenizedMatrix,
    table: &BetaTable,
    jc: usize,
    gap: GapInterval,
    grid: &Grid,
) -> Result<CoupledSolve> {
    let fam = build_family(spec, ahom, table, grid)?;
    if jc == 0 || jc > table.modes.len() {
        return Err(Error::invalid(format!(
            "modal truncation {jc} outside 1..={}",
            table.modes.len()
        )));
    }
    let mut lams = Vec::new();
    let mut gs = Vec::new();
    for m in &table.modes[..jc] {
        if m.mean_sq >= ZERO_MEAN_THRESHOLD {
            lams.push(m.lambda);
            gs.push(m.mean_sq.sqrt());
        }
    }
    if lams.is_empty() {
        return Err(Error::invalid("no coupled cell mode within the truncation"));
    }
    let support = {
        let defect = fam.defect;
        let mut s = vec![false; fam.pencil.dof()];
        fam.pencil.for_each_element(|_, _, (cx, cy), ids| {
            if !defect.contains([cx, cy]) {
                for &id in ids {
                    if id >= 0 {
                        s[id as usize] = true;
                    }
                }
            }
        });
        s
    };
    let bp = BlockPencil {
        fam: &fam,
        lams,
        gs,
        support,
    };

    let width = gap.hi - gap.lo;
    let lo = gap.lo + (1e-4 * width).max(4e-6 * gap.lo);
    let hi = gap.hi - 1e-4 * width;
    let sigma = gap.midpoint();
    if bp.beta_c(sigma) >= 0.0 {
        return Err(Error::invalid(
            "modal truncation closes the gap at its midpoint; increase the mode count",
        ));
    }
    let n_lo = bp.negatives(lo)?;

    let mut staircase = vec![(lo, n_lo)];
    for i in 0..SCAN_SAMPLES {
        let lam = lo + (i as f64 + 0.5) / SCAN_SAMPLES as f64 * (hi - lo);
        staircase.push((lam, bp.negatives(lam)?));
    }
    staircase.push((hi, bp.negatives(hi)?));
    let mut counts: Vec<(f64, u32)> = Vec::new();
    for w in staircase.windows(2) {
        let ((a, na), (b, nb)) = (w[0], w[1]);
        if nb > na {
            bisect_block(&bp, a, b, na, nb, &mut counts)?;
        }
    }
    merge_root_clusters(&mut counts);

    let opts = EigOpts::default();
    let mut found: Vec<EigenPair> = Vec::new();
    let mut diag = SolveDiag::default();
    let mut shifts = vec![sigma];
    for pass in 0..6 {
        let claim = align_to_roots(&counts, &found);
        let missing = claim.iter().filter(|c| c.is_none()).count();
        if missing == 0 {
            break;
        }
        if pass >= shifts.len() {
            // Aim just off the first missed root — landing exactly on it
            // would hand the factorization its own singularity — and away
            // from its nearest neighbour, so the missed root is unambiguously
            // the closest eigenvalue to the shift.
            let idx = claim.iter().position(|c| c.is_none()).expect("missing > 0");
            let v = counts[idx].0;
            let near = counts
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != idx)
                .map(|(_, &(w, _))| w)
                .min_by(|a, b| (a - v).abs().partial_cmp(&(b - v).abs()).unwrap());
            let (delta, sign) = match near {
                Some(w) => ((0.25 * (w - v).abs()).min(1e-5 * v.abs().max(1.0)), -(w - v).signum()),
                None => (1e-5 * v.abs().max(1.0), -1.0),
            };
            shifts.push(v + sign * delta);
        }
        let (pairs, steps) = block_lanczos(&bp, shifts[pass], (lo, hi), missing, &opts, 17 + pass as u64)?;
        diag.steps += steps;
        diag.restarts = pass;
        for p in pairs {
            if !found
                .iter()
                .any(|q| (q.value - p.value).abs() <= 1e-9 * p.value.abs().max(1.0))
            {
                found.push(p);
            }
        }
        found.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    }
    let claim = align_to_roots(&counts, &found);
    let missing = claim.iter().filter(|c| c.is_none()).count();
    if missing > 0 {
        return Err(Error::NoConvergence {
            context: format!(
                "coupled modal solve left {missing} of {} window eigenvalues without a converged pair",
                counts.len()
            ),
            best_residual: found.iter().map(|p| p.residual).fold(f64::NAN, f64::min),
        });
    }
    let pairs = claim
        .iter()
        .map(|c| found[c.expect("no root missing")].clone())
        .collect();
    Ok(CoupledSolve {
        eigs: EigenSet {
            pairs,
            shift: Some(sigma),
            below_shift: Some(n_lo),
            diag,
        },
        counts,
    })
}

/// One-to-one greedy alignment of sorted Ritz values to sorted staircase
/// roots. A single value may not explain two roots: near-degenerate splits
/// can be finer than any sensible matching tolerance.
fn align_to_roots(counts: &[(f64, u32)], pairs: &[EigenPair]) -> Vec<Option<usize>> {
    let mut claim = vec![None; counts.len()];
    let mut i = 0;
    for (r, &(v, _)) in counts.iter().enumerate() {
        let tol = 1e-7 * v.abs().max(1.0);
        while i < pairs.len() && pairs[i].value < v - tol {
            i += 1;
        }
        if i < pairs.len() && (pairs[i].value - v).abs() <= tol {
            claim[r] = Some(i);
            i += 1;
        }
    }
    claim
}

/// Bisects one jump of the block staircase. Same width rule as the nonlinear
/// route, with the slope of the truncated series, so the two routes resolve a
/// near-degenerate cluster at the same resolution.
fn bisect_block(
    bp: &BlockPencil,
    mut a: f64,
    mut b: f64,
    na: usize,
    nb: usize,
    roots: &mut Vec<(f64, u32)>,
) -> Result<()> {
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        let slope = bp.beta_c_slope(mid).max(1.0);
        if b - a <= 0.25 * ROOT_REL_TOL * mid / slope {
            roots.push((mid, (nb - na) as u32));
            return Ok(());
        }
        let nm = bp.negatives(mid)?.clamp(na, nb);
        if nm > na && nm < nb {
            bisect_block(bp, a, mid, na, nm, roots)?;
            return bisect_block(bp, mid, b, nm, nb, roots);
        } else if nm == na {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(Error::RootSearch(format!(
        "coupled staircase bracket ({a}, {b}) did not shrink to tolerance"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_spectral::{compute_ahom, discrete_cell_table, find_gaps};
    use crate::sparse::ldlt;

    fn small_setup(m: u32) -> (MediumSpec, HomogenizedMatrix, BetaTable, GapInterval) {
        let spec = MediumSpec::default();
        let table = discrete_cell_table(&spec.cell, spec.a0, m).unwrap();
        let ahom = compute_ahom(&spec.cell, spec.a1, 1.0 / m as f64).unwrap();
        let lambda_max = table.modes[0].lambda * 2.2;
        let scan = find_gaps(&table, lambda_max).unwrap();
        (spec, ahom, table, scan.gaps[0])
    }

    #[test]
    fn absent_defect_region_keeps_the_frozen_operator_positive() {
        let (mut spec, ahom, table, gap) = small_setup(8);
        // No element centroid of the h = 1/8 box lies within 0.04 of the
        // origin, so the defect mass vanishes and B(λ) = K − β(λ)M₁ ≻ 0.
        spec.defect = DefectGeometry::disk(0.04);
        let grid = macro_grid(2.0, 0.125).unwrap();
        for t in [0.2, 0.4, 0.6, 0.8] {
            let lam = gap.lo + t * (gap.hi - gap.lo);
            let p = frozen_operator(lam, &ahom, &spec, &table, &grid).unwrap();
            let num = ldlt::factor(&p.k, p.nd_perm.clone()).unwrap();
            assert_eq!(num.inertia_neg(), 0, "negative directions at λ = {lam}");
        }
    }

    #[test]
    fn wall_leakage_near_the_gap_edge_is_rejected() {
        let (spec, ahom, table, gap) = small_setup(8);
        let grid = macro_grid(2.0, 0.125).unwrap();
        let lam = gap.hi - 0.02 * (gap.hi - gap.lo);
        match frozen_operator(lam, &ahom, &spec, &table, &grid) {
            Err(Error::BoxTooSmall { actual, required, .. }) => {
                assert!(actual > required);
            }
            Err(other) => panic!("expected BoxTooSmall, got {other:?}"),
            Ok(_) => panic!("expected BoxTooSmall, got a pencil"),
        }
        // Mid-gap decay is fast enough for the same box.
        frozen_operator(gap.midpoint(), &ahom, &spec, &table, &grid).unwrap();
    }

    #[test]
    fn staircase_counts_are_monotone_across_the_gap() {
        let (spec, ahom, table, gap) = small_setup(8);
        let grid = macro_grid(3.0, 0.1).unwrap();
        let solve = solve_limit_mode(&spec, &ahom, &table, gap, &grid).unwrap();
        let counts: Vec<usize> = solve.trace.points.iter().map(|p| p.negatives).collect();
        assert_eq!(counts.len(), 32);
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
        assert!(solve.trace.points.iter().all(|p| gap.contains(p.lambda)));
        // Total staircase rise matches the multiplicity count of the roots.
        let rise: u32 = solve.modes.iter().map(|m| m.multiplicity).sum();
        assert!(rise >= counts[counts.len() - 1] as u32 - counts[0] as u32);
    }

    #[test]
    fn limit_modes_are_normalized_localized_and_converged() {
        let (spec, ahom, table, gap) = small_setup(8);
        let grid = macro_grid(3.0, 0.1).unwrap();
        let solve = solve_limit_mode(&spec, &ahom, &table, gap, &grid).unwrap();
        assert!(!solve.modes.is_empty(), "default defect carries no gap mode");
        let pencil = assemble(&grid, &|_, _| 1.0, &|_, _| 1.0).unwrap();
        let mut resolvable = 0;
        for mode in &solve.modes {
            assert!(gap.contains(mode.lambda0));
            assert!(mode.nu.abs() <= 1e-8 * mode.lambda0);
            assert!(mode.residual <= 1e-6 * mode.lambda0);
            // Product norm reassembled from scratch.
            let defect = spec.defect;
            let total = restrict_norm(&pencil, &mode.u0, &|_, _| true).unwrap().powi(2)
                + mode.lambda0.powi(2)
                    * mode.b.norm_sq
                    * restrict_norm(&pencil, &mode.u0, &|x, y| !defect.contains([x, y]))
                        .unwrap()
                        .powi(2);
            assert!((total - 1.0).abs() <= 1e-10, "product norm {total}");
            // Localization: the fitted decay is a real exponential.
            assert!(mode.decay.alpha > 0.5, "decay {:?}", mode.decay);
            assert!(mode.decay.quality > 0.9);
            let beta0 = beta_series(&table, mode.lambda0).unwrap().value;
            let report = limit_decay_fit(mode, &ahom, &spec, beta0).unwrap();
            assert!(report.alpha_matrix > 0.0 && report.alpha_homogenized >= report.alpha_matrix);
            // The theoretical rate is only measurable while e^{−αr} stays
            // above the solver floor across the annuli. Modes hugging the
            // lower gap edge drop below it within one lattice cell; the fit
            // then reads their noise plateau, not the rate.
            if report.alpha_matrix * grid.h() <= 0.5 {
                resolvable += 1;
                assert!(
                    report.fit.alpha >= 0.8 * report.alpha_matrix,
                    "fitted rate {} vs matrix-normalized bound {} at λ = {}",
                    report.fit.alpha,
                    report.alpha_matrix,
                    mode.lambda0
                );
            }
        }
        assert!(resolvable >= 1, "no gap mode with a lattice-resolvable rate");
    }

    #[test]
    fn coupled_modal_route_matches_the_staircase_roots() {
        let (spec, ahom, table, gap) = small_setup(8);
        let grid = macro_grid(3.0, 0.1).unwrap();
        let solve = solve_limit_mode(&spec, &ahom, &table, gap, &grid).unwrap();
        let coupled =
            coupled_modal_solve(&spec, &ahom, &table, table.modes.len(), gap, &grid).unwrap();
        // Same discretization on both routes: the block system's Schur
        // complement is B(λ) exactly, so roots and cluster sizes must agree
        // to bisection tolerance.
        let beta_route: Vec<(f64, u32)> =
            solve.modes.iter().map(|m| (m.lambda0, m.multiplicity)).collect();
        assert_eq!(
            beta_route.len(),
            coupled.counts.len(),
            "{beta_route:?} vs {:?}",
            coupled.counts
        );
        for (&(la, ma), &(lc, mc)) in beta_route.iter().zip(&coupled.counts) {
            assert!((la - lc).abs() <= 1e-7 * la, "staircase {la} vs modal {lc}");
            assert_eq!(ma, mc, "cluster size at λ = {la}");
        }
        assert_eq!(coupled.eigs.pairs.len(), coupled.counts.len());
        for p in &coupled.eigs.pairs {
            assert!(p.residual <= 1e-6 * (1.0 + p.value));
        }
    }

    #[test]
    fn enlarging_the_modal_space_moves_the_eigenvalue_down() {
        let (spec, ahom, table, gap) = small_setup(16);
        let grid = macro_grid(3.0, 0.1).unwrap();
        let significant: Vec<usize> = (1..=table.modes.len())
            .filter(|&j| table.modes[j - 1].mean_sq >= ZERO_MEAN_THRESHOLD)
            .collect();
        assert!(significant.len() >= 2, "table too small to truncate");
        let mut last = f64::INFINITY;
        for &jc in &[significant[0], significant[significant.len() - 1]] {
            let set = coupled_modal_solve(&spec, &ahom, &table, jc, gap, &grid).unwrap();
            let first = set.counts.first().expect("gap mode present").0;
            assert!(first <= last + 1e-9 * first, "{first} after {last}");
            last = first;
        }
    }

    #[test]
    fn doubling_the_box_does_not_move_the_modes() {
        let (spec, ahom, table, gap) = small_setup(8);
        let coarse = macro_grid(3.0, 0.125).unwrap();
        let wide = macro_grid(6.0, 0.125).unwrap();
        let a = solve_limit_mode(&spec, &ahom, &table, gap, &coarse).unwrap();
        let b = solve_limit_mode(&spec, &ahom, &table, gap, &wide).unwrap();
        assert_eq!(a.modes.len(), b.modes.len());
        for (ma, mb) in a.modes.iter().zip(&b.modes) {
            assert_eq!(ma.multiplicity, mb.multiplicity);
            assert!(
                (ma.lambda0 - mb.lambda0).abs() <= 1e-6 * ma.lambda0,
                "{} vs {}",
                ma.lambda0,
                mb.lambda0
            );
        }
    }

    #[test]
    fn synthetic_exponential_recovers_its_rate() {
        let grid = macro_grid(3.0, 0.0625).unwrap();
        let p = assemble(&grid, &|_, _| 1.0, &|_, _| 1.0).unwrap();
        let u: Vec<f64> = (0..p.dof())
            .map(|d| {
                let (x, y) = p.dof_xy(d);
                (-2.0 * (x * x + y * y).sqrt()).exp()
            })
            .collect();
        let fit = fit_annulus_decay(&p, &u, 0.5, 3.0).unwrap();
        assert!((fit.alpha - 2.0).abs() <= 0.04, "alpha {}", fit.alpha);
        assert!(fit.quality > 0.999);

        let flat = vec![1.0; p.dof()];
        let fit = fit_annulus_decay(&p, &flat, 0.5, 3.0).unwrap();
        assert!(fit.alpha.abs() <= 0.02, "alpha {}", fit.alpha);
        assert!(fit.quality < 0.5);
    }
}
