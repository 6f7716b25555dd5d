//! The ε-scale eigenproblem on a truncated Dirichlet box: gap eigenvalues of
//! the oscillating-coefficient operator, their radial decay, and the strong
//! two-scale distance to a limit defect mode via the corrected macro field
//! u₀ + λ₀ b(x/ε) u₀ on the inclusion phase.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, AssembledPencil, BoundaryCondition, Grid};
use crate::cell_spectral::GapInterval;
use crate::eigensolve::{count_in_interval, shift_invert_eigs, EigOpts, EigenPair};
use crate::geometry::{classify_point, coefficient, MediumSpec, PhaseLabel};
use crate::limit_defect::{fit_annulus_decay, DecayFit, DefectMode};
use crate::util::lsq_line;
use crate::{Error, Result};

/// Refusal threshold for the fine grid.
pub const DOF_CAP: usize = 4_000_000;
/// Wall leakage considered quiet, matching the limit solver's box criterion.
const WALL_LEAK: f64 = 1e-4;

/// One gap eigenpair of the ε-scale operator.
#[derive(Clone, Debug)]
pub struct FineMode {
    pub eps: f64,
    pub lambda_eps: f64,
    /// M-normalized dof vector on `grid`.
    pub u_eps: Vec<f64>,
    /// ‖K u − λ M u‖₂, recomputed from the assembled matrices.
    pub residual: f64,
    /// Radial decay outside the defect; absent when the box cannot host
    /// enough annuli for a fit.
    pub decay: Option<DecayFit>,
    pub grid: Grid,
}

/// Gap eigenpairs of the ε-periodic medium on [−L, L]² with Dirichlet walls,
/// h = ε/m, box corners snapped to the ε-lattice. The inertia count over the
/// gap decides how many pairs to extract and certifies the result;
/// `max_modes` is a refusal threshold, not a target. An empty answer is a
/// legitimate outcome: this ε has no gap eigenvalue.
pub fn solve_eps_modes(
    spec: &MediumSpec,
    eps: f64,
    half_width: f64,
    m: u32,
    gap: GapInterval,
    max_modes: usize,
) -> Result<Vec<FineMode>> {
    spec.validate()?;
    let q = 1.0 / eps;
    if !(eps > 0.0 && eps <= 1.0 && (q - q.round()).abs() <= 1e-9 * q) {
        return Err(Error::invalid(format!("1/eps = {q} must be a positive integer")));
    }
    if m < 4 {
        return Err(Error::invalid(format!(
            "{m} elements per period cannot resolve the inclusion; need 4"
        )));
    }
    if !(gap.lo.is_finite() && gap.hi.is_finite() && 0.0 < gap.lo && gap.lo < gap.hi) {
        return Err(Error::invalid(format!("not a gap: ({}, {})", gap.lo, gap.hi)));
    }
    let cells = (half_width / eps).round().max(1.0);
    let half = cells * eps;
    let n = 2.0 * cells * m as f64;
    let dofs = (n - 1.0) * (n - 1.0);
    if dofs > DOF_CAP as f64 {
        return Err(Error::invalid(format!(
            "fine grid at eps = {eps}, m = {m}, L = {half} needs {dofs:.0} unknowns \
             (cap {DOF_CAP}); lower m or the box half-width"
        )));
    }
    let grid = Grid::square(n as u32, -half, half, BoundaryCondition::Dirichlet)?;
    let pencil = assemble(&grid, &|x, y| coefficient([x, y], eps, spec), &|_, _| 1.0)?;
    let count = count_in_interval(&pencil, gap.lo, gap.hi)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if count > max_modes {
        return Err(Error::invalid(format!(
            "the gap ({}, {}) holds {count} eigenvalues at eps = {eps}; caller allowed {max_modes}",
            gap.lo, gap.hi
        )));
    }
    // Values outside the gap can sit closer to the midpoint than the far gap
    // eigenvalues do, so covering the certified count may need extra pairs.
    let opts = EigOpts::default();
    let mut inside: Vec<EigenPair> = Vec::new();
    for extra in [0usize, 2, 6] {
        let set = shift_invert_eigs(&pencil, gap.midpoint(), count + extra, &opts)?;
        inside = set
            .pairs
            .into_iter()
            .filter(|p| gap.contains(p.value))
            .collect();
        if inside.len() >= count {
            break;
        }
    }
    if inside.len() != count {
        let best = inside.iter().map(|p| p.residual).fold(f64::INFINITY, f64::min);
        return Err(Error::NoConvergence {
            context: format!(
                "fine solve at eps = {eps}: {} converged gap values of {count} certified",
                inside.len()
            ),
            best_residual: best,
        });
    }
    let r_in = spec.defect.outer_radius() + 0.25;
    let mut out = Vec::with_capacity(count);
    for pair in inside {
        let r = pencil_residual(&pencil, &pair.vector, pair.value);
        if r > 100.0 * opts.tol * pair.value.abs().max(1.0) {
            return Err(Error::NoConvergence {
                context: format!("re-verified residual at λ = {}", pair.value),
                best_residual: r,
            });
        }
        let decay = fit_annulus_decay(&pencil, &pair.vector, r_in, half).ok();
        out.push(FineMode {
            eps,
            lambda_eps: pair.value,
            u_eps: pair.vector,
            residual: r,
            decay,
            grid: grid.clone(),
        });
    }
    Ok(out)
}

fn pencil_residual(p: &AssembledPencil, u: &[f64], lambda: f64) -> f64 {
    let ku = p.k.matvec_alloc(u);
    let mu = p.m.matvec_alloc(u);
    ku.iter()
        .zip(&mu)
        .map(|(a, b)| {
            let d = a - lambda * b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nodal view of a Dirichlet dof vector. Clamped wall nodes are zero and so
/// is every point outside the box — the extension by zero the limit space
/// uses.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Grid,
    nodal: Vec<f64>,
}

impl GridField {
    pub fn new(pencil: &AssembledPencil, dofs: &[f64]) -> Result<GridField> {
        if pencil.is_embedded() || dofs.len() != pencil.dof() {
            return Err(Error::invalid("field does not match its pencil"));
        }
        let (w, hgt) = pencil.grid.node_dims();
        let mut nodal = vec![0.0; w as usize * hgt as usize];
        for (d, &v) in dofs.iter().enumerate() {
            let (ix, iy) = pencil.node_coord[d];
            nodal[iy as usize * w as usize + ix as usize] = v;
        }
        Ok(GridField {
            grid: pencil.grid.clone(),
            nodal,
        })
    }

    /// Bilinear value at (x, y); zero outside the box.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        if x < g.x_lo || x > g.x_hi || y < g.y_lo || y > g.y_hi {
            return 0.0;
        }
        let sx = (x - g.x_lo) / (g.x_hi - g.x_lo) * g.nx as f64;
        let sy = (y - g.y_lo) / (g.y_hi - g.y_lo) * g.ny as f64;
        let ix = (sx.floor() as u32).min(g.nx - 1);
        let iy = (sy.floor() as u32).min(g.ny - 1);
        let (fx, fy) = (sx - ix as f64, sy - iy as f64);
        let w = g.nx as usize + 1;
        let at = |jx: u32, jy: u32| self.nodal[jy as usize * w + jx as usize];
        (1.0 - fy) * ((1.0 - fx) * at(ix, iy) + fx * at(ix + 1, iy))
            + fy * ((1.0 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1))
    }
}

/// The corrected macro field on the fine grid: (1 + λ₀ b(x/ε)) u₀ on
/// inclusion-phase nodes, u₀ everywhere else. Boundary-layer inclusions get
/// no corrector — the expansion only defines one on interior cells.
pub fn approximation_field(
    fine: &AssembledPencil,
    eps: f64,
    mode: &DefectMode,
    spec: &MediumSpec,
) -> Result<Vec<f64>> {
    let macro_pencil = assemble(&mode.grid, &|_, _| 1.0, &|_, _| 1.0)?;
    if mode.u0.len() != macro_pencil.dof() {
        return Err(Error::invalid("limit mode vector does not match its grid"));
    }
    let u0 = GridField::new(&macro_pencil, &mode.u0)?;
    let mut out = vec![0.0; fine.dof()];
    for (d, slot) in out.iter_mut().enumerate() {
        let (x, y) = fine.dof_xy(d);
        let mac = u0.eval(x, y);
        *slot = match classify_point([x, y], eps, spec) {
            PhaseLabel::Inclusion => mac * (1.0 + mode.lambda0 * mode.b.eval(x / eps, y / eps)),
            _ => mac,
        };
    }
    Ok(out)
}

/// ‖u_ε − u^appr‖_M on the fine grid. Both fields are M-normalized first and
/// the sign is chosen to maximize the M inner product, so the answer ignores
/// global sign flips and rescalings of either input.
pub fn two_scale_error(fm: &FineMode, mode: &DefectMode, spec: &MediumSpec) -> Result<f64> {
    spec.validate()?;
    let pencil = assemble(&fm.grid, &|_, _| 1.0, &|_, _| 1.0)?;
    if fm.u_eps.len() != pencil.dof() {
        return Err(Error::invalid("fine mode vector does not match its grid"));
    }
    let appr = approximation_field(&pencil, fm.eps, mode, spec)?;
    let ma = pencil.m.matvec_alloc(&appr);
    let na = dot(&appr, &ma).sqrt();
    if !(na > 0.0) {
        return Err(Error::invalid("approximation field vanishes on the fine box"));
    }
    let mu = pencil.m.matvec_alloc(&fm.u_eps);
    let nu = dot(&fm.u_eps, &mu).sqrt();
    if !(nu > 0.0) {
        return Err(Error::invalid("fine mode vector vanishes"));
    }
    let scale = if dot(&fm.u_eps, &ma) < 0.0 { -1.0 } else { 1.0 } / na;
    let diff: Vec<f64> = fm
        .u_eps
        .iter()
        .zip(&appr)
        .map(|(u, a)| u / nu - scale * a)
        .collect();
    let md = pencil.m.matvec_alloc(&diff);
    Ok(dot(&diff, &md).sqrt())
}

/// One ε of a convergence sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub eps: f64,
    pub lambda_eps: f64,
    pub err_lambda: f64,
    pub two_scale_err: f64,
    pub alpha_fit: f64,
    pub half_width: f64,
    pub cells_per_period: u32,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SweepParams {
    pub half_width: f64,
    pub cells_per_period: u32,
    /// Refusal threshold passed through to each fine solve.
    pub max_modes: usize,
    /// Re-solve the coarsest ε on a doubled box and record how far the
    /// tracked eigenvalue moves: the wall-truncation monitor.
    pub check_walls: bool,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            half_width: 4.0,
            cells_per_period: 4,
            max_modes: 24,
            check_walls: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<ConvergenceRecord>,
    /// Gap eigenvalues inside the matching radius of λ₀, per ε; equals the
    /// limit multiplicity once the cluster separates from its neighbors.
    pub matched_counts: Vec<usize>,
    /// Fitted log-log order of |λ_ε − λ₀|; needs two positive-error points.
    pub order_lambda: Option<f64>,
    pub order_two_scale: Option<f64>,
    /// Relative shift of the tracked eigenvalue when the coarsest box is
    /// doubled; None when the monitor is off or the larger box was refused.
    pub wall_shift: Option<f64>,
    /// False when some ε produced no gap eigenvalue and truncated the sweep.
    pub complete: bool,
}

/// Runs `solve_eps_modes` per ε (descending list), tracks the eigenvalue
/// cluster nearest `mode.lambda0`, and fits observed convergence orders for
/// the eigenvalue and the two-scale error.
pub fn eps_sweep(
    spec: &MediumSpec,
    eps_list: &[f64],
    mode: &DefectMode,
    params: &SweepParams,
) -> Result<SweepReport> {
    if eps_list.is_empty() {
        return Err(Error::invalid("empty eps list"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps list must be strictly descending"));
    }
    let mut report = SweepReport {
        records: Vec::new(),
        matched_counts: Vec::new(),
        order_lambda: None,
        order_two_scale: None,
        wall_shift: None,
        complete: true,
    };
    for (i, &eps) in eps_list.iter().enumerate() {
        let t0 = Instant::now();
        let modes = solve_eps_modes(
            spec,
            eps,
            params.half_width,
            params.cells_per_period,
            mode.gap,
            params.max_modes,
        )?;
        if modes.is_empty() {
            report.complete = false;
            break;
        }
        let (best, matched) = match_cluster(&modes, mode);
        let fm = &modes[best];
        let alpha_fit = fm
            .decay
            .ok_or_else(|| Error::invalid("box too small for decay annuli; enlarge half_width"))?
            .alpha;
        let two = two_scale_error(fm, mode, spec)?;
        report.records.push(ConvergenceRecord {
            eps,
            lambda_eps: fm.lambda_eps,
            err_lambda: (fm.lambda_eps - mode.lambda0).abs(),
            two_scale_err: two,
            alpha_fit,
            half_width: params.half_width,
            cells_per_period: params.cells_per_period,
            seconds: t0.elapsed().as_secs_f64(),
        });
        report.matched_counts.push(matched);
        if i == 0 && params.check_walls {
            report.wall_shift = doubled_box_shift(spec, eps, params, fm.lambda_eps, mode.gap);
        }
    }
    let ln_eps: Vec<f64> = report.records.iter().map(|r| r.eps.ln()).collect();
    let errs: Vec<f64> = report.records.iter().map(|r| r.err_lambda).collect();
    report.order_lambda = fitted_order(&ln_eps, &errs);
    let errs: Vec<f64> = report.records.iter().map(|r| r.two_scale_err).collect();
    report.order_two_scale = fitted_order(&ln_eps, &errs);
    Ok(report)
}

/// Nearest fine value to λ₀ plus the size of its matching cluster: values
/// closer than the midpoint between the m-th and (m+1)-th distances, m the
/// limit multiplicity. A separated cluster counts exactly m.
fn match_cluster(modes: &[FineMode], mode: &DefectMode) -> (usize, usize) {
    let mut ds: Vec<(f64, usize)> = modes
        .iter()
        .enumerate()
        .map(|(i, f)| ((f.lambda_eps - mode.lambda0).abs(), i))
        .collect();
    ds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = (mode.multiplicity as usize).min(ds.len());
    let radius = if ds.len() > m {
        0.5 * (ds[m - 1].0 + ds[m].0)
    } else {
        f64::INFINITY
    };
    let matched = ds.iter().take_while(|(d, _)| *d <= radius).count();
    (ds[0].1, matched)
}

/// Tracked-eigenvalue shift when the box doubles, relative to the value.
/// None when the larger box is refused or finds nothing.
fn doubled_box_shift(
    spec: &MediumSpec,
    eps: f64,
    params: &SweepParams,
    lambda: f64,
    gap: GapInterval,
) -> Option<f64> {
    let modes = solve_eps_modes(
        spec,
        eps,
        2.0 * params.half_width,
        params.cells_per_period,
        gap,
        4 * params.max_modes,
    )
    .ok()?;
    let near = modes
        .iter()
        .map(|f| (f.lambda_eps - lambda).abs())
        .fold(f64::INFINITY, f64::min);
    near.is_finite().then(|| near / lambda.abs().max(1.0))
}

/// Log-log slope of err against ε; None without two positive samples.
fn fitted_order(ln_eps: &[f64], errs: &[f64]) -> Option<f64> {
    if errs.len() < 2 || errs.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Some(lsq_line(ln_eps, &le).0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FineDecayReport {
    pub fit: DecayFit,
    /// sqrt(−β(λ₀)/a₁): the admissible-exponent supremum for gap modes.
    pub alpha_bound: f64,
}

/// The stored annulus fit of a fine mode next to the rate bound its decay
/// must stay under. Reports, asserts nothing.
pub fn fine_decay_fit(fm: &FineMode, beta_at_lambda0: f64, a1: f64) -> Result<FineDecayReport> {
    if !(beta_at_lambda0 < 0.0) {
        return Err(Error::invalid(format!(
            "a gap mode needs β(λ₀) < 0, got {beta_at_lambda0}"
        )));
    }
    if !(a1 > 0.0) {
        return Err(Error::invalid("matrix coefficient must be positive"));
    }
    let fit = fm
        .decay
        .ok_or_else(|| Error::invalid("mode carries no decay fit: box too small for annuli"))?;
    Ok(FineDecayReport {
        fit,
        alpha_bound: (-beta_at_lambda0 / a1).sqrt(),
    })
}

/// Which limit mode a sweep should track: one decaying fast enough that the
/// box walls stay quiet (α L ≥ ln(1/leak)) yet slow enough that the coarsest
/// fine grid resolves the rate (α h ≤ 1/2). Among the qualifying modes the
/// slowest decayer wins — it carries the most signal across the fit annuli,
/// while fast ones fall under the solver floor mid-box. None when nothing is
/// measurable at this resolution.
pub fn pick_tracked_mode(
    modes: &[DefectMode],
    betas: &[f64],
    a1: f64,
    half_width: f64,
    h_coarsest: f64,
) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &beta) in betas.iter().enumerate().take(modes.len()) {
        if !(beta < 0.0) {
            continue;
        }
        let alpha = (-beta / a1).sqrt();
        if alpha * half_width < -WALL_LEAK.ln() || alpha * h_coarsest > 0.5 {
            continue;
        }
        if best.map_or(true, |(a, _)| alpha < a) {
            best = Some((alpha, i));
        }
    }
    best.map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_spectral::{
        beta_series, compute_ahom, discrete_cell_table, find_gaps, BetaTable, GapKind,
        HomogenizedMatrix,
    };
    use crate::geometry::DefectGeometry;
    use crate::limit_defect::{macro_grid, solve_limit_mode, LimitSolve};

    fn matched_setup() -> (MediumSpec, BetaTable, HomogenizedMatrix, GapInterval) {
        let spec = MediumSpec::default();
        let table = discrete_cell_table(&spec.cell, spec.a0, 4).unwrap();
        let ahom = compute_ahom(&spec.cell, spec.a1, 0.25).unwrap();
        let gap = find_gaps(&table, 2.2 * table.modes[0].lambda).unwrap().gaps[0];
        (spec, table, ahom, gap)
    }

    fn limit_reference(
        spec: &MediumSpec,
        table: &BetaTable,
        ahom: &HomogenizedMatrix,
        gap: GapInterval,
    ) -> LimitSolve {
        let grid = macro_grid(4.0, 0.125).unwrap();
        solve_limit_mode(spec, ahom, table, gap, &grid).unwrap()
    }

    #[test]
    fn uniform_medium_matches_the_tensor_eigenvalue_table() {
        // a₀ε² = a₁ = a₂ makes the coefficient a₁ everywhere, so the discrete
        // eigenvalues are exactly the tensor sums of the 1-D linear-element
        // values g(p) = (6/h²)(1−cos pπ/n)/(2+cos pπ/n).
        let eps = 0.25;
        let mut spec = MediumSpec::default();
        spec.a0 = spec.a1 / (eps * eps);
        spec.a2 = spec.a1;
        let n = 32u32; // L = 1, m = 4
        let h = 2.0 / n as f64;
        let g = |p: u32| {
            let c = (p as f64 * std::f64::consts::PI / n as f64).cos();
            6.0 / (h * h) * (1.0 - c) / (2.0 + c)
        };
        let mut oracle: Vec<f64> = (1..n)
            .flat_map(|p| (1..n).map(move |q| g(p) + g(q)))
            .filter(|&v| 10.0 < v && v < 30.0)
            .collect();
        oracle.sort_by(f64::total_cmp);

        let window = GapInterval {
            lo: 10.0,
            hi: 30.0,
            left_pole: 10.0,
            kind: GapKind::PoleToZero,
        };
        let modes = solve_eps_modes(&spec, eps, 1.0, 4, window, 8).unwrap();
        assert_eq!(modes.len(), oracle.len());
        for (fm, want) in modes.iter().zip(&oracle) {
            assert!(
                (fm.lambda_eps - want).abs() <= 1e-8 * want,
                "λ = {} vs oracle {want}",
                fm.lambda_eps
            );
            assert!(fm.residual <= 1e-7 * (1.0 + fm.lambda_eps));
            assert!(fm.decay.is_none(), "no annuli fit between the defect and this wall");
        }
    }

    #[test]
    fn default_medium_gap_count_matches_the_limit_multiplicity() {
        let (spec, table, ahom, gap) = matched_setup();
        let limit = limit_reference(&spec, &table, &ahom, gap);
        let mult: u32 = limit.modes.iter().map(|m| m.multiplicity).sum();

        let fine = solve_eps_modes(&spec, 0.125, 4.0, 4, gap, 24).unwrap();
        assert!(!fine.is_empty(), "no gap eigenvalue at eps = 1/8");
        for fm in &fine {
            assert!(gap.contains(fm.lambda_eps));
            assert!(fm.residual <= 1e-7 * (1.0 + fm.lambda_eps));
        }
        assert_eq!(fine.len() as u32, mult);
    }

    #[test]
    fn removing_the_defect_empties_the_gap() {
        let (mut spec, _, _, gap) = matched_setup();
        spec.defect = DefectGeometry::disk(1e-6);
        let fine = solve_eps_modes(&spec, 0.125, 2.0, 4, gap, 8).unwrap();
        assert!(fine.is_empty(), "found {} spurious gap values", fine.len());
    }

    #[test]
    fn two_scale_error_is_zero_on_itself_and_blind_to_sign_and_scale() {
        let (spec, table, ahom, gap) = matched_setup();
        let limit = limit_reference(&spec, &table, &ahom, gap);
        let mode = &limit.modes[limit.modes.len() / 2];
        let fine = solve_eps_modes(&spec, 0.25, 4.0, 4, gap, 24).unwrap();
        let fm = fine
            .iter()
            .min_by(|a, b| {
                (a.lambda_eps - mode.lambda0)
                    .abs()
                    .total_cmp(&(b.lambda_eps - mode.lambda0).abs())
            })
            .unwrap();

        let err = two_scale_error(fm, mode, &spec).unwrap();
        assert!(err.is_finite() && err > 0.0 && err < 1.5, "err = {err}");

        let mut flipped = fm.clone();
        for v in &mut flipped.u_eps {
            *v = -*v;
        }
        assert_eq!(two_scale_error(&flipped, mode, &spec).unwrap(), err);

        let mut scaled = fm.clone();
        for v in &mut scaled.u_eps {
            *v *= 7.0;
        }
        let err_scaled = two_scale_error(&scaled, mode, &spec).unwrap();
        assert!((err_scaled - err).abs() <= 1e-12 * err);

        // The field compared against itself: distance identically zero.
        let pencil = assemble(&fm.grid, &|_, _| 1.0, &|_, _| 1.0).unwrap();
        let appr = approximation_field(&pencil, fm.eps, mode, &spec).unwrap();
        let mut synth = fm.clone();
        synth.u_eps = appr;
        assert!(two_scale_error(&synth, mode, &spec).unwrap() <= 1e-12);

        let beta0 = beta_series(&table, mode.lambda0).unwrap().value;
        let dec = fine_decay_fit(fm, beta0, spec.a1).unwrap();
        assert_eq!(dec.fit.alpha, fm.decay.unwrap().alpha);
        assert!(dec.alpha_bound > 0.0);
    }

    #[test]
    fn sweep_shrinks_both_errors_and_keeps_the_cluster_size() {
        let (spec, table, ahom, gap) = matched_setup();
        let limit = limit_reference(&spec, &table, &ahom, gap);
        let betas: Vec<f64> = limit
            .modes
            .iter()
            .map(|m| beta_series(&table, m.lambda0).unwrap().value)
            .collect();
        let params = SweepParams::default();
        let h_coarsest = 0.25 / params.cells_per_period as f64;
        let pick = pick_tracked_mode(&limit.modes, &betas, spec.a1, params.half_width, h_coarsest)
            .expect("no trackable mode in the gap");
        let mode = &limit.modes[pick];

        let report = eps_sweep(&spec, &[0.25, 0.125], mode, &params).unwrap();
        assert!(report.complete);
        assert_eq!(report.records.len(), 2);
        let r = &report.records;
        assert!(r[1].err_lambda <= r[0].err_lambda, "{} vs {}", r[1].err_lambda, r[0].err_lambda);
        assert!(
            r[1].two_scale_err < r[0].two_scale_err,
            "{} vs {}",
            r[1].two_scale_err,
            r[0].two_scale_err
        );
        for (rec, &count) in r.iter().zip(&report.matched_counts) {
            assert!(rec.eps > 0.0 && rec.lambda_eps.is_finite() && rec.seconds >= 0.0);
            assert!(rec.err_lambda >= 0.0 && rec.two_scale_err >= 0.0);
            assert_eq!(count, mode.multiplicity as usize);
        }
        assert!(report.order_lambda.is_some() && report.order_two_scale.is_some());

        // Wall monitor: doubling the coarsest box leaves the tracked value
        // within the leakage budget.
        let shift = report.wall_shift.expect("wall monitor did not run");
        assert!(shift <= WALL_LEAK, "wall shift {shift}");

        // Decay rates: stable across the two resolutions and at the theory
        // bound's scale at the finer one.
        let spread = (r[0].alpha_fit - r[1].alpha_fit).abs()
            / (0.5 * (r[0].alpha_fit + r[1].alpha_fit));
        assert!(spread <= 0.15, "alpha spread {spread}");
        let bound = (-betas[pick] / spec.a1).sqrt();
        assert!(
            r[1].alpha_fit >= 0.8 * bound,
            "fitted {} vs bound {bound}",
            r[1].alpha_fit
        );
    }
}
