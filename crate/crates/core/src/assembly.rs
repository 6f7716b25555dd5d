//! Bilinear-quadrilateral finite elements on uniform structured grids.
//!
//! Builds stiffness/mass pencils for divergence-form operators with
//! piecewise-smooth (possibly tensor-valued) coefficients sampled at element
//! centroids, under Dirichlet, periodic, or Bloch-phase boundary conditions.
//! Bloch problems are complex Hermitian; they are stored through the real
//! 2N embedding (dof `2t` = Re u_t, `2t+1` = Im u_t), which keeps every
//! downstream solve in real symmetric arithmetic.

use crate::error::{Error, Result};
use crate::sparse::{nd_order, nd_order_torus, CsrMatrix};

/// Boundary condition of a rectangular grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryCondition {
    /// Homogeneous Dirichlet: boundary nodes eliminated.
    Dirichlet,
    /// Opposite edges identified.
    Periodic,
    /// Opposite edges identified up to a phase `e^{i theta_d}` per crossing.
    QuasiPeriodic { theta: [f64; 2] },
}

impl BoundaryCondition {
    pub fn wraps(&self) -> bool {
        !matches!(self, BoundaryCondition::Dirichlet)
    }
}

/// Uniform grid of square elements over an axis-aligned box.
#[derive(Clone, Debug)]
pub struct Grid {
    pub nx: u32,
    pub ny: u32,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub bc: BoundaryCondition,
}

impl Grid {
    pub fn new(
        nx: u32,
        ny: u32,
        x_lo: f64,
        x_hi: f64,
        y_lo: f64,
        y_hi: f64,
        bc: BoundaryCondition,
    ) -> Result<Grid> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid needs at least one element per axis"));
        }
        if !(x_lo < x_hi && y_lo < y_hi) || ![x_lo, x_hi, y_lo, y_hi].iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid(format!(
                "degenerate box [{x_lo}, {x_hi}] x [{y_lo}, {y_hi}]"
            )));
        }
        let hx = (x_hi - x_lo) / nx as f64;
        let hy = (y_hi - y_lo) / ny as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(Error::invalid(format!(
                "elements must be square: hx = {hx}, hy = {hy}"
            )));
        }
        if let BoundaryCondition::QuasiPeriodic { theta } = bc {
            for t in theta {
                if !t.is_finite() || !(0.0..2.0 * std::f64::consts::PI).contains(&t) {
                    return Err(Error::invalid(format!("phase {t} outside [0, 2pi)")));
                }
            }
        }
        Ok(Grid {
            nx,
            ny,
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            bc,
        })
    }

    /// Square grid on `[lo, hi]^2`.
    pub fn square(n: u32, lo: f64, hi: f64, bc: BoundaryCondition) -> Result<Grid> {
        Grid::new(n, n, lo, hi, lo, hi, bc)
    }

    /// `n x n` grid on the unit cell `[0, 1]^2`.
    pub fn unit_cell(n: u32, bc: BoundaryCondition) -> Result<Grid> {
        Grid::square(n, 0.0, 1.0, bc)
    }

    pub fn h(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.nx as f64
    }

    /// Unique node lattice dimensions: wrapped axes drop the duplicate edge.
    pub fn node_dims(&self) -> (u32, u32) {
        if self.bc.wraps() {
            (self.nx, self.ny)
        } else {
            (self.nx + 1, self.ny + 1)
        }
    }

    pub fn node_xy(&self, ix: u32, iy: u32) -> (f64, f64) {
        let h = self.h();
        (
            self.x_lo + h * ix as f64,
            self.y_lo + h * iy as f64,
        )
    }

    pub fn element_centroid(&self, ex: u32, ey: u32) -> (f64, f64) {
        let h = self.h();
        (
            self.x_lo + h * (ex as f64 + 0.5),
            self.y_lo + h * (ey as f64 + 0.5),
        )
    }

    /// Whether the lattice node is a genuine unknown under the grid's bc
    /// (before any caller-supplied mask).
    fn bc_active(&self, ix: u32, iy: u32) -> bool {
        match self.bc {
            BoundaryCondition::Dirichlet => {
                ix >= 1 && ix <= self.nx - 1 && iy >= 1 && iy <= self.ny - 1
            }
            _ => true,
        }
    }
}

/// Symmetric 2x2 coefficient tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeff2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Coeff2 {
    pub fn iso(c: f64) -> Coeff2 {
        Coeff2 {
            xx: c,
            yy: c,
            xy: 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        self.xx == 0.0 && self.yy == 0.0 && self.xy == 0.0
    }

    fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.yy > 0.0 && self.xy * self.xy < self.xx * self.yy
    }

    fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }
}

/// Storage convention of an assembled pencil.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PencilKind {
    /// Real symmetric; one dof per active node.
    Real,
    /// Complex Hermitian in the real 2N embedding; dofs `2t`/`2t+1` hold the
    /// real/imaginary parts of node `t`, and an entry `a + ib` occupies the
    /// block `[[a, -b], [b, a]]`.
    EmbeddedHermitian,
}

/// Stiffness/mass pair over the active dofs of a grid, plus the node
/// bookkeeping needed to evaluate, restrict, and reorder vectors.
pub struct AssembledPencil {
    pub grid: Grid,
    pub kind: PencilKind,
    pub k: CsrMatrix,
    pub m: CsrMatrix,
    /// Lattice coordinates of packed active node `t`.
    pub node_coord: Vec<(u32, u32)>,
    /// Row-major unique-lattice node -> packed active id, or -1.
    pub dof_of_node: Vec<i64>,
    /// Fill-reducing elimination order for `k - sigma m` factorizations.
    pub nd_perm: Vec<u32>,
}

impl AssembledPencil {
    pub fn dof(&self) -> usize {
        self.k.n
    }

    pub fn node_count(&self) -> usize {
        self.node_coord.len()
    }

    pub fn is_embedded(&self) -> bool {
        self.kind == PencilKind::EmbeddedHermitian
    }

    pub fn node_xy(&self, t: usize) -> (f64, f64) {
        let (ix, iy) = self.node_coord[t];
        self.grid.node_xy(ix, iy)
    }

    pub fn dof_xy(&self, d: usize) -> (f64, f64) {
        match self.kind {
            PencilKind::Real => self.node_xy(d),
            PencilKind::EmbeddedHermitian => self.node_xy(d / 2),
        }
    }

    /// Visits every element as `(ex, ey, centroid, packed node ids)` with -1
    /// for eliminated corners (their nodal values are identically zero).
    /// Corner order: (ex,ey), (ex+1,ey), (ex+1,ey+1), (ex,ey+1).
    pub fn for_each_element(&self, mut f: impl FnMut(u32, u32, (f64, f64), &[i64; 4])) {
        let (ux, _) = self.grid.node_dims();
        for ey in 0..self.grid.ny {
            for ex in 0..self.grid.nx {
                let corners = element_nodes(&self.grid, ex, ey);
                let ids = [
                    self.dof_of_node[corners[0].lattice(ux)],
                    self.dof_of_node[corners[1].lattice(ux)],
                    self.dof_of_node[corners[2].lattice(ux)],
                    self.dof_of_node[corners[3].lattice(ux)],
                ];
                f(ex, ey, self.grid.element_centroid(ex, ey), &ids);
            }
        }
    }
}

// Reference-element matrices for bilinear shape functions on the unit square,
// corner order (0,0), (1,0), (1,1), (0,1). Stiffness parts are h-independent
// in 2D; the mass matrix scales by h^2.
const SXX: [[f64; 4]; 4] = [
    [2.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0],
    [-2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0, -2.0 / 6.0],
    [1.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, 2.0 / 6.0],
];
const SYY: [[f64; 4]; 4] = [
    [2.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [1.0 / 6.0, 2.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0],
];
// Int d_x(psi_i) d_y(psi_j) separates into sign patterns: s_i t_j / 4.
pub(crate) const SGN_X: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
pub(crate) const SGN_Y: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
const MREF: [[f64; 4]; 4] = [
    [4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0],
    [1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0],
];
const DX: [u32; 4] = [0, 1, 1, 0];
const DY: [u32; 4] = [0, 0, 1, 1];

#[inline]
fn k_local(c: &Coeff2, li: usize, lj: usize) -> f64 {
    c.xx * SXX[li][lj]
        + c.yy * SYY[li][lj]
        + c.xy * 0.25 * (SGN_X[li] * SGN_Y[lj] + SGN_X[lj] * SGN_Y[li])
}

#[derive(Clone, Copy)]
struct Corner {
    ix: u32,
    iy: u32,
    // Wrap counts per axis (0 or 1): how many periods the raw corner index
    // crossed when reduced to the unique lattice.
    wx: i8,
    wy: i8,
}

impl Corner {
    fn lattice(&self, ux: u32) -> usize {
        self.iy as usize * ux as usize + self.ix as usize
    }
}

fn element_nodes(grid: &Grid, ex: u32, ey: u32) -> [Corner; 4] {
    let mut out = [Corner {
        ix: 0,
        iy: 0,
        wx: 0,
        wy: 0,
    }; 4];
    for l in 0..4 {
        let rx = ex + DX[l];
        let ry = ey + DY[l];
        if grid.bc.wraps() {
            out[l] = Corner {
                ix: if rx == grid.nx { 0 } else { rx },
                iy: if ry == grid.ny { 0 } else { ry },
                wx: (rx == grid.nx) as i8,
                wy: (ry == grid.ny) as i8,
            };
        } else {
            out[l] = Corner {
                ix: rx,
                iy: ry,
                wx: 0,
                wy: 0,
            };
        }
    }
    out
}

/// Elements incident to lattice node (ix, iy), in a fixed deterministic order.
fn incident_elements(grid: &Grid, ix: u32, iy: u32, out: &mut Vec<(u32, u32)>) {
    out.clear();
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    for (ox, oy) in [(-1i64, -1i64), (0, -1), (-1, 0), (0, 0)] {
        let (mut ex, mut ey) = (ix as i64 + ox, iy as i64 + oy);
        if grid.bc.wraps() {
            ex = ex.rem_euclid(nx);
            ey = ey.rem_euclid(ny);
        } else if ex < 0 || ex >= nx || ey < 0 || ey >= ny {
            continue;
        }
        let e = (ex as u32, ey as u32);
        // Tiny wrapped grids (nx or ny <= 2) fold distinct offsets onto the
        // same element; it must be visited once, with all its corner slots.
        if !out.contains(&e) {
            out.push(e);
        }
    }
}

struct ElementData {
    coeff: Vec<Coeff2>,
    mass_h2: Vec<f64>,
}

fn eval_elements(
    grid: &Grid,
    coeff: &dyn Fn(f64, f64) -> Coeff2,
    mass_weight: &dyn Fn(f64, f64) -> f64,
    allow_zero: bool,
) -> Result<ElementData> {
    let n = grid.nx as usize * grid.ny as usize;
    let mut cs = Vec::with_capacity(n);
    let mut ms = Vec::with_capacity(n);
    let h2 = grid.h() * grid.h();
    for ey in 0..grid.ny {
        for ex in 0..grid.nx {
            let (cx, cy) = grid.element_centroid(ex, ey);
            let c = coeff(cx, cy);
            let ok = if allow_zero {
                c.is_finite() && (c.is_zero() || c.is_spd())
            } else {
                c.is_finite() && c.is_spd()
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "coefficient not positive-definite at element centroid ({cx}, {cy}): \
                     [{}, {}; {}, {}]",
                    c.xx, c.xy, c.xy, c.yy
                )));
            }
            let w = mass_weight(cx, cy);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!(
                    "mass weight {w} at element centroid ({cx}, {cy}) must be >= 0"
                )));
            }
            cs.push(c);
            ms.push(w * h2);
        }
    }
    Ok(ElementData {
        coeff: cs,
        mass_h2: ms,
    })
}

fn assemble_impl(
    grid: &Grid,
    coeff: &dyn Fn(f64, f64) -> Coeff2,
    mass_weight: &dyn Fn(f64, f64) -> f64,
    allow_zero: bool,
    keep_node: Option<&dyn Fn(f64, f64) -> bool>,
) -> Result<AssembledPencil> {
    let data = eval_elements(grid, coeff, mass_weight, allow_zero)?;
    let (ux, uy) = grid.node_dims();
    let lattice = ux as usize * uy as usize;

    let mut dof_of_node = vec![-1i64; lattice];
    let mut node_coord = Vec::new();
    let mut incid = Vec::with_capacity(4);
    for iy in 0..uy {
        for ix in 0..ux {
            if !grid.bc_active(ix, iy) {
                continue;
            }
            if let Some(keep) = keep_node {
                let (x, y) = grid.node_xy(ix, iy);
                if !keep(x, y) {
                    continue;
                }
            }
            if allow_zero {
                // A node whose every supporting element is dead carries no
                // energy or mass; keep it out of the system.
                incident_elements(grid, ix, iy, &mut incid);
                let live = incid.iter().any(|&(ex, ey)| {
                    let e = ey as usize * grid.nx as usize + ex as usize;
                    !data.coeff[e].is_zero() || data.mass_h2[e] != 0.0
                });
                if !live {
                    continue;
                }
            }
            let t = node_coord.len() as i64;
            dof_of_node[iy as usize * ux as usize + ix as usize] = t;
            node_coord.push((ix, iy));
        }
    }
    if node_coord.is_empty() {
        return Err(Error::invalid("no active dofs after boundary elimination"));
    }

    let pencil = match grid.bc {
        BoundaryCondition::QuasiPeriodic { theta } => assemble_embedded(
            grid,
            &data,
            theta,
            node_coord,
            dof_of_node,
        ),
        _ => assemble_real(grid, &data, node_coord, dof_of_node),
    };
    Ok(pencil)
}

fn ordering_for(grid: &Grid, coords: &[(u32, u32)]) -> Vec<u32> {
    if grid.bc.wraps() {
        nd_order_torus(coords)
    } else {
        nd_order(coords)
    }
}

fn assemble_real(
    grid: &Grid,
    data: &ElementData,
    node_coord: Vec<(u32, u32)>,
    dof_of_node: Vec<i64>,
) -> AssembledPencil {
    let n = node_coord.len();
    let (ux, _) = grid.node_dims();
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0usize);
    let mut indices: Vec<u32> = Vec::new();
    let mut kv: Vec<f64> = Vec::new();
    let mut mv: Vec<f64> = Vec::new();
    let mut incid = Vec::with_capacity(4);
    let mut row: Vec<(u32, f64, f64)> = Vec::with_capacity(40);

    for t in 0..n {
        let (ix, iy) = node_coord[t];
        let me = iy as usize * ux as usize + ix as usize;
        row.clear();
        incident_elements(grid, ix, iy, &mut incid);
        for &(ex, ey) in &incid {
            let e = ey as usize * grid.nx as usize + ex as usize;
            let c = data.coeff[e];
            let mh = data.mass_h2[e];
            let corners = element_nodes(grid, ex, ey);
            for li in 0..4 {
                if corners[li].lattice(ux) != me {
                    continue;
                }
                for lj in 0..4 {
                    let d = dof_of_node[corners[lj].lattice(ux)];
                    if d >= 0 {
                        row.push((d as u32, k_local(&c, li, lj), mh * MREF[li][lj]));
                    }
                }
            }
        }
        // Stable sort keeps the accumulation order of duplicates fixed, so
        // assembled values are bitwise reproducible.
        row.sort_by_key(|e| e.0);
        let mut i = 0;
        while i < row.len() {
            let col = row[i].0;
            let (mut ks, mut ms) = (0.0, 0.0);
            while i < row.len() && row[i].0 == col {
                ks += row[i].1;
                ms += row[i].2;
                i += 1;
            }
            indices.push(col);
            kv.push(ks);
            mv.push(ms);
        }
        indptr.push(indices.len());
    }

    let k = CsrMatrix {
        n,
        indptr: indptr.clone(),
        indices: indices.clone(),
        values: kv,
    };
    let m = CsrMatrix {
        n,
        indptr,
        indices,
        values: mv,
    };
    let nd_perm = ordering_for(grid, &node_coord);
    AssembledPencil {
        grid: grid.clone(),
        kind: PencilKind::Real,
        k,
        m,
        node_coord,
        dof_of_node,
        nd_perm,
    }
}

fn assemble_embedded(
    grid: &Grid,
    data: &ElementData,
    theta: [f64; 2],
    node_coord: Vec<(u32, u32)>,
    dof_of_node: Vec<i64>,
) -> AssembledPencil {
    let n = node_coord.len();
    let (ux, _) = grid.node_dims();
    // Phase e^{i theta . d} for wrap deltas d in {-1, 0, 1}^2.
    let mut phase = [[(0.0f64, 0.0f64); 3]; 3];
    for (a, pa) in phase.iter_mut().enumerate() {
        for (b, p) in pa.iter_mut().enumerate() {
            let arg = theta[0] * (a as f64 - 1.0) + theta[1] * (b as f64 - 1.0);
            *p = (arg.cos(), arg.sin());
        }
    }

    let mut indptr = Vec::with_capacity(2 * n + 1);
    indptr.push(0usize);
    let mut indices: Vec<u32> = Vec::new();
    let mut kv: Vec<f64> = Vec::new();
    let mut mv: Vec<f64> = Vec::new();
    let mut incid = Vec::with_capacity(4);
    // (col node, k re, k im, m re, m im)
    let mut row: Vec<(u32, f64, f64, f64, f64)> = Vec::with_capacity(40);
    let mut merged: Vec<(u32, f64, f64, f64, f64)> = Vec::with_capacity(16);

    for t in 0..n {
        let (ix, iy) = node_coord[t];
        let me = iy as usize * ux as usize + ix as usize;
        row.clear();
        merged.clear();
        incident_elements(grid, ix, iy, &mut incid);
        for &(ex, ey) in &incid {
            let e = ey as usize * grid.nx as usize + ex as usize;
            let c = data.coeff[e];
            let mh = data.mass_h2[e];
            let corners = element_nodes(grid, ex, ey);
            for li in 0..4 {
                if corners[li].lattice(ux) != me {
                    continue;
                }
                let wi = &corners[li];
                for lj in 0..4 {
                    let cj = &corners[lj];
                    let d = dof_of_node[cj.lattice(ux)];
                    if d < 0 {
                        continue;
                    }
                    // Row side conjugates its own wrap phase.
                    let ax = (cj.wx - wi.wx + 1) as usize;
                    let ay = (cj.wy - wi.wy + 1) as usize;
                    let (pr, pi) = phase[ax][ay];
                    let kl = k_local(&c, li, lj);
                    let ml = mh * MREF[li][lj];
                    row.push((d as u32, kl * pr, kl * pi, ml * pr, ml * pi));
                }
            }
        }
        row.sort_by_key(|e| e.0);
        let mut i = 0;
        while i < row.len() {
            let col = row[i].0;
            let mut acc = (col, 0.0, 0.0, 0.0, 0.0);
            while i < row.len() && row[i].0 == col {
                acc.1 += row[i].1;
                acc.2 += row[i].2;
                acc.3 += row[i].3;
                acc.4 += row[i].4;
                i += 1;
            }
            merged.push(acc);
        }
        // Real row of the pair: (Re, -Im); imaginary row: (Im, Re).
        for &(col, kr, ki, mr, mi) in &merged {
            indices.push(2 * col);
            kv.push(kr);
            mv.push(mr);
            indices.push(2 * col + 1);
            kv.push(-ki);
            mv.push(-mi);
        }
        indptr.push(indices.len());
        for &(col, kr, ki, mr, mi) in &merged {
            indices.push(2 * col);
            kv.push(ki);
            mv.push(mi);
            indices.push(2 * col + 1);
            kv.push(kr);
            mv.push(mr);
        }
        indptr.push(indices.len());
    }

    let k = CsrMatrix {
        n: 2 * n,
        indptr: indptr.clone(),
        indices: indices.clone(),
        values: kv,
    };
    let m = CsrMatrix {
        n: 2 * n,
        indptr,
        indices,
        values: mv,
    };
    let mut doubled = Vec::with_capacity(2 * n);
    for &c in &node_coord {
        doubled.push(c);
        doubled.push(c);
    }
    let nd_perm = ordering_for(grid, &doubled);
    AssembledPencil {
        grid: grid.clone(),
        kind: PencilKind::EmbeddedHermitian,
        k,
        m,
        node_coord,
        dof_of_node,
        nd_perm,
    }
}

/// Assembles `K_ij = sum_e a(centroid) int grad(psi_i).grad(psi_j)` and
/// `M_ij = sum_e w(centroid) int psi_i psi_j` over the grid's active dofs.
pub fn assemble(
    grid: &Grid,
    coeff: &dyn Fn(f64, f64) -> f64,
    mass_weight: &dyn Fn(f64, f64) -> f64,
) -> Result<AssembledPencil> {
    assemble_impl(grid, &|x, y| Coeff2::iso(coeff(x, y)), mass_weight, false, None)
}

/// As [`assemble`], additionally dropping every node where `keep_node` is
/// false (homogeneous Dirichlet on the mask complement).
pub fn assemble_masked(
    grid: &Grid,
    coeff: &dyn Fn(f64, f64) -> f64,
    mass_weight: &dyn Fn(f64, f64) -> f64,
    keep_node: &dyn Fn(f64, f64) -> bool,
) -> Result<AssembledPencil> {
    assemble_impl(
        grid,
        &|x, y| Coeff2::iso(coeff(x, y)),
        mass_weight,
        false,
        Some(keep_node),
    )
}

/// Tensor-coefficient variant. With `allow_zero`, elements may carry an
/// exactly-zero coefficient; nodes supported only by dead elements are
/// eliminated from the system (used by corrector solves on a perforated
/// domain).
pub fn assemble_tensor(
    grid: &Grid,
    coeff: &dyn Fn(f64, f64) -> Coeff2,
    mass_weight: &dyn Fn(f64, f64) -> f64,
    allow_zero: bool,
) -> Result<AssembledPencil> {
    assemble_impl(grid, coeff, mass_weight, allow_zero, None)
}

/// Rebuilds only the mass matrix of an existing pencil under a new weight.
/// The sparsity pattern matches the pencil's exactly, so results can be
/// combined entrywise with its `k`/`m`.
pub fn assemble_mass(pencil: &AssembledPencil, weight: &dyn Fn(f64, f64) -> f64) -> CsrMatrix {
    let grid = &pencil.grid;
    let h2 = grid.h() * grid.h();
    let mut mass_h2 = Vec::with_capacity(grid.nx as usize * grid.ny as usize);
    for ey in 0..grid.ny {
        for ex in 0..grid.nx {
            let (cx, cy) = grid.element_centroid(ex, ey);
            mass_h2.push(weight(cx, cy) * h2);
        }
    }
    let data = ElementData {
        coeff: vec![Coeff2::iso(0.0); grid.nx as usize * grid.ny as usize],
        mass_h2,
    };
    let rebuilt = match grid.bc {
        BoundaryCondition::QuasiPeriodic { theta } => assemble_embedded(
            grid,
            &data,
            theta,
            pencil.node_coord.clone(),
            pencil.dof_of_node.clone(),
        ),
        _ => assemble_real(
            grid,
            &data,
            pencil.node_coord.clone(),
            pencil.dof_of_node.clone(),
        ),
    };
    debug_assert_eq!(rebuilt.m.indptr, pencil.m.indptr);
    rebuilt.m
}

fn gather4(u: &[f64], pencil: &AssembledPencil, ids: &[i64; 4]) -> ([f64; 4], [f64; 4]) {
    let mut re = [0.0; 4];
    let mut im = [0.0; 4];
    for l in 0..4 {
        if ids[l] >= 0 {
            match pencil.kind {
                PencilKind::Real => re[l] = u[ids[l] as usize],
                PencilKind::EmbeddedHermitian => {
                    re[l] = u[2 * ids[l] as usize];
                    im[l] = u[2 * ids[l] as usize + 1];
                }
            }
        }
    }
    (re, im)
}

/// `L^2` norm of the finite-element function `u` over the elements whose
/// centroid satisfies `region` (unit weight, independent of the pencil's
/// mass coefficient). Embedded pencils integrate `|u|^2 = Re^2 + Im^2`.
pub fn restrict_norm(
    pencil: &AssembledPencil,
    u: &[f64],
    region: &dyn Fn(f64, f64) -> bool,
) -> Result<f64> {
    if u.len() != pencil.dof() {
        return Err(Error::invalid(format!(
            "vector length {} does not match dof count {}",
            u.len(),
            pencil.dof()
        )));
    }
    let h2 = pencil.grid.h() * pencil.grid.h();
    let mut acc = 0.0;
    pencil.for_each_element(|_, _, (cx, cy), ids| {
        if !region(cx, cy) {
            return;
        }
        let (re, im) = gather4(u, pencil, ids);
        let mut q = 0.0;
        for li in 0..4 {
            for lj in 0..4 {
                q += MREF[li][lj] * (re[li] * re[lj] + im[li] * im[lj]);
            }
        }
        acc += h2 * q;
    });
    Ok(acc.max(0.0).sqrt())
}

/// Unit-weight mass inner product `int_region u v` for real pencils.
pub fn region_inner(
    pencil: &AssembledPencil,
    u: &[f64],
    v: &[f64],
    region: &dyn Fn(f64, f64) -> bool,
) -> Result<f64> {
    if pencil.is_embedded() {
        return Err(Error::invalid("region_inner expects a real pencil"));
    }
    if u.len() != pencil.dof() || v.len() != pencil.dof() {
        return Err(Error::invalid("vector length does not match dof count"));
    }
    let h2 = pencil.grid.h() * pencil.grid.h();
    let mut acc = 0.0;
    pencil.for_each_element(|_, _, (cx, cy), ids| {
        if !region(cx, cy) {
            return;
        }
        let (ur, _) = gather4(u, pencil, ids);
        let (vr, _) = gather4(v, pencil, ids);
        let mut q = 0.0;
        for li in 0..4 {
            for lj in 0..4 {
                q += MREF[li][lj] * ur[li] * vr[lj];
            }
        }
        acc += h2 * q;
    });
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one(_: f64, _: f64) -> f64 {
        1.0
    }

    // 2x2 Gauss quadrature reproduces the hand-reduced reference tables
    // exactly (integrands are at most bi-cubic).
    #[test]
    fn reference_tables_match_quadrature() {
        let g = 0.5 - 0.5 / 3.0f64.sqrt();
        let pts = [g, 1.0 - g];
        let shape = |l: usize, x: f64, y: f64| -> f64 {
            let xs = [1.0 - x, x, x, 1.0 - x];
            let ys = [1.0 - y, 1.0 - y, y, y];
            xs[l] * ys[l]
        };
        let grad = |l: usize, x: f64, y: f64| -> (f64, f64) {
            let xs = [1.0 - x, x, x, 1.0 - x];
            let ys = [1.0 - y, 1.0 - y, y, y];
            let dxs = [-1.0, 1.0, 1.0, -1.0];
            let dys = [-1.0, -1.0, 1.0, 1.0];
            (dxs[l] * ys[l], dys[l] * xs[l])
        };
        for li in 0..4 {
            for lj in 0..4 {
                let (mut sxx, mut syy, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0);
                for &x in &pts {
                    for &y in &pts {
                        let (gi_x, gi_y) = grad(li, x, y);
                        let (gj_x, gj_y) = grad(lj, x, y);
                        sxx += 0.25 * gi_x * gj_x;
                        syy += 0.25 * gi_y * gj_y;
                        sxy += 0.25 * gi_x * gj_y;
                        m += 0.25 * shape(li, x, y) * shape(lj, x, y);
                    }
                }
                assert_relative_eq!(sxx, SXX[li][lj], epsilon = 1e-15);
                assert_relative_eq!(syy, SYY[li][lj], epsilon = 1e-15);
                assert_relative_eq!(sxy, 0.25 * SGN_X[li] * SGN_Y[lj], epsilon = 1e-15);
                assert_relative_eq!(m, MREF[li][lj], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn center_node_of_coarse_dirichlet_square() {
        let grid = Grid::unit_cell(2, BoundaryCondition::Dirichlet).unwrap();
        let p = assemble(&grid, &one, &one).unwrap();
        assert_eq!(p.dof(), 1);
        // Four elements, each contributing its corner diagonal 2/3 and
        // h^2 * 4/36 with h = 1/2.
        assert_relative_eq!(p.k.values[0], 8.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.m.values[0], 1.0 / 9.0, epsilon = 1e-16);
    }

    #[test]
    fn stiffness_linear_in_coefficient() {
        let grid = Grid::unit_cell(8, BoundaryCondition::Periodic).unwrap();
        let a = assemble(&grid, &one, &one).unwrap();
        let b = assemble(&grid, &|_, _| 3.7, &one).unwrap();
        assert_eq!(a.k.indices, b.k.indices);
        for (x, y) in a.k.values.iter().zip(&b.k.values) {
            assert_relative_eq!(3.7 * x, *y, epsilon = 1e-14, max_relative = 1e-14);
        }
    }

    #[test]
    fn periodic_constant_in_kernel() {
        let grid = Grid::unit_cell(16, BoundaryCondition::Periodic).unwrap();
        // Varying coefficient: the patch test holds per element regardless.
        let coeff = |x: f64, y: f64| 1.5 + x + (3.1 * y).sin().powi(2);
        let p = assemble(&grid, &coeff, &one).unwrap();
        let ones = vec![1.0; p.dof()];
        let r = p.k.matvec_alloc(&ones);
        let scale = p.k.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for v in r {
            assert!(v.abs() <= 1e-12 * scale, "kernel residual {v:e}");
        }
        // Mass row sums integrate the partition of unity: total domain area.
        let total = p.m.quadratic(&ones, &ones);
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quasi_zero_phase_embeds_the_periodic_pencil() {
        let per = Grid::unit_cell(4, BoundaryCondition::Periodic).unwrap();
        let qua = Grid::unit_cell(
            4,
            BoundaryCondition::QuasiPeriodic { theta: [0.0, 0.0] },
        )
        .unwrap();
        let coeff = |x: f64, y: f64| 1.0 + 0.5 * x + 0.25 * y;
        let a = assemble(&per, &coeff, &one).unwrap();
        let b = assemble(&qua, &coeff, &one).unwrap();
        assert_eq!(b.dof(), 2 * a.dof());
        let da = a.k.to_dense();
        let db = b.k.to_dense();
        for i in 0..a.dof() {
            for j in 0..a.dof() {
                assert_relative_eq!(db[(2 * i, 2 * j)], da[(i, j)], epsilon = 1e-15);
                assert_relative_eq!(db[(2 * i + 1, 2 * j + 1)], da[(i, j)], epsilon = 1e-15);
                assert_eq!(db[(2 * i, 2 * j + 1)], 0.0);
                assert_eq!(db[(2 * i + 1, 2 * j)], 0.0);
            }
        }
    }

    #[test]
    fn embedded_pencil_is_symmetric() {
        let grid = Grid::unit_cell(
            6,
            BoundaryCondition::QuasiPeriodic { theta: [1.3, 0.4] },
        )
        .unwrap();
        let coeff = |x: f64, y: f64| 2.0 + (2.0 * x).cos().powi(2) + y;
        let p = assemble(&grid, &coeff, &one).unwrap();
        for mat in [&p.k, &p.m] {
            let d = mat.to_dense();
            let scale = mat.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            for i in 0..mat.n {
                for j in 0..mat.n {
                    assert!(
                        (d[(i, j)] - d[(j, i)]).abs() <= 1e-12 * scale,
                        "asymmetry at ({i}, {j})"
                    );
                }
            }
        }
        let md = p.m.to_dense();
        for t in 0..p.node_count() {
            assert!(md[(2 * t, 2 * t)] > 0.0);
        }
    }

    #[test]
    fn single_element_periodic_cell_degenerates_cleanly() {
        let grid = Grid::unit_cell(1, BoundaryCondition::Periodic).unwrap();
        let p = assemble(&grid, &one, &one).unwrap();
        assert_eq!(p.dof(), 1);
        // All sixteen corner couplings fold onto the lone node: stiffness
        // cancels (constants), mass totals the cell area.
        assert_relative_eq!(p.k.values[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.m.values[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dead_elements_eliminate_enclosed_nodes() {
        let grid = Grid::unit_cell(4, BoundaryCondition::Periodic).unwrap();
        // Elements with centroid x < 0.5 are dead; the nodes at ix = 1 are
        // supported only by those and must drop out.
        let coeff = |x: f64, _: f64| {
            if x < 0.5 {
                Coeff2::iso(0.0)
            } else {
                Coeff2::iso(1.0)
            }
        };
        let p = assemble_tensor(&grid, &coeff, &|_, _| 0.0, true).unwrap();
        assert_eq!(p.node_count(), 12);
        assert!(p.node_coord.iter().all(|&(ix, _)| ix != 1));
        assert!(assemble_tensor(&grid, &coeff, &|_, _| 0.0, false).is_err());
    }

    #[test]
    fn masked_disk_keeps_inner_nodes_only() {
        let grid = Grid::unit_cell(8, BoundaryCondition::Dirichlet).unwrap();
        let inside = |x: f64, y: f64| (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.3f64.powi(2);
        let p = assemble_masked(&grid, &one, &one, &inside).unwrap();
        let mut expect = 0;
        for iy in 1..8 {
            for ix in 1..8 {
                let (x, y) = grid.node_xy(ix, iy);
                if inside(x, y) {
                    expect += 1;
                }
            }
        }
        assert_eq!(p.node_count(), expect);
        assert!(expect > 0);
        // Reweighted mass shares the pencil's pattern bit for bit.
        let m2 = assemble_mass(&p, &|x, _| 1.0 + x);
        assert_eq!(m2.indptr, p.m.indptr);
        assert_eq!(m2.indices, p.m.indices);
        assert_ne!(m2.values, p.m.values);
    }

    #[test]
    fn restrict_norm_of_constants() {
        let grid = Grid::unit_cell(8, BoundaryCondition::Periodic).unwrap();
        let p = assemble(&grid, &one, &one).unwrap();
        let ones = vec![1.0; p.dof()];
        let full = restrict_norm(&p, &ones, &|_, _| true).unwrap();
        assert_relative_eq!(full, 1.0, epsilon = 1e-12);
        assert_eq!(restrict_norm(&p, &ones, &|_, _| false).unwrap(), 0.0);
        let half = restrict_norm(&p, &ones, &|x, _| x < 0.5).unwrap();
        assert_relative_eq!(half, 0.5f64.sqrt(), epsilon = 1e-12);
        let inner = region_inner(&p, &ones, &ones, &|x, _| x < 0.5).unwrap();
        assert_relative_eq!(inner, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grid_validation_rejects_bad_boxes() {
        assert!(Grid::new(4, 4, 0.0, 1.0, 0.0, 2.0, BoundaryCondition::Dirichlet).is_err());
        assert!(Grid::new(0, 4, 0.0, 1.0, 0.0, 1.0, BoundaryCondition::Dirichlet).is_err());
        assert!(Grid::new(
            4,
            4,
            0.0,
            1.0,
            0.0,
            1.0,
            BoundaryCondition::QuasiPeriodic { theta: [7.0, 0.0] },
        )
        .is_err());
        // 8 elements on [-1, 1] against 4 on [0, 1] is non-square only if
        // the spacing check uses both axes.
        assert!(Grid::new(8, 4, -1.0, 1.0, 0.0, 1.0, BoundaryCondition::Dirichlet).is_ok());
    }

    #[test]
    fn nd_perm_is_a_permutation_of_active_dofs() {
        let grid = Grid::unit_cell(10, BoundaryCondition::Periodic).unwrap();
        let p = assemble(&grid, &one, &one).unwrap();
        let mut seen = p.nd_perm.clone();
        seen.sort_unstable();
        assert!(seen.iter().enumerate().all(|(i, &v)| i as u32 == v));
        assert_eq!(p.nd_perm.len(), p.dof());
    }
}
