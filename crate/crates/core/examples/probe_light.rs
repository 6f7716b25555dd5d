use bandgap2d_core::assembly::{assemble, BoundaryCondition, Grid};
use bandgap2d_core::cell_spectral::{beta_series, compute_ahom, discrete_cell_table, find_gaps};
use bandgap2d_core::eigensolve::{count_in_interval, eigs_in_interval, shift_invert_eigs, EigOpts};
use bandgap2d_core::geometry::{coefficient, DefectGeometry, MediumSpec};
use bandgap2d_core::limit_defect::{macro_grid, solve_limit_mode};
use std::time::Instant;

fn window(spec: &MediumSpec, eps: f64, l: f64, gap_lo: f64, gap_hi: f64) -> (f64, f64, usize, usize) {
    let mut free = spec.clone();
    free.defect = DefectGeometry::disk(1e-12);
    free.a2 = free.a1;
    let cells = (l / eps).round();
    let n = (2.0 * cells * 4.0) as u32;
    let g = Grid::square(n, -l, l, BoundaryCondition::Dirichlet).unwrap();
    let p = assemble(&g, &|x, y| coefficient([x, y], eps, &free), &|_, _| 1.0).unwrap();
    let mid = 0.5 * (gap_lo + gap_hi);
    let n_lo = count_in_interval(&p, gap_lo, mid).unwrap();
    let n_hi = count_in_interval(&p, mid, gap_hi).unwrap();
    let (mut w_lo, mut w_hi) = (gap_lo, gap_hi);
    if n_lo + n_hi > 0 {
        for k in [2usize, 4, 8, 16] {
            let set = shift_invert_eigs(&p, mid, k, &EigOpts::default()).unwrap();
            let lo_edge = set.pairs.iter().map(|q| q.value).filter(|v| gap_lo < *v && *v < mid).fold(f64::NEG_INFINITY, f64::max);
            let hi_edge = set.pairs.iter().map(|q| q.value).filter(|v| mid < *v && *v < gap_hi).fold(f64::INFINITY, f64::min);
            let ok_lo = n_lo == 0 || lo_edge.is_finite();
            let ok_hi = n_hi == 0 || hi_edge.is_finite();
            if ok_lo && ok_hi {
                if lo_edge.is_finite() { w_lo = lo_edge; }
                if hi_edge.is_finite() { w_hi = hi_edge; }
                break;
            }
        }
    }
    (w_lo, w_hi, n_lo, n_hi)
}

fn survey(name: &str, spec: &MediumSpec) {
    println!("== {name} ==");
    let table = discrete_cell_table(&spec.cell, spec.a0, 4).unwrap();
    let ahom = compute_ahom(&spec.cell, spec.a1, 0.25).unwrap();
    let gap = find_gaps(&table, 2.2 * table.modes[0].lambda).unwrap().gaps[0];
    println!("gap = ({}, {})", gap.lo, gap.hi);
    let grid = macro_grid(4.0, 0.125).unwrap();
    let t0 = Instant::now();
    let limit = solve_limit_mode(spec, &ahom, &table, gap, &grid).unwrap();
    println!("limit solve: {:.1}s, {} roots", t0.elapsed().as_secs_f64(), limit.modes.len());
    for m in &limit.modes {
        let b = beta_series(&table, m.lambda0).unwrap().value;
        let a = (-b / spec.a1).sqrt();
        println!("  λ0 = {:>11.6} mult {} α = {:>7.3}", m.lambda0, m.multiplicity, a);
    }
    for eps in [0.25f64, 0.125] {
        let t0 = Instant::now();
        let (w_lo, w_hi, n_lo, n_hi) = window(spec, eps, 4.0, gap.lo, gap.hi);
        println!("eps = {eps}: window ({w_lo:.6}, {w_hi:.6})  free slivers {n_lo}/{n_hi}  [{:.1}s]", t0.elapsed().as_secs_f64());
        if w_lo < w_hi {
            let cells = (4.0 / eps).round();
            let n = (2.0 * cells * 4.0) as u32;
            let g = Grid::square(n, -4.0, 4.0, BoundaryCondition::Dirichlet).unwrap();
            let p = assemble(&g, &|x, y| coefficient([x, y], eps, spec), &|_, _| 1.0).unwrap();
            let pad = 1e-6 * (gap.hi - gap.lo);
            let t0 = Instant::now();
            let c = count_in_interval(&p, w_lo + pad, w_hi - pad).unwrap();
            println!("  defect count in window: {c}  [{:.1}s]", t0.elapsed().as_secs_f64());
            if c > 0 && c <= 24 {
                let t0 = Instant::now();
                let set = eigs_in_interval(&p, w_lo + pad, w_hi - pad, &EigOpts::default()).unwrap();
                println!("  values [{:.1}s]:", t0.elapsed().as_secs_f64());
                for q in &set.pairs {
                    let near = limit.modes.iter().map(|m| (m.lambda0 - q.value).abs()).fold(f64::INFINITY, f64::min);
                    println!("    λ = {:>11.6}  dist-to-nearest-root {:.2e}  res {:.1e}", q.value, near, q.residual);
                }
            }
        }
    }
}

fn main() {
    let spec = MediumSpec::default();
    survey("default a0=1", &spec);
    let mut light = MediumSpec::default();
    light.a0 = 0.25;
    survey("light a0=0.25", &light);
}
