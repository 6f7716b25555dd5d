use bandgap2d_core::assembly::{assemble, BoundaryCondition, Grid};
use bandgap2d_core::cell_spectral::{beta_series, compute_ahom, discrete_cell_table, find_gaps};
use bandgap2d_core::eigensolve::{count_in_interval, shift_invert_eigs, EigOpts};
use bandgap2d_core::geometry::{coefficient, DefectGeometry, MediumSpec};
use bandgap2d_core::limit_defect::{macro_grid, solve_limit_mode};

fn main() {
    let spec = MediumSpec::default();
    let table = discrete_cell_table(&spec.cell, spec.a0, 4).unwrap();
    let ahom = compute_ahom(&spec.cell, spec.a1, 0.25).unwrap();
    let gap = find_gaps(&table, 2.2 * table.modes[0].lambda).unwrap().gaps[0];
    println!("gap = ({}, {})", gap.lo, gap.hi);

    let grid = macro_grid(4.0, 0.125).unwrap();
    let limit = solve_limit_mode(&spec, &ahom, &table, gap, &grid).unwrap();
    for m in &limit.modes {
        let b = beta_series(&table, m.lambda0).unwrap().value;
        let a = (-b / spec.a1).sqrt();
        println!(
            "root λ0 = {:>12.6}  mult {}  β = {:>10.3}  α = {:>7.3}  leak e^-4α = {:.1e}",
            m.lambda0, m.multiplicity, b, a, (-4.0 * a).exp()
        );
    }

    let mut free = spec.clone();
    free.defect = DefectGeometry::disk(1e-9);
    for eps in [0.25f64, 0.125] {
        let cells = (4.0 / eps).round();
        let n = (2.0 * cells * 4.0) as u32;
        let g = Grid::square(n, -4.0, 4.0, BoundaryCondition::Dirichlet).unwrap();
        let p = assemble(&g, &|x, y| coefficient([x, y], eps, &free), &|_, _| 1.0).unwrap();
        let mid = gap.midpoint();
        let n_lo = count_in_interval(&p, gap.lo, mid).unwrap();
        let n_hi = count_in_interval(&p, mid, gap.hi).unwrap();
        println!("free eps = {eps}: {} below mid, {} above (of window ({}, {}))", n_lo, n_hi, gap.lo, gap.hi);
        if n_hi > 0 {
            let set = shift_invert_eigs(&p, mid, n_lo + 1, &EigOpts::default()).unwrap();
            let edge = set.pairs.iter().map(|q| q.value).filter(|v| *v > mid).fold(f64::INFINITY, f64::min);
            println!("  upper sliver edge = {edge:.6}  (protrusion {:.4})", gap.hi - edge);
        }
        if n_lo > 0 {
            let set = shift_invert_eigs(&p, mid, n_hi + 1, &EigOpts::default()).unwrap();
            let edge = set.pairs.iter().map(|q| q.value).filter(|v| *v < mid).fold(f64::NEG_INFINITY, f64::max);
            println!("  lower sliver edge = {edge:.6}  (protrusion {:.4})", edge - gap.lo);
        }
    }
}
