use bandgap2d_core::cell_spectral::{beta_series, compute_ahom, discrete_cell_table, find_gaps};
use bandgap2d_core::geometry::{DefectGeometry, MediumSpec};
use bandgap2d_core::limit_defect::{macro_grid, solve_limit_mode};

fn main() {
    let mut spec = MediumSpec::default();
    spec.a1 = 4.0;
    spec.a2 = 4.0;
    let table = discrete_cell_table(&spec.cell, spec.a0, 4).unwrap();
    let ahom = compute_ahom(&spec.cell, spec.a1, 0.25).unwrap();
    let gap = find_gaps(&table, 2.2 * table.modes[0].lambda).unwrap().gaps[0];
    println!("gap = ({}, {})", gap.lo, gap.hi);
    let grid = macro_grid(4.0, 0.0625).unwrap();
    for s in [1.0f64, 1.5, 2.0] {
        spec.defect = DefectGeometry::square(s);
        match solve_limit_mode(&spec, &ahom, &table, gap, &grid) {
            Ok(limit) => {
                print!("side = {s}: ");
                for m in &limit.modes {
                    let b = beta_series(&table, m.lambda0).unwrap().value;
                    let a = (-b / spec.a1).sqrt();
                    print!(" {:.4}(m{} a{:.2})", m.lambda0, m.multiplicity, a);
                }
                println!();
            }
            Err(e) => println!("side = {s}: {e}"),
        }
    }
}
