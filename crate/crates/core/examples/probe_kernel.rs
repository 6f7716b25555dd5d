use bandgap2d_core::assembly::{assemble, BoundaryCondition, Grid};
use bandgap2d_core::eigensolve::{count_in_interval, eigs_in_interval, shift_invert_eigs, EigOpts};

fn main() {
    let grid = Grid::unit_cell(32, BoundaryCondition::QuasiPeriodic { theta: [0.0, 0.0] }).unwrap();
    let p = assemble(&grid, &|_, _| 2.5, &|_, _| 1.0).unwrap();
    println!("dofs {}", p.dof());
    println!("count (-1e-9, 37) = {:?}", count_in_interval(&p, -1e-9, 37.0));
    for k in [1usize, 2, 3] {
        match shift_invert_eigs(&p, 18.565, k, &EigOpts::default()) {
            Ok(set) => println!("k={k}: {:?}", set.pairs.iter().map(|q| (q.value, q.residual)).collect::<Vec<_>>()),
            Err(e) => println!("k={k}: ERR {e}"),
        }
    }
    match eigs_in_interval(&p, -1e-9, 148.0, &EigOpts::default()) {
        Ok(set) => println!("interval: {:?}", set.pairs.iter().map(|q| q.value).collect::<Vec<_>>()),
        Err(e) => println!("interval: ERR {e}"),
    }
}
