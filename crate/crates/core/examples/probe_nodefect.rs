use bandgap2d_core::assembly::{assemble, BoundaryCondition, Grid};
use bandgap2d_core::eigensolve::{count_in_interval, shift_invert_eigs, EigOpts};
use bandgap2d_core::geometry::{coefficient, DefectGeometry, MediumSpec};

fn main() {
    let mut spec = MediumSpec::default();
    spec.defect = DefectGeometry::disk(1e-6);
    let eps = 0.125f64;
    let (lo, hi) = (96.0f64, 111.70909090881585f64);
    for l in [2.0f64, 3.0] {
        let cells = (l / eps).round();
        let n = (2.0 * cells * 4.0) as u32;
        let grid = Grid::square(n, -l, l, BoundaryCondition::Dirichlet).unwrap();
        let p = assemble(&grid, &|x, y| coefficient([x, y], eps, &spec), &|_, _| 1.0).unwrap();
        let c = count_in_interval(&p, lo, hi).unwrap();
        println!("L = {l}: {c} values in ({lo}, {hi})");
        let set = shift_invert_eigs(&p, 0.5 * (lo + hi), c.min(30), &EigOpts::default()).unwrap();
        let mut vals: Vec<f64> = set.pairs.iter().map(|q| q.value).filter(|v| lo < *v && *v < hi).collect();
        vals.sort_by(f64::total_cmp);
        println!("  {vals:.6?}");
        // where does the mass sit radially for the lowest and highest?
        for pick in [0usize, vals.len().saturating_sub(1)] {
            let pair = set.pairs.iter().find(|q| (q.value - vals[pick]).abs() < 1e-12).unwrap();
            let mut wall = 0.0; let mut bulk = 0.0;
            for (d, &u) in pair.vector.iter().enumerate() {
                let (x, y) = p.dof_xy(d);
                let r = x.abs().max(y.abs());
                if r > l - 0.5 { wall += u * u; } else { bulk += u * u; }
            }
            println!("  λ = {:.4}: wall-band mass {:.3}, bulk {:.3}", pair.value, wall / (wall + bulk), bulk / (wall + bulk));
        }
    }
}
