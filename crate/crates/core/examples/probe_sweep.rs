use bandgap2d_core::assembly::{assemble, BoundaryCondition, Grid};
use bandgap2d_core::cell_spectral::{beta_series, compute_ahom, discrete_cell_table, find_gaps};
use bandgap2d_core::eigensolve::{count_in_interval, eigs_in_interval, shift_invert_eigs, EigOpts};
use bandgap2d_core::fine_scale::{approximation_field, two_scale_error, FineMode};
use bandgap2d_core::geometry::{coefficient, DefectGeometry, MediumSpec};
use bandgap2d_core::limit_defect::{fit_annulus_decay, macro_grid, solve_limit_mode};
use std::time::Instant;

fn main() {
    let mut spec = MediumSpec::default();
    spec.a0 = 0.25;
    let table = discrete_cell_table(&spec.cell, spec.a0, 4).unwrap();
    let ahom = compute_ahom(&spec.cell, spec.a1, 0.25).unwrap();
    let gap = find_gaps(&table, 2.2 * table.modes[0].lambda).unwrap().gaps[0];
    println!("gap = ({}, {})  ahom = {:.6}", gap.lo, gap.hi, ahom.a[0][0]);

    for side in [1.0f64] {
        spec.defect = DefectGeometry::disk(side);
        println!("== light medium, disk radius {side} ==");
        let mut reference = None;
        for h in [0.125f64, 0.0625, 0.03125] {
            let grid = macro_grid(4.0, h).unwrap();
            let t0 = Instant::now();
            match solve_limit_mode(&spec, &ahom, &table, gap, &grid) {
                Ok(limit) => {
                    print!("h = {h}: ");
                    for m in &limit.modes {
                        let b = beta_series(&table, m.lambda0).unwrap().value;
                        let fit = m.decay.alpha;
                        print!(
                            " {:.6}(m{} bnd{:.2} fit{:.2})",
                            m.lambda0,
                            m.multiplicity,
                            (-b / spec.a1).sqrt(),
                            fit
                        );
                    }
                    println!("  [{:.1}s]", t0.elapsed().as_secs_f64());
                    reference = Some(limit);
                }
                Err(e) => println!("h = {h}: {e}"),
            }
        }
        let limit = match reference {
            Some(l) => l,
            _ => continue,
        };

        for eps in [0.25f64, 0.125, 0.0625] {
            let t_all = Instant::now();
            let mut free = spec.clone();
            free.defect = DefectGeometry::disk(1e-12);
            free.a2 = free.a1;
            let cells = (4.0 / eps).round();
            let n = (2.0 * cells * 4.0) as u32;
            let g = Grid::square(n, -4.0, 4.0, BoundaryCondition::Dirichlet).unwrap();
            let pf = assemble(&g, &|x, y| coefficient([x, y], eps, &free), &|_, _| 1.0).unwrap();
            let mid = gap.midpoint();
            let n_lo = count_in_interval(&pf, gap.lo, mid).unwrap();
            let n_hi = count_in_interval(&pf, mid, gap.hi).unwrap();
            let (mut w_lo, mut w_hi) = (gap.lo, gap.hi);
            if n_lo + n_hi > 0 {
                for k in [2usize, 4, 8, 16] {
                    let set = shift_invert_eigs(&pf, mid, k, &EigOpts::default()).unwrap();
                    let lo_edge = set.pairs.iter().map(|q| q.value).filter(|v| gap.lo < *v && *v < mid).fold(f64::NEG_INFINITY, f64::max);
                    let hi_edge = set.pairs.iter().map(|q| q.value).filter(|v| mid < *v && *v < gap.hi).fold(f64::INFINITY, f64::min);
                    if (n_lo == 0 || lo_edge.is_finite()) && (n_hi == 0 || hi_edge.is_finite()) {
                        if lo_edge.is_finite() { w_lo = lo_edge; }
                        if hi_edge.is_finite() { w_hi = hi_edge; }
                        break;
                    }
                }
            }
            drop(pf);
            println!("eps = {eps}: window ({w_lo:.6}, {w_hi:.6}) slivers {n_lo}/{n_hi} [{:.1}s]", t_all.elapsed().as_secs_f64());
            let pad = 1e-6 * (gap.hi - gap.lo);
            let p = assemble(&g, &|x, y| coefficient([x, y], eps, &spec), &|_, _| 1.0).unwrap();
            let set = eigs_in_interval(&p, w_lo + pad, w_hi - pad, &EigOpts::default()).unwrap();
            // Overlap matrix: fine value i vs corrected limit field j.
            let idp = assemble(&g, &|_, _| 1.0, &|_, _| 1.0).unwrap();
            let apprs: Vec<Vec<f64>> = limit
                .modes
                .iter()
                .map(|m| {
                    let a = approximation_field(&idp, eps, m, &spec).unwrap();
                    let ma = idp.m.matvec_alloc(&a);
                    let n = a.iter().zip(&ma).map(|(x, y)| x * y).sum::<f64>().sqrt();
                    a.iter().map(|v| v / n).collect()
                })
                .collect();
            for (i, q) in set.pairs.iter().enumerate() {
                let fit = fit_annulus_decay(&p, &q.vector, spec.defect.outer_radius() + 0.25, 4.0);
                let (af, aq) = fit.map(|f| (f.alpha, f.quality)).unwrap_or((f64::NAN, f64::NAN));
                print!("  v{i} λ = {:.6} α̂ = {af:.3} (q {aq:.3}) ovl:", q.value);
                let mv = idp.m.matvec_alloc(&q.vector);
                let nv = q.vector.iter().zip(&mv).map(|(x, y)| x * y).sum::<f64>().sqrt();
                for a in &apprs {
                    let o: f64 = a.iter().zip(&mv).map(|(x, y)| x * y).sum::<f64>() / nv;
                    print!(" {:+.4}", o);
                }
                println!();
            }
            // Order-paired two-scale per root.
            for (j, (m, q)) in limit.modes.iter().zip(set.pairs.iter()).enumerate() {
                let fit = fit_annulus_decay(&p, &q.vector, spec.defect.outer_radius() + 0.25, 4.0).ok();
                let fm = FineMode {
                    eps,
                    lambda_eps: q.value,
                    u_eps: q.vector.clone(),
                    residual: q.residual,
                    decay: fit,
                    grid: g.clone(),
                };
                let ts = two_scale_error(&fm, m, &spec).unwrap();
                println!(
                    "  root{j}: λ0 = {:.6} λ_ε = {:.6} err = {:.6} two-scale = {:.6}",
                    m.lambda0,
                    q.value,
                    (q.value - m.lambda0).abs(),
                    ts
                );
            }
            println!("  [total {:.1}s]", t_all.elapsed().as_secs_f64());
        }
    }
}
